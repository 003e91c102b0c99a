"""Static API-sequence extraction, attention-based malware detection and
suspicious-method localization for Android DEX bytecode."""

__version__ = "0.1.0"
