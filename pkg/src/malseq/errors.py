"""Pipeline errors outside of input parsing (see ``malseq.dex.errors`` for those)."""


class MalseqError(Exception):
    pass


class EmptyCorpus(MalseqError):
    pass


class ZeroDimension(MalseqError):
    pass


class DimensionMismatch(MalseqError):
    pass


class SingleClassDataset(MalseqError):
    pass


class NonFiniteLoss(MalseqError):
    pass


class ProvenanceMismatch(MalseqError):
    pass


class EmptySet(MalseqError):
    pass


class InfeasibleSpec(MalseqError):
    pass


class EmptyPredictions(MalseqError):
    pass


class MisalignedSets(MalseqError):
    pass


class BadRatios(MalseqError):
    pass


class ModelMismatch(MalseqError):
    """Model artifacts do not belong to the same training run."""


class ConfigError(MalseqError):
    pass
