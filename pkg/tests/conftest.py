import pytest

# criterion id -> (passed, label, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, label, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{cid:>2}] {label}: {detail}")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")
