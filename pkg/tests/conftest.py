import pytest


def pytest_configure(config):
    config._hpn_acceptance = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the terminal summary."""
    lines = request.config._hpn_acceptance

    def record(criterion, ok, detail, status=None):
        status = status or ("PASS" if ok else "FAIL")
        line = f"{status} criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config._hpn_acceptance
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
