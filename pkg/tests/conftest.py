import pytest

_METRICS: dict[str, str] = {}


@pytest.fixture
def criterion_metrics(request):
    """Record a metric line for the test; printed in the terminal summary."""
    def record(text: str) -> None:
        _METRICS[request.node.name] = text
    return record


def pytest_terminal_summary(terminalreporter):
    if not _METRICS:
        return
    outcomes = {}
    for status in ("passed", "failed"):
        for rep in terminalreporter.stats.get(status, []):
            if rep.when == "call":
                outcomes[rep.nodeid.rsplit("::", 1)[-1]] = status.upper()[:4]
    terminalreporter.section("acceptance metrics")
    for name, text in sorted(_METRICS.items(), key=lambda kv: int(kv[0].split("_")[2])):
        terminalreporter.write_line(f"{outcomes.get(name, '????')}  {name}: {text}")
