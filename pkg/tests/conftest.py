import pytest

_results: dict[int, tuple[str, str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.fixture
def report(request):
    """Attach a one-line measurement summary to the current acceptance test."""

    def _report(text: str) -> None:
        request.node.user_properties.append(("detail", text))

    return _report


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        number, title = mark.args
        detail = "; ".join(v for k, v in item.user_properties if k == "detail")
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _results[number] = (status, title, detail, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        status, title, detail, dur = _results[number]
        line = f"[{status}] {number:>2}. {title} ({dur:.1f}s)"
        if detail:
            line += f" :: {detail}"
        terminalreporter.write_line(line)
