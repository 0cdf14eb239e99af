import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion.

    Call ``criterion(number, ok, detail)``; the line is printed immediately
    and again in the terminal summary, then ``ok`` is asserted.
    ``criterion.skip(number, reason)`` records a skip instead.
    """

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[(number, request.node.name)] = line
        print(line)
        assert ok, line

    def skip(number, reason):
        line = f"criterion {number:>2}: SKIP  {reason}"
        ACCEPTANCE[(number, request.node.name)] = line
        pytest.skip(reason)

    record.skip = skip
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    # a crash before the verdict still gets a FAIL line
    if (report.when == "call" and report.failed and item.module.__name__.endswith("test_acceptance")
            and not any(key[1] == item.name for key in ACCEPTANCE)):
        number = int(item.name.split("_")[1][1:])
        ACCEPTANCE[(number, item.name)] = f"criterion {number:>2}: FAIL  {item.name} raised {call.excinfo.typename}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
