import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    _CRITERIA[props["criterion"]] = {
        "title": props.get("title", ""),
        "outcome": report.outcome,
        "measured": props.get("measured", ""),
    }


@pytest.fixture
def measured(request, record_property):
    """Attach the criterion number, title and measured values to the report."""
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", marker.args[0])
        record_property("title", marker.args[1])
    values = {}

    def note(**kwargs):
        values.update(kwargs)
        text = ", ".join(f"{k}={_short(v)}" for k, v in values.items())
        for i, (key, _) in enumerate(request.node.user_properties):
            if key == "measured":
                request.node.user_properties[i] = ("measured", text)
                break
        else:
            record_property("measured", text)

    return note


def _short(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return value


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        item = _CRITERIA[number]
        status = "PASS" if item["outcome"] == "passed" else "FAIL"
        line = f"[{status}] criterion {number:2d}: {item['title']}"
        if item["measured"]:
            line += f" ({item['measured']})"
        terminalreporter.write_line(line)
