import numpy as np
import pytest

from cflab.dataset import (
    build_index_maps,
    binarize_implicit,
    split_train_test,
    synthetic_ratings,
)


def write_csv(path, rows, header="userId,movieId,rating,timestamp"):
    lines = [header] + [",".join(str(x) for x in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def csv_writer(tmp_path):
    def _write(rows, name="ratings.csv", **kw):
        return write_csv(tmp_path / name, rows, **kw)
    return _write


@pytest.fixture(scope="session")
def synthetic_table():
    return synthetic_ratings(m=40, n=80, p=4, density=0.2, seed=3)


@pytest.fixture(scope="session")
def implicit_split(synthetic_table):
    maps = build_index_maps(synthetic_table)
    return split_train_test(binarize_implicit(synthetic_table, maps), 0.8, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker
    entry = _CRITERIA.setdefault(number, {"title": title, "outcomes": [], "notes": []})
    if report.when == "call" or report.outcome != "passed":
        entry["outcomes"].append(report.outcome)
    entry["notes"] += [v for k, v in report.user_properties if k == "note"]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["outcomes"] and all(o == "passed" for o in entry["outcomes"]) else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {entry['title']}")
        for note in entry["notes"]:
            terminalreporter.write_line(f"              {note}")
