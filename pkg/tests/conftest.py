import json

import numpy as np
import pytest

from spoalign.data import Dataset, ScoreRecord
from spoalign.synthgen import ListenerProfile, SynthConfig, generate, neutral_pool

_acceptance_results = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion of the build")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        _acceptance_results.append((number, title, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome in sorted(_acceptance_results):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title}")


def make_dataset(rows, split_name="test"):
    """rows: iterable of (pair_id, listener_id, score); text/audio ids derived from pair_id."""
    return Dataset(
        tuple(ScoreRecord(p, f"t_{p}", f"a_{p}", l, s) for p, l, s in rows), split_name
    )


@pytest.fixture
def lone_zero_pair():
    return make_dataset([("p1", "L1", 0), ("p1", "L2", 8), ("p1", "L3", 9), ("p1", "L4", 10)])


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(rows, name="scores.jsonl"):
        path = tmp_path / name
        path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
        return path

    return _write


@pytest.fixture(scope="session")
def small_synth():
    pool = tuple(neutral_pool(4, noise_std=0.5)) + (ListenerProfile("L_mid", 0.6, 2.0, 0.5),)
    config = SynthConfig(num_texts=40, dim=8, listener_pool=pool, seed=3)
    return generate(config)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
