import datetime as dt
import time

import pytest

from chartfit import cli
from chartfit.ingest import TrackRecord

DEMO_SEED = 7


def make_track(**overrides) -> TrackRecord:
    base = dict(
        track_id="t0",
        title="Song",
        artist="Artist",
        release_date=dt.date(2001, 1, 15),
        genre="pop",
        acousticness=0.2,
        danceability=0.6,
        energy=0.7,
        instrumentalness=0.01,
        liveness=0.1,
        speechiness=0.05,
        valence=0.5,
        loudness=-6.0,
        popularity=50.0,
        tempo=120.0,
        mode=1,
        key=0,
        duration=200000.0,
    )
    base.update(overrides)
    return TrackRecord(**base)


@pytest.fixture
def track_factory():
    return make_track


@pytest.fixture(scope="session")
def demo_runs(tmp_path_factory):
    """Two independent ``demo --seed 7`` runs; the first one is timed."""
    runs = []
    for name in ("demo_a", "demo_b"):
        out = tmp_path_factory.mktemp(name)
        start = time.perf_counter()
        code = cli.main(["demo", "--seed", str(DEMO_SEED), "--out", str(out)])
        runs.append({"out": out, "code": code, "seconds": time.perf_counter() - start})
    return runs


@pytest.fixture(scope="session")
def demo_dir(demo_runs):
    return demo_runs[0]["out"]


# acceptance reporting ------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL/SKIP line for an acceptance criterion."""

    def record(name: str, status: str, detail: str = "") -> None:
        line = f"[{status}] {name}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
