import time

import pytest

from densecount.config import METHODS, PipelineConfig
from densecount.pipeline import build_scene, run_experiment


@pytest.fixture(scope="session")
def dense_run():
    """Nominal dense run at the default seed, shared by every test that needs it.

    Returns (bundle, report, wall-clock seconds for the full run).
    """
    cfg = PipelineConfig(preset="dense", count=745)
    start = time.perf_counter()
    bundle = build_scene(cfg)
    report = run_experiment(cfg, METHODS, write=False, view_metrics=False, bundle=bundle)
    return bundle, report, time.perf_counter() - start


VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line, then assert it."""
    lines = request.config.stash.setdefault(VERDICTS, [])

    def record(number: int, ok: bool, detail: str):
        lines.append((number, "PASS" if ok else "FAIL", detail))
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
