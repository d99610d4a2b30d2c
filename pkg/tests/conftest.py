import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hflm.core import PanelKind, PanelSpec, SeriesPanel  # noqa: E402
from hflm.ingest import seasonal_demean  # noqa: E402


def random_anomaly(spec, rng):
    raw = SeriesPanel(spec, rng.normal(size=spec.observation_count))
    return seasonal_demean(raw)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_spec():
    """The two-lag, three-day, two-replicate layout used in the worked examples."""
    return PanelSpec(period_length=3, max_lag_count=2, replicate_count=2)


@pytest.fixture
def small_panels(rng):
    spec = PanelSpec(period_length=6, max_lag_count=3, replicate_count=4)
    return random_anomaly(spec, rng), random_anomaly(spec, rng)


def anomaly(spec, values):
    return SeriesPanel(spec, np.asarray(values, float), PanelKind.ANOMALY)


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_line():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
    terminalreporter.write_line("criterion 9: not run  full-scale mode needs user-supplied data; see README")
