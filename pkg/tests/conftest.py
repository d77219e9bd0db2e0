from __future__ import annotations

import numpy as np
import pytest

from rrte.experiments import ExperimentConfig, simulate_data, travel_times

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[criterion])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


_CACHE: dict = {}


def cached_data(cfg: ExperimentConfig):
    """Forward data plus travel times, shared across the session per phantom and grid."""
    key = (cfg.glyph, cfg.c_a, cfg.mu_s, cfg.placement, cfg.m, cfg.forward_refine, cfg.m_alpha)
    if key not in _CACHE:
        data = simulate_data(cfg)
        _CACHE[key] = (data, travel_times(data))
    return _CACHE[key]


@pytest.fixture(scope="session")
def letter_a():
    return cached_data(ExperimentConfig(glyph="A", c_a=5.0))


@pytest.fixture(scope="session")
def small_data():
    """Coarse 10x10 inversion grid with 11 sources; quick enough for unit tests."""
    return cached_data(ExperimentConfig(glyph="A", c_a=5.0, m=10, m_alpha=10))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
