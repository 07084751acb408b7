import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uavsec.config import ExperimentConfig, PhysicalParams
from uavsec.geometry import Scenario, derive_seed, realize_channels, sample_scenario

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DEFAULTS = PhysicalParams()


def layout(ut, ur, ue, params=DEFAULTS, quotas=None, seed=0):
    """Scenario and channels for hand-placed nodes."""
    ut, ur, ue = (np.asarray(x, dtype=float).reshape(-1, 3) for x in (ut, ur, ue))
    if quotas is None:
        quotas = (len(ut),) * len(ur)
    scenario = Scenario(ut, ur, ue, params, tuple(quotas))
    return scenario, realize_channels(scenario, seed)


def random_instance(seed, **changes):
    """Scenario and channels for a random layout under (modified) defaults."""
    from dataclasses import replace
    cfg = replace(ExperimentConfig(), **changes)
    s = derive_seed(seed, "test")
    scenario = sample_scenario(cfg, s)
    return cfg, scenario, realize_channels(scenario, s)


@pytest.fixture
def params():
    return DEFAULTS


# (criterion, passed, detail) lines collected by the acceptance suite
VERDICTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
