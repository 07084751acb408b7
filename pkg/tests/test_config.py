import math

import pytest
from hypothesis import given, strategies as st

from uavsec.config import (ConfigError, ExperimentConfig, InfeasibleConfigError, PhysicalParams,
                           Region, db_to_linear, dbm_to_watts, linear_to_db, parse_power,
                           parse_ratio, watts_to_dbm)


def test_default_parameters_match_the_simulation_table():
    p = PhysicalParams()
    assert p.path_loss_exponent == 2.0
    assert math.isclose(p.noise_power, 1e-9)
    assert math.isclose(p.power_budget, 1e-2)
    assert p.bandwidth == 1e5
    assert math.isclose(p.snr_threshold, 10.0)
    cfg = ExperimentConfig()
    assert (cfg.n_ut, cfg.n_ur, cfg.n_ue, cfg.quota, cfg.repetitions) == (12, 3, 2, 4, 100)


@pytest.mark.parametrize("text, watts", [
    ("10dBm", 0.01), ("-60dBm", 1e-9), ("0.01W", 0.01), ("10mW", 0.01), (0.25, 0.25), ("1e-3", 1e-3),
])
def test_parse_power(text, watts):
    assert math.isclose(parse_power(text), watts, rel_tol=1e-12)


@pytest.mark.parametrize("bad", ["10dB", "abc", "-1W", 0])
def test_parse_power_rejects(bad):
    with pytest.raises(ConfigError):
        parse_power(bad)


def test_parse_ratio():
    assert math.isclose(parse_ratio("10dB"), 10.0)
    assert parse_ratio(3.5) == 3.5
    with pytest.raises(ConfigError):
        parse_ratio("10dBm")


@given(st.floats(-100, 60))
def test_dbm_round_trip(x):
    assert math.isclose(watts_to_dbm(dbm_to_watts(x)), x, abs_tol=1e-9)
    assert math.isclose(linear_to_db(db_to_linear(x)), x, abs_tol=1e-9)


@pytest.mark.parametrize("field", ["noise_power", "power_budget", "bandwidth", "snr_threshold",
                                   "path_loss_exponent"])
def test_physical_params_must_be_positive(field):
    with pytest.raises(ConfigError) as err:
        PhysicalParams(**{field: 0.0})
    assert err.value.field == field


def test_region_bounds_validated():
    with pytest.raises(ConfigError):
        Region(ut_z=(500.0, 500.0))
    with pytest.raises(ConfigError):
        Region(width=0)


def test_zero_quota_is_infeasible():
    with pytest.raises(InfeasibleConfigError) as err:
        ExperimentConfig(quota=0)
    assert err.value.field == "quota"


def test_infeasible_sweep_point_rejected_up_front():
    with pytest.raises(InfeasibleConfigError):
        ExperimentConfig(sweep_axis="M", sweep_values=(2, 3), quota_schedule=(6, 3))
    with pytest.raises(InfeasibleConfigError):
        ExperimentConfig(sweep_axis="N", sweep_values=(10, 13))


def test_unknown_scheme_and_axis():
    with pytest.raises(ConfigError):
        ExperimentConfig(stage2=("XYZ",))
    with pytest.raises(ConfigError):
        ExperimentConfig(sweep_axis="bogus", sweep_values=(1,))
    with pytest.raises(ConfigError):
        ExperimentConfig(repetitions=0)


def test_points_apply_axis_units_and_quota_schedule():
    cfg = ExperimentConfig(sweep_axis="M", sweep_values=(2, 3, 4, 5, 6, 7),
                           quota_schedule=(6, 4, 3, 3, 3, 2))
    pts = list(cfg.points())
    assert [(c.n_ur, c.quota) for _, _, c in pts] == [(2, 6), (3, 4), (4, 3), (5, 3), (6, 3), (7, 2)]
    p0 = [c.params.power_budget for _, _, c in ExperimentConfig(
        sweep_axis="P0", sweep_values=(10.0, 18.0)).points()]
    assert math.isclose(p0[0], 0.01) and math.isclose(p0[1], 10 ** 1.8 / 1000)
    noise = next(ExperimentConfig(sweep_axis="sigma2", sweep_values=(-50.0,)).points())[2]
    assert math.isclose(noise.params.noise_power, 1e-8)
    gamma = next(ExperimentConfig(sweep_axis="gamma", sweep_values=(6.0,)).points())[2]
    assert math.isclose(gamma.params.snr_threshold, 10 ** 0.6)
    r = next(ExperimentConfig(sweep_axis="R", sweep_values=(5,)).points())[2]
    assert r.n_ue == 5 and r.sweep_axis is None


def test_unswept_config_is_one_point_labelled_by_n():
    pts = list(ExperimentConfig().points())
    assert len(pts) == 1 and pts[0][1] == 12.0


def test_schemes_are_the_product_of_both_stages():
    cfg = ExperimentConfig(stage1=("PMA", "RMS"), stage2=("OCFA", "AS"))
    assert cfg.schemes == [("PMA", "OCFA"), ("PMA", "AS"), ("RMS", "OCFA"), ("RMS", "AS")]
