import math

import pytest

from ehcell.config import (CONFIG_KEYS, InvalidParameter, NetworkConfig, SchemePolicy, dbm_to_watts, dump_config,
                           from_flat, load_config, validate, watts_to_dbm, watts_to_units)


def test_defaults_give_milliwatt_unit():
    cfg = validate(NetworkConfig.paper())
    assert cfg.eps == pytest.approx(1e-3)
    assert cfg.eps * cfg.levels == cfg.battery.capacity_watts
    assert cfg.deployment.p_rx_watts == pytest.approx(10 ** (-6.5 - 3))
    assert cfg.deployment.bs_radius_m == pytest.approx(60.0)


def test_desk_scale_keeps_physical_rates():
    d, p = NetworkConfig.desk(), NetworkConfig.paper()
    assert d.levels == 200
    assert d.mean_harvest_units * d.eps == pytest.approx(p.mean_harvest_units * p.eps)
    assert d.default_warmup() == 200
    assert d.window_radius == 300.0


def test_validate_collects_every_problem():
    cfg = NetworkConfig().with_values(alpha=2.0, sigma_db=-1.0, n_rb=0)
    with pytest.raises(InvalidParameter) as exc:
        validate(cfg)
    assert {name for name, _ in exc.value.problems} == {"alpha", "sigma_db", "n_rb"}


def test_validate_idempotent():
    cfg = NetworkConfig.desk()
    assert validate(validate(cfg)) == cfg


def test_broadcast_cost_must_fit_battery():
    with pytest.raises(InvalidParameter):
        validate(NetworkConfig.desk().with_values(broadcast_cost_units=200))
    assert NetworkConfig.desk().with_values(broadcast_cost_units=10).broadcast_levels == 190


def test_window_too_small_rejected():
    with pytest.raises(InvalidParameter):
        validate(NetworkConfig().with_values(window_radius_m=100.0))


def test_unknown_and_non_integer_keys():
    with pytest.raises(InvalidParameter):
        from_flat({"bogus": 1})
    with pytest.raises(InvalidParameter):
        from_flat({"levels": 10.5})
    assert from_flat({"levels": 300.0}).levels == 300


def test_derived_keys():
    cfg = from_flat({"bs_radius_m": 40.0, "ongrid_pmax_mw": 20.0})
    assert cfg.deployment.bs_radius_m == pytest.approx(40.0)
    assert cfg.deployment.ongrid_pmax_watts == pytest.approx(0.02)
    assert "bs_radius_m" in CONFIG_KEYS


def test_slot_scale_scales_rates():
    cfg = NetworkConfig().with_values(slot_scale=0.5)
    assert cfg.lambda_mt_eff == pytest.approx(0.5 * cfg.deployment.lambda_mt)
    assert cfg.harvest_rate_eff == pytest.approx(50.0)


def test_load_and_dump_round_trip(tmp_path):
    cfg = NetworkConfig.desk().with_values(p_rx_dbm=-60.0, burst_size=4)
    path = tmp_path / "c.toml"
    path.write_text(dump_config(cfg))
    back = load_config(path)
    assert back.to_flat() == pytest.approx(cfg.to_flat())


def test_load_rejects_tables_and_bad_values(tmp_path):
    p = tmp_path / "t.toml"
    p.write_text("[channel]\nalpha = 4\n")
    with pytest.raises(InvalidParameter):
        load_config(p)
    p.write_text("alpha = 1.0\nlevels = -3\n")
    with pytest.raises(InvalidParameter) as exc:
        load_config(p)
    assert len(exc.value.problems) == 2


def test_unit_conversions():
    assert watts_to_dbm(dbm_to_watts(-65.0)) == pytest.approx(-65.0)
    assert watts_to_units(0.0, 1e-3) == 0
    assert watts_to_units(1e-3, 1e-3) == 1
    assert watts_to_units(1.0001e-3, 1e-3) == 2
    assert watts_to_units(2.5e-3, 1e-3) == 3


def test_scheme_names():
    assert SchemePolicy.parse("w/o-A") is SchemePolicy.WITHOUT_A
    assert SchemePolicy.parse("rt-A") is SchemePolicy.REAL_TIME_A
    assert SchemePolicy.parse("on-grid") is SchemePolicy.ON_GRID
    with pytest.raises(ValueError):
        SchemePolicy.parse("best")
