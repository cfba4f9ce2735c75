from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvac_lyapunov.errors import DegenerateDynamicsError, InvalidModelError
from hvac_lyapunov.simulation import reference_building
from hvac_lyapunov.solver import compute_envelope
from hvac_lyapunov.thermal import (
    Building,
    BuildingConfig,
    ZoneParams,
    comfort_rate_interval,
    derive_coefficients,
    step_temperature,
    validate_controllability,
)

from conftest import C, R


def exact_step(t_in, m, t_out, q, r, c, tau=300, c_air=Fr("1.012"), ts=Fr("12.8")):
    """Rational-arithmetic zone update used as an oracle."""
    r, c = Fr(str(r)), Fr(str(c))
    a = Fr(tau) / (r * c)
    b = Fr(tau) * c_air / c
    return ((1 - a) * Fr(str(t_in)) + b * Fr(str(m)) * (ts - Fr(str(t_in)))
            + a * Fr(str(t_out)) + Fr(tau) / c * Fr(str(q)))


class TestCoefficients:
    def test_zone1_values(self):
        a, b, d = derive_coefficients(0.0053, 550000.0, 300.0, 1.012)
        assert a == pytest.approx(0.102916, abs=5e-7)
        assert b == pytest.approx(5.5200e-4, rel=1e-4)
        assert d == pytest.approx(0.897084, abs=5e-7)

    def test_zone4_values_match_exact_ratio(self):
        a, b, _ = derive_coefficients(0.0067, 620000.0, 300.0, 1.012)
        assert a == pytest.approx(float(Fr(300) / (Fr("0.0067") * 620000)), rel=1e-15)
        assert a == pytest.approx(0.0722195, abs=5e-8)
        assert b == pytest.approx(4.8968e-4, rel=1e-4)

    def test_short_slot_limit(self):
        a, b, d = derive_coefficients(0.0053, 550000.0, 1e-9, 1.012)
        assert a < 1e-9 and b < 1e-11 and d == pytest.approx(1.0)

    def test_d_is_one_minus_a_exactly(self, building):
        z = building.stacked
        assert np.all(z.d == 1.0 - z.a)
        assert np.allclose(z.a + z.d, 1.0, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("bad", [(0.0, 1.0, 300, 1.0), (1.0, -1.0, 300, 1.0),
                                     (1.0, 1.0, 0.0, 1.0), (1.0, 1.0, 300, 0.0)])
    def test_non_positive_inputs_rejected(self, bad):
        with pytest.raises(InvalidModelError):
            derive_coefficients(*bad)

    def test_slot_longer_than_time_constant_rejected(self):
        with pytest.raises(InvalidModelError):
            derive_coefficients(0.001, 1000.0, 300.0, 1.012)


class TestModelValidation:
    def test_d_mismatch_rejected(self, zone1):
        with pytest.raises(InvalidModelError):
            ZoneParams(zone1.r_thermal, zone1.c_thermal, zone1.a, zone1.b, zone1.d + 1e-12,
                       18.0, 26.0, 0.0, 450.0)

    def test_band_and_rate_bounds(self, cfg):
        with pytest.raises(InvalidModelError):
            ZoneParams.from_rc(0.0053, 550000.0, cfg, t_min=26, t_max=18, m_min=0, m_max=450)
        with pytest.raises(InvalidModelError):
            ZoneParams.from_rc(0.0053, 550000.0, cfg, t_min=18, t_max=26, m_min=450, m_max=450)

    def test_building_invariants(self, building):
        zones = building.zones
        with pytest.raises(InvalidModelError):
            Building(BuildingConfig(n_zones=4, m_total_cap=1800.0), zones)
        with pytest.raises(InvalidModelError):
            Building(BuildingConfig(n_zones=4, t_supply=18.0), zones)
        with pytest.raises(InvalidModelError):
            Building(BuildingConfig(n_zones=3), zones)

    @pytest.mark.parametrize("kw", [{"gamma": 1.5}, {"eta": 0.0}, {"mu": -1.0}, {"n_zones": 0}])
    def test_config_invariants(self, kw):
        with pytest.raises(InvalidModelError):
            BuildingConfig(**{"n_zones": 4, **kw})


class TestStep:
    def test_zone1_example_against_rational_oracle(self, zone1, cfg):
        oracle = exact_step(24, 200, 30, 0.15, 0.0053, 550000)
        got = step_temperature(24.0, 200.0, 30.0, 0.15, zone1, cfg)
        assert got == pytest.approx(float(oracle), abs=1e-12)
        assert got == pytest.approx(23.381, abs=5e-4)

    def test_free_relaxation(self, zone1, cfg):
        got = step_temperature(24.0, 0.0, 30.0, 0.0, zone1, cfg)
        assert got == pytest.approx(zone1.d * 24.0 + zone1.a * 30.0, abs=1e-12)

    @pytest.mark.parametrize("m", [0.0, 100.0, 450.0])
    def test_supply_temperature_fixed_point(self, zone1, cfg, m):
        ts = cfg.t_supply
        assert step_temperature(ts, m, ts, 0.0, zone1, cfg) == pytest.approx(ts, abs=1e-12)

    def test_deterministic(self, building, cfg):
        z = building.stacked
        x = np.array([20.0, 21.0, 22.0, 23.0])
        assert np.array_equal(step_temperature(x, 100.0, 30.0, 0.15, z, cfg),
                              step_temperature(x, 100.0, 30.0, 0.15, z, cfg))

    @settings(max_examples=200, deadline=None)
    @given(t_in=st.floats(18, 26), m=st.floats(0, 449), t_out=st.floats(18.7, 36.4),
           q=st.floats(0.1, 0.2), zone=st.integers(0, 3))
    def test_monotone_in_inputs(self, t_in, m, t_out, q, zone):
        b = reference_building()
        zp, cfg = b.zones[zone], b.cfg
        base = step_temperature(t_in, m, t_out, q, zp, cfg)
        assert step_temperature(t_in, m + 1.0, t_out, q, zp, cfg) < base
        assert step_temperature(t_in, m, t_out + 0.5, q, zp, cfg) > base
        assert step_temperature(t_in, m, t_out, q + 0.5, zp, cfg) > base

    @settings(max_examples=100, deadline=None)
    @given(t_in=st.floats(18, 26), m=st.floats(0, 450), t_out=st.floats(18.7, 36.4),
           q=st.floats(0.1, 0.2), zone=st.integers(0, 3))
    def test_matches_rational_oracle(self, t_in, m, t_out, q, zone):
        b = reference_building()
        got = step_temperature(t_in, m, t_out, q, b.zones[zone], b.cfg)
        assert got == pytest.approx(float(exact_step(t_in, m, t_out, q, R[zone], C[zone])), abs=1e-11)


class TestComfortInterval:
    def test_endpoints_solve_inversion(self, zone1, cfg):
        iv = comfort_rate_interval(24.0, 30.0, 0.15, zone1, cfg)
        c = zone1.d * 24.0 + zone1.a * 30.0 + cfg.tau / zone1.c_thermal * 0.15
        assert iv.m_at_t_max == pytest.approx((c - 26.0) / (zone1.b * (24.0 - cfg.t_supply)))
        assert iv.m_at_t_min == pytest.approx((c - 18.0) / (zone1.b * (24.0 - cfg.t_supply)))
        assert iv.lo == 0.0  # zone would stay below 26 without air
        assert iv.m_at_t_min > 450.0 and iv.hi == 450.0  # reaching 18 needs more than m_max
        assert not iv.empty

    def test_round_trip_lands_on_bounds(self, zone1, cfg):
        iv = comfort_rate_interval(18.5, 18.7, 0.1, zone1, cfg)
        assert 0.0 < iv.hi < 450.0
        assert step_temperature(18.5, iv.hi, 18.7, 0.1, zone1, cfg) == pytest.approx(18.0, abs=1e-9)
        hot = comfort_rate_interval(26.0, 36.4, 0.2, zone1, cfg)
        assert step_temperature(26.0, hot.lo, 36.4, 0.2, zone1, cfg) == pytest.approx(26.0, abs=1e-9)

    def test_empty_when_max_rate_is_not_enough(self, cfg):
        zp = ZoneParams.from_rc(0.0053, 550000.0, cfg, t_min=18, t_max=26, m_min=0, m_max=5)
        iv = comfort_rate_interval(26.0, 45.0, 0.2, zp, cfg)
        assert iv.empty
        assert step_temperature(26.0, 5.0, 45.0, 0.2, zp, cfg) > 26.0

    def test_cooling_mode_required(self, zone1, cfg):
        with pytest.raises(DegenerateDynamicsError):
            comfort_rate_interval(cfg.t_supply, 30.0, 0.15, zone1, cfg)

    @settings(max_examples=200, deadline=None)
    @given(t_in=st.floats(18, 26), t_out=st.floats(18.7, 36.4), q=st.floats(0.1, 0.2),
           frac=st.floats(0, 1), zone=st.integers(0, 3))
    def test_any_rate_inside_keeps_band(self, t_in, t_out, q, frac, zone):
        b = reference_building()
        zp, cfg = b.zones[zone], b.cfg
        iv = comfort_rate_interval(t_in, t_out, q, zp, cfg)
        if iv.empty:
            return
        m = iv.lo + frac * (iv.hi - iv.lo)
        t_next = step_temperature(t_in, m, t_out, q, zp, cfg)
        assert zp.t_min - 1e-9 <= t_next <= zp.t_max + 1e-9


class TestControllability:
    def test_reference_configuration(self, building, envelope):
        rep = validate_controllability(building, envelope)
        assert rep.passed, rep.failures()
        # regression fixture from the first verified evaluation
        assert rep.airflow_slack == pytest.approx(1400 - np.sum(rep.airflow_required))
        assert np.all(rep.band_margin > 0)
        assert rep.to_dict()["passed"] is True

    def test_airflow_term_by_hand(self, building, envelope):
        rep = validate_controllability(building, envelope)
        z0 = building.zones[0]
        k = 300 / z0.c_thermal
        want = (z0.a * (26 - envelope.t_out_max) - k * 0.2) / (z0.b * (12.8 - 18))
        assert rep.airflow_required[0] == pytest.approx(want, rel=1e-12)

    def test_zero_cap_fails_airflow_check(self, building, envelope):
        b0 = Building(BuildingConfig(n_zones=4, m_total_cap=0.0), building.zones)
        rep = validate_controllability(b0, envelope)
        assert not rep.airflow_ok
        assert "airflow_cap" in rep.failures()

    def test_tmax_24_needs_override(self, month):
        b = reference_building(24.0)
        env = compute_envelope(month.slot_price, month.slot_t_out, b)
        rep = validate_controllability(b, env)
        assert not rep.airflow_ok
        assert np.sum(rep.airflow_required) > 1400

    def test_min_rate_check_is_non_strict(self, building, envelope):
        # choose t_out_min so that the minimum-rate inequality holds with equality for zone 0
        z0 = building.zones[0]
        k = 300 / z0.c_thermal
        t_out_eq = (z0.t_min - z0.d * z0.t_min - k * 0.1) / z0.a
        env = type(envelope)(**{**envelope.__dict__, "t_out_min": t_out_eq})
        rep = validate_controllability(building, env)
        assert abs(rep.min_rate_slack[0]) < 1e-12
        lhs = z0.d * z0.t_min + z0.a * t_out_eq + k * 0.1
        assert (lhs >= z0.t_min) == bool(rep.min_rate_ok[0])
