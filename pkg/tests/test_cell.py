import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsesoc.cell import (
    AgingParams,
    CellParams,
    CellState,
    DomainError,
    SingularityError,
    apply_aging,
    cv_current,
    ocv,
    run_constant_current,
    series_resistance,
    state_after,
    step,
)

P = CellParams()


def ocv_reference(s):
    # the documented default curve, written out independently
    if s <= 0.05:
        return 2.5 + (3.45 - 2.5) * s / 0.05
    if s <= 0.40:
        return 3.45
    x = (s - 0.40) / 0.60
    return 3.45 + (4.2 - 3.45) * (x + x**3) / 2.0


class TestOcv:
    def test_endpoints(self):
        assert ocv(P, 1.0) == pytest.approx(4.2, abs=1e-12)
        assert ocv(P, 0.0) == pytest.approx(2.5, abs=1e-12)

    def test_plateau_constant(self):
        assert ocv(P, 0.10) == ocv(P, 0.40)
        assert np.ptp(ocv(P, np.linspace(0.05, 0.40, 50))) == 0.0

    def test_frozen_value_at_0_7(self):
        assert ocv(P, 0.70) == pytest.approx(3.684375, abs=1e-12)

    @given(st.floats(0.0, 1.0))
    def test_matches_reference(self, s):
        assert ocv(P, s) == pytest.approx(ocv_reference(s), abs=1e-12)

    def test_array_matches_scalar(self):
        s = np.linspace(0, 1, 101)
        assert np.allclose(ocv(P, s), [ocv(P, float(v)) for v in s], atol=1e-14)

    def test_monotone(self):
        v = ocv(P, np.linspace(0, 1, 1001))
        assert np.all(np.diff(v) >= 0)

    def test_out_of_domain(self):
        with pytest.raises(DomainError):
            ocv(P, 1.01)
        with pytest.raises(DomainError):
            ocv(P, np.array([0.5, -0.1]))

    def test_table(self):
        p = CellParams(ocv_table=((0.0, 3.0), (0.5, 3.5), (1.0, 4.0)))
        assert ocv(p, 0.25) == pytest.approx(3.25)
        assert ocv(p, np.array([0.75]))[0] == pytest.approx(3.75)

    def test_bad_table_rejected(self):
        with pytest.raises(ValueError):
            CellParams(ocv_table=((0.0, 3.0), (0.5, 3.5)))
        with pytest.raises(ValueError):
            CellParams(ocv_table=((0.0, 3.8), (0.5, 3.5), (1.0, 4.0)))


class TestStep:
    def test_zero_current_identity(self):
        s = CellState.rested(P, 0.63)
        s2, v = step(s, P, 0.0, 37.0)
        assert s2.soc == s.soc and s2.v_rc == s.v_rc
        assert v == pytest.approx(ocv(P, 0.63), abs=1e-12)

    def test_coulomb_arithmetic(self):
        p = CellParams(eta_discharge=1.0)
        s = CellState.rested(p, 1.0)
        s2, _ = step(s, p, -3.0, 1800.0)
        assert s2.soc == pytest.approx(0.5, abs=1e-12)

    def test_rc_closed_form(self):
        p = CellParams(rc_pairs=((0.01, 1000.0),))
        s = CellState.rested(p, 0.6)
        s2, _ = step(s, p, 1.0, 10.0)
        assert s2.v_rc[0] == pytest.approx(0.01 * (1 - math.exp(-1.0)), abs=1e-15)

    def test_charge_efficiency(self):
        s2, _ = step(CellState.rested(P, 0.5), P, 3.0, 360.0)
        assert s2.soc == pytest.approx(0.5 + 0.99 * 0.1, abs=1e-12)

    def test_terminal_voltage_sign(self):
        s = CellState.rested(P, 0.7)
        _, v_ch = step(s, P, 3.0, 0.1)
        _, v_dis = step(s, P, -3.0, 0.1)
        assert v_dis < ocv(P, 0.7) < v_ch

    def test_clamp_sets_flag(self):
        s = CellState.rested(P, 0.999)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s2, _ = step(s, P, 3.0, 3600.0)
        assert s2.soc == 1.0 and s2.clamped

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            step(CellState.rested(P, 0.5), P, 1.0, 0.0)

    def test_series_resistance_grows_at_low_soc(self):
        assert series_resistance(P, 1.0) == pytest.approx(P.r0)
        assert series_resistance(P, 0.2) > series_resistance(P, 0.4) > P.r0


class TestCvCurrent:
    def test_already_at_setpoint(self):
        s = CellState.rested(P, 1.0)
        assert cv_current(s, P, 4.2) == pytest.approx(0.0, abs=1e-12)

    def test_linear_solve(self):
        p = CellParams(ocv_table=((0.0, 3.0), (0.5, 4.1), (1.0, 4.3)), r0=0.05, r0_soc_coeff=0.0,
                       rc_pairs=((0.01, 100.0),))
        s = CellState(soc=0.5, v_rc=(0.05,))
        assert cv_current(s, p, 4.2) == pytest.approx(1.0, abs=1e-12)

    def test_clamped_to_charge_limit(self):
        p = CellParams(r0=0.01, r0_soc_coeff=0.0)
        s = CellState.rested(p, 0.7)  # ocv 3.684 V, 10 mOhm -> ~50 A unclamped
        assert cv_current(s, p, 4.2) == p.i_max_charge_a

    def test_zero_resistance(self):
        p = CellParams(r0=0.0)
        with pytest.raises(SingularityError):
            cv_current(CellState.rested(p, 0.5), p, 4.2)


class TestAging:
    def test_identity(self):
        assert apply_aging(P, AgingParams(), 0.0) == P

    def test_eol_capacity(self):
        aged = apply_aging(P, AgingParams(fade_per_fce=0.005), 40.0)
        assert aged.capacity_ah == pytest.approx(0.8 * P.capacity_ah, abs=1e-12)

    def test_r0_growth(self):
        aged = apply_aging(P, AgingParams(r0_growth_per_fce=0.01), 10.0)
        assert aged.r0 == pytest.approx(1.10 * P.r0, abs=1e-15)

    def test_negative_fce(self):
        with pytest.raises(ValueError):
            apply_aging(P, AgingParams(), -1.0)


class TestConstantCurrent:
    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.3, 0.9), st.floats(-6.0, 3.0), st.integers(1, 400))
    def test_matches_stepping(self, soc0, current, n):
        dt = 0.5
        s = CellState.rested(P, soc0)
        soc, v, vrc = run_constant_current(s, P, current, dt, n)
        ref = s
        for k in range(n):
            ref, vk = step(ref, P, current, dt)
            if k == n - 1:
                assert v[k] == pytest.approx(vk, abs=1e-9)
        assert soc[-1] == pytest.approx(ref.soc, abs=1e-12)
        end = state_after(s, P, current, dt, n, soc, vrc)
        assert np.allclose(end.v_rc, ref.v_rc, atol=1e-12)
        assert end.throughput_ah == pytest.approx(ref.throughput_ah, rel=1e-9)
