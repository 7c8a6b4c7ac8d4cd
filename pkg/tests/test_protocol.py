import numpy as np
import pytest

from pulsesoc import protocol
from pulsesoc.cell import AgingParams, CellParams, CellState
from pulsesoc.protocol import (
    PhaseLog,
    PulseTrainConfig,
    Schedule,
    ScheduleError,
    Step,
    Terminator,
    WatchdogError,
)


def run(steps, params, soc=0.5, **kw):
    return protocol.execute(Schedule("t", tuple(steps)), params, CellState.rested(params, soc), **kw)


class TestScheduleTypes:
    def test_step_needs_terminator(self):
        with pytest.raises(ScheduleError):
            Step("CC", "x", current_a=1.0)

    def test_rest_zero_current(self):
        with pytest.raises(ScheduleError):
            Step("REST", "x", current_a=1.0, duration_s=1.0)

    def test_unique_labels(self):
        s = Step("REST", "a", duration_s=1.0)
        with pytest.raises(ScheduleError):
            Schedule("t", (s, s))

    def test_unknown_kind(self):
        with pytest.raises(ScheduleError):
            Terminator("v_between", 1.0)

    def test_json_round_trip(self, params):
        sched = protocol.build_pulse_train(params)
        assert Schedule.from_json(sched.to_json()) == sched

    def test_validate_rejects_over_limit(self, params):
        sched = Schedule("t", (Step("CC", "x", current_a=-20.0, duration_s=1.0),))
        with pytest.raises(ScheduleError):
            protocol.validate(sched, params)


class TestBuilders:
    def test_capacity_check(self, params):
        sched = protocol.build_capacity_check(params)
        assert len(sched) == 5
        cc = [s for s in sched.steps if s.kind == "CC"]
        assert [abs(s.current_a) for s in cc] == pytest.approx([0.3, 0.3])
        protocol.validate(sched, params)

    def test_pulse_train_defaults(self, params):
        cfg = PulseTrainConfig()
        assert cfg.breakpoints == pytest.approx([0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2])
        assert cfg.pulse_c_rate == 1.0
        sched = protocol.build_pulse_train(params)
        charges = [s for s in sched.steps if s.label.endswith("/charge") and s.label != "pulse/charge"]
        assert len(charges) == 8
        assert all(s.current_a == pytest.approx(3.0) for s in charges)

    def test_block_span(self, params):
        block = protocol.pulse_block(params, 0.5, 1.0, 60.0, 60.0)
        assert sum(s.duration_s for s in block) == 180.0

    def test_breakpoint_order(self, params):
        with pytest.raises(ScheduleError):
            protocol.build_pulse_train(params, breakpoints=(0.2, 0.5))
        with pytest.raises(ScheduleError):
            protocol.build_pulse_train(params, breakpoints=(1.0, 0.5))

    def test_aging_cycle(self, params):
        sched = protocol.build_aging_cycle(params)
        assert len(sched) == 3
        assert {abs(s.current_a) for s in sched.steps if s.kind == "CC"} == {3.0}
        cv = [s for s in sched.steps if s.kind == "CV"][0]
        assert cv.terminators[0].kind == "i_le" and cv.terminators[0].value == 0.150


class TestExecute:
    def test_rest_samples(self, params):
        log, _ = run([Step("REST", "r", duration_s=600.0)], params)
        assert len(log) == 6000
        assert np.all(log.current_a == 0.0)
        assert log.t_s[-1] == pytest.approx(600.0)

    def test_goto_soc_time(self):
        p = CellParams(eta_discharge=1.0)
        log, st = run([Step("GOTO_SOC", "g", current_a=-3.0,
                            terminators=(Terminator("soc_le", 0.9),))], p, soc=1.0)
        assert log.t_s[-1] == pytest.approx(360.0, abs=0.1 + 1e-9)
        assert st.soc <= 0.9 + 1e-12

    def test_cv_terminates_at_cutoff(self, params):
        steps = protocol.build_aging_cycle(params).steps[1:]
        log, _ = run(steps, params, soc=0.5)
        cv = log.indices("aging/charge/cv")
        assert log.current_a[cv[-1]] <= 0.150
        assert np.all(log.current_a[cv[:-1]] > 0.150)
        assert np.all(log.voltage_v[cv] <= params.v_max + 1e-9)

    def test_abort_stops_schedule(self, params):
        steps = [Step("CC", "d", current_a=-15.0, duration_s=10_000.0,
                      terminators=(Terminator("v_le", params.v_min, "abort"),)),
                 Step("REST", "after", duration_s=10.0)]
        log, _ = run(steps, params, soc=0.3)
        assert log.aborted_by == "d"
        assert not log.has_label("after")

    def test_watchdog(self, params):
        steps = [Step("REST", "r", terminators=(Terminator("v_ge", 5.0),))]
        with pytest.raises(WatchdogError):
            run(steps, params, max_step_s=100.0)

    def test_deterministic(self, params):
        a, _ = run(protocol.build_aging_cycle(params).steps, params, voltage_noise_v=0.001, seed=3)
        b, _ = run(protocol.build_aging_cycle(params).steps, params, voltage_noise_v=0.001, seed=3)
        assert np.array_equal(a.voltage_v, b.voltage_v)


class TestPhaseLog:
    def test_prefix_indices(self, pulse_log):
        idx = pulse_log.indices("pulse/0.5000")
        assert len(idx) > 0
        with pytest.raises(KeyError):
            pulse_log.indices("pulse/0.55")

    def test_csv_round_trip(self, params, tmp_path):
        log, _ = run(protocol.build_capacity_check(params, time_compression=100).steps[:2], params)
        log.to_csv(tmp_path / "log.csv")
        back = PhaseLog.from_csv(tmp_path / "log.csv")
        assert back.sample_labels() == log.sample_labels()
        assert np.allclose(back.voltage_v, log.voltage_v, atol=5e-7)
        assert back.sample_dt == pytest.approx(log.sample_dt)

    def test_pulse_blocks(self, pulse_log):
        blocks = list(protocol.iter_pulse_blocks(pulse_log))
        assert len(blocks) == 8
        for _, seg in blocks:
            assert [len(seg[k]) for k in ("charge", "rest", "discharge")] == [600, 600, 600]


class TestMeasureCapacity:
    def _log(self, current, dt=1.0):
        n = len(current)
        return PhaseLog(dt, np.asarray(current, float), np.zeros(n), np.zeros(n),
                        np.zeros(n, int), ["w"])

    def test_constant(self):
        assert protocol.measure_capacity(self._log(np.full(36001, -0.3)), "w") == pytest.approx(3.0)

    def test_zero(self):
        assert protocol.measure_capacity(self._log(np.zeros(100)), "w") == 0.0

    def test_simulated_check(self, params):
        sched = protocol.build_capacity_check(params, time_compression=10)
        log, _ = protocol.execute(sched, params, CellState.rested(params, 0.5))
        cap = protocol.measure_capacity(log, "capacity/discharge")
        assert abs(cap - 3.0) / 3.0 < 0.01


class TestFullProcedure:
    def test_until_one_stops_after_first_check(self, params):
        its = protocol.full_procedure(params, AgingParams(), until=1.0, time_compression=20,
                                      keep_logs="none")
        assert len(its) == 1 and its[0].cycle_index == 0

    def test_one_capacity_per_iteration(self, params):
        its = protocol.full_procedure(params, AgingParams(fade_per_fce=0.05), None, until=0.8,
                                      cycles_per_check=1, time_compression=20, keep_logs="none")
        assert all(np.isfinite(it.capacity_ah) for it in its)
        assert [it.cycle_index for it in its] == list(range(len(its)))
        assert its[-1].capacity_ah <= 0.8 * its[0].true_capacity_ah + 1e-9 or its[-1].truncated
