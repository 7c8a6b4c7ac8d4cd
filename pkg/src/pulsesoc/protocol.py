"""Declarative cycler schedules and their execution against the cell model.

A :class:`Schedule` is an ordered list of :class:`Step` objects (CC, CV, REST,
GOTO_SOC), each ending on the first terminator that fires. :func:`execute`
runs it at a fixed sample interval and produces a :class:`PhaseLog` in which
every sample carries the label of the step that produced it.

Labels are hierarchical, ``/``-separated; pulse blocks use
``pulse/<breakpoint>/{charge,rest,discharge}``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from . import cell
from .cell import AgingParams, CellParams, CellState, apply_aging

logger = logging.getLogger(__name__)

SCHEDULE_FORMAT = "pulsesoc-schedule"
SCHEDULE_VERSION = 1
LOG_HEADER = ("t_s", "current_a", "voltage_v", "soc_true", "label")

STEP_KINDS = ("CC", "CV", "REST", "GOTO_SOC")
TERMINATOR_KINDS = ("v_le", "v_ge", "i_le", "soc_le", "soc_ge", "elapsed_ge")

_SOC_TOL = 1e-12
_CHUNK = 200_000


class ScheduleError(ValueError):
    pass


class WatchdogError(RuntimeError):
    """A step ran past the watchdog limit without any terminator firing."""


@dataclass(frozen=True)
class Terminator:
    kind: str
    value: float
    action: str = "next"  # "next" moves on; "abort" ends the whole schedule

    def __post_init__(self):
        if self.kind not in TERMINATOR_KINDS:
            raise ScheduleError(f"unknown terminator kind {self.kind!r}")
        if self.action not in ("next", "abort"):
            raise ScheduleError(f"unknown terminator action {self.action!r}")


@dataclass(frozen=True)
class Step:
    kind: str
    label: str
    current_a: float = 0.0
    v_set: float | None = None
    duration_s: float | None = None
    terminators: tuple[Terminator, ...] = ()

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise ScheduleError(f"unknown step kind {self.kind!r}")
        object.__setattr__(self, "terminators", tuple(self.terminators))
        if self.duration_s is None and not self.terminators:
            raise ScheduleError(f"step {self.label!r} has no terminator")
        if self.duration_s is not None and self.duration_s <= 0:
            raise ScheduleError(f"step {self.label!r} has non-positive duration")
        if self.kind == "CV" and self.v_set is None:
            raise ScheduleError(f"CV step {self.label!r} needs v_set")
        if self.kind == "REST" and self.current_a != 0.0:
            raise ScheduleError(f"REST step {self.label!r} must carry zero current")
        if self.kind == "GOTO_SOC" and not any(
            t.kind in ("soc_le", "soc_ge") for t in self.terminators
        ):
            raise ScheduleError(f"GOTO_SOC step {self.label!r} needs a soc terminator")


@dataclass(frozen=True)
class Schedule:
    name: str
    steps: tuple[Step, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ScheduleError("schedule is empty")
        labels = [s.label for s in self.steps]
        if len(set(labels)) != len(labels):
            raise ScheduleError("step labels must be unique within a schedule")

    def __len__(self):
        return len(self.steps)

    def to_json(self) -> str:
        doc = {
            "format": SCHEDULE_FORMAT,
            "version": SCHEDULE_VERSION,
            "name": self.name,
            "meta": self.meta,
            "steps": [asdict(s) for s in self.steps],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Schedule":
        doc = json.loads(text)
        if doc.get("format") != SCHEDULE_FORMAT or doc.get("version") != SCHEDULE_VERSION:
            raise ScheduleError("not a version-1 pulsesoc schedule document")
        steps = []
        for s in doc["steps"]:
            terms = tuple(Terminator(**t) for t in s.pop("terminators", []))
            steps.append(Step(terminators=terms, **s))
        return cls(doc["name"], tuple(steps), doc.get("meta", {}))


@dataclass(frozen=True)
class PulseTrainConfig:
    breakpoints: tuple[float, ...] = (0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2)
    pulse_c_rate: float = 1.0
    pulse_s: float = 60.0
    inter_rest_s: float = 60.0
    relax_s: float = 3600.0
    full_rest_s: float = 5400.0
    charge_c_rate: float = 1.0
    discharge_c_rate: float = 1.0


def validate(schedule: Schedule, params: CellParams) -> None:
    """Raise :class:`ScheduleError` if any CC or GOTO_SOC step exceeds cell limits."""
    for s in schedule.steps:
        if s.kind in ("CC", "GOTO_SOC"):
            if s.current_a > params.i_max_charge_a + 1e-12:
                raise ScheduleError(f"{s.label}: {s.current_a} A above charge limit")
            if -s.current_a > params.i_max_discharge_a + 1e-12:
                raise ScheduleError(f"{s.label}: {s.current_a} A above discharge limit")
        if s.kind == "CV" and not params.v_min <= s.v_set <= params.v_max:
            raise ScheduleError(f"{s.label}: v_set outside cell voltage window")


def _cccv_charge(params: CellParams, prefix: str, c_rate: float) -> list[Step]:
    return [
        Step("CC", f"{prefix}/cc", current_a=c_rate * params.capacity_ah,
             terminators=(Terminator("v_ge", params.v_max),)),
        Step("CV", f"{prefix}/cv", v_set=params.v_max,
             terminators=(Terminator("i_le", params.i_cutoff_a),)),
    ]


def build_capacity_check(
    params: CellParams, rest_s: float = 3600.0, time_compression: float = 1.0
) -> Schedule:
    """Low-rate (0.1 C) CCCV charge then CC discharge, with rests."""
    i = 0.1 * params.capacity_ah
    rest = rest_s / time_compression
    steps = _cccv_charge(params, "capacity/charge", 0.1) + [
        Step("REST", "capacity/rest1", duration_s=rest),
        Step("CC", "capacity/discharge", current_a=-i,
             terminators=(Terminator("v_le", params.v_min),)),
        Step("REST", "capacity/rest2", duration_s=rest),
    ]
    return Schedule("capacity-check", tuple(steps),
                    {"c_rate": 0.1, "rest_s": rest, "capacity_ah": params.capacity_ah})


def pulse_label(breakpoint: float, segment: str) -> str:
    return f"pulse/{breakpoint:.4f}/{segment}"


def pulse_block(
    params: CellParams, breakpoint: float, pulse_c_rate: float, pulse_s: float,
    inter_rest_s: float,
) -> list[Step]:
    """Charge pulse, rest, discharge pulse of equal magnitude."""
    i = pulse_c_rate * params.capacity_ah
    return [
        Step("CC", pulse_label(breakpoint, "charge"), current_a=i, duration_s=pulse_s,
             terminators=(Terminator("v_ge", params.v_max, "abort"),)),
        Step("REST", pulse_label(breakpoint, "rest"), duration_s=inter_rest_s),
        Step("CC", pulse_label(breakpoint, "discharge"), current_a=-i, duration_s=pulse_s,
             terminators=(Terminator("v_le", params.v_min, "abort"),)),
    ]


def build_pulse_train(
    params: CellParams,
    breakpoints: Sequence[float] = PulseTrainConfig.breakpoints,
    pulse_c_rate: float = 1.0,
    pulse_s: float = 60.0,
    inter_rest_s: float = 60.0,
    relax_s: float = 3600.0,
    full_rest_s: float = 5400.0,
    charge_c_rate: float = 1.0,
    discharge_c_rate: float = 1.0,
    time_compression: float = 1.0,
) -> Schedule:
    """Full CCCV charge, rest, then a pulse block at every SoC breakpoint.

    Any step reaching the lower cut-off voltage aborts the remaining steps.
    """
    bps = [float(b) for b in breakpoints]
    if not bps or any(not 0.0 < b < 1.0 for b in bps):
        raise ScheduleError("breakpoints must lie in (0, 1)")
    if any(b >= a for a, b in zip(bps, bps[1:])):
        raise ScheduleError("breakpoints must be strictly decreasing")
    if time_compression <= 0:
        raise ScheduleError("time_compression must be positive")
    steps = _cccv_charge(params, "pulse/charge", charge_c_rate)
    steps.append(Step("REST", "pulse/rest", duration_s=full_rest_s / time_compression))
    i_dis = -discharge_c_rate * params.capacity_ah
    for bp in bps:
        steps.append(Step(
            "GOTO_SOC", pulse_label(bp, "goto"), current_a=i_dis,
            terminators=(Terminator("soc_le", bp), Terminator("v_le", params.v_min, "abort")),
        ))
        steps.append(Step("REST", pulse_label(bp, "relax"), duration_s=relax_s / time_compression))
        steps.extend(pulse_block(params, bp, pulse_c_rate, pulse_s, inter_rest_s))
    meta = {
        "breakpoints": bps, "pulse_c_rate": pulse_c_rate, "pulse_s": pulse_s,
        "inter_rest_s": inter_rest_s, "relax_s": relax_s / time_compression,
        "capacity_ah": params.capacity_ah,
    }
    return Schedule("pulse-train", tuple(steps), meta)


def build_aging_cycle(params: CellParams) -> Schedule:
    """One accelerated aging cycle: 1 C discharge, 1 C CCCV charge."""
    steps = [
        Step("CC", "aging/discharge", current_a=-params.capacity_ah,
             terminators=(Terminator("v_le", params.v_min),)),
    ] + _cccv_charge(params, "aging/charge", 1.0)
    return Schedule("aging-cycle", tuple(steps), {"c_rate": 1.0})


@dataclass
class PhaseLog:
    """Uniformly sampled measurement log; sample ``k`` is at ``(k + 1) * sample_dt``."""

    sample_dt: float
    current_a: np.ndarray
    voltage_v: np.ndarray
    soc_true: np.ndarray
    label_index: np.ndarray
    labels: list[str]
    aborted_by: str | None = None
    t0: float = 0.0

    def __len__(self):
        return len(self.current_a)

    @property
    def t_s(self) -> np.ndarray:
        return self.t0 + (np.arange(len(self), dtype=float) + 1.0) * self.sample_dt

    def sample_labels(self) -> list[str]:
        return [self.labels[i] for i in self.label_index]

    def has_label(self, label: str) -> bool:
        return label in self.labels

    def indices(self, label: str) -> np.ndarray:
        """Sample indices of ``label`` or of any label nested under it."""
        codes = [i for i, lab in enumerate(self.labels)
                 if lab == label or lab.startswith(label + "/")]
        if not codes:
            raise KeyError(f"label {label!r} not in log")
        return np.flatnonzero(np.isin(self.label_index, codes))

    def to_csv(self, path: str | Path) -> None:
        t = self.t_s
        names = self.labels
        with open(path, "w", newline="") as fh:
            fh.write(",".join(LOG_HEADER) + "\n")
            for k in range(len(self)):
                fh.write(
                    f"{t[k]:.6f},{self.current_a[k]:.6f},{self.voltage_v[k]:.6f},"
                    f"{self.soc_true[k]:.6f},{names[self.label_index[k]]}\n"
                )

    @classmethod
    def from_csv(cls, path: str | Path) -> "PhaseLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != LOG_HEADER:
                raise ValueError(f"unexpected log header {header}")
            rows = list(reader)
        if len(rows) < 2:
            raise ValueError("log needs at least two samples")
        t = np.array([float(r[0]) for r in rows])
        dt = float(np.median(np.diff(t)))
        if dt <= 0 or np.max(np.abs(np.diff(t) - dt)) > 1e-5 * max(dt, 1.0):
            raise ValueError("log timestamps are not uniformly spaced")
        labels: list[str] = []
        lookup: dict[str, int] = {}
        codes = np.empty(len(rows), dtype=np.int32)
        for k, r in enumerate(rows):
            code = lookup.get(r[4])
            if code is None:
                code = lookup[r[4]] = len(labels)
                labels.append(r[4])
            codes[k] = code
        col = lambda j: np.array([float(r[j]) for r in rows])  # noqa: E731
        return cls(dt, col(1), col(2), col(3), codes, labels, t0=t[0] - dt)


def _first_hit(step: Step, soc: np.ndarray, v: np.ndarray, current: float,
               elapsed: np.ndarray) -> tuple[int | None, Terminator | None]:
    best, which = None, None
    for term in step.terminators:
        if term.kind == "v_le":
            mask = v <= term.value
        elif term.kind == "v_ge":
            mask = v >= term.value
        elif term.kind == "i_le":
            mask = np.full(len(v), abs(current) <= term.value)
        elif term.kind == "soc_le":
            mask = soc <= term.value + _SOC_TOL
        elif term.kind == "soc_ge":
            mask = soc >= term.value - _SOC_TOL
        else:
            mask = elapsed >= term.value - 1e-9
        if mask.any():
            k = int(np.argmax(mask))
            if best is None or k < best:
                best, which = k, term
    return best, which


def _duration_samples(step: Step, dt: float) -> int | None:
    if step.duration_s is None:
        return None
    return max(1, math.ceil(step.duration_s / dt - 1e-9))


def _run_constant(step, params, state, dt, max_samples, out):
    current = step.current_a if step.kind in ("CC", "GOTO_SOC") else 0.0
    dur_n = _duration_samples(step, dt)
    limit = max_samples if dur_n is None else min(max_samples, dur_n)
    done = 0
    while done < limit:
        n = min(_CHUNK, limit - done)
        soc, v, v_rc = cell.run_constant_current(state, params, current, dt, n)
        elapsed = (np.arange(1, n + 1) + done) * dt
        k, term = _first_hit(step, soc, v, current, elapsed)
        m = n if k is None else k + 1
        out.append((np.full(m, current), v[:m], soc[:m]))
        state = cell.state_after(state, params, current, dt, m, soc, v_rc)
        done += m
        if term is not None:
            return state, term, done
    if dur_n is not None and done >= dur_n:
        return state, None, done
    raise WatchdogError(f"step {step.label!r} did not terminate within the watchdog limit")


def _run_cv(step, params, state, dt, max_samples, out):
    v_set = step.v_set
    lo, hi = -params.i_max_discharge_a, params.i_max_charge_a
    cap = params.capacity_ah
    pairs = [(r, math.exp(-dt / (r * c))) for r, c in params.rc_pairs]
    soc, v_rc = state.soc, list(state.v_rc)
    clamped = state.clamped
    throughput = 0.0
    dur_n = _duration_samples(step, dt)
    limit = max_samples if dur_n is None else min(max_samples, dur_n)
    cur = np.empty(limit)
    volt = np.empty(limit)
    socs = np.empty(limit)
    hit = None
    m = 0
    ocv_s = cell._ocv_scalar
    r0, coeff = params.r0, params.r0_soc_coeff
    while m < limit:
        x = 1.0 - soc
        r_ser = r0 * (1.0 + coeff * x * x)
        if r_ser <= 0:
            raise cell.SingularityError("constant-voltage control needs r0 > 0")
        # hold the end-of-sample voltage: RC growth and OCV rise over dt act as
        # extra series resistance (OCV linearised by a secant)
        i0 = (v_set - ocv_s(params, soc) - sum(v_rc)) / r_ser
        eta = params.eta_charge if i0 > 0 else 1.0 / params.eta_discharge
        k_soc = eta * dt / (3600.0 * cap)
        h = min(1e-6, 1.0 - soc) or -1e-6
        slope = (ocv_s(params, soc + h) - ocv_s(params, soc)) / h
        r_eff = r_ser + sum(r * (1.0 - a) for r, a in pairs) + slope * k_soc
        i = (v_set - ocv_s(params, soc) - sum(v * a for v, (_, a) in zip(v_rc, pairs))) / r_eff
        i = hi if i > hi else lo if i < lo else i
        eta = params.eta_charge if i > 0 else 1.0 / params.eta_discharge
        soc += eta * i * dt / (3600.0 * cap)
        if soc > 1.0 or soc < 0.0:
            soc = min(max(soc, 0.0), 1.0)
            clamped = True
        for j, (r, a) in enumerate(pairs):
            v_rc[j] = v_rc[j] * a + r * i * (1.0 - a)
        x = 1.0 - soc
        v = ocv_s(params, soc) + i * r0 * (1.0 + coeff * x * x) + sum(v_rc)
        throughput += abs(i) * dt / 3600.0
        cur[m], volt[m], socs[m] = i, v, soc
        m += 1
        elapsed = m * dt
        for term in step.terminators:
            kind, val = term.kind, term.value
            if ((kind == "i_le" and abs(i) <= val) or (kind == "v_le" and v <= val)
                    or (kind == "v_ge" and v >= val)
                    or (kind == "soc_le" and soc <= val + _SOC_TOL)
                    or (kind == "soc_ge" and soc >= val - _SOC_TOL)
                    or (kind == "elapsed_ge" and elapsed >= val - 1e-9)):
                hit = term
                break
        if hit is not None:
            break
    if hit is None and (dur_n is None or m < dur_n):
        raise WatchdogError(f"step {step.label!r} did not terminate within the watchdog limit")
    out.append((cur[:m], volt[:m], socs[:m]))
    new = CellState(
        soc=soc, v_rc=tuple(v_rc), throughput_ah=state.throughput_ah + throughput,
        fce=state.fce + throughput / cap / 2.0, clamped=clamped,
    )
    return new, hit, m


def execute(
    schedule: Schedule,
    params: CellParams,
    state: CellState,
    sample_dt: float = 0.1,
    seed: int = 0,
    max_step_s: float = 172_800.0,
    voltage_noise_v: float = 0.0,
) -> tuple[PhaseLog, CellState]:
    """Run ``schedule`` on a cell, one sample per simulator step.

    Terminators are checked after every sample; the first one to fire ends
    the step. ``voltage_noise_v`` adds seeded Gaussian noise to the logged
    voltage only; the simulated state is never perturbed.
    """
    if sample_dt <= 0:
        raise ValueError("sample_dt must be positive")
    max_samples = max(1, math.ceil(max_step_s / sample_dt))
    chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    codes: list[np.ndarray] = []
    labels: list[str] = []
    aborted = None
    for code, step in enumerate(schedule.steps):
        labels.append(step.label)
        before = len(chunks)
        if step.kind == "CV":
            state, term, m = _run_cv(step, params, state, sample_dt, max_samples, chunks)
        else:
            state, term, m = _run_constant(step, params, state, sample_dt, max_samples, chunks)
        codes.append(np.full(m, code, dtype=np.int32))
        assert sum(len(c[0]) for c in chunks[before:]) == m
        if term is not None and term.action == "abort":
            aborted = step.label
            logger.info("schedule %s aborted at %s (%s)", schedule.name, step.label, term.kind)
            break
    current = np.concatenate([c[0] for c in chunks])
    voltage = np.concatenate([c[1] for c in chunks])
    soc = np.concatenate([c[2] for c in chunks])
    if voltage_noise_v > 0:
        rng = np.random.default_rng(seed)
        voltage = voltage + rng.normal(0.0, voltage_noise_v, size=len(voltage))
    log = PhaseLog(sample_dt, current, voltage, soc, np.concatenate(codes), labels, aborted)
    return log, state


def measure_capacity(log: PhaseLog, window_label: str) -> float:
    """Charge passed within a labelled window, in Ah (trapezoidal rule)."""
    idx = log.indices(window_label)
    if len(idx) < 2:
        return float(abs(log.current_a[idx]).sum() * log.sample_dt / 3600.0)
    t = log.t_s[idx]
    return float(trapezoid(np.abs(log.current_a[idx]), t) / 3600.0)


@dataclass
class ProcedureIteration:
    cycle_index: int  # aging cycles completed before this capacity check
    capacity_ah: float
    log: PhaseLog | None = None  # pulse-train log of this iteration
    capacity_log: PhaseLog | None = None
    true_capacity_ah: float = 0.0
    truncated: str | None = None


def full_procedure(
    params: CellParams,
    aging: AgingParams = AgingParams(),
    pulse_config: PulseTrainConfig | None = PulseTrainConfig(),
    until: float = 0.8,
    cycles_per_check: int = 5,
    sample_dt: float = 0.1,
    time_compression: float = 1.0,
    keep_logs: str = "pulse",
    state: CellState | None = None,
    max_iterations: int = 1000,
) -> list[ProcedureIteration]:
    """Capacity check, pulse train and aging cycles, repeated until end of life.

    Aging is driven by the equivalent full cycles accrued in the aging cycles
    only; characterisation runs are treated as wear-free. The loop stops at the first capacity check whose measurement is at
    most ``until`` times the first measurement.
    """
    if not 0.0 < until <= 1.0:
        raise ValueError("until must lie in (0, 1]")
    if keep_logs not in ("none", "pulse", "all"):
        raise ValueError("keep_logs must be none, pulse or all")
    state = state or CellState.rested(params, 0.5)
    aging_fce = 0.0
    cycles = 0
    original = None
    out: list[ProcedureIteration] = []
    for _ in range(max_iterations):
        aged = apply_aging(params, aging, aging_fce)
        cap_log, state = execute(build_capacity_check(aged, time_compression=time_compression),
                                 aged, state, sample_dt)
        cap = measure_capacity(cap_log, "capacity/discharge")
        original = cap if original is None else original
        it = ProcedureIteration(cycles, cap, true_capacity_ah=aged.capacity_ah,
                                capacity_log=cap_log if keep_logs == "all" else None)
        out.append(it)
        logger.info("cycle %d: capacity %.4f Ah (%.1f %%)", cycles, cap, 100 * cap / original)
        if cap <= until * original:
            break
        if pulse_config is not None:
            sched = build_pulse_train(aged, time_compression=time_compression,
                                      **asdict(pulse_config))
            pulse_log, state = execute(sched, aged, state, sample_dt)
            it.truncated = pulse_log.aborted_by
            if keep_logs != "none":
                it.log = pulse_log
        # aging cycles start from a full cell; this top-up is not counted as wear
        top_up = Schedule("aging-precharge", tuple(_cccv_charge(aged, "aging/precharge", 1.0)))
        _, state = execute(top_up, aged, state, sample_dt)
        for _ in range(cycles_per_check):
            aged = apply_aging(params, aging, aging_fce)
            before = state.fce
            _, state = execute(build_aging_cycle(aged), aged, state, sample_dt)
            aging_fce += state.fce - before
            cycles += 1
    return out


def iter_pulse_blocks(log: PhaseLog) -> Iterable[tuple[str, dict[str, np.ndarray]]]:
    """Yield ``(breakpoint_tag, {segment: sample indices})`` per pulse block."""
    blocks: dict[str, dict[str, np.ndarray]] = {}
    order: list[str] = []
    for code, lab in enumerate(log.labels):
        parts = lab.split("/")
        if len(parts) == 3 and parts[0] == "pulse" and parts[2] in ("charge", "rest", "discharge"):
            if parts[1] not in blocks:
                blocks[parts[1]] = {}
                order.append(parts[1])
            blocks[parts[1]][parts[2]] = np.flatnonzero(log.label_index == code)
    for tag in order:
        yield tag, blocks[tag]
