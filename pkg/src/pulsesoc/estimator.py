"""Run-time SoC estimation: coulomb counting with pulse-triggered network resets.

Between resets the estimate is propagated by :func:`coulomb_step` from the
(imperfect) current sensor. When the vehicle stops for long enough, a short
charge/rest/discharge pulse block is injected, the measured voltage response
is featurised and the network's estimate replaces the running one.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import cell, dataset
from .cell import CellParams, CellState
from .dataset import FeatureConfig, PulseSample

logger = logging.getLogger(__name__)

COULOMB, RESET = "COULOMB", "RESET"


@dataclass(frozen=True)
class SensorModel:
    current_bias_a: float = 0.0
    current_noise_sigma_a: float = 0.0
    voltage_noise_sigma_v: float = 0.0
    capacity_assumed_ah: float | None = None  # None: the cell's true capacity

    def __post_init__(self):
        if self.current_noise_sigma_a < 0 or self.voltage_noise_sigma_v < 0:
            raise ValueError("sensor noise sigmas must be non-negative")


@dataclass(frozen=True)
class ResetPolicy:
    """When and how the network is consulted.

    ``mode`` is ``"stop"`` (pulse block at each long-enough stop),
    ``"continuous"`` (inference on a trailing voltage window every
    ``cadence_s``) or ``"none"`` (plain coulomb counting).
    """

    mode: str = "stop"
    pulse_c_rate: float = 1.0
    pulse_s: float = 10.0
    rest_s: float = 5.0
    feature_rate_hz: float = 1.0
    min_stop_s: float | None = None
    cadence_s: float = 60.0
    window_s: float = 25.0

    def __post_init__(self):
        if self.mode not in ("stop", "continuous", "none"):
            raise ValueError(f"unknown policy mode {self.mode!r}")

    @property
    def block_s(self) -> float:
        return 2 * self.pulse_s + self.rest_s

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(pulse_s=self.pulse_s, rest_s=self.rest_s,
                             feature_rate_hz=self.feature_rate_hz)


@dataclass
class DriveProfile:
    dt_s: float
    current_a: np.ndarray
    stops: list[tuple[int, int]]  # (first sample, sample count) of each zero-current run

    def __len__(self):
        return len(self.current_a)

    @property
    def duration_s(self) -> float:
        return len(self) * self.dt_s

    @property
    def t_s(self) -> np.ndarray:
        return (np.arange(len(self), dtype=float) + 1.0) * self.dt_s

    def to_csv(self, path: str | Path) -> None:
        t = self.t_s
        with open(path, "w") as fh:
            fh.write("t_s,current_a\n")
            for k in range(len(self)):
                fh.write(f"{t[k]:.6f},{self.current_a[k]:.6f}\n")

    @classmethod
    def from_csv(cls, path: str | Path, min_stop_s: float = 20.0) -> "DriveProfile":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            if tuple(next(reader)) != ("t_s", "current_a"):
                raise ValueError("drive profile header must be t_s,current_a")
            rows = [(float(a), float(b)) for a, b in reader]
        t = np.array([r[0] for r in rows])
        i = np.array([r[1] for r in rows])
        dt = float(np.median(np.diff(t)))
        if dt <= 0 or np.max(np.abs(np.diff(t) - dt)) > 1e-5 * max(dt, 1.0):
            raise ValueError("drive profile must be uniformly sampled")
        return cls(dt, i, find_stops(i, dt, min_stop_s))


def find_stops(current: np.ndarray, dt_s: float, min_stop_s: float = 20.0) -> list[tuple[int, int]]:
    """Maximal runs of exactly zero current lasting at least ``min_stop_s``."""
    zero = np.concatenate([[False], np.asarray(current) == 0.0, [False]])
    edges = np.flatnonzero(np.diff(zero.astype(np.int8)))
    runs = zip(edges[::2], edges[1::2])
    return [(int(a), int(b - a)) for a, b in runs if (b - a) * dt_s >= min_stop_s - 1e-9]


def coulomb_step(soc_est: float, measured_current_a: float, dt_s: float,
                 capacity_assumed_ah: float, eta: float = 1.0) -> float:
    if dt_s <= 0 or capacity_assumed_ah <= 0:
        raise ValueError("dt_s and capacity must be positive")
    soc = soc_est + eta * measured_current_a * dt_s / (3600.0 * capacity_assumed_ah)
    return min(max(soc, 0.0), 1.0)


def generate_drive_profile(
    seed: int,
    duration_s: float,
    params: CellParams = CellParams(),
    dt_s: float = 0.1,
    stop_s: tuple[float, float] = (20.0, 90.0),
    accel_c: tuple[float, float] = (1.0, 2.5),
    cruise_c: tuple[float, float] = (0.2, 0.7),
    regen_c: tuple[float, float] = (0.1, 0.5),
    legs_per_trip: tuple[int, int] = (1, 3),
) -> DriveProfile:
    """Seeded stop-and-go current demand.

    Each trip is a few accelerate/cruise/regenerate legs followed by a
    zero-current stop. Currents are clipped to the cell limits.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    rng = np.random.default_rng(seed)
    cap = params.capacity_ah
    n_total = int(round(duration_s / dt_s))
    pieces: list[np.ndarray] = []
    n = 0

    def add(seconds: float, amps: float):
        nonlocal n
        k = max(1, int(round(seconds / dt_s)))
        pieces.append(np.full(k, amps))
        n += k

    while n < n_total:
        for _ in range(rng.integers(legs_per_trip[0], legs_per_trip[1] + 1)):
            add(rng.uniform(5, 15), -rng.uniform(*accel_c) * cap)
            add(rng.uniform(20, 90), -rng.uniform(*cruise_c) * cap)
            add(rng.uniform(5, 15), rng.uniform(*regen_c) * cap)
        add(rng.uniform(*stop_s), 0.0)
    current = np.clip(np.concatenate(pieces)[:n_total], -params.i_max_discharge_a,
                      params.i_max_charge_a)
    return DriveProfile(dt_s, current, find_stops(current, dt_s, stop_s[0]))


def simulate_current(params: CellParams, state: CellState, current: np.ndarray,
                     dt_s: float) -> tuple[np.ndarray, np.ndarray, CellState]:
    """Terminal voltage and true SoC along a piecewise-constant current trace."""
    current = np.asarray(current, dtype=float)
    change = np.flatnonzero(np.diff(current)) + 1
    bounds = np.concatenate([[0], change, [len(current)]])
    vs, ss = [], []
    for a, b in zip(bounds[:-1], bounds[1:]):
        i = float(current[a])
        soc, v, v_rc = cell.run_constant_current(state, params, i, dt_s, int(b - a))
        state = cell.state_after(state, params, i, dt_s, int(b - a), soc, v_rc)
        vs.append(v)
        ss.append(soc)
    return np.concatenate(vs), np.concatenate(ss), state


def _block_current(policy: ResetPolicy, capacity_ah: float, dt_s: float) -> np.ndarray:
    i = policy.pulse_c_rate * capacity_ah
    n_p = int(round(policy.pulse_s / dt_s))
    n_r = int(round(policy.rest_s / dt_s))
    return np.concatenate([np.full(n_p, i), np.zeros(n_r), np.full(n_p, -i)])


def _block_features(v: np.ndarray, policy: ResetPolicy, dt_s: float) -> np.ndarray:
    cfg = policy.feature_config()
    n_p = int(round(policy.pulse_s / dt_s))
    n_r = int(round(policy.rest_s / dt_s))
    segs = [v[:n_p], v[n_p:n_p + n_r], v[n_p + n_r:]]
    window = dataset.resample_window(segs, cfg, dt_s)
    return dataset.featurize(window, policy.pulse_c_rate, cfg)


def stop_pulse_corpus(
    params: CellParams,
    policy: ResetPolicy = ResetPolicy(),
    n_samples: int = 600,
    seed: int = 0,
    sigma_v: float = 0.001,
    soc_range: tuple[float, float] = (0.15, 0.93),
    history_s: tuple[float, float] = (120.0, 900.0),
    dt_s: float = 0.1,
) -> list[PulseSample]:
    """Training samples matching the in-vehicle pulse block.

    Each sample starts from a rested cell, drives a random stop-and-go
    history, then applies the policy's pulse block; the SoC at pulse onset is
    the label. Sample ``i`` uses a seed derived from ``(seed, i)``.
    """
    block = _block_current(policy, params.capacity_ah, dt_s)
    samples = []
    for i in range(n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        soc0 = rng.uniform(*soc_range)
        hist = generate_drive_profile(int(rng.integers(2**31)), rng.uniform(*history_s),
                                      params, dt_s)
        state = CellState.rested(params, soc0)
        _, socs, state = simulate_current(params, state, hist.current_a, dt_s)
        label = state.soc
        v, _, _ = simulate_current(params, state, block, dt_s)
        v = v + rng.normal(0.0, sigma_v, size=len(v))
        if v.max() >= params.v_max or v.min() <= params.v_min:
            continue
        samples.append(PulseSample(_block_features(v, policy, dt_s), float(label),
                                   {"cell_id": "sim-drive", "capacity_ah": params.capacity_ah,
                                    "pulse_c_rate": policy.pulse_c_rate,
                                    "breakpoint": float(soc0)}))
    return samples


@dataclass
class ResetEvent:
    t_s: float
    pulse_start_s: float
    pre_estimate: float
    post_estimate: float
    soc_true: float


@dataclass
class EstimatorTrace:
    dt_s: float
    soc_true: np.ndarray
    soc_est: np.ndarray
    mode: list[str]
    resets: list[ResetEvent] = field(default_factory=list)
    skipped_stops: int = 0

    @property
    def t_s(self) -> np.ndarray:
        return (np.arange(len(self.soc_true), dtype=float) + 1.0) * self.dt_s

    @property
    def error(self) -> np.ndarray:
        return self.soc_est - self.soc_true

    def to_csv(self, path: str | Path) -> None:
        t = self.t_s
        with open(path, "w") as fh:
            fh.write("t_s,soc_true,soc_est,mode\n")
            for k in range(len(t)):
                fh.write(f"{t[k]:.6f},{self.soc_true[k]:.6f},{self.soc_est[k]:.6f},"
                         f"{self.mode[k]}\n")

    def resets_to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("t_s,pulse_start_s,pre_est,post_est,soc_true\n")
            for r in self.resets:
                fh.write(f"{r.t_s:.6f},{r.pulse_start_s:.6f},{r.pre_estimate:.6f},"
                         f"{r.post_estimate:.6f},{r.soc_true:.6f}\n")


def run_drive_cycle(
    params: CellParams,
    state0: CellState,
    profile: DriveProfile,
    sensor: SensorModel = SensorModel(),
    model: Callable[[np.ndarray], float] | None = None,
    policy: ResetPolicy = ResetPolicy(),
    seed: int = 0,
    soc_est0: float | None = None,
) -> EstimatorTrace:
    """Simulate a drive and the on-board estimator side by side.

    ``model`` maps a feature vector to an SoC (a :class:`~pulsesoc.fnn.SocModel`
    or any callable). The estimator starts from ``soc_est0`` (default: the
    true initial SoC).
    """
    if policy.mode != "none" and model is None:
        raise ValueError(f"policy mode {policy.mode!r} needs a model")
    dt = profile.dt_s
    cap_est = sensor.capacity_assumed_ah or params.capacity_ah
    demand = np.asarray(profile.current_a, dtype=float)
    n = len(demand)
    rng = np.random.default_rng(seed)
    i_noise = rng.normal(0.0, sensor.current_noise_sigma_a, size=n) if n else np.zeros(0)
    v_noise = rng.normal(0.0, sensor.voltage_noise_sigma_v, size=n) if n else np.zeros(0)

    # the injected pulse replaces the zero demand at the start of each long stop
    injected = demand.copy()
    block_starts: dict[int, int] = {}
    skipped = 0
    if policy.mode == "stop":
        block = _block_current(policy, params.capacity_ah, dt)
        need = max(policy.block_s, policy.min_stop_s or 0.0)
        for start, length in profile.stops:
            if length * dt + 1e-9 < need:
                skipped += 1
                logger.info("stop at %.1f s too short for a pulse block", start * dt)
                continue
            injected[start:start + len(block)] = block
            block_starts[start] = len(block)

    soc_true = np.empty(n)
    soc_est = np.empty(n)
    v_meas = np.empty(n)
    i_meas = np.empty(n)
    mode = [COULOMB] * n
    resets: list[ResetEvent] = []
    state = state0
    est = state0.soc if soc_est0 is None else float(soc_est0)
    pending: tuple[int, int, float] | None = None  # (start, end, estimate at onset)
    cadence = max(1, int(round(policy.cadence_s / dt)))
    window_n = int(round(policy.window_s / dt))

    for k in range(n):
        if k in block_starts:
            pending = (k, k + block_starts[k], est)
        state, v = cell.step(state, params, float(injected[k]), dt)
        im = injected[k] + sensor.current_bias_a + i_noise[k]
        est = coulomb_step(est, im, dt, cap_est, cell.efficiency(params, im))
        v_meas[k] = v + v_noise[k]
        i_meas[k] = im
        soc_true[k] = state.soc
        if pending is not None:
            mode[k] = RESET
            start, end, est_onset = pending
            if k == end - 1:
                feats = _block_features(v_meas[start:end], policy, dt)
                pred = min(max(float(model(feats)), 0.0), 1.0)
                post = min(max(pred + (est - est_onset), 0.0), 1.0)
                resets.append(ResetEvent((k + 1) * dt, (start + 1) * dt, est, post, state.soc))
                est = post
                pending = None
        elif policy.mode == "continuous" and k + 1 >= window_n and (k + 1) % cadence == 0:
            mode[k] = RESET
            feats = _window_features(v_meas[k + 1 - window_n:k + 1],
                                     i_meas[k + 1 - window_n:k + 1], cap_est, policy, dt)
            post = min(max(float(model(feats)), 0.0), 1.0)
            resets.append(ResetEvent((k + 1) * dt, (k + 2 - window_n) * dt, est, post, state.soc))
            est = post
        soc_est[k] = est
    return EstimatorTrace(dt, soc_true, soc_est, mode, resets, skipped)


def _window_features(v: np.ndarray, i: np.ndarray, capacity_ah: float, policy: ResetPolicy,
                     dt: float) -> np.ndarray:
    k = max(1, int(round(1.0 / (policy.feature_rate_hz * dt))))
    cfg = FeatureConfig()
    x = (v[k - 1::k] - cfg.v_lo) / (cfg.v_hi - cfg.v_lo)
    return np.append(x, float(np.mean(i)) / capacity_ah / 2.0)


@dataclass
class TraceSummary:
    max_abs_error: float
    mean_abs_error: float
    end_error: float
    t_max_error_s: float
    segment_slopes: list[float]  # drift of the error in SoC per second, per inter-reset segment


def summarize(trace: EstimatorTrace) -> TraceSummary:
    if len(trace.soc_true) == 0:
        raise ValueError("empty trace")
    err = trace.error
    t = trace.t_s
    cuts = [0] + [int(round(r.t_s / trace.dt_s)) for r in trace.resets] + [len(err)]
    slopes = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a >= 2:
            slopes.append(float(np.polyfit(t[a:b], err[a:b], 1)[0]))
    k = int(np.argmax(np.abs(err)))
    return TraceSummary(float(np.abs(err).max()), float(np.abs(err).mean()), float(err[-1]),
                        float(t[k]), slopes)
