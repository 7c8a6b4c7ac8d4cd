"""Second-order equivalent-circuit cell model.

Terminal voltage is ``OCV(soc) + I * r0(soc) + sum(v_rc)`` with the sign
convention positive current = charging. The default open-circuit curve has a
flat plateau between 5 % and 40 % SoC, so the rested voltage carries no SoC
information there. The series resistance rises towards low SoC, which is what
makes a current pulse informative where the OCV is flat::

    r0(soc) = r0 * (1 + r0_soc_coeff * (1 - soc) ** 2)

Default OCV curve (volts, ``s`` in [0, 1])::

    s in [0.00, 0.05]:  2.5 + 0.95 * s / 0.05          (steep ramp)
    s in [0.05, 0.40]:  3.45                            (plateau)
    s in [0.40, 1.00]:  3.45 + 0.75 * (x + x**3) / 2,   x = (s - 0.4) / 0.6

All functions are pure; states and parameters are frozen dataclasses.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

OCV_RAMP_END = 0.05
PLATEAU = (0.05, 0.40)
PLATEAU_V = 3.45


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a cell function."""


class SingularityError(ZeroDivisionError):
    """Raised when CV control is requested on a cell without series resistance."""


@dataclass(frozen=True)
class CellParams:
    """Electrical parameters of one cell; defaults follow a 3 Ah NMC cell."""

    capacity_ah: float = 3.0
    r0: float = 0.03
    rc_pairs: tuple[tuple[float, float], ...] = ((0.015, 2000.0), (0.02, 30000.0))
    eta_charge: float = 0.99
    eta_discharge: float = 1.0
    v_min: float = 2.5
    v_max: float = 4.2
    i_cutoff_a: float = 0.150
    i_max_charge_a: float = 4.0
    i_max_discharge_a: float = 15.0
    r0_soc_coeff: float = 2.0
    # optional (soc, volts) breakpoints replacing the closed-form curve
    ocv_table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.capacity_ah <= 0:
            raise ValueError("capacity_ah must be positive")
        if self.r0 < 0:
            raise ValueError("r0 must be non-negative")
        for r, c in self.rc_pairs:
            if r <= 0 or c <= 0:
                raise ValueError("RC pairs need positive R and C")
        if not (0 < self.eta_charge <= 1 and 0 < self.eta_discharge <= 1):
            raise ValueError("coulombic efficiencies must lie in (0, 1]")
        if self.v_min >= self.v_max:
            raise ValueError("v_min must be below v_max")
        if self.r0_soc_coeff < 0:
            raise ValueError("r0_soc_coeff must be non-negative")
        if self.ocv_table is not None:
            table = tuple((float(s), float(v)) for s, v in self.ocv_table)
            socs = [s for s, _ in table]
            volts = [v for _, v in table]
            if len(table) < 2 or any(b <= a for a, b in zip(socs, socs[1:])):
                raise ValueError("ocv_table must be strictly sorted by soc with >= 2 rows")
            if socs[0] != 0.0 or socs[-1] != 1.0:
                raise ValueError("ocv_table must span soc 0 to 1")
            if any(b < a for a, b in zip(volts, volts[1:])):
                raise ValueError("ocv_table voltages must be non-decreasing")
            object.__setattr__(self, "ocv_table", table)
        object.__setattr__(
            self, "rc_pairs", tuple((float(r), float(c)) for r, c in self.rc_pairs)
        )

    @property
    def taus(self) -> tuple[float, ...]:
        return tuple(r * c for r, c in self.rc_pairs)


@dataclass(frozen=True)
class CellState:
    soc: float = 1.0
    v_rc: tuple[float, ...] = (0.0, 0.0)
    throughput_ah: float = 0.0
    fce: float = 0.0
    clamped: bool = False

    @classmethod
    def rested(cls, params: CellParams, soc: float) -> "CellState":
        return cls(soc=float(soc), v_rc=(0.0,) * len(params.rc_pairs))


@dataclass(frozen=True)
class AgingParams:
    """Linear-in-FCE degradation rates."""

    fade_per_fce: float = 0.005
    r0_growth_per_fce: float = 0.005

    def __post_init__(self):
        if self.fade_per_fce < 0 or self.r0_growth_per_fce < 0:
            raise ValueError("aging rates must be non-negative")


def _ocv_default_scalar(s: float, v_min: float, v_max: float) -> float:
    if s <= OCV_RAMP_END:
        return v_min + (PLATEAU_V - v_min) * s / OCV_RAMP_END
    if s <= PLATEAU[1]:
        return PLATEAU_V
    x = (s - PLATEAU[1]) / (1.0 - PLATEAU[1])
    return PLATEAU_V + (v_max - PLATEAU_V) * 0.5 * (x + x * x * x)


def _ocv_default_array(s: np.ndarray, v_min: float, v_max: float) -> np.ndarray:
    x = np.clip((s - PLATEAU[1]) / (1.0 - PLATEAU[1]), 0.0, None)
    rise = PLATEAU_V + (v_max - PLATEAU_V) * 0.5 * (x + x**3)
    ramp = v_min + (PLATEAU_V - v_min) * s / OCV_RAMP_END
    return np.where(s <= OCV_RAMP_END, ramp, np.where(s <= PLATEAU[1], PLATEAU_V, rise))


def _ocv_scalar(params: CellParams, s: float) -> float:
    table = params.ocv_table
    if table is None:
        return _ocv_default_scalar(s, params.v_min, params.v_max)
    socs = [row[0] for row in table]
    i = min(max(bisect.bisect_right(socs, s) - 1, 0), len(table) - 2)
    (s0, v0), (s1, v1) = table[i], table[i + 1]
    return v0 + (v1 - v0) * (s - s0) / (s1 - s0)


def ocv_array(params: CellParams, soc: np.ndarray) -> np.ndarray:
    """Vectorised OCV for in-range soc arrays (no domain check)."""
    soc = np.asarray(soc, dtype=float)
    if params.ocv_table is None:
        return _ocv_default_array(soc, params.v_min, params.v_max)
    table = np.asarray(params.ocv_table)
    return np.interp(soc, table[:, 0], table[:, 1])


def ocv(params: CellParams, soc):
    """Open-circuit voltage at ``soc`` (float or array in [0, 1])."""
    if np.ndim(soc) == 0:
        s = float(soc)
        if not 0.0 <= s <= 1.0 or math.isnan(s):
            raise DomainError(f"soc {soc!r} outside [0, 1]")
        return _ocv_scalar(params, s)
    arr = np.asarray(soc, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise DomainError("soc values outside [0, 1]")
    return ocv_array(params, arr)


def series_resistance(params: CellParams, soc):
    """Effective ohmic resistance at ``soc``."""
    return params.r0 * (1.0 + params.r0_soc_coeff * (1.0 - soc) ** 2)


def efficiency(params: CellParams, current_a: float) -> float:
    # charge current is scaled by eta_charge; discharge by 1/eta_discharge
    return params.eta_charge if current_a > 0 else 1.0 / params.eta_discharge


def step(
    state: CellState, params: CellParams, current_a: float, dt_s: float
) -> tuple[CellState, float]:
    """Advance the cell by ``dt_s`` seconds at constant ``current_a``.

    Returns the new state and the terminal voltage at the end of the step.
    """
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    if current_a > params.i_max_charge_a or -current_a > params.i_max_discharge_a:
        logger.warning("current %.3f A outside cell limits", current_a)
    soc = state.soc + efficiency(params, current_a) * current_a * dt_s / (
        3600.0 * params.capacity_ah
    )
    clamped = state.clamped
    if soc > 1.0 or soc < 0.0:
        soc = min(max(soc, 0.0), 1.0)
        clamped = True
    v_rc = []
    for (r, c), v in zip(params.rc_pairs, state.v_rc):
        a = math.exp(-dt_s / (r * c))
        v_rc.append(v * a + r * current_a * (1.0 - a))
    dq = abs(current_a) * dt_s / 3600.0
    new = CellState(
        soc=soc,
        v_rc=tuple(v_rc),
        throughput_ah=state.throughput_ah + dq,
        fce=state.fce + dq / params.capacity_ah / 2.0,
        clamped=clamped,
    )
    v = _ocv_scalar(params, soc) + current_a * series_resistance(params, soc) + sum(v_rc)
    return new, v


def terminal_voltage(state: CellState, params: CellParams, current_a: float = 0.0) -> float:
    s = state.soc
    return _ocv_scalar(params, s) + current_a * series_resistance(params, s) + sum(state.v_rc)


def cv_current(state: CellState, params: CellParams, v_set: float) -> float:
    """Current that puts the terminal voltage at ``v_set`` for the present state."""
    r = series_resistance(params, state.soc)
    if r <= 0:
        raise SingularityError("constant-voltage control needs r0 > 0")
    i = (v_set - _ocv_scalar(params, state.soc) - sum(state.v_rc)) / r
    return min(max(i, -params.i_max_discharge_a), params.i_max_charge_a)


def apply_aging(params: CellParams, aging: AgingParams, fce: float) -> CellParams:
    """Aged parameters after ``fce`` equivalent full cycles.

    ``params`` must be the pristine parameters; the law is never compounded.
    """
    if fce < 0:
        raise ValueError("fce must be non-negative")
    if fce == 0:
        return params
    return replace(
        params,
        # CellParams rejects a zero capacity; floor at a nanoamp-hour
        capacity_ah=max(params.capacity_ah * (1.0 - aging.fade_per_fce * fce), 1e-9),
        r0=params.r0 * (1.0 + aging.r0_growth_per_fce * fce),
    )


def run_constant_current(
    state: CellState, params: CellParams, current_a: float, dt_s: float, n: int
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Closed-form trajectory of ``n`` steps at constant current.

    Returns ``(soc, voltage, v_rc)`` where each array has one entry per step
    end. Agrees with ``n`` repeated :func:`step` calls to rounding error.
    """
    k = np.arange(1, n + 1, dtype=float)
    d = efficiency(params, current_a) * current_a * dt_s / (3600.0 * params.capacity_ah)
    soc = np.clip(state.soc + k * d, 0.0, 1.0)
    v = ocv_array(params, soc) + current_a * series_resistance(params, soc)
    v_rc = []
    for (r, c), v0 in zip(params.rc_pairs, state.v_rc):
        decay = np.exp(-k * dt_s / (r * c))
        vi = v0 * decay + r * current_a * (1.0 - decay)
        v_rc.append(vi)
        v = v + vi
    return soc, v, v_rc


def state_after(
    state: CellState, params: CellParams, current_a: float, dt_s: float, m: int,
    soc: np.ndarray, v_rc: list[np.ndarray],
) -> CellState:
    """State after the first ``m`` steps of a :func:`run_constant_current` trajectory."""
    d = efficiency(params, current_a) * current_a * dt_s / (3600.0 * params.capacity_ah)
    raw = state.soc + m * d
    dq = abs(current_a) * dt_s * m / 3600.0
    return CellState(
        soc=float(soc[m - 1]),
        v_rc=tuple(float(v[m - 1]) for v in v_rc),
        throughput_ah=state.throughput_ah + dq,
        fce=state.fce + dq / params.capacity_ah / 2.0,
        clamped=state.clamped or not 0.0 <= raw <= 1.0,
    )
