"""Labelled pulse-response samples: extraction, featurisation, noise, splits."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import cell, protocol
from .cell import CellParams, CellState
from .protocol import PhaseLog

logger = logging.getLogger(__name__)

DATASET_VERSION = 1
SEGMENTS = ("charge", "rest", "discharge")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    """How a pulse block is turned into a feature vector.

    The default (three 60 s segments resampled to 1 Hz plus the amplitude
    term) gives 181 features. ``ocv_only`` replaces the window by the single
    rested voltage.
    """

    segments: tuple[str, ...] = SEGMENTS
    pulse_s: float = 60.0
    rest_s: float = 60.0
    feature_rate_hz: float = 1.0
    include_amplitude: bool = True
    v_lo: float = 2.5
    v_hi: float = 4.2
    ocv_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.v_lo >= self.v_hi:
            raise FeatureError("v_lo must be below v_hi")
        if any(s not in SEGMENTS for s in self.segments):
            raise FeatureError(f"segments must be drawn from {SEGMENTS}")
        if not self.ocv_only:
            for d in (self.pulse_s, self.rest_s):
                n = d * self.feature_rate_hz
                if abs(n - round(n)) > 1e-9 or round(n) < 1:
                    raise FeatureError("feature_rate_hz must divide the segment durations")

    def segment_s(self, name: str) -> float:
        return self.rest_s if name == "rest" else self.pulse_s

    @property
    def n_voltage(self) -> int:
        if self.ocv_only:
            return 1
        return sum(round(self.segment_s(s) * self.feature_rate_hz) for s in self.segments)

    @property
    def n_features(self) -> int:
        if self.ocv_only:
            return 1
        return self.n_voltage + int(self.include_amplitude)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["segments"] = list(self.segments)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**{**d, "segments": tuple(d.get("segments", SEGMENTS))})


OCV_ONLY = FeatureConfig(ocv_only=True, include_amplitude=False)


@dataclass
class PulseSample:
    features: np.ndarray
    soc_label: float
    meta: dict = field(default_factory=dict)


def featurize(voltage_window: Sequence[float], amplitude_c: float,
              cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Scale volts to [0, 1] over ``(v_lo, v_hi)`` and append ``amplitude_c / 2``."""
    v = np.asarray(voltage_window, dtype=float).ravel()
    if len(v) != cfg.n_voltage:
        raise FeatureError(f"window has {len(v)} samples, config expects {cfg.n_voltage}")
    if not np.all(np.isfinite(v)) or not math.isfinite(amplitude_c):
        raise FeatureError("non-finite input to featurize")
    x = (v - cfg.v_lo) / (cfg.v_hi - cfg.v_lo)
    if cfg.include_amplitude and not cfg.ocv_only:
        x = np.append(x, amplitude_c / 2.0)
    return x


def decimation(cfg: FeatureConfig, sample_dt: float) -> int:
    k = 1.0 / (cfg.feature_rate_hz * sample_dt)
    if abs(k - round(k)) > 1e-6 or round(k) < 1:
        raise FeatureError("feature rate must be an integer fraction of the sample rate")
    return int(round(k))


def resample_window(segments: Sequence[np.ndarray], cfg: FeatureConfig,
                    sample_dt: float) -> np.ndarray | None:
    """Every k-th voltage sample of each segment; None if a segment is short."""
    k = decimation(cfg, sample_dt)
    parts = []
    for name, v in zip(cfg.segments, segments):
        n = round(cfg.segment_s(name) / sample_dt)
        if len(v) < n:
            return None
        parts.append(np.asarray(v[:n])[k - 1::k])
    return np.concatenate(parts)


def extract_pulses(
    log: PhaseLog,
    cfg: FeatureConfig = FeatureConfig(),
    capacity_ah: float = 3.0,
    cell_id: str = "sim-0",
) -> list[PulseSample]:
    """One sample per complete pulse block of ``log``.

    The label is the true SoC of the first charge-pulse sample. Blocks cut
    short by a voltage limit are skipped and counted in a warning.
    """
    samples = []
    skipped = 0
    for tag, segs in protocol.iter_pulse_blocks(log):
        if any(s not in segs for s in cfg.segments) or "charge" not in segs:
            skipped += 1
            continue
        window = resample_window([log.voltage_v[segs[s]] for s in cfg.segments], cfg,
                                 log.sample_dt)
        if window is None:
            skipped += 1
            continue
        ch = segs["charge"]
        amp = float(np.mean(np.abs(log.current_a[ch]))) / capacity_ah
        samples.append(PulseSample(
            featurize(window, amp, cfg),
            float(log.soc_true[ch[0]]),
            {"cell_id": cell_id, "capacity_ah": capacity_ah,
             "pulse_c_rate": round(amp, 6), "breakpoint": float(tag)},
        ))
    if skipped:
        logger.warning("skipped %d truncated pulse block(s)", skipped)
    return samples


def add_noise(samples: Sequence[PulseSample], sigma_v: float, seed: int,
              cfg: FeatureConfig = FeatureConfig()) -> list[PulseSample]:
    """Gaussian voltage noise (volts) on the voltage-derived features only."""
    if sigma_v < 0:
        raise ValueError("sigma_v must be non-negative")
    samples = list(samples)
    if sigma_v == 0 or not samples:
        return samples
    nv = cfg.n_voltage
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma_v / (cfg.v_hi - cfg.v_lo), size=(len(samples), nv))
    out = []
    for s, z in zip(samples, noise):
        f = s.features.copy()
        f[:nv] += z
        out.append(replace(s, features=f))
    return out


def split(samples: Sequence[PulseSample], val_fraction: float,
          seed: int) -> tuple[list[PulseSample], list[PulseSample]]:
    """Seeded shuffle, then the first ``round(n * val_fraction)`` go to validation."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    n = len(samples)
    if n < 2:
        raise ValueError("need at least two samples to split")
    n_val = min(max(1, round(n * val_fraction)), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    val = [samples[i] for i in order[:n_val]]
    train = [samples[i] for i in order[n_val:]]
    return train, val


def default_soc_grid(n: int = 161, lo: float = 0.1, hi: float = 0.9,
                     breakpoints: Sequence[float] = protocol.PulseTrainConfig.breakpoints
                     ) -> np.ndarray:
    grid = np.concatenate([np.linspace(lo, hi, n), np.asarray(breakpoints, dtype=float)])
    return np.unique(np.round(grid, 9))


def _pulse_sample(params: CellParams, soc: float, amplitude: float, cfg: FeatureConfig,
                  sample_dt: float) -> PulseSample:
    sched = protocol.Schedule(
        "pulse-block", tuple(protocol.pulse_block(params, soc, amplitude, cfg.pulse_s, cfg.rest_s))
    )
    log, _ = protocol.execute(sched, params, CellState.rested(params, soc), sample_dt)
    found = extract_pulses(log, cfg, params.capacity_ah)
    if len(found) != 1:
        raise FeatureError(f"pulse block at soc {soc} hit a voltage limit")
    s = found[0]
    # label with the rested SoC the block was started from
    s.soc_label = float(soc)
    s.meta["pulse_c_rate"] = amplitude
    return s


def dense_corpus(
    params: CellParams,
    amplitudes: Sequence[float] = (1.0,),
    soc_grid: Sequence[float] | None = None,
    sigma_v: float = 0.001,
    seed: int = 0,
    cfg: FeatureConfig = FeatureConfig(),
    sample_dt: float = 0.1,
) -> list[PulseSample]:
    """Samples for every (soc, amplitude) pair, soc-major in grid order.

    Each sample starts from a fully rested cell. Amplitude 0 gives the
    OCV-only single-feature sample. Noise for task ``(i, j)`` is drawn from a
    seed derived from ``(seed, i, j)``, so results do not depend on order of
    evaluation.
    """
    grid = default_soc_grid() if soc_grid is None else np.asarray(soc_grid, dtype=float)
    if np.any(grid <= 0) or np.any(grid >= 1):
        raise ValueError("soc grid values must lie in (0, 1)")
    amplitudes = [float(a) for a in amplitudes]
    if any(a == 0 for a in amplitudes) and any(a != 0 for a in amplitudes):
        raise FeatureError("OCV-only and pulse samples have different feature lengths")
    samples = []
    for i, soc in enumerate(grid):
        for j, a in enumerate(amplitudes):
            if a == 0:
                v = cell.ocv(params, float(soc))
                s = PulseSample(featurize([v], 0.0, OCV_ONLY), float(soc),
                                {"cell_id": "sim-0", "capacity_ah": params.capacity_ah,
                                 "pulse_c_rate": 0.0, "breakpoint": float(soc)})
                c = OCV_ONLY
            else:
                s = _pulse_sample(params, float(soc), a, cfg, sample_dt)
                c = cfg
            task_seed = np.random.SeedSequence([seed, i, j]).generate_state(1)[0]
            samples.append(add_noise([s], sigma_v, int(task_seed), c)[0])
    return samples


def to_arrays(samples: Sequence[PulseSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        raise ValueError("no samples")
    n = len(samples[0].features)
    if any(len(s.features) != n for s in samples):
        raise FeatureError("inconsistent feature lengths")
    x = np.stack([np.asarray(s.features, dtype=float) for s in samples])
    y = np.array([s.soc_label for s in samples], dtype=float)
    return x, y


def write_dataset(path: str | Path, samples: Sequence[PulseSample], cfg: FeatureConfig) -> None:
    """JSON lines, one ``{features, soc, meta}`` object per sample."""
    with open(path, "w") as fh:
        for s in samples:
            meta = {**s.meta, "version": DATASET_VERSION, "feature_config": cfg.to_dict()}
            fh.write(json.dumps({"features": [float(v) for v in s.features],
                                 "soc": float(s.soc_label), "meta": meta}) + "\n")


def read_dataset(path: str | Path) -> tuple[list[PulseSample], FeatureConfig]:
    samples = []
    cfg_dict = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            meta = dict(obj.get("meta", {}))
            if meta.pop("version", None) != DATASET_VERSION:
                raise FeatureError(f"{path}:{lineno}: unsupported dataset version")
            fc = meta.pop("feature_config")
            if cfg_dict is None:
                cfg_dict = fc
            elif fc != cfg_dict:
                raise FeatureError(f"{path}:{lineno}: mixed feature configs in one dataset")
            samples.append(PulseSample(np.array(obj["features"], dtype=float),
                                       float(obj["soc"]), meta))
    if cfg_dict is None:
        raise FeatureError(f"{path}: empty dataset")
    return samples, FeatureConfig.from_dict(cfg_dict)
