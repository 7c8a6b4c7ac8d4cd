"""Minibatch training, binned error analysis and the pulse-amplitude sweep."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from . import dataset, fnn
from .cell import PLATEAU, CellParams
from .dataset import FeatureConfig, PulseSample
from .fnn import Network, SocModel

logger = logging.getLogger(__name__)

HISTORY_HEADER = "epoch,train_mae,train_rmse,val_mae,val_rmse"
SWEEP_HEADER = "amplitude_c,max_abs_err_pct"


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 42
    hidden_sizes: tuple[int, ...] = (100,)
    patience: int | None = None
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


@dataclass
class History:
    train_mae: list[float] = field(default_factory=list)
    train_rmse: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self):
        return len(self.train_mae)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(HISTORY_HEADER + "\n")
            for k in range(len(self)):
                fh.write(f"{k + 1},{self.train_mae[k]:.9f},{self.train_rmse[k]:.9f},"
                         f"{self.val_mae[k]:.9f},{self.val_rmse[k]:.9f}\n")


def _arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        return np.asarray(data[0], dtype=float), np.asarray(data[1], dtype=float)
    return dataset.to_arrays(data)


def _diverged(epoch: int, cfg: TrainConfig) -> str:
    return (f"parameters or loss became non-finite at epoch {epoch + 1}; "
            f"lower the learning rate (currently {cfg.learning_rate:g})")


def train(net: Network, train_set, val_set, cfg: TrainConfig) -> tuple[Network, History]:
    """Adam on minibatch MSE; returns the lowest-validation-MAE snapshot.

    ``train_set``/``val_set`` are sample lists or ``(X, y)`` tuples.
    """
    x, y = _arrays(train_set)
    xv, yv = _arrays(val_set)
    if x.shape[1] != net.n_inputs or xv.shape[1] != net.n_inputs:
        raise ValueError(f"network expects {net.n_inputs} features, data has {x.shape[1]}")
    rng = np.random.default_rng(cfg.seed)
    opt = fnn.adam_init(net, cfg.learning_rate)
    hist = History()
    best, best_mae, stale = net.copy(), np.inf, 0
    n = len(y)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads = fnn.backward(net, x[idx], y[idx])
            try:
                opt, net = fnn.adam_step(opt, net, grads)
            except fnn.NonFiniteError:
                raise TrainingDiverged(_diverged(epoch, cfg)) from None
        tm = fnn.loss(fnn.forward(net, x), y)
        vm = fnn.loss(fnn.forward(net, xv), yv)
        if not (np.isfinite(tm.mse) and np.isfinite(vm.mse)):
            raise TrainingDiverged(_diverged(epoch, cfg))
        hist.train_mae.append(tm.mae)
        hist.train_rmse.append(tm.rmse)
        hist.val_mae.append(vm.mae)
        hist.val_rmse.append(vm.rmse)
        if vm.mae < best_mae:
            best, best_mae, stale = net.copy(), vm.mae, 0
            hist.best_epoch = epoch + 1
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
    return best, hist


def fit(train_samples, val_samples, cfg: TrainConfig,
        feature_config: FeatureConfig | dict | None = None) -> tuple[SocModel, History]:
    """Standardise inputs on the training set, initialise a network and train it."""
    x, y = _arrays(train_samples)
    xv, yv = _arrays(val_samples)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-12] = 1.0
    net = fnn.init((x.shape[1], *cfg.hidden_sizes, 1), cfg.seed)
    net, hist = train(net, ((x - mean) / std, y), ((xv - mean) / std, yv), cfg)
    if isinstance(feature_config, FeatureConfig):
        feature_config = feature_config.to_dict()
    model = SocModel(net, mean, std, feature_config or {},
                     {"best_epoch": hist.best_epoch, "val_mae": hist.val_mae[hist.best_epoch - 1],
                      "val_max_abs_err": max_abs_error(net, ((xv - mean) / std, yv))})
    return model, hist


def max_abs_error(model, data) -> float:
    x, y = _arrays(data)
    pred = model.predict(x) if isinstance(model, SocModel) else fnn.forward(model, x)
    return float(np.max(np.abs(pred - y)))


@dataclass
class BinStats:
    lo: float
    hi: float
    count: int
    mean_err_pct: float
    mean_abs_err_pct: float
    max_abs_err_pct: float


def evaluate_binned(model, data, bins: int = 10) -> list[BinStats]:
    """Signed mean, mean-absolute and max-absolute percent error per SoC bin.

    ``model`` is a :class:`SocModel`, a :class:`Network` or any callable on a
    feature batch. Empty bins are reported with count 0 and NaN errors.
    """
    x, y = _arrays(data)
    if len(y) == 0:
        raise ValueError("empty dataset")
    if isinstance(model, Network):
        pred = fnn.forward(model, x)
    else:
        pred = np.asarray(model(x), dtype=float)
    err = 100.0 * (pred - y)
    which = np.clip(np.floor(y * bins + 1e-9).astype(int), 0, bins - 1)
    rows = []
    for b in range(bins):
        e = err[which == b]
        if len(e):
            rows.append(BinStats(b / bins, (b + 1) / bins, len(e), float(e.mean()),
                                 float(np.abs(e).mean()), float(np.abs(e).max())))
        else:
            rows.append(BinStats(b / bins, (b + 1) / bins, 0, np.nan, np.nan, np.nan))
    return rows


@dataclass
class SweepPoint:
    amplitude_c: float
    max_abs_err_pct: float
    plateau_max_abs_err_pct: float
    val_mae_pct: float


def amplitude_sweep(
    params: CellParams,
    amplitudes: Sequence[float] = (0.0, 0.25, 0.5, 1.0),
    cfg: TrainConfig = TrainConfig(),
    seed: int = 42,
    feature_config: FeatureConfig = FeatureConfig(),
    soc_grid: Sequence[float] | None = None,
    sigma_v: float = 0.001,
    val_fraction: float = 0.2,
    plateau: tuple[float, float] = (0.10, PLATEAU[1]),
) -> list[SweepPoint]:
    """Train one fresh network per pulse amplitude and record validation errors.

    Every point uses the same grid, seed, split and training configuration;
    amplitude 0 uses the rested OCV as its only feature.
    """
    if not any(a == 0 for a in amplitudes):
        raise ValueError("amplitudes must include 0 for the OCV baseline")
    points = []
    for a in amplitudes:
        fc = dataset.OCV_ONLY if a == 0 else feature_config
        corpus = dataset.dense_corpus(params, [a], soc_grid, sigma_v, seed, fc)
        tr, va = dataset.split(corpus, val_fraction, seed)
        model, hist = fit(tr, va, cfg, fc)
        xv, yv = dataset.to_arrays(va)
        err = np.abs(model.predict(xv) - yv)
        on_plateau = (yv >= plateau[0] - 1e-9) & (yv <= plateau[1] + 1e-9)
        points.append(SweepPoint(
            float(a), 100.0 * float(err.max()),
            100.0 * float(err[on_plateau].max()) if on_plateau.any() else float("nan"),
            100.0 * float(err.mean()),
        ))
        logger.info("amplitude %.2f C: max %.3f %%, plateau max %.3f %%",
                    a, points[-1].max_abs_err_pct, points[-1].plateau_max_abs_err_pct)
    return points


def sweep_trend(points: Sequence[SweepPoint]) -> float:
    """Spearman rank correlation between amplitude and max error."""
    rho = spearmanr([p.amplitude_c for p in points], [p.max_abs_err_pct for p in points])
    return float(rho.statistic if hasattr(rho, "statistic") else rho[0])


def write_sweep_csv(path: str | Path, points: Sequence[SweepPoint]) -> None:
    with open(path, "w") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for p in points:
            fh.write(f"{p.amplitude_c:.6f},{p.max_abs_err_pct:.6f}\n")


def write_bins_csv(path: str | Path, rows: Sequence[BinStats]) -> None:
    with open(path, "w") as fh:
        fh.write("soc_lo,soc_hi,count,mean_err_pct,mean_abs_err_pct,max_abs_err_pct\n")
        for r in rows:
            fh.write(f"{r.lo:.6f},{r.hi:.6f},{r.count},{r.mean_err_pct:.6f},"
                     f"{r.mean_abs_err_pct:.6f},{r.max_abs_err_pct:.6f}\n")
