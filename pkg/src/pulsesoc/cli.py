"""Command-line entry point: ``pulsesoc <command> [options]``.

Commands: protocol, dataset, train, eval, sweep, drive. Each writes its
artefacts plus ``manifest.json`` into ``--out``; existing files are never
overwritten.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, config, dataset, estimator, fnn, protocol, trainer
from .cell import CellState

logger = logging.getLogger("pulsesoc")


class CliError(RuntimeError):
    def __init__(self, msg: str, code: int = 2):
        super().__init__(msg)
        self.code = code


class RunDir:
    """Write-once output directory with an atomically written manifest."""

    def __init__(self, out: str, command: str, args: argparse.Namespace, cfg: config.RunConfig):
        self.path = Path(out)
        self.path.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.args = {k: v for k, v in vars(args).items() if k != "func"}
        self.cfg = cfg
        self.outputs: list[str] = []
        self.started = time.time()

    def file(self, name: str) -> Path:
        p = self.path / name
        if p.exists():
            raise CliError(f"refusing to overwrite existing output {p}")
        self.outputs.append(name)
        return p

    def finish(self, **extra) -> None:
        manifest = {
            "command": self.command,
            "args": self.args,
            "config": self.cfg.to_dict(),
            "seed": self.args.get("seed"),
            "tool_version": __version__,
            "outputs": self.outputs,
            "wall_clock_s": round(time.time() - self.started, 3),
            **extra,
        }
        target = self.file("manifest.json")
        fd, tmp = tempfile.mkstemp(dir=self.path, prefix=".manifest-")
        with os.fdopen(fd, "w") as fh:
            json.dump(manifest, fh, indent=2, default=str)
        os.replace(tmp, target)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_protocol(args, cfg):
    run = RunDir(args.out, "protocol", args, cfg)
    params = cfg.cell
    if args.pulse_c is not None:
        cfg.pulse = protocol.PulseTrainConfig(**{**asdict(cfg.pulse), "pulse_c_rate": args.pulse_c})
    report = {}
    if args.schedule == "full":
        its = protocol.full_procedure(
            params, cfg.aging, cfg.pulse, cfg.until, cfg.cycles_per_check, args.sample_dt,
            args.time_compression, "pulse" if args.keep_logs else "none",
        )
        with open(run.file("capacity.csv"), "w") as fh:
            fh.write("cycle_index,capacity_ah\n")
            for it in its:
                fh.write(f"{it.cycle_index},{it.capacity_ah:.6f}\n")
                if it.log is not None:
                    it.log.to_csv(run.file(f"pulse_train_{it.cycle_index:04d}.csv"))
        report = {"iterations": len(its), "aging_cycles": its[-1].cycle_index,
                  "capacity_ah": [it.capacity_ah for it in its]}
    else:
        builders = {
            "capacity-check": lambda: protocol.build_capacity_check(
                params, time_compression=args.time_compression),
            "pulse-train": lambda: protocol.build_pulse_train(
                params, time_compression=args.time_compression, **asdict(cfg.pulse)),
            "aging-cycle": lambda: protocol.build_aging_cycle(params),
        }
        sched = builders[args.schedule]()
        protocol.validate(sched, params)
        run.file("schedule.json").write_text(sched.to_json())
        state = CellState.rested(params, args.initial_soc)
        log, _ = protocol.execute(sched, params, state, args.sample_dt, args.seed)
        log.to_csv(run.file("log.csv"))
        if args.schedule == "capacity-check":
            report = {"discharge_capacity_ah": protocol.measure_capacity(log, "capacity/discharge"),
                      "charge_capacity_ah": protocol.measure_capacity(log, "capacity/charge")}
        elif args.schedule == "pulse-train":
            blocks = [t for t, _ in protocol.iter_pulse_blocks(log)]
            report = {"pulse_blocks": len(blocks), "aborted_by": log.aborted_by}
        report["samples"] = len(log)
    run.file("report.json").write_text(json.dumps(report, indent=2))
    run.finish(report=report)
    print(json.dumps(report))


def cmd_dataset(args, cfg):
    run = RunDir(args.out, "dataset", args, cfg)
    params = cfg.cell
    if args.logs:
        fc = dataset.FeatureConfig()
        samples = []
        for path in args.logs:
            log = protocol.PhaseLog.from_csv(path)
            samples += dataset.extract_pulses(log, fc, params.capacity_ah, Path(path).stem)
        samples = dataset.add_noise(samples, args.sigma_v, args.seed, fc)
    elif args.drive:
        policy = estimator.ResetPolicy()
        fc = policy.feature_config()
        samples = estimator.stop_pulse_corpus(params, policy, args.n_samples, args.seed,
                                              args.sigma_v, dt_s=args.sample_dt)
    else:
        amps = _floats(args.amplitudes)
        fc = dataset.OCV_ONLY if all(a == 0 for a in amps) else dataset.FeatureConfig()
        grid = dataset.default_soc_grid(args.grid_n)
        samples = dataset.dense_corpus(params, amps, grid, args.sigma_v, args.seed, fc,
                                       args.sample_dt)
    dataset.write_dataset(run.file("dataset.jsonl"), samples, fc)
    run.finish(samples=len(samples))
    print(f"{len(samples)} samples")


def _train_cfg(args) -> trainer.TrainConfig:
    return trainer.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                               learning_rate=args.lr, seed=args.seed,
                               hidden_sizes=tuple(int(h) for h in _floats(args.hidden)))


def cmd_train(args, cfg):
    run = RunDir(args.out, "train", args, cfg)
    samples, fc = dataset.read_dataset(args.dataset)
    tr, va = dataset.split(samples, args.val_fraction, args.seed)
    model, hist = trainer.fit(tr, va, _train_cfg(args), fc)
    run.file("model.json").write_text(fnn.serialize(model))
    hist.to_csv(run.file("history.csv"))
    run.finish(model_info=model.info)
    print(json.dumps(model.info))


def _load_model(path) -> fnn.SocModel:
    try:
        return fnn.deserialize(Path(path).read_text())
    except (OSError, fnn.ModelFormatError) as exc:
        raise CliError(f"cannot load model {path}: {exc}") from exc


def cmd_eval(args, cfg):
    run = RunDir(args.out, "eval", args, cfg)
    model = _load_model(args.model)
    samples, fc = dataset.read_dataset(args.dataset)
    if model.feature_config != fc.to_dict():
        raise CliError("feature config mismatch between model and dataset:\n"
                       f"  model:   {model.feature_config}\n  dataset: {fc.to_dict()}")
    if args.split:
        _, samples = dataset.split(samples, args.val_fraction, args.seed)
    rows = trainer.evaluate_binned(model, samples, args.bins)
    trainer.write_bins_csv(run.file("bins.csv"), rows)
    x, y = dataset.to_arrays(samples)
    m = fnn.loss(model.predict(x), y)
    summary = {"mae": m.mae, "rmse": m.rmse, "max_abs_err": float(np.max(np.abs(model.predict(x) - y)))}
    run.finish(metrics=summary)
    print(json.dumps(summary))
    if args.assert_mae_below is not None and not m.mae < args.assert_mae_below:
        raise CliError(f"MAE {m.mae:.5f} is not below {args.assert_mae_below}", code=1)


def cmd_sweep(args, cfg):
    run = RunDir(args.out, "sweep", args, cfg)
    points = trainer.amplitude_sweep(cfg.cell, _floats(args.amplitudes), _train_cfg(args),
                                     args.seed, sigma_v=args.sigma_v,
                                     soc_grid=dataset.default_soc_grid(args.grid_n))
    trainer.write_sweep_csv(run.file("sweep.csv"), points)
    run.finish(points=[asdict(p) for p in points], spearman=trainer.sweep_trend(points))
    for p in points:
        print(f"{p.amplitude_c:g} C: max |error| {p.max_abs_err_pct:.3f} %")


def cmd_drive(args, cfg):
    run = RunDir(args.out, "drive", args, cfg)
    params = cfg.cell
    if args.profile:
        profile = estimator.DriveProfile.from_csv(args.profile)
    else:
        profile = estimator.generate_drive_profile(args.seed, args.duration, params, args.sample_dt)
    model = _load_model(args.model) if args.model else None
    policy = estimator.ResetPolicy(mode=args.policy if model is not None else "none")
    if model is not None and policy.mode == "stop" and \
            model.feature_config != policy.feature_config().to_dict():
        raise CliError("model was not trained on the stop-pulse window of this policy")
    sensor = estimator.SensorModel(args.bias, args.current_noise, args.voltage_noise)
    trace = estimator.run_drive_cycle(params, CellState.rested(params, args.initial_soc),
                                      profile, sensor, model, policy, args.seed)
    trace.to_csv(run.file("trace.csv"))
    trace.resets_to_csv(run.file("resets.csv"))
    summary = asdict(estimator.summarize(trace))
    run.file("summary.json").write_text(json.dumps(summary, indent=2))
    run.finish(summary=summary)
    print(json.dumps({k: summary[k] for k in ("max_abs_error", "mean_abs_error", "end_error")}))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--sample-dt", type=float, default=0.1)
    common.add_argument("--time-compression", type=float, default=1.0)
    common.add_argument("--config", default=None, help="TOML cell/protocol configuration")
    common.add_argument("--out", default="run", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--hidden", default="100", help="comma-separated hidden sizes")
    training.add_argument("--epochs", type=int, default=5000)
    training.add_argument("--batch-size", type=int, default=32)
    training.add_argument("--lr", type=float, default=1e-3)
    training.add_argument("--val-fraction", type=float, default=0.2)

    ap = argparse.ArgumentParser(prog="pulsesoc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("protocol", parents=[common], help="run a test schedule on the cell")
    p.add_argument("--schedule", choices=["capacity-check", "pulse-train", "aging-cycle", "full"],
                   default="capacity-check")
    p.add_argument("--pulse-c", type=float, default=None)
    p.add_argument("--initial-soc", type=float, default=0.5)
    p.add_argument("--keep-logs", action="store_true", help="write pulse-train logs (full)")
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("dataset", parents=[common], help="build a labelled pulse dataset")
    p.add_argument("--amplitudes", default="1.0")
    p.add_argument("--grid-n", type=int, default=161)
    p.add_argument("--sigma-v", type=float, default=0.001)
    p.add_argument("--logs", nargs="*", help="extract from PhaseLog CSV files instead")
    p.add_argument("--drive", action="store_true", help="stop-pulse corpus for the drive demo")
    p.add_argument("--n-samples", type=int, default=600)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", parents=[common, training], help="train a network")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="binned errors of a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--split", action="store_true",
                   help="evaluate on the validation part of the seeded split only")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--assert-mae-below", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common, training], help="pulse-amplitude sweep")
    p.add_argument("--amplitudes", default="0,0.25,0.5,1.0")
    p.add_argument("--grid-n", type=int, default=161)
    p.add_argument("--sigma-v", type=float, default=0.001)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("drive", parents=[common], help="drive-cycle estimation demo")
    p.add_argument("--model", default=None)
    p.add_argument("--profile", default=None, help="CSV t_s,current_a")
    p.add_argument("--duration", type=float, default=3600.0)
    p.add_argument("--policy", choices=["stop", "continuous", "none"], default="stop")
    p.add_argument("--bias", type=float, default=0.05)
    p.add_argument("--current-noise", type=float, default=0.01)
    p.add_argument("--voltage-noise", type=float, default=0.001)
    p.add_argument("--initial-soc", type=float, default=0.9)
    p.set_defaults(func=cmd_drive)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config.load_config(args.config)
        args.func(args, cfg)
    except config.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (dataset.FeatureError, protocol.ScheduleError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
