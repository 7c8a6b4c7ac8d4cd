"""Pulse resets in a vehicle: coulomb counting with a biased current sensor.

A short pulse block (10 s charge, 5 s rest, 10 s discharge) is injected at
every stop. The network trained on such blocks resets the coulomb counter,
which otherwise drifts with the 50 mA sensor bias.

Writes ``trace_reset.csv``, ``trace_coulomb.csv`` and ``resets.csv``.
"""

from _common import out_dir
from pulsesoc import dataset, estimator, trainer
from pulsesoc.cell import CellParams, CellState
from pulsesoc.trainer import TrainConfig

out, args = out_dir(__doc__.splitlines()[0])
params = CellParams()
policy = estimator.ResetPolicy()

corpus = estimator.stop_pulse_corpus(params, policy, 600, seed=7)
tr, va = dataset.split(corpus, 0.2, seed=42)
model, _ = trainer.fit(tr, va, TrainConfig(epochs=300 if args.quick else 2000),
                       policy.feature_config())
print(f"stop-pulse model: validation max |err| {100 * model.info['val_max_abs_err']:.3f} %")

profile = estimator.generate_drive_profile(3, 3600.0, params)
sensor = estimator.SensorModel(current_bias_a=0.05, current_noise_sigma_a=0.01,
                               voltage_noise_sigma_v=0.001)
state0 = CellState.rested(params, 0.9)
with_resets = estimator.run_drive_cycle(params, state0, profile, sensor, model, policy, seed=42)
plain = estimator.run_drive_cycle(params, state0, profile, sensor,
                                  policy=estimator.ResetPolicy(mode="none"), seed=42)
with_resets.to_csv(out / "trace_reset.csv")
with_resets.resets_to_csv(out / "resets.csv")
plain.to_csv(out / "trace_coulomb.csv")
for name, tr_ in (("coulomb only", plain), ("with resets", with_resets)):
    s = estimator.summarize(tr_)
    print(f"{name:13s}: max |err| {100 * s.max_abs_error:.3f} %, end {100 * s.end_error:+.3f} %")
