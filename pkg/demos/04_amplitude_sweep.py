"""Why pulses help: estimation error against pulse amplitude.

Amplitude 0 uses the rested OCV alone, which cannot resolve SoC on the
plateau. Every larger amplitude trains a fresh network on the same grid,
seed and split.

Writes ``sweep.csv`` (amplitude_c, max_abs_err_pct).
"""

from _common import out_dir
from pulsesoc import trainer
from pulsesoc.cell import CellParams
from pulsesoc.trainer import TrainConfig

out, args = out_dir(__doc__.splitlines()[0])
points = trainer.amplitude_sweep(CellParams(), (0.0, 0.25, 0.5, 1.0),
                                 TrainConfig(epochs=500 if args.quick else 5000))
trainer.write_sweep_csv(out / "sweep.csv", points)
for p in points:
    print(f"{p.amplitude_c:4.2f} C: max |err| {p.max_abs_err_pct:6.2f} %, "
          f"on the plateau {p.plateau_max_abs_err_pct:6.2f} %")
print(f"Spearman(amplitude, error) = {trainer.sweep_trend(points):.2f}")
