"""From pulse responses to an SoC estimate: dense corpus, training, binned errors.

161 rested states between 10 % and 90 % SoC each get one 1C
charge/rest/discharge block with 1 mV of voltage noise. An 80/20 split
trains a 181-100-1 ReLU network with Adam.

Writes ``history.csv``, ``bins.csv`` and ``model.json``.
"""

from _common import out_dir
from pulsesoc import dataset, fnn, trainer
from pulsesoc.cell import CellParams
from pulsesoc.trainer import TrainConfig

out, args = out_dir(__doc__.splitlines()[0])
params = CellParams()
cfg = dataset.FeatureConfig()

corpus = dataset.dense_corpus(params, [1.0], dataset.default_soc_grid(), sigma_v=0.001, seed=42)
train_set, val_set = dataset.split(corpus, 0.2, seed=42)
model, hist = trainer.fit(train_set, val_set, TrainConfig(epochs=500 if args.quick else 5000), cfg)
hist.to_csv(out / "history.csv")
(out / "model.json").write_text(fnn.serialize(model))

rows = trainer.evaluate_binned(model, val_set)
trainer.write_bins_csv(out / "bins.csv", rows)
print(f"best epoch {hist.best_epoch}, validation MAE {100 * model.info['val_mae']:.3f} %")
for r in rows:
    if r.count:
        print(f"  soc {r.lo:.1f}-{r.hi:.1f}: n={r.count:3d} mean |err| {r.mean_abs_err_pct:.3f} %")
