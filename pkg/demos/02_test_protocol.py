"""Cycler schedules: a 0.1C capacity check and the 8-breakpoint pulse train.

Schedules are plain data; ``execute`` runs them against the cell model and
labels every sample with the step that produced it. Rests are shortened
tenfold here to keep the logs small.

Writes ``capacity_check.csv``, ``pulse_train.csv`` and the pulse-train
schedule as ``pulse_train.json``.
"""

from _common import out_dir
from pulsesoc import protocol
from pulsesoc.cell import CellParams, CellState

out, _ = out_dir(__doc__.splitlines()[0])
params = CellParams()

check = protocol.build_capacity_check(params, time_compression=10)
log, _ = protocol.execute(check, params, CellState.rested(params, 0.5))
log.to_csv(out / "capacity_check.csv")
cap = protocol.measure_capacity(log, "capacity/discharge")
print(f"capacity check: {cap:.4f} Ah measured for a {params.capacity_ah} Ah cell")

train = protocol.build_pulse_train(params, time_compression=10)
(out / "pulse_train.json").write_text(train.to_json())
log, _ = protocol.execute(train, params, CellState.rested(params, 0.5))
log.to_csv(out / "pulse_train.csv")
for tag, seg in protocol.iter_pulse_blocks(log):
    soc_at_pulse = log.soc_true[seg["charge"][0]]
    print(f"block {tag}: pulse starts at soc {soc_at_pulse:.4f}")
