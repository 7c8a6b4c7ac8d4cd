"""The overall procedure: capacity check, pulse train and aging until 80 %.

Capacity fades linearly with equivalent full cycles (0.5 % each), so the
loop ends after about 40 aging cycles. Checking every cycle and compressing
rests tenfold keeps this to a few seconds.

Writes ``capacity_fade.csv`` (cycle_index, measured and true capacity).
"""

from _common import out_dir
from pulsesoc import protocol
from pulsesoc.cell import AgingParams, CellParams

out, _ = out_dir(__doc__.splitlines()[0])
its = protocol.full_procedure(CellParams(), AgingParams(fade_per_fce=0.005),
                              protocol.PulseTrainConfig(), until=0.8, cycles_per_check=1,
                              time_compression=10, keep_logs="none")
with open(out / "capacity_fade.csv", "w") as fh:
    fh.write("cycle_index,capacity_ah,true_capacity_ah\n")
    for it in its:
        fh.write(f"{it.cycle_index},{it.capacity_ah:.6f},{it.true_capacity_ah:.6f}\n")
print(f"end of life after {its[-1].cycle_index} aging cycles: "
      f"{its[-1].capacity_ah:.4f} Ah of {its[0].capacity_ah:.4f} Ah")
