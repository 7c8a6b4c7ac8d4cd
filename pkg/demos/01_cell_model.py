"""The surrogate cell: OCV curve, plateau and the response to a current pulse.

On the plateau (SoC 0.05 to 0.40) the rested voltage carries no SoC
information at all. Under load the series resistance still varies with SoC,
so a pulse response separates states that the OCV cannot.

Writes ``ocv.csv`` (soc, ocv_v) and ``pulse_response.csv`` (t_s plus one
terminal-voltage column per starting SoC).
"""

import numpy as np

from _common import out_dir
from pulsesoc.cell import CellParams, CellState, ocv, run_constant_current

out, _ = out_dir(__doc__.splitlines()[0])
params = CellParams()

soc = np.linspace(0.0, 1.0, 201)
np.savetxt(out / "ocv.csv", np.column_stack([soc, ocv(params, soc)]), delimiter=",",
           header="soc,ocv_v", comments="", fmt="%.6f")
print(f"OCV at 0.10 and 0.40: {ocv(params, 0.10):.4f} V, {ocv(params, 0.40):.4f} V (plateau)")

# 60 s of 1C charge from three rested states on the plateau
dt, n = 0.1, 600
cols = []
for s0 in (0.15, 0.25, 0.35):
    _, v, _ = run_constant_current(CellState.rested(params, s0), params, params.capacity_ah, dt, n)
    cols.append(v)
    print(f"soc {s0:.2f}: OCV {ocv(params, s0):.4f} V, voltage after 60 s at 1C {v[-1]:.4f} V")
t = (np.arange(n) + 1) * dt
np.savetxt(out / "pulse_response.csv", np.column_stack([t, *cols]), delimiter=",",
           header="t_s,v_soc015,v_soc025,v_soc035", comments="", fmt="%.6f")
