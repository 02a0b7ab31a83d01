"""Export the standard pypower test cases to MATPOWER text format."""
import sys
from pathlib import Path

import numpy as np
from pypower import api

BLOCKS = [
    ("bus", "bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin"),
    ("gen", "bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin"),
    ("branch", "fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax"),
    ("gencost", "model startup shutdown n c(n-1) ... c0"),
]


def fmt(v):
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def export(name, out_dir):
    ppc = getattr(api, name)()
    lines = [f"function mpc = {name}", f"%{name.upper()}  exported from the pypower distribution", "",
             "%% MATPOWER Case Format : Version 2", "mpc.version = '2';", "",
             "%%-----  Power Flow Data  -----%%", "%% system MVA base",
             f"mpc.baseMVA = {fmt(ppc['baseMVA'])};", ""]
    for key, header in BLOCKS:
        mat = np.asarray(ppc[key])
        if key == "gen":
            mat = mat[:, :10]
        elif key == "bus":
            mat = mat[:, :13]
        elif key == "branch":
            mat = mat[:, :13]
        lines.append(f"%\t{header}")
        lines.append(f"mpc.{key} = [")
        for row in mat:
            lines.append("\t" + "\t".join(fmt(v) for v in row) + ";")
        lines.append("];")
        lines.append("")
    Path(out_dir, f"{name}.m").write_text("\n".join(lines))


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "cases"
    for name in ["case9", "case30", "case118", "case300"]:
        export(name, out)
