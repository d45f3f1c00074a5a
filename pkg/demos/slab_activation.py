"""
Excite a corner of a small slab and watch the wave cross it.

A sphere of radius 0.1 cm at the origin receives 100 mA/cm^3 for the first
millisecond.  Every time step is one Newton solve whose linear systems are
condensed onto the subdomain interfaces and solved with BDDC-preconditioned
GMRES.  VTK snapshots of v, u_e and w land in ``--out`` every 0.5 ms.

    python demos/slab_activation.py --T 5 --out /tmp/slab
"""
import argparse

import numpy as np

from bidomain_bddc.harness import preset, run_experiment

parser = argparse.ArgumentParser()
parser.add_argument("--T", type=float, default=3.0)
parser.add_argument("--out", default=None)
args = parser.parse_args()

cfg = preset("slab-paper")
cfg.T = args.T
cfg.out = args.out
cfg.snapshot_every = 0.5 if args.out else None
print(f"slab {cfg.geometry.elems} elements, {np.prod(cfg.decomposition)} subdomains, tau = {cfg.tau} ms")

report = run_experiment(cfg)
row = report.rows[0]
print(f"{row['dofs']} dofs, mean Newton its {row['nit']:.2f}, mean GMRES its {row['lit']:.1f}, "
      f"{row['time']:.1f} s, status {row['status']}")

# Newton and GMRES counts per step: stimulus on, upstroke, then the travelling front
for s in report.series[:: max(1, len(report.series) // 10)]:
    print(f"  t = {s['t']:5.2f} ms  nit = {s['nit']}  lit = {s['lit']:.1f}")
