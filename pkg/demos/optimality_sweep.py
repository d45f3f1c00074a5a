"""
Iteration counts as subdomains get finer inside: 8 subdomains, H/h from 4
to 12, both scalings and the three primal spaces.

With vertices alone the coarse space misses the edge averages and the
counts keep climbing; adding edge (and face) averages flattens the curve.

    python demos/optimality_sweep.py --Hh 4 8
"""
import argparse

from bidomain_bddc.harness import preset, run_experiment

parser = argparse.ArgumentParser()
parser.add_argument("--Hh", type=int, nargs="+", default=[4, 8])
parser.add_argument("--combos", nargs="+", default=["rho/v", "rho/ve", "rho/vef", "deluxe/v", "deluxe/ve"])
args = parser.parse_args()

cfg = preset("slab-paper")
cfg.experiment.kind = "optimality"
cfg.experiment.optimality_Hh = args.Hh
cfg.experiment.optimality_combos = args.combos
report = run_experiment(cfg)

table = {}
for r in report.rows:
    table.setdefault(f"{r['scaling']:>6} {r['primal']:>3}", {})[r["Hh"]] = r["lit"]
print("mean GMRES iterations per Newton step")
print("           " + "".join(f"H/h={h:<4}" for h in args.Hh))
for name, counts in table.items():
    print(f"{name}    " + "".join(f"{counts[h]:<8.1f}" for h in args.Hh))
