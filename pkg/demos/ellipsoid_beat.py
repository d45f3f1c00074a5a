"""
Five endocardial sites near the truncated apex of an idealized left
ventricle.  The fibers turn by 120 degrees from endocardium to epicardium,
so the wave spreads faster along the wall than across it.

    python demos/ellipsoid_beat.py --T 4 --out /tmp/lv
"""
import argparse

from bidomain_bddc.harness import preset, run_experiment

parser = argparse.ArgumentParser()
parser.add_argument("--T", type=float, default=2.0)
parser.add_argument("--scaling", default="rho", choices=("rho", "deluxe"))
parser.add_argument("--out", default=None)
args = parser.parse_args()

cfg = preset("ellipsoid-paper")
cfg.experiment.kind = "heartbeat"
cfg.T = args.T
cfg.scaling = args.scaling
cfg.out = args.out
cfg.snapshot_every = 0.5 if args.out else None

report = run_experiment(cfg)
lit = [s["lit"] for s in report.series]
row = report.rows[0]
print(f"ellipsoid {row['mesh']}, {row['dofs']} dofs, {row['subds']} subdomains, {args.scaling} scaling")
print(f"mean Newton its {row['nit']:.2f}, GMRES its min/mean/max {min(lit):.1f}/{row['lit']:.1f}/{max(lit):.1f}")
