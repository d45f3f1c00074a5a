"""Command line entry point: ``bidomain-bddc <command> [options]``."""
import argparse
import logging
import os
import sys

from .exceptions import InvalidConfigError
from .harness import (CSV_COLUMNS, build_mesh, build_protocol, dump_config, export_csv, load_config, preset,
                      run_experiment)

COMMANDS = {
    "run": "single",
    "weak": "weak",
    "strong": "strong",
    "optimality": "optimality",
    "heartbeat": "heartbeat",
    "diagnose": None,
}


def make_parser():
    parser = argparse.ArgumentParser(prog="bidomain-bddc", description="Bidomain simulations with BDDC.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--preset", help="named preset (slab-paper, ellipsoid-paper)")
        p.add_argument("--geometry", choices=("slab", "ellipsoid"))
        p.add_argument("--scaling", choices=("rho", "deluxe"))
        p.add_argument("--primal", choices=("v", "ve", "vef"))
        p.add_argument("--threads", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--T", type=float, help="final time in ms")
        p.add_argument("--deterministic", action="store_true", help="write zero timings")
        p.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")
    return parser


def resolve_config(args, command):
    if args.config:
        cfg = load_config(args.config)
    else:
        name = args.preset or ("ellipsoid-paper" if args.geometry == "ellipsoid" else "slab-paper")
        cfg = preset(name)
    if args.geometry and args.geometry != cfg.geometry.kind:
        base = preset(f"{args.geometry}-paper")
        cfg.geometry = base.geometry
        cfg.decomposition = base.decomposition
    for attr in ("scaling", "primal", "threads", "out", "T"):
        value = getattr(args, attr)
        if value is not None:
            setattr(cfg, attr, value)
    if args.deterministic:
        cfg.deterministic = True
    kind = COMMANDS[command]
    if kind is not None:
        cfg.experiment.kind = kind
    return cfg.validate()


def _print_rows(report):
    widths = [max(len(c), 8) for c in CSV_COLUMNS]
    print("  ".join(c.rjust(w) for c, w in zip(CSV_COLUMNS, widths)))
    for r in report.rows:
        cells = []
        for c, w in zip(CSV_COLUMNS, widths):
            v = r[c]
            cells.append((f"{v:.4g}" if isinstance(v, float) else str(v)).rjust(w))
        print("  ".join(cells))


def diagnose(cfg):
    """Envelope diagnostic on the first stimulated Newton system."""
    from .assembly import Discretization, State
    from .geometry import build_conductivity, build_fibers
    from .partition import decompose
    from .solvers import LinearStack
    from .theory import compute_constants, envelope_diagnostic, write_diagnostic_csv

    mesh = build_mesh(cfg.geometry)
    tensors = build_conductivity(build_fibers(mesh), cfg.conductivities())
    disc = Discretization(mesh, tensors, cfg.ionic_params(), cfg.lumped)
    dec = decompose(mesh, *cfg.decomposition)
    lin = LinearStack(disc, dec, cfg.linear())
    state = State.rest(mesh.n_nodes)
    iapp = build_protocol(cfg, mesh).currents(disc, 0.0)
    rhs = -disc.residual(state, state, cfg.tau, *iapp)
    report = envelope_diagnostic(lin, state, cfg.tau, rhs, seed=cfg.seed)
    consts = compute_constants(state, dec, tensors, cfg.tau, cfg.scaling, disc.params)
    print(f"sampled c = {report.c_emp:.4g}, C = {report.C_emp:.4g}, rate = {report.rate:.4g}")
    print(f"GMRES steps = {len(report.ratios) - 1}, envelope violations = {len(report.violations)}")
    print(f"skew form relative size = {report.z_form_max:.3g}")
    print(f"theory: K^2 = {consts.K2:.3g}, Phi = {consts.Phi:.4g}, informative = {consts.informative}")
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        write_diagnostic_csv(report, os.path.join(cfg.out, "diagnostic.csv"))
    return 0 if report.ok else 1


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args, args.command)
    except (InvalidConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.dump_config:
        print(dump_config(cfg), end="")
        return 0
    if args.command == "diagnose":
        return diagnose(cfg)
    report = run_experiment(cfg)
    _print_rows(report)
    if cfg.out:
        print(f"wrote {os.path.join(cfg.out, cfg.experiment.kind + '.csv')}")
    return 0 if all(r["status"] == "ok" for r in report.rows) else 1


__all__ = ["main", "make_parser", "resolve_config", "export_csv"]
