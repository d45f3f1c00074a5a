"""
Experiment driver: YAML run configurations, the weak/strong/optimality/
heartbeat suites, CSV reports and legacy VTK snapshots.
"""
import copy
import csv
import dataclasses
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import ionic
from .assembly import Discretization, State
from .exceptions import InvalidConfigError
from .geometry import Conductivities, EllipsoidParams, build_conductivity, build_ellipsoid, build_fibers, build_slab
from .partition import PrimalConfig, decompose
from .solvers import (GmresConfig, LinearConfig, LinearStack, NewtonConfig, StimulusProtocol, StimulusSite,
                      run_time_loop)

__all__ = [
    "GeometryConfig",
    "StimulusConfig",
    "ExperimentConfig",
    "RunConfig",
    "ExperimentReport",
    "PRESETS",
    "preset",
    "load_config",
    "dump_config",
    "run_experiment",
    "export_csv",
    "read_csv",
    "export_vtk",
    "CSV_COLUMNS",
]

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("subds", "mesh", "dofs", "nit", "lit", "time", "Sp", "scaling", "primal", "Hh", "status")
EXPERIMENTS = ("single", "weak", "strong", "optimality", "heartbeat")


@dataclass
class GeometryConfig:
    kind: str = "slab"
    elems: tuple = (12, 12, 12)
    lengths: tuple = (0.24, 0.24, 0.24)
    ellipsoid: dict = field(default_factory=lambda: dataclasses.asdict(EllipsoidParams()))

    def params(self):
        return EllipsoidParams(**self.ellipsoid)


@dataclass
class StimulusConfig:
    amplitude: float = 100.0
    duration: float = 1.0
    radius: float = 0.1
    sites: list = field(default_factory=list)


@dataclass
class ExperimentConfig:
    kind: str = "single"
    weak_local: tuple = (6, 6, 6)
    weak_grids: list = field(default_factory=lambda: [(1, 1, 1), (2, 1, 1), (2, 2, 1), (2, 2, 2)])
    strong_grids: list = field(default_factory=lambda: [(2, 1, 1), (2, 2, 1), (2, 2, 2)])
    optimality_Hh: list = field(default_factory=lambda: [4, 8, 12])
    optimality_combos: list = field(default_factory=lambda: ["rho/v", "rho/ve", "rho/vef", "deluxe/v", "deluxe/ve",
                                                              "deluxe/vef"])
    optimality_steps: int = 1


@dataclass
class RunConfig:
    name: str = "custom"
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    decomposition: tuple = (2, 2, 2)
    ionic: dict = field(default_factory=lambda: dataclasses.asdict(ionic.IonicParams()))
    conductivity: dict = field(default_factory=lambda: dataclasses.asdict(Conductivities()))
    tau: float = 0.05
    T: float = 2.0
    stimulus: StimulusConfig = field(default_factory=StimulusConfig)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    gmres: GmresConfig = field(default_factory=GmresConfig)
    preconditioner: str = "bddc"
    scaling: str = "rho"
    primal: str = "ve"
    deluxe_symmetric: bool = True
    lumped: bool = False
    snapshot_every: float = None
    out: str = None
    threads: int = 1
    deterministic: bool = False
    seed: int = 0

    def ionic_params(self):
        p = ionic.IonicParams(**self.ionic)
        p.validate()
        return p

    def conductivities(self):
        return Conductivities(**self.conductivity)

    def linear(self):
        return LinearConfig(self.preconditioner, self.scaling, self.primal, self.deluxe_symmetric, self.gmres)

    def validate(self):
        if self.experiment.kind not in EXPERIMENTS:
            raise InvalidConfigError(f"unknown experiment {self.experiment.kind!r}")
        if self.geometry.kind not in ("slab", "ellipsoid"):
            raise InvalidConfigError(f"unknown geometry {self.geometry.kind!r}")
        if self.scaling not in ("rho", "deluxe"):
            raise InvalidConfigError(f"unknown scaling {self.scaling!r}")
        PrimalConfig(self.primal)
        if self.tau <= 0 or self.T < 0:
            raise InvalidConfigError("need tau > 0 and T >= 0")
        if self.threads < 1:
            raise InvalidConfigError("threads must be at least 1")
        self.ionic_params()
        self.conductivities().validate()
        self.newton.validate()
        self.gmres.validate()
        if self.geometry.kind == "ellipsoid":
            self.geometry.params().validate()
        ex = self.experiment
        checks = []
        if ex.kind in ("single", "heartbeat"):
            checks.append((self.geometry.elems, self.decomposition))
        elif ex.kind == "strong":
            checks += [(self.geometry.elems, g) for g in ex.strong_grids]
        for elems, grid in checks:
            for n, p in zip(elems, grid):
                if p < 1 or n % p:
                    raise InvalidConfigError(f"{grid} subdomains do not tile {elems} elements")
        return self


def _slab_preset():
    return RunConfig(name="slab-paper")


def _ellipsoid_preset():
    return RunConfig(
        name="ellipsoid-paper",
        geometry=GeometryConfig("ellipsoid", (12, 12, 6)),
        decomposition=(2, 2, 2),
    )


PRESETS = {"slab-paper": _slab_preset, "ellipsoid-paper": _ellipsoid_preset}


def preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise InvalidConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _tuples(x):
    if isinstance(x, list) and x and isinstance(x[0], list):
        return [tuple(v) for v in x]
    if isinstance(x, list) and all(isinstance(v, (int, float)) for v in x):
        return tuple(x)
    return x


def _build(cls, data):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise InvalidConfigError(f"expected a mapping for {cls.__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise InvalidConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    nested = {"experiment": ExperimentConfig, "geometry": GeometryConfig, "stimulus": StimulusConfig,
              "newton": NewtonConfig, "gmres": GmresConfig}
    for k, v in data.items():
        if k in nested and cls is RunConfig:
            kwargs[k] = _build(nested[k], v)
        elif k in ("optimality_combos", "optimality_Hh", "sites"):
            kwargs[k] = list(v) if v is not None else []
        else:
            kwargs[k] = _tuples(v)
    return cls(**kwargs)


def config_from_dict(data):
    base = data.pop("preset", None) if isinstance(data, dict) else None
    if base is None:
        return _build(RunConfig, data)
    merged = _deep_merge(_plain(preset(base)), data)
    return _build(RunConfig, merged)


def _deep_merge(a, b):
    out = copy.deepcopy(a)
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _plain(obj):
    """Dataclasses to nested dicts with lists instead of tuples (YAML friendly)."""
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dump_config(cfg, path=None):
    text = yaml.safe_dump(_plain(cfg), sort_keys=False, default_flow_style=None)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_config(path_or_text):
    """Parse a YAML run configuration from a path or a YAML string."""
    if os.path.exists(str(path_or_text)):
        with open(path_or_text) as fh:
            data = yaml.safe_load(fh)
    else:
        data = yaml.safe_load(path_or_text)
    return config_from_dict(data or {}).validate()


@dataclass
class ExperimentReport:
    kind: str
    rows: list = field(default_factory=list)
    series: list = field(default_factory=list)

    def column(self, name):
        return [r[name] for r in self.rows]


# ---------------------------------------------------------------------------
# problem construction


def build_mesh(geom, elems=None, lengths=None):
    elems = tuple(elems or geom.elems)
    if geom.kind == "slab":
        return build_slab(*elems, lengths or geom.lengths)
    return build_ellipsoid(*elems, geom.params())


def build_protocol(cfg, mesh):
    st = cfg.stimulus
    if st.sites:
        sites = [StimulusSite(tuple(s["center"]), float(s.get("radius", st.radius))) for s in st.sites]
        return StimulusProtocol(st.amplitude, st.duration, sites)
    if mesh.kind == "slab":
        return StimulusProtocol.slab_corner(st.amplitude, st.duration, st.radius)
    return StimulusProtocol.endocardial_apex(mesh, st.amplitude, st.duration, st.radius)


def _mesh_label(elems):
    return "x".join(str(int(n)) for n in elems)


def _simulate(cfg, mesh, grid, pool, linear=None, T=None, on_snapshot=None):
    disc = Discretization(mesh, build_conductivity(build_fibers(mesh), cfg.conductivities()), cfg.ionic_params(),
                          cfg.lumped)
    dec = decompose(mesh, *grid)
    lin = LinearStack(disc, dec, linear or cfg.linear(), pool)
    protocol = build_protocol(cfg, mesh)
    T = cfg.T if T is None else T
    t0 = time.perf_counter()
    state, _, stats = run_time_loop(disc, State.rest(mesh.n_nodes), T, cfg.tau, protocol, lin, cfg.newton,
                                    cfg.snapshot_every, on_snapshot)
    elapsed = time.perf_counter() - t0
    return state, stats, elapsed, dec


def _row(cfg, mesh, grid, stats, elapsed, dec, scaling=None, primal=None):
    status = "ok" if stats.ok else next(s.status for s in stats.steps if not s.converged)
    return {
        "subds": int(np.prod(grid)),
        "mesh": _mesh_label(mesh.elems),
        "dofs": mesh.n_dofs,
        "nit": stats.mean_nit,
        "lit": stats.mean_lit,
        "time": 0.0 if cfg.deterministic else elapsed,
        "Sp": float("nan"),
        "scaling": scaling or cfg.scaling,
        "primal": primal or cfg.primal,
        "Hh": dec.Hh,
        "status": status,
    }


def _snapshot_writer(cfg, mesh, tag):
    if not cfg.out or cfg.snapshot_every is None:
        return None
    os.makedirs(cfg.out, exist_ok=True)

    def write(t, state):
        export_vtk(state, mesh, t, os.path.join(cfg.out, f"{tag}_t{t:08.3f}.vtk"))

    return write


def run_experiment(cfg):
    """Run the configured experiment and return an :class:`ExperimentReport`."""
    cfg.validate()
    kind = cfg.experiment.kind
    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        report = _RUNNERS[kind](cfg, pool)
    finally:
        if pool is not None:
            pool.shutdown()
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        export_csv(report, os.path.join(cfg.out, f"{kind}.csv"))
        if report.series:
            _write_series(report.series, os.path.join(cfg.out, f"{kind}_steps.csv"))
    return report


def _run_single(cfg, pool):
    mesh = build_mesh(cfg.geometry)
    _, stats, elapsed, dec = _simulate(cfg, mesh, cfg.decomposition, pool,
                                       on_snapshot=_snapshot_writer(cfg, mesh, "run"))
    report = ExperimentReport("single", [_row(cfg, mesh, cfg.decomposition, stats, elapsed, dec)])
    report.series = _series(stats, cfg.deterministic)
    return report


def _run_weak(cfg, pool):
    geom = cfg.geometry
    report = ExperimentReport("weak")
    spacing = np.array(geom.lengths) / np.array(geom.elems)
    for grid in cfg.experiment.weak_grids:
        elems = tuple(int(a * b) for a, b in zip(cfg.experiment.weak_local, grid))
        mesh = build_mesh(geom, elems, tuple(spacing * np.array(elems)))
        _, stats, elapsed, dec = _simulate(cfg, mesh, grid, pool)
        report.rows.append(_row(cfg, mesh, grid, stats, elapsed, dec))
    return report


def _run_strong(cfg, pool):
    mesh = build_mesh(cfg.geometry)
    report = ExperimentReport("strong")
    for grid in cfg.experiment.strong_grids:
        _, stats, elapsed, dec = _simulate(cfg, mesh, grid, pool)
        report.rows.append(_row(cfg, mesh, grid, stats, elapsed, dec))
    t_ref = report.rows[0]["time"] if report.rows else 0.0
    for r in report.rows:
        r["Sp"] = t_ref / r["time"] if r["time"] > 0 else float("nan")
    return report


def _run_optimality(cfg, pool):
    geom = cfg.geometry
    grid = cfg.decomposition
    report = ExperimentReport("optimality")
    T = cfg.experiment.optimality_steps * cfg.tau
    for Hh in cfg.experiment.optimality_Hh:
        elems = tuple(int(Hh * p) for p in grid)
        mesh = build_mesh(geom, elems)
        for combo in cfg.experiment.optimality_combos:
            scaling, primal = combo.split("/")
            lin = LinearConfig(cfg.preconditioner, scaling, primal, cfg.deluxe_symmetric, cfg.gmres)
            _, stats, elapsed, dec = _simulate(cfg, mesh, grid, pool, lin, T)
            report.rows.append(_row(cfg, mesh, grid, stats, elapsed, dec, scaling, primal))
    return report


def _run_heartbeat(cfg, pool):
    mesh = build_mesh(cfg.geometry)
    _, stats, elapsed, dec = _simulate(cfg, mesh, cfg.decomposition, pool,
                                       on_snapshot=_snapshot_writer(cfg, mesh, "heartbeat"))
    report = ExperimentReport("heartbeat", [_row(cfg, mesh, cfg.decomposition, stats, elapsed, dec)])
    report.series = _series(stats, cfg.deterministic)
    return report


_RUNNERS = {
    "single": _run_single,
    "weak": _run_weak,
    "strong": _run_strong,
    "optimality": _run_optimality,
    "heartbeat": _run_heartbeat,
}


def _series(stats, deterministic):
    return [{"step": s.step, "t": s.t, "nit": s.nit, "lit": s.mean_lit, "time": 0.0 if deterministic else s.time,
             "status": s.status} for s in stats.steps]


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def export_csv(report, path, columns=CSV_COLUMNS):
    """One header row, then one row per experiment row, numbers to 6 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in report.rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])
    return path


def _write_series(series, path):
    cols = ("step", "t", "nit", "lit", "time", "status")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in series:
            w.writerow([_fmt(r[c]) for c in cols])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def export_vtk(state, mesh, t, path):
    """Legacy ASCII structured-grid file with point fields ``v``, ``u_e`` and ``w``."""
    if len(state) != mesh.n_nodes:
        raise ValueError(f"state has {len(state)} nodes, mesh has {mesh.n_nodes}")
    mx, my, mz = mesh.shape
    lines = [
        "# vtk DataFile Version 3.0",
        f"bidomain {mesh.kind} t={t:.6g} ms",
        "ASCII",
        "DATASET STRUCTURED_GRID",
        f"DIMENSIONS {mx} {my} {mz}",
        f"POINTS {mesh.n_nodes} double",
    ]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.node_coords]
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    for name, values in (("v", state.v), ("u_e", state.u_e), ("w", state.w)):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{x:.9g}" for x in values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
