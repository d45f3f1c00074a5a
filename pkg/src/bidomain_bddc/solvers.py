"""
Restarted GMRES, the Newton loop of one Backward Euler step and the time
stepper with its stimulus protocol.
"""
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import ionic
from .assembly import State, assemble_residual, jacobian_from_operators, kernel_vector, residual_norm
from .bddc import make_preconditioner, subdomain_sigma_max
from .exceptions import ConvergenceError, InvalidConfigError
from .partition import build_dof_partition
from .schur import SchurOperator, build_local_systems, factorize

__all__ = [
    "GmresConfig",
    "GmresResult",
    "NewtonConfig",
    "LinearConfig",
    "StimulusSite",
    "StimulusProtocol",
    "StepStats",
    "SolverStats",
    "LinearStack",
    "gmres",
    "newton_step",
    "run_time_loop",
]

logger = logging.getLogger(__name__)

COERCIVITY_TAU = 0.37


@dataclass
class GmresConfig:
    restart: int = 200
    max_iter: int = 2000
    tol: float = 1e-6
    side: str = "right"

    def validate(self):
        if self.restart < 1 or self.max_iter < 1:
            raise InvalidConfigError("GMRES restart and max_iter must be at least 1")
        if not 0 < self.tol < 1:
            raise InvalidConfigError("GMRES tolerance must lie in (0, 1)")
        if self.side not in ("right", "left"):
            raise InvalidConfigError("preconditioning side must be 'right' or 'left'")


@dataclass
class GmresResult:
    x: np.ndarray
    converged: bool
    iterations: int
    history: list
    true_residual: float
    residuals: list = None


def _callable(A):
    if A is None:
        return lambda v: v.copy()
    if callable(A):
        return A
    return lambda v: A @ v


def gmres(A, b, M=None, cfg=None, x0=None, inner=None, store_residuals=False):
    """
    Restarted GMRES with modified Gram-Schmidt and Givens rotations.

    Parameters
    ----------
    A, M : callable or matrix
        Operator and preconditioner (``None`` means identity).
    cfg : GmresConfig
    inner : callable, optional
        Inner product ``inner(u, v)``; the Euclidean one by default.
    store_residuals : bool
        Keep the explicit residual vector of every iteration (diagnostics).

    Returns
    -------
    GmresResult
        ``history`` holds relative residual norms; with right
        preconditioning these are residuals of the original system.  On
        failure ``x`` is the iterate with the smallest true residual.
    """
    cfg = cfg or GmresConfig()
    cfg.validate()
    A, M = _callable(A), _callable(M)
    if cfg.side == "left":
        A0, Minv = A, M
        A = lambda v: Minv(A0(v))  # noqa: E731
        b = Minv(b)
        M = _callable(None)
    dot = inner or (lambda u, v: float(u @ v))
    norm = lambda v: float(np.sqrt(max(dot(v, v), 0.0)))  # noqa: E731

    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = norm(b)
    if bnorm == 0.0:
        return GmresResult(np.zeros(n), True, 0, [0.0], 0.0, [b.copy()] if store_residuals else None)
    r = b - A(x)
    beta = norm(r)
    history = [beta / bnorm]
    residuals = [r.copy()] if store_residuals else None
    best = (beta, x.copy())
    total = 0
    m = cfg.restart
    while beta / bnorm > cfg.tol and total < cfg.max_iter:
        V = [r / beta]
        Z = []
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        k_done = 0
        breakdown = False
        for k in range(m):
            z = M(V[k])
            w = A(z)
            Z.append(z)
            for i in range(k + 1):
                H[i, k] = dot(V[i], w)
                w = w - H[i, k] * V[i]
            h_next = norm(w)
            H[k + 1, k] = h_next
            for i in range(k):
                H[i, k], H[i + 1, k] = cs[i] * H[i, k] + sn[i] * H[i + 1, k], -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            rho = np.hypot(H[k, k], H[k + 1, k])
            breakdown = H[k + 1, k] <= 1e-14 * rho
            cs[k], sn[k] = (H[k, k] / rho, H[k + 1, k] / rho) if rho > 0 else (1.0, 0.0)
            H[k, k] = rho
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_done = k + 1
            history.append(abs(g[k + 1]) / bnorm)
            if store_residuals:
                y = sla.solve_triangular(H[:k_done, :k_done], g[:k_done])
                xk = x + np.column_stack(Z) @ y
                residuals.append(b - A(xk))
            if history[-1] <= cfg.tol or total >= cfg.max_iter or breakdown:
                break
            V.append(w / h_next)
        y = sla.solve_triangular(H[:k_done, :k_done], g[:k_done])
        x = x + np.column_stack(Z) @ y
        r = b - A(x)
        beta = norm(r)
        if beta < best[0]:
            best = (beta, x.copy())
        else:
            break
    converged = beta / bnorm <= cfg.tol
    x_out = x if converged else best[1]
    return GmresResult(x_out, converged, total, history, min(beta, best[0]) / bnorm, residuals)


@dataclass
class NewtonConfig:
    tol: float = 1e-4
    max_iter: int = 10
    scaled_norm: bool = True

    def validate(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise InvalidConfigError("Newton tolerance must be positive and max_iter at least 1")


@dataclass
class LinearConfig:
    preconditioner: str = "bddc"
    scaling: str = "rho"
    primal: str = "ve"
    deluxe_symmetric: bool = True
    gmres: GmresConfig = field(default_factory=GmresConfig)


@dataclass
class LinearInfo:
    iterations: int
    converged: bool
    true_residual: float
    history: list


class LinearStack:
    """
    Solves ``J s = g`` by condensation to the interface, preconditioned GMRES
    on the Schur complement and back-substitution.  The (1, 1, 0) mode is
    projected out of the right-hand side and of the increment.
    """

    def __init__(self, disc, dec, cfg=None, pool=None):
        self.disc = disc
        self.dec = dec
        self.cfg = cfg or LinearConfig()
        self.pool = pool
        self.part = build_dof_partition(dec, primal=self.cfg.primal)
        self.sigma_max = subdomain_sigma_max(dec, disc.tensors)
        self.k = kernel_vector(disc.n_nodes)

    def _deflate(self, x, k):
        return x - k * (k @ x) / (k @ k)

    def build(self, state, tau):
        """Local systems, Schur operator and preconditioner at ``state``."""
        locals_ = build_local_systems(self.disc, self.part, state, tau, self.pool)
        S = SchurOperator(self.part, locals_, self.pool)
        M = make_preconditioner(self.cfg.preconditioner, self.part, locals_, self.cfg.scaling,
                                self.sigma_max, self.cfg.deluxe_symmetric, self.pool)
        return S, M

    def solve(self, state, tau, rhs):
        rhs = self._deflate(rhs, self.k)
        if self.dec.n_subdomains == 1:
            return self._deflate(self._direct(state, tau, rhs), self.k), LinearInfo(0, True, 0.0, [])
        S, M = self.build(state, tau)
        f = self._deflate(S.condense(rhs), self.part.kernel())
        res = gmres(S, f, M, self.cfg.gmres)
        info = LinearInfo(res.iterations, res.converged, res.true_residual, res.history)
        if not res.converged:
            raise ConvergenceError(f"GMRES stopped at relative residual {res.true_residual:.3e}", info)
        s = S.back_substitute(res.x, rhs)
        return self._deflate(s, self.k), info

    def _direct(self, state, tau, rhs):
        """
        Sparse direct solve.  The right-hand side is compatible, so the
        equation of the first extracellular dof is redundant; dropping it and
        pinning that dof gives a nonsingular system.
        """
        J = jacobian_from_operators(self.disc.glob, state.v, state.w, tau, self.disc.params)
        keep = np.delete(np.arange(J.shape[0]), self.disc.n_nodes)
        s = np.zeros(J.shape[0])
        s[keep] = factorize(J[keep][:, keep], "global Jacobian").solve(rhs[keep])
        return s


@dataclass
class StepStats:
    step: int
    t: float
    nit: int = 0
    lit: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    time: float = 0.0
    status: str = "ok"

    @property
    def converged(self):
        return self.status == "ok"

    @property
    def mean_lit(self):
        return float(np.mean(self.lit)) if self.lit else 0.0


def newton_step(disc, old, tau, lin, iapp=(None, None), cfg=None, step=0, t=0.0):
    """
    Newton iterations for one Backward Euler step starting from ``old``.

    Returns the new state and its :class:`StepStats`.  The step stops when
    the (lumped-mass scaled) max-norm of the residual drops below the
    tolerance; residual growth on three consecutive iterations marks the
    step as diverged.
    """
    cfg = cfg or NewtonConfig()
    cfg.validate()
    stats = StepStats(step, t)
    t0 = time.perf_counter()
    weight = disc.lumped_mass if cfg.scaled_norm else None
    x = old.copy()
    F = assemble_residual(disc, x, old, tau, *iapp)
    norm = residual_norm(F, weight)
    stats.residuals.append(norm)
    growth = 0
    while norm > cfg.tol:
        if stats.nit >= cfg.max_iter:
            stats.status = "max-newton"
            break
        ionic.coercivity_check(x.v, x.w, tau, disc.params, disc.mesh.node_coords)
        try:
            s, info = lin.solve(x, tau, -F)
        except ConvergenceError as exc:
            stats.lit.append(exc.result.iterations)
            stats.status = "gmres-failed"
            break
        stats.lit.append(info.iterations)
        x = State.from_vector(x.to_vector() + s)
        F = assemble_residual(disc, x, old, tau, *iapp)
        new_norm = residual_norm(F, weight)
        stats.nit += 1
        stats.residuals.append(new_norm)
        growth = growth + 1 if new_norm > norm else 0
        norm = new_norm
        if growth >= 3:
            stats.status = "diverged"
            break
    stats.time = time.perf_counter() - t0
    return x, stats


@dataclass
class StimulusSite:
    center: tuple
    radius: float


@dataclass
class StimulusProtocol:
    """
    Intracellular current ``amplitude`` on the nodes inside any site for
    ``t < duration``.  The extracellular current is the uniform density with
    the same integral, which enforces the compatibility condition.
    """

    amplitude: float = 100.0
    duration: float = 1.0
    sites: list = field(default_factory=list)

    def mask(self, mesh):
        x = mesh.node_coords
        inside = np.zeros(len(x), dtype=bool)
        for site in self.sites:
            d = np.linalg.norm(x - np.asarray(site.center, dtype=float), axis=1)
            inside |= d <= site.radius
            inside[np.argmin(d)] = True
        return inside

    def currents(self, disc, t):
        """Nodal ``(I_app_i, I_app_e)`` at time ``t``."""
        n = disc.n_nodes
        if t >= self.duration - 1e-12 or not self.sites or self.amplitude == 0:
            return np.zeros(n), np.zeros(n)
        i_i = self.amplitude * self.mask(disc.mesh).astype(float)
        total = disc.lumped_mass @ i_i
        i_e = np.full(n, total / disc.lumped_mass.sum())
        return i_i, i_e

    @classmethod
    def slab_corner(cls, amplitude=100.0, duration=1.0, radius=0.1):
        return cls(amplitude, duration, [StimulusSite((0.0, 0.0, 0.0), radius)])

    @classmethod
    def endocardial_apex(cls, mesh, amplitude=100.0, duration=1.0, radius=0.1, n_sites=5):
        """Sites on the endocardial surface next to the truncated apex."""
        p = mesh.ellipsoid
        theta = p.theta_min + 0.1 * (p.theta_max - p.theta_min)
        phi = np.linspace(p.phi_min, p.phi_max, n_sites + 2)[1:-1]
        centers = p.point(phi, np.full(n_sites, theta), np.zeros(n_sites))
        return cls(amplitude, duration, [StimulusSite(tuple(c), radius) for c in centers])


@dataclass
class SolverStats:
    steps: list = field(default_factory=list)

    @property
    def nit(self):
        return [s.nit for s in self.steps]

    @property
    def lit(self):
        return [s.mean_lit for s in self.steps]

    @property
    def mean_nit(self):
        return float(np.mean(self.nit)) if self.steps else 0.0

    @property
    def mean_lit(self):
        lits = [x for s in self.steps for x in s.lit]
        return float(np.mean(lits)) if lits else 0.0

    @property
    def total_time(self):
        return float(sum(s.time for s in self.steps))

    @property
    def ok(self):
        return all(s.converged for s in self.steps)


def run_time_loop(disc, initial, T, tau, protocol, lin, newton=None, snapshot_every=None, on_snapshot=None):
    """
    Backward Euler from ``initial`` over ``[0, T]``.

    Returns ``(state, snapshots, stats)`` where ``snapshots`` is a list of
    ``(t, State)`` taken every ``snapshot_every`` ms (and at ``t = 0``).
    A failed step ends the loop; everything computed so far is returned.
    """
    if tau <= 0 or T < 0:
        raise InvalidConfigError("need tau > 0 and T >= 0")
    if tau > COERCIVITY_TAU:
        logger.warning("time step %.3g ms exceeds the coercivity bound %.2f ms", tau, COERCIVITY_TAU)
    n_steps = int(round(T / tau))
    stats = SolverStats()
    state = initial.copy()
    snapshots = []
    every = None if snapshot_every is None else max(1, int(round(snapshot_every / tau)))

    def snap(t, s):
        snapshots.append((t, s.copy()))
        if on_snapshot is not None:
            on_snapshot(t, s)

    if every is not None:
        snap(0.0, state)
    for n in range(n_steps):
        t = n * tau
        iapp = protocol.currents(disc, t) if protocol is not None else (None, None)
        state, st = newton_step(disc, state, tau, lin, iapp, newton, step=n + 1, t=t + tau)
        stats.steps.append(st)
        if not st.converged:
            logger.error("step %d failed: %s", n + 1, st.status)
            break
        if every is not None and (n + 1) % every == 0:
            snap((n + 1) * tau, state)
    return state, snapshots, stats
