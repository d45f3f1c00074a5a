"""
Empirical counterparts of the convergence-theory constants and the GMRES
residual envelope ``||r_m||_B / ||r_0||_B <= (1 - c^2 / C)^{m/2}``.

The abstract bounds on the ionic derivatives are replaced by nodal extrema
over the current state; these are proxies, reported as such.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import ionic
from .solvers import GmresConfig, gmres

__all__ = [
    "TheoryConstants",
    "EnvelopeReport",
    "compute_constants",
    "estimate_c_C",
    "check_envelope",
    "envelope_diagnostic",
    "log_exponent",
]

logger = logging.getLogger(__name__)


def log_exponent(scaling):
    """Power of ``1 + log(H/h)`` in the bound: 2 for rho scaling, 3 for deluxe."""
    return {"rho": 2, "deluxe": 3}[scaling]


@dataclass
class TheoryConstants:
    K_MI: float
    K_mI: float
    K_MR: float
    K_mR: float
    C_Iw: float
    C_Rv: float
    sigma_M: np.ndarray
    sigma_m: np.ndarray
    H: float
    h: float
    Hh: float
    tau: float
    n: int
    capacitance: float = 1.0

    @property
    def K2(self):
        num = 0.25 * self.tau**2 * (self.C_Iw - self.C_Rv) ** 2
        return num / ((self.capacitance + self.tau * self.K_mI) * (1.0 - self.tau * self.K_mR))

    @property
    def log_factor(self):
        return (1.0 + np.log(self.Hh)) ** self.n

    @property
    def Phi(self):
        t = self.tau
        first = np.max((t * self.sigma_M + self.H**2 * (self.capacitance + t * self.K_MI)) / (t * self.sigma_m))
        second = (1.0 - t * self.K_MR) / (1.0 - t * self.K_mR)
        return float((first + second) * self.log_factor)

    @property
    def c0(self):
        phi = self.Phi
        ratio = np.max(np.sqrt(self.sigma_M) / (np.sqrt(self.tau) * self.sigma_m))
        return float(1.0 - self.K2**2 * self.H**2 / self.h * ratio * phi * np.sqrt(max(phi - 1.0, 0.0)))

    @property
    def c(self):
        return self.c0 / self.K2 if self.K2 > 0 else np.inf

    @property
    def C(self):
        return self.Phi * self.K2

    @property
    def informative(self):
        """Whether the theoretical rate ``1 - c^2/C`` lies in [0, 1)."""
        if not np.isfinite(self.c) or self.C <= 0 or self.c <= 0:
            return False
        return 0.0 <= 1.0 - self.c**2 / self.C < 1.0


def compute_constants(state, dec, tensors, tau, scaling="rho", params=ionic.DEFAULT):
    """Theory constants at ``state`` with nodal extrema standing in for the abstract bounds."""
    di_dv, di_dw, dr_dv, dr_dw = ionic.partials(state.v, state.w, params)
    sigma_M = np.zeros((dec.n_subdomains, 2))
    sigma_m = np.zeros((dec.n_subdomains, 2))
    for m, D in enumerate((tensors.D_i, tensors.D_e)):
        lam = np.linalg.eigvalsh(D)
        for s, el in enumerate(dec.elems):
            sigma_M[s, m] = lam[el, -1].max()
            sigma_m[s, m] = lam[el, 0].min()
    return TheoryConstants(
        float(di_dv.max()), float(di_dv.min()), float(dr_dw.max()), float(dr_dw.min()),
        float(np.abs(di_dw).max()), float(np.abs(dr_dv).max()),
        sigma_M, sigma_m, dec.H, dec.h, float(dec.Hh), tau, log_exponent(scaling), params.capacitance,
    )


def estimate_c_C(T, inner, n, samples=100, rng=None, project=None, extra=()):
    """
    Sampled bounds of ``<u, T u>_B / <u, u>_B`` (minimum, ``c_emp``) and
    ``<T u, T u>_B / <u, u>_B`` (maximum, ``C_emp``).

    ``extra`` adds fixed vectors to the random samples.  Returns
    ``(c_emp, C_emp, failures)`` where ``failures`` counts samples with a
    non-positive ``<u, u>_B``.
    """
    rng = np.random.default_rng(rng)
    project = project or (lambda x: x)
    lower, upper = np.inf, 0.0
    failures = 0
    vectors = [project(rng.standard_normal(n)) for _ in range(samples)] + [np.asarray(v) for v in extra]
    for u in vectors:
        uu = inner(u, u)
        if not uu > 0:
            failures += 1
            continue
        Tu = T(u)
        lower = min(lower, inner(u, Tu) / uu)
        upper = max(upper, inner(Tu, Tu) / uu)
    return float(lower), float(upper), failures


@dataclass
class EnvelopeReport:
    ratios: np.ndarray
    bound: np.ndarray
    c_emp: float
    C_emp: float
    informative: bool
    violations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    z_form_max: float = 0.0

    @property
    def ok(self):
        return len(self.violations) == 0

    @property
    def rate(self):
        return float(np.sqrt(1.0 - self.c_emp**2 / self.C_emp)) if self.informative else 1.0


def check_envelope(ratios, c_emp, C_emp, atol=1e-10):
    """Compare measured residual ratios with ``(1 - c^2/C)^{m/2}``, m = 0, 1, ..."""
    ratios = np.asarray(ratios, dtype=float)
    m = np.arange(len(ratios))
    informative = c_emp > 0 and C_emp > 0 and np.isfinite(c_emp)
    if informative:
        q = max(1.0 - c_emp**2 / C_emp, 0.0)
        bound = q ** (m / 2.0)
    else:
        bound = np.ones(len(ratios))
    violations = np.flatnonzero(ratios > bound + atol)
    return EnvelopeReport(ratios, bound, float(c_emp), float(C_emp), bool(informative), violations)


def envelope_diagnostic(lin, state, tau, rhs, samples=100, seed=0, max_iter=200):
    """
    Run GMRES on the preconditioned operator ``T = M^{-1} S`` in the
    ``B_Gamma`` inner product, keep every residual and compare the residual
    ratios with the envelope built from sampled constants.

    The sampled set contains the GMRES residuals themselves, so each step's
    reduction is bounded by the sampled constants.
    """
    S, M = lin.build(state, tau)
    part = lin.part
    k = part.kernel()

    def project(x):
        return x - k * (k @ x) / (k @ k)

    G = S.gram("B")

    def inner(u, v):
        return float(v @ (G @ u))

    def T(u):
        return M(S(u))

    kg = lin.k
    rhs = rhs - kg * (kg @ rhs) / (kg @ kg)
    f = project(S.condense(rhs))
    b = M(f)
    res = gmres(T, b, None, GmresConfig(restart=max_iter, max_iter=max_iter, tol=1e-10), inner=inner,
                store_residuals=True)
    r0 = np.sqrt(inner(res.residuals[0], res.residuals[0]))
    ratios = np.array([np.sqrt(max(inner(r, r), 0.0)) / r0 for r in res.residuals])
    c_emp, C_emp, failures = estimate_c_C(T, inner, S.n, samples, seed, project, res.residuals[:-1])
    if failures:
        logger.warning("%d samples had a non-positive B-norm", failures)
    report = check_envelope(ratios, c_emp, C_emp)
    rng = np.random.default_rng(seed + 1)
    Gz = S.gram("Z")
    zs = []
    for _ in range(20):
        u = project(rng.standard_normal(S.n))
        zs.append(abs(u @ Gz @ u) / max(inner(u, u), 1e-300))
    report.z_form_max = float(max(zs))
    return report


def write_diagnostic_csv(report, path):
    """CSV with columns ``m, ratio, bound``."""
    with open(path, "w", newline="") as fh:
        fh.write("m,ratio,bound\n")
        for m, (r, b) in enumerate(zip(report.ratios, report.bound)):
            fh.write(f"{m},{r:.6g},{b:.6g}\n")
