"""
BDDC preconditioner for the interface Schur complement, plus two baselines.

The preconditioner works in the transformed interface basis of
:mod:`partition`, where every primal constraint is an explicit unknown.
Vectors of the partially assembled space ``W~`` are stored as a pair
``(duals, primal)``: one array of dual values per subdomain and one global
array of primal values.  For a residual ``r`` in the original basis

    M^{-1} r = T R~_D^T S~^{-1} R~_D T^T r,

where ``S~^{-1}`` is evaluated by block elimination of the primal unknowns
and ``R~_D`` applies the transposed scaling to the dual parts, so that
``R~_D^T`` forms the scaled average ``sum_j D_j u_j``.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .exceptions import InvalidConfigError, SingularSystemError
from .schur import _map, factorize

__all__ = [
    "Scaling",
    "CoarseProblem",
    "BddcPreconditioner",
    "ClassJacobi",
    "IdentityPreconditioner",
    "subdomain_sigma_max",
    "build_rho_scaling",
    "build_deluxe_scaling",
    "make_preconditioner",
]


@dataclass
class Scaling:
    """
    Scaling of the dual dofs of every subdomain.

    For ``rho`` the scaling is diagonal and ``weights[j]`` holds one weight per
    dual dof.  For ``deluxe`` ``blocks[j]`` lists ``(class_id, positions, D)``
    with ``positions`` indexing the subdomain's dual dofs.
    """

    kind: str
    weights: list = None
    blocks: list = None

    def apply(self, j, x, transpose=False):
        if self.kind == "rho":
            return self.weights[j] * x
        out = np.zeros_like(x)
        for _, pos, D in self.blocks[j]:
            out[pos] = (D.T if transpose else D) @ x[pos]
        return out

    def unity_error(self, part):
        """Largest deviation from a partition of unity over all dual dofs."""
        nG = part.n_gamma
        if self.kind == "rho":
            total = np.zeros(nG)
            for s, w in zip(part.subs, self.weights):
                total[s.gamma_global[s.delta]] += w
            dual = ~part.is_primal
            return float(np.abs(total[dual] - 1.0).max()) if dual.any() else 0.0
        sums = {}
        for blocks in self.blocks:
            for c, _, D in blocks:
                sums[c] = sums.get(c, 0) + D
        return max((float(np.abs(D - np.eye(len(D))).max()) for D in sums.values()), default=0.0)


def subdomain_sigma_max(dec, tensors):
    """Largest conductivity eigenvalue per subdomain, columns (intra, extra)."""
    out = np.zeros((dec.n_subdomains, 2))
    for m, D in enumerate((tensors.D_i, tensors.D_e)):
        lam = np.linalg.eigvalsh(D)[:, -1]
        for s, el in enumerate(dec.elems):
            out[s, m] = lam[el].max()
    return out


def build_rho_scaling(part, sigma_max):
    """
    Coefficient-weighted counting: for the potentials the weight of
    subdomain ``j`` at a dof shared by ``N_x`` is ``sigma_j / sum_{k in N_x}
    sigma_k``; for the gating variable it is ``1 / |N_x|``.

    ``sigma_max`` has one row per subdomain and columns (intra, extra).
    """
    sigma_max = np.asarray(sigma_max, dtype=float)
    if sigma_max.shape != (part.dec.n_subdomains, 2) or np.any(sigma_max <= 0):
        raise InvalidConfigError("sigma_max needs one positive (intra, extra) pair per subdomain")
    m = len(part.gamma_nodes)
    weights = []
    for s in part.subs:
        g = s.gamma_global[s.delta]
        field_ = g // m
        sharers = [part.classes[c].subdomains for c in part.dof_class[g]]
        w = np.empty(len(g))
        for q, (f, sh) in enumerate(zip(field_, sharers)):
            if f == 2:
                w[q] = 1.0 / len(sh)
            else:
                w[q] = sigma_max[s.index, f] / sigma_max[list(sh), f].sum()
        weights.append(w)
    return Scaling("rho", weights=weights)


def _class_positions(part):
    """For every subdomain: {class id: positions of the class dual dofs in the dual list}."""
    out = []
    for s in part.subs:
        per = {}
        for q, g in enumerate(s.gamma_global[s.delta]):
            per.setdefault(int(part.dof_class[g]), []).append(q)
        out.append({c: np.array(v) for c, v in per.items()})
    return out


def _class_minors(part, locals_, symmetric, transformed=True, dual_only=True, pool=None):
    """
    Dense principal minors of every local Schur complement, one per
    (subdomain, class), over the class dofs in the transformed basis.
    """
    def one(ls):
        s = ls.sub
        groups = {}
        sel = s.delta if dual_only else np.arange(len(s.gamma_global))
        for q in sel:
            groups.setdefault(int(part.dof_class[s.gamma_global[q]]), []).append(q)
        res = {}
        for c, q in groups.items():
            q = np.array(q)
            V = s.T[:, q] if transformed else sp.csr_matrix(
                (np.ones(len(q)), (q, np.arange(len(q)))), shape=(len(s.gamma_global), len(q)))
            res[c] = (q, ls.schur_minor(V, symmetric))
        return res

    return _map(pool, one, locals_)


def build_deluxe_scaling(part, locals_, symmetric=True, pool=None):
    """
    Deluxe scaling ``D_c^(j) = (sum_k S_c^(k))^{-1} S_c^(j)`` for every
    class ``c`` with dual dofs, using Schur minors of the symmetric part of
    the local Jacobians unless ``symmetric`` is false.
    """
    minors = _class_minors(part, locals_, symmetric, pool=pool)
    dual_pos = _class_positions(part)
    totals = {}
    for res in minors:
        for c, (_, S) in res.items():
            totals[c] = totals.get(c, 0) + S
    factors = {}
    for c, S in totals.items():
        try:
            factors[c] = sla.lu_factor(S, check_finite=True)
        except (sla.LinAlgError, ValueError) as exc:
            raise SingularSystemError(f"deluxe sum of class {c} is singular") from exc
        if np.min(np.abs(np.diag(factors[c][0]))) <= 1e-14 * np.abs(S).max():
            raise SingularSystemError(f"deluxe sum of class {c} is singular")
    blocks = []
    for res, pos in zip(minors, dual_pos):
        blocks.append([(c, pos[c], sla.lu_solve(factors[c], S)) for c, (_, S) in sorted(res.items())])
    return Scaling("deluxe", blocks=blocks)


@dataclass
class CoarseProblem:
    """Primal block of the partially assembled system after elimination."""

    S_PP: np.ndarray
    kernel: np.ndarray = None
    lu: tuple = field(default=None, repr=False)

    def __post_init__(self):
        A = self.S_PP
        if self.kernel is not None and np.any(self.kernel):
            k = self.kernel[:, None]
            A = np.block([[A, k], [k.T, np.zeros((1, 1))]])
        if len(A) == 0:
            return
        lu, piv = sla.lu_factor(A)
        if np.min(np.abs(np.diag(lu))) <= 1e-13 * max(np.abs(A).max(), 1e-300):
            raise SingularSystemError("coarse matrix is singular beyond the constant mode")
        self.lu = (lu, piv)

    @property
    def n(self):
        return len(self.S_PP)

    def solve(self, b):
        if self.n == 0:
            return b.copy()
        if self.kernel is not None and np.any(self.kernel):
            return sla.lu_solve(self.lu, np.append(b, 0.0))[:-1]
        return sla.lu_solve(self.lu, b)


class _LocalBlocks:
    """Transformed local Jacobian split into r = (interior, dual) and primal blocks."""

    def __init__(self, ls):
        s = ls.sub
        n = s.n_local
        I, G = s.interior, s.gamma_local
        Q = sp.csr_matrix((np.ones(len(I)), (I, I)), shape=(n, n)) + _embed(s.T, G, n)
        Kh = (Q.T @ ls.K @ Q).tocsr()
        self.r = np.concatenate([I, G[s.delta]])
        self.p = G[s.primal]
        self.n_interior = len(I)
        K_rr = Kh[self.r][:, self.r]
        self.K_rP = Kh[self.r][:, self.p].toarray()
        self.K_Pr = Kh[self.p][:, self.r].tocsr()
        self.K_PP = Kh[self.p][:, self.p].toarray()
        self.lu = factorize(K_rr, f"dual block of subdomain {s.index}")
        self.X = self.lu.solve(self.K_rP) if self.lu is not None and self.K_rP.size else np.zeros(self.K_rP.shape)
        self.K_rr = K_rr

    def psi(self):
        """Local coarse basis: primal unit values extended by ``-K_rr^{-1} K_rP``."""
        return np.vstack([-self.X, np.eye(len(self.p))])


def _embed(T, idx, n):
    T = sp.coo_matrix(T)
    return sp.csr_matrix((T.data, (idx[T.row], idx[T.col])), shape=(n, n))


class BddcPreconditioner:
    """
    Parameters
    ----------
    part : DofPartition
    locals_ : list of LocalSystem
    scaling : {"rho", "deluxe"} or Scaling
    sigma_max : array, optional
        Per-subdomain (intra, extra) conductivity maxima for rho scaling.
    deluxe_symmetric : bool
        Build deluxe minors from the symmetric part of the local Jacobians.
    deflate : bool
        Project out the (1, 1, 0) mode; disable for nonsingular test matrices.
    """

    def __init__(self, part, locals_, scaling="rho", sigma_max=None, deluxe_symmetric=True, deflate=True,
                 pool=None):
        self.part = part
        self.locals = locals_
        self.pool = pool
        self.deflate = deflate
        self.n = part.n_gamma
        if isinstance(scaling, Scaling):
            self.scaling = scaling
        elif scaling == "rho":
            if sigma_max is None:
                sigma_max = np.ones((part.dec.n_subdomains, 2))
            self.scaling = build_rho_scaling(part, sigma_max)
        elif scaling == "deluxe":
            self.scaling = build_deluxe_scaling(part, locals_, deluxe_symmetric, pool)
        else:
            raise InvalidConfigError(f"unknown scaling {scaling!r}")
        self.T = part.T
        self.k = part.kernel() if deflate else None
        self.blocks = _map(pool, _LocalBlocks, locals_)
        S_PP = np.zeros((part.n_primal, part.n_primal))
        for s, b in zip(part.subs, self.blocks):
            idx = np.ix_(s.primal_global, s.primal_global)
            S_PP[idx] += b.K_PP - b.K_Pr @ b.X
        kernel = part.kernel_hat()[part.is_primal] if deflate else None
        self.coarse = CoarseProblem(S_PP, kernel)

    @property
    def shape(self):
        return (self.n, self.n)

    def _project(self, x):
        if self.k is None or not len(x):
            return x
        return x - self.k * (self.k @ x) / (self.k @ self.k)

    # partially assembled space ------------------------------------------------
    def restrict(self, u_hat):
        """``R~ u``: copies of the dual values per subdomain and the primal values."""
        return [u_hat[s.gamma_global[s.delta]] for s in self.part.subs], u_hat[self.part.is_primal]

    def restrict_scaled(self, u_hat):
        """``R~_D u``: dual copies multiplied by the transposed scaling."""
        duals, prim = self.restrict(u_hat)
        return [self.scaling.apply(j, d, transpose=True) for j, d in enumerate(duals)], prim

    def average(self, duals, primal):
        """``R~_D^T w``: the scaled sum of the dual parts, primal part unchanged."""
        out = np.zeros(self.n)
        for j, (s, d) in enumerate(zip(self.part.subs, duals)):
            out[s.gamma_global[s.delta]] += self.scaling.apply(j, d)
        out[self.part.is_primal] = primal
        return out

    def apply_ED_PD(self, duals, primal):
        """Averaging projection ``E_D`` and jump operator ``P_D = I - E_D`` on ``W~``."""
        e_duals, e_primal = self.restrict(self.average(duals, primal))
        p_duals = [d - e for d, e in zip(duals, e_duals)]
        return (e_duals, e_primal), (p_duals, primal - e_primal)

    def solve_tilde(self, duals, primal):
        """``S~^{-1}`` on the partially assembled space by block elimination."""
        part = self.part

        def local(args):
            b, d = args
            rhs = np.concatenate([np.zeros(b.n_interior), d])
            return b.lu.solve(rhs) if b.lu is not None else rhs

        ys = _map(self.pool, local, list(zip(self.blocks, duals)))
        rhs_P = primal.copy()
        for s, b, y in zip(part.subs, self.blocks, ys):
            np.add.at(rhs_P, s.primal_global, -(b.K_Pr @ y))
        x_P = self.coarse.solve(rhs_P)
        out = []
        for s, b, y in zip(part.subs, self.blocks, ys):
            x_r = y - b.X @ x_P[s.primal_global]
            out.append(x_r[b.n_interior:])
        return out, x_P

    # preconditioner -----------------------------------------------------------
    def apply_hat(self, r_hat):
        """The preconditioner in the transformed basis."""
        return self.average(*self.solve_tilde(*self.restrict_scaled(r_hat)))

    def __call__(self, r):
        if self.n == 0:
            return r.copy()
        r = self._project(r)
        return self._project(self.T @ self.apply_hat(self.T.T @ r))

    matvec = __call__


class ClassJacobi:
    """
    Block Jacobi on the assembled Schur complement with one block per
    interface class (one-level baseline, no coarse space).
    """

    def __init__(self, part, locals_, deflate=True, pool=None):
        self.part = part
        self.n = part.n_gamma
        self.k = part.kernel() if deflate else None
        minors = _class_minors(part, locals_, symmetric=False, transformed=False, dual_only=False, pool=pool)
        blocks = {}
        for ls, res in zip(locals_, minors):
            for c, (q, S) in res.items():
                g = ls.sub.gamma_global[q]
                if c in blocks:
                    blocks[c] = (g, blocks[c][1] + S)
                else:
                    blocks[c] = (g, S)
        self.blocks = [(g, sla.lu_factor(S)) for _, (g, S) in sorted(blocks.items())]

    def __call__(self, r):
        z = np.zeros_like(r)
        for g, lu in self.blocks:
            z[g] = sla.lu_solve(lu, r[g])
        if self.k is not None and len(z):
            z -= self.k * (self.k @ z) / (self.k @ self.k)
        return z


class IdentityPreconditioner:
    def __call__(self, r):
        return r.copy()


PRECONDITIONERS = ("bddc", "jacobi", "none")


def make_preconditioner(kind, part, locals_, scaling="rho", sigma_max=None, deluxe_symmetric=True, pool=None):
    if kind == "bddc":
        return BddcPreconditioner(part, locals_, scaling, sigma_max, deluxe_symmetric, pool=pool)
    if kind == "jacobi":
        return ClassJacobi(part, locals_, pool=pool)
    if kind == "none":
        return IdentityPreconditioner()
    raise InvalidConfigError(f"unknown preconditioner {kind!r}; choose from {PRECONDITIONERS}")
