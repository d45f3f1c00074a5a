"""
Static condensation of the Jacobian onto the subdomain interface.

Every subdomain keeps its unassembled local Jacobian split into interior
(I) and interface (G) blocks.  The interface operator is applied matrix-free,
``S x = sum_j R_j^T (K_GG - K_GI K_II^{-1} K_IG) R_j x``; the lower-left block
is the true ``K_GI``, which differs from ``K_IG^T`` because the Jacobian is
not symmetric.
"""
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import jacobian_from_operators
from .exceptions import SingularSystemError

__all__ = ["LocalSystem", "SchurOperator", "build_local_systems", "condense", "back_substitute", "harmonic_extend",
           "b_gamma_inner"]


def factorize(A, what="matrix"):
    if A.shape[0] == 0:
        return None
    try:
        lu = spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SingularSystemError(f"{what} is singular: {exc}") from exc
    if not np.all(np.isfinite(lu.U.diagonal())) or np.min(np.abs(lu.U.diagonal())) == 0:
        raise SingularSystemError(f"{what} is singular")
    return lu


def _solve(lu, b):
    if lu is None:
        return np.zeros_like(b)
    return lu.solve(b)


class LocalSystem:
    """
    Blocks of one subdomain's Jacobian.

    Parameters
    ----------
    sub : SubdomainDofs
    K : sparse matrix
        Unassembled local Jacobian in local dof numbering.
    """

    def __init__(self, sub, K):
        self.sub = sub
        self.K = sp.csr_matrix(K)
        I, G = sub.interior, sub.gamma_local
        self.K_II = self.K[I][:, I].tocsc()
        self.K_IG = self.K[I][:, G].tocsr()
        self.K_GI = self.K[G][:, I].tocsr()
        self.K_GG = self.K[G][:, G].tocsr()
        self.lu_II = factorize(self.K_II, f"interior block of subdomain {sub.index}")
        self._sym = None

    @property
    def n_gamma(self):
        return len(self.sub.gamma_local)

    def schur(self, x):
        """Local Schur complement applied to a vector or a block of columns."""
        return self.K_GG @ x - self.K_GI @ _solve(self.lu_II, self.K_IG @ x)

    def extend(self, x):
        """Harmonic extension: the local vector with interior part ``-K_II^{-1} K_IG x``."""
        u = np.zeros(self.sub.n_local)
        u[self.sub.interior] = -_solve(self.lu_II, self.K_IG @ x)
        u[self.sub.gamma_local] = x
        return u

    def symmetric_part(self):
        """Local system of ``(K + K^T) / 2``, factorized on first use."""
        if self._sym is None:
            self._sym = LocalSystem(self.sub, (self.K + self.K.T) / 2)
        return self._sym

    def schur_minor(self, V, symmetric=False):
        """Dense ``V^T S V`` for a block of interface columns ``V``."""
        ls = self.symmetric_part() if symmetric else self
        V = V.toarray() if sp.issparse(V) else np.asarray(V)
        return V.T @ ls.schur(V)


def build_local_systems(disc, part, state, tau, pool=None):
    """Assemble the local Jacobian of every subdomain at ``state``."""
    v, w = state.v, state.w

    def one(sub):
        op = disc.operators(sub.elems, sub.nodes)
        K = jacobian_from_operators(op, v[sub.nodes], w[sub.nodes], tau, disc.params)
        return LocalSystem(sub, K)

    return _map(pool, one, part.subs)


def _map(pool, fn, items):
    if pool is None:
        return [fn(x) for x in items]
    return list(pool.map(fn, items))


class SchurOperator:
    """
    Interface Schur complement of the global Jacobian, applied matrix-free.

    Sums over subdomains are always accumulated in subdomain order, so
    results do not depend on the thread pool.
    """

    def __init__(self, part, locals_, pool=None):
        self.part = part
        self.locals = locals_
        self.pool = pool
        self.n = part.n_gamma

    @property
    def shape(self):
        return (self.n, self.n)

    def _accumulate(self, pieces):
        out = np.zeros(self.n)
        for ls, piece in zip(self.locals, pieces):
            out[ls.sub.gamma_global] += piece
        return out

    def matvec(self, x):
        pieces = _map(self.pool, lambda ls: ls.schur(x[ls.sub.gamma_global]), self.locals)
        return self._accumulate(pieces)

    __call__ = matvec

    def dense(self):
        """The assembled Schur complement as a dense matrix (small cases only)."""
        S = np.zeros((self.n, self.n))
        for ls in self.locals:
            g = ls.sub.gamma_global
            S[np.ix_(g, g)] += ls.schur(np.eye(len(g)))
        return S

    def local_rhs(self, rhs):
        """Per-subdomain ``K_GI K_II^{-1} g_I`` for a global right-hand side."""
        return _map(self.pool, lambda ls: ls.K_GI @ _solve(ls.lu_II, rhs[ls.sub.interior_global]), self.locals)

    def condense(self, rhs):
        """Interface right-hand side ``g_G - sum_j R_j^T K_GI K_II^{-1} g_I``."""
        return rhs[self.part.gamma_global_dofs] - self._accumulate(self.local_rhs(rhs))

    def back_substitute(self, u_gamma, rhs):
        """Full vector with interior dofs ``K_II^{-1} (g_I - K_IG u_G)`` per subdomain."""
        s = np.zeros(len(rhs))
        s[self.part.gamma_global_dofs] = u_gamma
        for ls in self.locals:
            gi = ls.sub.interior_global
            s[gi] = _solve(ls.lu_II, rhs[gi] - ls.K_IG @ u_gamma[ls.sub.gamma_global])
        return s

    def harmonic_extend(self, u_gamma):
        """Global vector: ``u_gamma`` on the interface, discrete harmonic inside."""
        return self.back_substitute(u_gamma, np.zeros(3 * self.part.n_nodes))

    def inner(self, u, v, which="B"):
        """
        ``v_A^T X u_A`` summed over subdomains, with ``X`` the local Jacobian
        (``"S"``), its symmetric part ``K + K^T`` (``"B"``) or its skew part
        ``K - K^T`` (``"Z"``), and ``u_A``, ``v_A`` the harmonic extensions.
        """
        total = 0.0
        for ls in self.locals:
            g = ls.sub.gamma_global
            ua, va = ls.extend(u[g]), ls.extend(v[g])
            Ku, KTu = ls.K @ ua, ls.K.T @ ua
            if which == "S":
                total += va @ Ku
            elif which == "B":
                total += va @ (Ku + KTu)
            elif which == "Z":
                total += va @ (Ku - KTu)
            else:
                raise ValueError(f"unknown form {which!r}")
        return float(total)

    def gram(self, which="B"):
        """Dense matrix ``G`` with ``v^T G u`` equal to :meth:`inner` (small cases only)."""
        G = np.zeros((self.n, self.n))
        for ls in self.locals:
            g = ls.sub.gamma_global
            E = np.zeros((ls.sub.n_local, len(g)))
            E[ls.sub.interior] = -_solve(ls.lu_II, ls.K_IG.toarray())
            E[ls.sub.gamma_local] = np.eye(len(g))
            X = {"S": ls.K, "B": ls.K + ls.K.T, "Z": ls.K - ls.K.T}[which]
            G[np.ix_(g, g)] += E.T @ (X @ E)
        return G


def condense(part, locals_, rhs, pool=None):
    """Return the Schur operator and the condensed right-hand side."""
    S = SchurOperator(part, locals_, pool)
    return S, S.condense(rhs)


def back_substitute(S, u_gamma, rhs):
    return S.back_substitute(u_gamma, rhs)


def harmonic_extend(S, u_gamma):
    return S.harmonic_extend(u_gamma)


def b_gamma_inner(S, u, v, which="B"):
    return S.inner(u, v, which)
