"""
Q1 hexahedral assembly for the fully implicit Bidomain system.

Unknowns are stored field-major: ``[u_i (N), u_e (N), w (N)]``.  Every
matrix here can be assembled either over the whole mesh or over a subset
of elements (one subdomain) with a local node numbering; the global matrix
is the sum of the subdomain matrices, interface rows are never summed here.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import ionic
from .exceptions import AssemblyError
from .geometry import HEX_CORNERS

__all__ = [
    "State",
    "LocalOperators",
    "JacobianSystem",
    "Discretization",
    "element_matrices",
    "assemble_stiffness_mass",
    "assemble_residual",
    "assemble_jacobian",
    "jacobian_from_operators",
    "split_symmetric_skew",
    "residual_norm",
    "kernel_vector",
]

_G = 0.5 / np.sqrt(3.0)
GAUSS_POINTS = np.array([[0.5 + sx * _G, 0.5 + sy * _G, 0.5 + sz * _G]
                         for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)])
GAUSS_WEIGHTS = np.full(8, 1.0 / 8.0)


@dataclass
class State:
    u_i: np.ndarray
    u_e: np.ndarray
    w: np.ndarray

    @property
    def v(self):
        return self.u_i - self.u_e

    @classmethod
    def rest(cls, n):
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    @classmethod
    def from_vector(cls, x):
        n = len(x) // 3
        return cls(x[:n].copy(), x[n:2 * n].copy(), x[2 * n:].copy())

    def to_vector(self):
        return np.concatenate([self.u_i, self.u_e, self.w])

    def copy(self):
        return State(self.u_i.copy(), self.u_e.copy(), self.w.copy())

    def __len__(self):
        return len(self.u_i)


def kernel_vector(n):
    """The constant mode (1, 1, 0) annihilated by the Jacobian from both sides."""
    return np.concatenate([np.ones(n), np.ones(n), np.zeros(n)])


def _shape(xi):
    """Q1 shape functions and reference gradients on [0,1]^3 at points ``xi`` (Q, 3)."""
    xi = np.atleast_2d(xi)
    c = HEX_CORNERS[None, :, :]
    x = xi[:, None, :]
    f = np.where(c == 1, x, 1.0 - x)          # (Q, 8, 3) 1-D factors
    df = np.where(c == 1, 1.0, -1.0) + 0 * x   # derivatives of the factors
    N = f.prod(axis=2)
    dN = np.stack([df[..., 0] * f[..., 1] * f[..., 2],
                   f[..., 0] * df[..., 1] * f[..., 2],
                   f[..., 0] * f[..., 1] * df[..., 2]], axis=-1)
    return N, dN


def element_matrices(coords, elem_nodes, tensors, points=GAUSS_POINTS, weights=GAUSS_WEIGHTS):
    """
    Element stiffness matrices for every tensor in ``tensors`` plus the element
    mass matrix, each of shape (E, 8, 8).
    """
    N, dN = _shape(points)
    X = coords[elem_nodes]                                  # (E, 8, 3)
    J = np.einsum("qad,eai->eqid", dN, X)                   # (E, Q, 3, 3): dx_i/dxi_d
    det = np.linalg.det(J)
    if np.any(det <= 0):
        bad = np.flatnonzero((det <= 0).any(axis=1))
        raise AssemblyError(f"{len(bad)} inverted elements, first is {bad[0]}")
    Jinv = np.linalg.inv(J)
    grad = np.einsum("qad,eqdi->eqai", dN, Jinv)            # (E, Q, 8, 3)
    wdet = det * weights[None, :]
    out = []
    for D in tensors:
        out.append(np.einsum("eq,eqai,eij,eqbj->eab", wdet, grad, D, grad, optimize=True))
    out.append(np.einsum("eq,qa,qb->eab", wdet, N, N, optimize=True))
    return out


def _scatter(local_elem_nodes, Ke, n):
    rows = np.repeat(local_elem_nodes, 8, axis=1).ravel()
    cols = np.tile(local_elem_nodes, (1, 8)).ravel()
    return sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(n, n))


@dataclass
class LocalOperators:
    """Stiffness and mass matrices on a set of elements with a local node numbering."""

    nodes: np.ndarray
    A_i: sp.csr_matrix
    A_e: sp.csr_matrix
    M: sp.csr_matrix
    M_r: sp.csr_matrix

    @property
    def n(self):
        return len(self.nodes)


class Discretization:
    """
    Element matrices of one mesh, computed once, and the operators built from them.

    Parameters
    ----------
    mesh : MeshTopology
    tensors : ConductivityTensors
    params : IonicParams
    lumped : bool
        Use a lumped mass matrix for the interpolated reaction terms.
    """

    def __init__(self, mesh, tensors, params=ionic.DEFAULT, lumped=False):
        self.mesh = mesh
        self.tensors = tensors
        self.params = params
        self.lumped = lumped
        self.Ke_i, self.Ke_e, self.Me = element_matrices(
            mesh.node_coords, mesh.elem_nodes, [tensors.D_i, tensors.D_e])
        self.glob = self.operators(np.arange(mesh.n_elems))
        self.lumped_mass = np.asarray(self.glob.M.sum(axis=1)).ravel()

    @property
    def n_nodes(self):
        return self.mesh.n_nodes

    def operators(self, elems, nodes=None):
        """Operators restricted to ``elems``; ``nodes`` fixes the local numbering."""
        en = self.mesh.elem_nodes[elems]
        if nodes is None:
            nodes = np.unique(en)
        local = np.searchsorted(nodes, en)
        n = len(nodes)
        A_i = _scatter(local, self.Ke_i[elems], n)
        A_e = _scatter(local, self.Ke_e[elems], n)
        M = _scatter(local, self.Me[elems], n)
        M_r = sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr() if self.lumped else M
        return LocalOperators(nodes, A_i, A_e, M, M_r)

    def residual(self, new, old, tau, iapp_i=None, iapp_e=None):
        return assemble_residual(self, new, old, tau, iapp_i, iapp_e)

    def jacobian(self, state, tau):
        return assemble_jacobian(self, state, tau)


def assemble_stiffness_mass(mesh, tensors):
    """Global ``(A_i, A_e, M)`` with 2x2x2 Gauss quadrature."""
    Ki, Ke, Me = element_matrices(mesh.node_coords, mesh.elem_nodes, [tensors.D_i, tensors.D_e])
    n = mesh.n_nodes
    return _scatter(mesh.elem_nodes, Ki, n), _scatter(mesh.elem_nodes, Ke, n), _scatter(mesh.elem_nodes, Me, n)


def assemble_residual(disc, new, old, tau, iapp_i=None, iapp_e=None):
    """
    Backward Euler residual ``F = (F1, F2, F3)`` of one time step.

    The applied currents are nodal values interpolated with the mass matrix;
    their integrals must agree (compatibility), which is checked here.
    """
    n = disc.n_nodes
    for s in (new, old):
        if len(s) != n:
            raise ValueError(f"state has {len(s)} nodes, mesh has {n}")
    op, p = disc.glob, disc.params
    zero = np.zeros(n)
    iapp_i = zero if iapp_i is None else np.asarray(iapp_i, dtype=float)
    iapp_e = zero if iapp_e is None else np.asarray(iapp_e, dtype=float)
    if len(iapp_i) != n or len(iapp_e) != n:
        raise ValueError("applied current vectors must be nodal")
    Mi, Me_ = op.M @ iapp_i, op.M @ iapp_e
    if not np.isclose(Mi.sum(), Me_.sum(), rtol=1e-10, atol=1e-14 * max(1.0, abs(Mi).sum())):
        raise ValueError("applied currents violate the compatibility condition")

    v, dv = new.v, new.v - old.v
    cap = p.capacitance * (op.M @ dv)
    ion = tau * (op.M_r @ ionic.i_ion(v, new.w, p))
    F1 = cap + tau * (op.A_i @ new.u_i) + ion - tau * Mi
    F2 = -cap + tau * (op.A_e @ new.u_e) - ion + tau * Me_
    F3 = op.M @ (new.w - old.w) - tau * (op.M_r @ ionic.r_gate(v, new.w, p))
    return np.concatenate([F1, F2, F3])


def jacobian_from_operators(op, v, w, tau, params=ionic.DEFAULT):
    """The 3x3 block Jacobian on the node set of ``op``, given nodal ``v`` and ``w``."""
    di_dv, di_dw, dr_dv, dr_dw = ionic.partials(v, w, params)
    c = params.capacitance
    M, Mr = op.M, op.M_r
    Div = Mr @ sp.diags(di_dv)
    Diw = Mr @ sp.diags(di_dw)
    Drv = Mr @ sp.diags(dr_dv)
    Drw = Mr @ sp.diags(dr_dw)
    J = sp.bmat([
        [c * M + tau * op.A_i + tau * Div, -c * M - tau * Div, tau * Diw],
        [-c * M - tau * Div, c * M + tau * op.A_e + tau * Div, -tau * Diw],
        [-tau * Drv, tau * Drv, M - tau * Drw],
    ], format="csr")
    J.sort_indices()
    return J


@dataclass
class JacobianSystem:
    matrix: sp.csr_matrix
    tau: float
    state: State

    @property
    def shape(self):
        return self.matrix.shape

    def blocks(self):
        n = self.shape[0] // 3
        return [[self.matrix[a * n:(a + 1) * n, b * n:(b + 1) * n] for b in range(3)] for a in range(3)]


def assemble_jacobian(disc, state, tau):
    return JacobianSystem(jacobian_from_operators(disc.glob, state.v, state.w, tau, disc.params), tau, state)


def split_symmetric_skew(J):
    """``B = J + J^T`` and ``Z = J - J^T``, so that ``J = (B + Z) / 2``."""
    J = J.matrix if isinstance(J, JacobianSystem) else J
    Jt = J.T.tocsr()
    return (J + Jt).tocsr(), (J - Jt).tocsr()


def residual_norm(F, lumped_mass=None):
    """
    Max-norm of the residual.  With ``lumped_mass`` each row is divided by
    its lumped mass, which expresses the residual in nodal units (mV for the
    potentials) independent of the mesh size.
    """
    if lumped_mass is None:
        return float(np.abs(F).max())
    return float(np.abs(F / np.tile(lumped_mass, 3)).max())
