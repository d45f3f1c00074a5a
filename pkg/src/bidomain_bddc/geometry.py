"""
Structured hexahedral meshes for the slab and truncated-ellipsoid domains,
fiber fields and per-element conductivity tensors.

Nodes are numbered lexicographically, ``n = i + (nx+1) * (j + (ny+1) * k)``,
and elements likewise, ``e = i + nx * (j + ny * k)``.  The eight nodes of an
element follow the usual hexahedron ordering (bottom face counter-clockwise,
then top face).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidConfigError

__all__ = [
    "HEX_CORNERS",
    "MeshTopology",
    "EllipsoidParams",
    "FiberField",
    "Conductivities",
    "ConductivityTensors",
    "build_slab",
    "build_ellipsoid",
    "build_fibers",
    "build_conductivity",
    "corner_jacobians",
    "fiber_angle",
    "TOTAL_ROTATION",
]

# reference offsets of the 8 element nodes
HEX_CORNERS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ]
)

TOTAL_ROTATION = np.deg2rad(120.0)
EPI_ANGLE = -TOTAL_ROTATION / 2


@dataclass(frozen=True)
class MeshTopology:
    kind: str
    elems: tuple
    node_coords: np.ndarray
    elem_nodes: np.ndarray
    h: float
    # lattice parameters per node: (x, y, z) for a slab, (phi, theta, r) for an ellipsoid
    node_params: np.ndarray
    tags: dict = field(default_factory=dict)
    extents: tuple = None
    ellipsoid: EllipsoidParams = None

    @property
    def shape(self):
        nx, ny, nz = self.elems
        return nx + 1, ny + 1, nz + 1

    @property
    def n_nodes(self):
        return len(self.node_coords)

    @property
    def n_elems(self):
        return len(self.elem_nodes)

    @property
    def n_dofs(self):
        return 3 * self.n_nodes

    def node_index(self, i, j, k):
        mx, my, _ = self.shape
        return np.asarray(i) + mx * (np.asarray(j) + my * np.asarray(k))

    def node_ijk(self, n):
        mx, my, _ = self.shape
        n = np.asarray(n)
        return n % mx, (n // mx) % my, n // (mx * my)

    def elem_index(self, i, j, k):
        nx, ny, _ = self.elems
        return np.asarray(i) + nx * (np.asarray(j) + ny * np.asarray(k))

    def elem_centroids(self):
        return self.node_coords[self.elem_nodes].mean(axis=1)


@dataclass(frozen=True)
class EllipsoidParams:
    a1: float = 1.5
    a2: float = 2.7
    b1: float = 1.5
    b2: float = 2.7
    c1: float = 4.4
    c2: float = 5.0
    phi_min: float = -np.pi / 2
    phi_max: float = np.pi / 2
    theta_min: float = -3 * np.pi / 8
    theta_max: float = np.pi / 8

    def validate(self):
        for lo, hi, name in ((self.a1, self.a2, "a"), (self.b1, self.b2, "b"), (self.c1, self.c2, "c")):
            if not 0 < lo < hi:
                raise InvalidConfigError(f"ellipsoid axis {name}: need 0 < {name}1 < {name}2, got {lo}, {hi}")
        if not self.phi_max > self.phi_min:
            raise InvalidConfigError("empty phi range")
        if not self.theta_max > self.theta_min:
            raise InvalidConfigError("empty theta range")
        if self.theta_min < -np.pi / 2 or self.theta_max > np.pi / 2:
            raise InvalidConfigError("theta must stay within [-pi/2, pi/2]")

    def axes(self, r):
        r = np.asarray(r, dtype=float)
        a = self.a1 + r * (self.a2 - self.a1)
        b = self.b1 + r * (self.b2 - self.b1)
        c = self.c1 + r * (self.c2 - self.c1)
        return a, b, c

    def point(self, phi, theta, r):
        """Cartesian position of the ellipsoidal coordinates ``(phi, theta, r)``."""
        a, b, c = self.axes(r)
        x = a * np.cos(theta) * np.cos(phi)
        y = b * np.cos(theta) * np.sin(phi)
        z = c * np.sin(theta)
        return np.stack(np.broadcast_arrays(x, y, z), axis=-1)

    def tangents(self, phi, theta, r):
        """Derivatives of :meth:`point` with respect to phi, theta and r."""
        a, b, c = self.axes(r)
        da, db, dc = self.a2 - self.a1, self.b2 - self.b1, self.c2 - self.c1
        ct, st, cp, sp = np.cos(theta), np.sin(theta), np.cos(phi), np.sin(phi)
        d_phi = np.stack(np.broadcast_arrays(-a * ct * sp, b * ct * cp, 0.0 * ct), axis=-1)
        d_theta = np.stack(np.broadcast_arrays(-a * st * cp, -b * st * sp, c * ct), axis=-1)
        d_r = np.stack(np.broadcast_arrays(da * ct * cp, db * ct * sp, dc * st), axis=-1)
        return d_phi, d_theta, d_r


@dataclass(frozen=True)
class FiberField:
    a_l: np.ndarray
    a_t: np.ndarray
    a_n: np.ndarray
    depth: np.ndarray
    angle: np.ndarray


@dataclass(frozen=True)
class Conductivities:
    """Conductivity coefficients along fiber, transversal and normal directions."""

    il: float = 3.0e-3
    it: float = 3.1525e-4
    in_: float = 3.1525e-5
    el: float = 2.0e-3
    et: float = 1.3514e-3
    en: float = 6.757e-4

    def intra(self):
        return np.array([self.il, self.it, self.in_])

    def extra(self):
        return np.array([self.el, self.et, self.en])

    def validate(self):
        if np.any(self.intra() <= 0) or np.any(self.extra() <= 0):
            raise InvalidConfigError("conductivity coefficients must be positive")


@dataclass(frozen=True)
class ConductivityTensors:
    sigma: Conductivities
    D_i: np.ndarray
    D_e: np.ndarray

    def sigma_max(self, medium):
        return float(getattr(self.sigma, medium)().max())

    def sigma_min(self, medium):
        return float(getattr(self.sigma, medium)().min())


def _structured_connectivity(nx, ny, nz):
    mx, my = nx + 1, ny + 1
    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    base = np.stack([i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")], axis=1)
    ijk = base[:, None, :] + HEX_CORNERS[None, :, :]
    return ijk[..., 0] + mx * (ijk[..., 1] + my * ijk[..., 2])


def _lattice(nx, ny, nz):
    """Integer lattice coordinates of all nodes, in node-number order."""
    i, j, k = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij")
    return np.stack([i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")], axis=1)


def _check_counts(nx, ny, nz):
    for n in (nx, ny, nz):
        if int(n) != n or n < 1:
            raise InvalidConfigError(f"element counts must be positive integers, got {(nx, ny, nz)}")


def _max_diameter(coords, elem_nodes):
    pts = coords[elem_nodes]
    diam = 0.0
    for a in range(8):
        for b in range(a + 1, 8):
            diam = max(diam, float(np.linalg.norm(pts[:, a] - pts[:, b], axis=1).max()))
    return diam


def build_slab(nx, ny, nz, lengths=(1.0, 1.0, 1.0)):
    """Uniform Cartesian grid of ``nx * ny * nz`` hexahedra on ``[0,Lx]x[0,Ly]x[0,Lz]``."""
    _check_counts(nx, ny, nz)
    lengths = tuple(float(x) for x in lengths)
    if len(lengths) != 3 or min(lengths) <= 0:
        raise InvalidConfigError(f"slab extents must be three positive lengths, got {lengths}")
    lat = _lattice(nx, ny, nz)
    coords = lat * (np.array(lengths) / np.array([nx, ny, nz]))
    elem_nodes = _structured_connectivity(nx, ny, nz)
    h = float(np.linalg.norm(np.array(lengths) / np.array([nx, ny, nz])))
    tags = {
        "bottom": np.flatnonzero(lat[:, 2] == 0),
        "top": np.flatnonzero(lat[:, 2] == nz),
    }
    return MeshTopology("slab", (nx, ny, nz), coords, elem_nodes, h, coords.copy(), tags, lengths)


def build_ellipsoid(nx, ny, nz, params=None):
    """
    Truncated ellipsoid on a uniform ``(phi, theta, r)`` lattice.

    The first lattice direction runs over phi, the second over theta and the
    third over the wall depth r, so that ``r = 0`` (k = 0) is the endocardium
    and ``r = 1`` (k = nz) the epicardium.
    """
    _check_counts(nx, ny, nz)
    p = params or EllipsoidParams()
    p.validate()
    lat = _lattice(nx, ny, nz)
    phi = p.phi_min + lat[:, 0] * (p.phi_max - p.phi_min) / nx
    theta = p.theta_min + lat[:, 1] * (p.theta_max - p.theta_min) / ny
    r = lat[:, 2] / nz
    coords = p.point(phi, theta, r)
    elem_nodes = _structured_connectivity(nx, ny, nz)
    return MeshTopology(
        "ellipsoid",
        (nx, ny, nz),
        coords,
        elem_nodes,
        _max_diameter(coords, elem_nodes),
        np.stack([phi, theta, r], axis=1),
        {
            "endocardium": np.flatnonzero(lat[:, 2] == 0),
            "epicardium": np.flatnonzero(lat[:, 2] == nz),
        },
        ellipsoid=p,
    )


def corner_jacobians(mesh):
    """Determinant of the trilinear map at each of the 8 corners of every element, shape (E, 8)."""
    pts = mesh.node_coords[mesh.elem_nodes]
    index = {tuple(c): n for n, c in enumerate(HEX_CORNERS)}
    dets = np.empty((mesh.n_elems, 8))
    for n, c in enumerate(HEX_CORNERS):
        cols = []
        for d in range(3):
            other = c.copy()
            other[d] = 1 - other[d]
            sign = 1.0 if c[d] == 0 else -1.0
            cols.append(sign * (pts[:, index[tuple(other)]] - pts[:, n]))
        dets[:, n] = np.linalg.det(np.stack(cols, axis=-1))
    return dets


def fiber_angle(depth):
    """Fiber angle in the laminar plane, rotating linearly by 120 degrees over the wall."""
    return EPI_ANGLE + TOTAL_ROTATION * np.asarray(depth, dtype=float)


def _frame(e1, e2, n, depth):
    angle = fiber_angle(depth)
    ca, sa = np.cos(angle)[:, None], np.sin(angle)[:, None]
    a_l = ca * e1 + sa * e2
    a_t = -sa * e1 + ca * e2
    return FiberField(a_l, a_t, n, np.asarray(depth, dtype=float), angle)


def build_fibers(mesh):
    """
    One orthonormal (fiber, sheet, normal) triplet per element.

    The fiber direction lies in the laminar plane and rotates linearly with
    the depth.  For the slab the laminar planes are ``z = const`` and depth is
    ``z / Lz``; for the ellipsoid they are ``r = const`` and depth is ``1 - r``
    (zero on the epicardium).
    """
    E = mesh.n_elems
    if mesh.kind == "slab":
        depth = mesh.elem_centroids()[:, 2] / mesh.extents[2]
        e1 = np.tile([1.0, 0.0, 0.0], (E, 1))
        e2 = np.tile([0.0, 1.0, 0.0], (E, 1))
        n = np.tile([0.0, 0.0, 1.0], (E, 1))
        return _frame(e1, e2, n, depth)

    prm = mesh.node_params[mesh.elem_nodes].mean(axis=1)
    phi, theta, r = prm[:, 0], prm[:, 1], prm[:, 2]
    d_phi, d_theta, _ = mesh.ellipsoid.tangents(phi, theta, r)
    n = np.cross(d_phi, d_theta)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    e1 = d_phi - np.sum(d_phi * n, axis=1, keepdims=True) * n
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    return _frame(e1, e2, n, 1.0 - r)


def build_conductivity(fibers, sigma=None):
    """Per-element tensors ``D = sum_k sigma_k a_k a_k^T`` for both media."""
    sigma = sigma or Conductivities()
    sigma.validate()

    def tensor(s):
        out = s[0] * np.einsum("ei,ej->eij", fibers.a_l, fibers.a_l)
        out += s[1] * np.einsum("ei,ej->eij", fibers.a_t, fibers.a_t)
        out += s[2] * np.einsum("ei,ej->eij", fibers.a_n, fibers.a_n)
        return out

    return ConductivityTensors(sigma, tensor(sigma.intra()), tensor(sigma.extra()))
