"""
Box decomposition of a structured mesh, interface equivalence classes and
the interior/dual/primal splitting of the degrees of freedom.

Global dofs are field-major (``f * n_nodes + node``).  Interface dofs are
numbered ``f * n_gamma + p`` where ``p`` indexes ``gamma_nodes``.  Edge and
face averages become explicit primal unknowns through a change of basis
``u = T u_hat`` that acts on one class at a time.  The class nodes are
joined by a spanning tree of grid neighbours rooted at ``k_0``; the root slot
of ``u_hat`` holds the class mean and every other slot ``k`` the coefficient
of ``e_k - e_parent(k)``.  These differences have zero mean and only couple
neighbouring nodes, so the transformed matrices stay sparse.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .exceptions import InvalidConfigError

__all__ = [
    "PrimalConfig",
    "Decomposition",
    "InterfaceClass",
    "SubdomainDofs",
    "DofPartition",
    "RestrictionOps",
    "decompose",
    "classify_interface",
    "build_dof_partition",
    "build_restrictions",
]

N_FIELDS = 3


class PrimalConfig(str, Enum):
    V = "v"
    VE = "ve"
    VEF = "vef"

    @property
    def averaged_kinds(self):
        return {"v": (), "ve": ("edge",), "vef": ("edge", "face")}[self.value]


@dataclass
class Decomposition:
    """
    A ``px x py x pz`` grid of element boxes.  Subdomain ``a + px (b + py c)``
    owns the elements whose box index is ``(a, b, c)``.
    """

    mesh: object
    grid: tuple
    box: tuple
    elems: list
    nodes: list
    sharing: list
    multiplicity: np.ndarray
    corner: np.ndarray
    H: float

    @property
    def n_subdomains(self):
        return len(self.elems)

    @property
    def Hh(self):
        """Elements per subdomain edge (the largest of the three directions)."""
        return max(self.box)

    @property
    def h(self):
        return self.mesh.h

    @property
    def interface_nodes(self):
        return np.flatnonzero(self.multiplicity >= 2)

    def subdomain_index(self, a, b, c):
        px, py, _ = self.grid
        return a + px * (b + py * c)


def _owners_1d(i, n_sub, width):
    """Subdomain indices along one axis that contain lattice coordinate ``i``."""
    a = min(i // width, n_sub - 1)
    if i % width == 0 and 0 < i < n_sub * width:
        return (a - 1, a)
    return (a,)


def decompose(mesh, px, py, pz):
    """Split ``mesh`` into ``px * py * pz`` congruent element boxes."""
    nx, ny, nz = mesh.elems
    for n, p in zip((nx, ny, nz), (px, py, pz)):
        if int(p) != p or p < 1:
            raise InvalidConfigError(f"subdomain counts must be positive integers, got {(px, py, pz)}")
        if n % p:
            raise InvalidConfigError(f"{p} subdomains do not tile {n} elements")
    bx, by, bz = nx // px, ny // py, nz // pz

    e = np.arange(mesh.n_elems)
    eijk = (e % nx, (e // nx) % ny, e // (nx * ny))
    esub = (eijk[0] // bx) + px * ((eijk[1] // by) + py * (eijk[2] // bz))
    elems = [np.flatnonzero(esub == s) for s in range(px * py * pz)]
    nodes = [np.unique(mesh.elem_nodes[el]) for el in elems]

    ox = [_owners_1d(i, px, bx) for i in range(nx + 1)]
    oy = [_owners_1d(j, py, by) for j in range(ny + 1)]
    oz = [_owners_1d(k, pz, bz) for k in range(nz + 1)]
    ni, nj, nk = mesh.node_ijk(np.arange(mesh.n_nodes))
    sharing = []
    for i, j, k in zip(ni, nj, nk):
        sharing.append(tuple(sorted(a + px * (b + py * c) for c in oz[k] for b in oy[j] for a in ox[i])))
    multiplicity = np.array([len(s) for s in sharing])
    corner = (ni % bx == 0) & (nj % by == 0) & (nk % bz == 0)

    sub = mesh.node_coords[nodes[0]]
    H = float(np.linalg.norm(sub.max(axis=0) - sub.min(axis=0)))
    for nd in nodes[1:]:
        pts = mesh.node_coords[nd]
        H = max(H, float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))))
    return Decomposition(mesh, (px, py, pz), (bx, by, bz), elems, nodes, sharing, multiplicity, corner, H)


@dataclass
class InterfaceClass:
    kind: str
    subdomains: tuple
    nodes: np.ndarray

    @property
    def interior(self):
        """True for classes away from the domain boundary (8 for vertices, 4 edges, 2 faces)."""
        return len(self.subdomains) == {"vertex": 8, "edge": 4, "face": 2}[self.kind]


def classify_interface(dec):
    """
    Group the interface nodes into vertex, edge and face classes.

    Subdomain corners shared by at least two subdomains are vertices, one
    class each.  The remaining interface nodes are grouped by their sharing
    set: two sharers make a face, more make an edge.
    """
    classes = []
    groups = {}
    for n in dec.interface_nodes:
        key = dec.sharing[n]
        if dec.corner[n]:
            classes.append(InterfaceClass("vertex", key, np.array([n])))
        else:
            groups.setdefault(key, []).append(n)
    for key in sorted(groups, key=lambda k: (len(k), k)):
        kind = "face" if len(key) == 2 else "edge"
        classes.append(InterfaceClass(kind, key, np.array(groups[key])))
    order = {"vertex": 0, "edge": 1, "face": 2}
    classes.sort(key=lambda c: (order[c.kind], c.subdomains, int(c.nodes[0])))
    return classes


@dataclass
class SubdomainDofs:
    """
    Index sets of one subdomain.  Local dofs are ``f * n_local + local_node``.

    ``gamma_global`` lists the subdomain's interface dofs in global interface
    numbering and ``gamma_local`` the same dofs in local numbering.  ``delta``
    and ``primal`` are positions into these lists.
    """

    index: int
    elems: np.ndarray
    nodes: np.ndarray
    interior: np.ndarray
    interior_global: np.ndarray
    gamma_local: np.ndarray
    gamma_global: np.ndarray
    delta: np.ndarray
    primal: np.ndarray
    primal_global: np.ndarray
    T: sp.csr_matrix

    @property
    def n_local(self):
        return N_FIELDS * len(self.nodes)


@dataclass
class DofPartition:
    dec: Decomposition
    primal_config: PrimalConfig
    classes: list
    gamma_nodes: np.ndarray
    gamma_pos: np.ndarray
    T: sp.csr_matrix
    dof_class: np.ndarray
    is_primal: np.ndarray
    primal_index: np.ndarray
    interior_global: np.ndarray
    subs: list = field(default_factory=list)

    @property
    def n_gamma(self):
        return N_FIELDS * len(self.gamma_nodes)

    @property
    def n_primal(self):
        return int(self.is_primal.sum())

    @property
    def n_nodes(self):
        return self.dec.mesh.n_nodes

    @property
    def gamma_global_dofs(self):
        """Global dof ids of the interface dofs, in interface numbering."""
        n = self.n_nodes
        return np.concatenate([f * n + self.gamma_nodes for f in range(N_FIELDS)])

    def kernel(self):
        """The (1, 1, 0) mode on the interface, original basis."""
        m = len(self.gamma_nodes)
        return np.concatenate([np.ones(m), np.ones(m), np.zeros(m)])

    def kernel_hat(self):
        """The (1, 1, 0) mode in the transformed basis: ones on potential primal dofs."""
        m = len(self.gamma_nodes)
        k = np.zeros(self.n_gamma)
        potential = np.arange(self.n_gamma) < 2 * m
        k[self.is_primal & potential] = 1.0
        return k

    def class_dofs(self, c, field_=None):
        """Interface dofs of class ``c`` (all fields unless ``field_`` given)."""
        pos = self.gamma_pos[self.classes[c].nodes]
        m = len(self.gamma_nodes)
        fields = range(N_FIELDS) if field_ is None else [field_]
        return np.concatenate([f * m + pos for f in fields])


def _spanning_parents(ijk):
    """Parent of every node in a BFS tree over lattice neighbours; the root is node 0."""
    index = {tuple(p): q for q, p in enumerate(ijk)}
    parent = np.full(len(ijk), -1)
    seen = np.zeros(len(ijk), dtype=bool)
    seen[0] = True
    queue = [0]
    steps = [np.eye(3, dtype=int)[d] * sgn for d in range(3) for sgn in (1, -1)]
    while queue:
        q = queue.pop(0)
        for st in steps:
            nb = index.get(tuple(ijk[q] + st))
            if nb is not None and not seen[nb]:
                seen[nb] = True
                parent[nb] = q
                queue.append(nb)
    # classes are connected on structured grids; fall back to the root otherwise
    parent[(~seen)] = 0
    return parent


def _class_transform(parent):
    """Columns: the all-ones vector, then ``e_k - e_parent(k)`` for ``k >= 1``."""
    n_class = len(parent)
    k = np.arange(1, n_class)
    rows = [np.arange(n_class), k, parent[1:]]
    cols = [np.zeros(n_class, dtype=int), k, k]
    vals = [np.ones(n_class), np.ones(n_class - 1), -np.ones(n_class - 1)]
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def build_dof_partition(dec, classes=None, primal="ve"):
    """
    Interior, dual and primal index sets for every subdomain.

    Vertex dofs are always primal.  With ``primal`` equal to ``"ve"`` (resp.
    ``"vef"``) the average over every edge (and face) class becomes one
    primal dof per field.  All three fields share the same classes.
    """
    primal = PrimalConfig(primal)
    classes = classify_interface(dec) if classes is None else classes
    mesh = dec.mesh
    N = mesh.n_nodes
    gamma_nodes = dec.interface_nodes
    m = len(gamma_nodes)
    gamma_pos = np.full(N, -1)
    gamma_pos[gamma_nodes] = np.arange(m)
    nG = N_FIELDS * m

    dof_class = np.full(nG, -1)
    is_primal = np.zeros(nG, dtype=bool)
    rows, cols, vals = [], [], []
    averaged = primal.averaged_kinds
    lattice = np.stack(mesh.node_ijk(np.arange(N)), axis=1)
    for c, cl in enumerate(classes):
        pos = gamma_pos[cl.nodes]
        parent = _spanning_parents(lattice[cl.nodes]) if cl.kind in averaged else None
        for f in range(N_FIELDS):
            dofs = f * m + pos
            dof_class[dofs] = c
            if cl.kind == "vertex":
                is_primal[dofs] = True
                rows.append(dofs), cols.append(dofs), vals.append(np.ones(len(dofs)))
            elif cl.kind in averaged:
                is_primal[dofs[0]] = True
                r, q, v = _class_transform(parent)
                rows.append(dofs[r]), cols.append(dofs[q]), vals.append(v)
            else:
                rows.append(dofs), cols.append(dofs), vals.append(np.ones(len(dofs)))
    if nG:
        T = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nG, nG))
    else:
        T = sp.csr_matrix((0, 0))
    primal_index = np.full(nG, -1)
    primal_index[is_primal] = np.arange(int(is_primal.sum()))

    interior_nodes = np.flatnonzero(dec.multiplicity < 2)
    interior_global = np.concatenate([f * N + interior_nodes for f in range(N_FIELDS)])
    part = DofPartition(dec, primal, classes, gamma_nodes, gamma_pos, T, dof_class, is_primal,
                        primal_index, interior_global)

    for s, (el, nd) in enumerate(zip(dec.elems, dec.nodes)):
        n_loc = len(nd)
        on_gamma = gamma_pos[nd] >= 0
        li = np.flatnonzero(~on_gamma)
        lg = np.flatnonzero(on_gamma)
        interior = np.concatenate([f * n_loc + li for f in range(N_FIELDS)])
        interior_g = np.concatenate([f * N + nd[li] for f in range(N_FIELDS)])
        gamma_local = np.concatenate([f * n_loc + lg for f in range(N_FIELDS)])
        gamma_global = np.concatenate([f * m + gamma_pos[nd[lg]] for f in range(N_FIELDS)])
        flags = is_primal[gamma_global]
        T_loc = T[gamma_global][:, gamma_global].tocsr() if len(gamma_global) else sp.csr_matrix((0, 0))
        part.subs.append(SubdomainDofs(
            s, el, nd, interior, interior_g, gamma_local, gamma_global,
            np.flatnonzero(~flags), np.flatnonzero(flags), primal_index[gamma_global[flags]], T_loc))
    return part


class RestrictionOps:
    """
    The restriction operators as sparse 0-1 matrices.

    ``R_gamma[j]`` maps interface vectors to subdomain ``j``'s interface;
    ``R_delta[j]`` and ``R_pi[j]`` pick its dual and primal dofs (in the
    transformed basis); ``R_gamma_delta`` and ``R_gamma_pi`` pick all dual and
    all primal dofs of the interface.
    """

    def __init__(self, part):
        nG = part.n_gamma
        self.part = part
        self.R_gamma = [self._select(s.gamma_global, nG) for s in part.subs]
        self.R_delta = [self._select(s.gamma_global[s.delta], nG) for s in part.subs]
        self.R_pi = [self._select(s.primal_global, part.n_primal) for s in part.subs]
        self.R_gamma_delta = self._select(np.flatnonzero(~part.is_primal), nG)
        self.R_gamma_pi = self._select(np.flatnonzero(part.is_primal), nG)

    @staticmethod
    def _select(idx, n):
        return sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), n))

    def multiplicity(self):
        """``sum_j R_gamma[j]^T R_gamma[j]`` as a sparse diagonal matrix."""
        total = sp.csr_matrix((self.part.n_gamma, self.part.n_gamma))
        for R in self.R_gamma:
            total = total + (R.T @ R)
        return total.tocsr()

    def tilde(self, u_hat):
        """
        Inject an interface vector (transformed basis) into the partially
        assembled space: per-subdomain dual parts plus the global primal part.
        """
        duals = [R @ u_hat for R in self.R_delta]
        return duals, self.R_gamma_pi @ u_hat


def build_restrictions(part):
    return RestrictionOps(part)
