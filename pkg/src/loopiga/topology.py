"""Closed oriented triangle control meshes and Loop subdivision refinement.

A :class:`ControlMesh` is immutable after construction.  It stores the
control points, the oriented cells, and a half-edge style connectivity
that the basis and assembly modules use for one-ring walks.

Half-edge convention: cell ``f = (a, b, c)`` (counterclockwise) owns the
three directed half-edges ``3*f + 0: a->b``, ``3*f + 1: b->c`` and
``3*f + 2: c->a``.  ``rot[h]`` maps the spoke ``a->b`` to the next
outgoing spoke ``a->c`` of the same source vertex, rotating in cell
orientation; repeated application enumerates the one-ring
counterclockwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    InconsistentOrientation,
    InvalidLevel,
    InvalidValence,
    MeshError,
    NonManifoldEdge,
    NonManifoldVertex,
    UnreferencedVertex,
)

REGULAR_VALENCE = 6

#: child cell layout produced by :func:`loop_subdivide` for a parent
#: (a, b, c) with edge midpoints m_ab, m_bc, m_ca:
#:   child 0: (a, m_ab, m_ca)   child 1: (b, m_bc, m_ab)
#:   child 2: (c, m_ca, m_bc)   child 3: (m_ab, m_bc, m_ca)
CHILD_PARAM_MAPS = (
    (np.array([0.0, 0.0]), 0.5 * np.eye(2)),
    (np.array([1.0, 0.0]), 0.5 * np.array([[-1.0, -1.0], [1.0, 0.0]])),
    (np.array([0.0, 1.0]), 0.5 * np.array([[0.0, 1.0], [-1.0, -1.0]])),
    (np.array([0.5, 0.0]), 0.5 * np.array([[0.0, -1.0], [1.0, 1.0]])),
)


def beta(valence: int) -> float:
    """Loop vertex-rule weight for one neighbor of a valence-N vertex.

    beta(N) = (1/N) * (5/8 - (3/8 + (1/4) cos(2 pi / N))^2); beta(6) is
    exactly 1/16.
    """
    n = int(valence)
    if n < 3:
        raise InvalidValence(f"valence must be >= 3, got {n}")
    c = 0.375 + 0.25 * math.cos(2.0 * math.pi / n)
    return (0.625 - c * c) / n


def child_param_to_parent(child: int, t):
    """Map unit-triangle coordinates of subdivided child cell ``child``
    (0..3, layout above) into the parent cell's chart."""
    b, a = CHILD_PARAM_MAPS[child]
    return b + np.asarray(t, dtype=float) @ a.T


@dataclass(frozen=True)
class ControlMesh:
    """Closed oriented triangle mesh with Loop-subdivision connectivity.

    Attributes
    ----------
    vertices : (V, 3) float array
        Control points.
    cells : (F, 3) int array
        Counterclockwise vertex-index triples.
    edges : (E, 2) int array
        Undirected edges as sorted pairs, lexicographically ordered.
        New vertices created by :func:`loop_subdivide` are appended in
        this order, which keeps vertex ids stable across refinement.
    valences : (V,) int array
    level : int
        Subdivision depth relative to the mesh this one was refined from.
    prolongation : sparse matrix or None
        Subdivision operator from the parent mesh (None for a root mesh).
        Applying it to parent coefficients reproduces the identical
        limit function on this mesh.
    """

    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    valences: np.ndarray
    level: int
    prolongation: sp.spmatrix | None = None
    # connectivity (derived; kept to make one-ring walks O(1) per step)
    he_twin: np.ndarray = field(repr=False, default=None)
    he_edge: np.ndarray = field(repr=False, default=None)
    he_rot: np.ndarray = field(repr=False, default=None)
    edge_he: np.ndarray = field(repr=False, default=None)

    # -- basic derived quantities ------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_cells

    def he_src(self, h):
        return self.cells[h // 3, h % 3]

    def he_dst(self, h):
        return self.cells[h // 3, (h % 3 + 1) % 3]

    def vertex_ring(self, v: int, first: int | None = None) -> np.ndarray:
        """One-ring of ``v`` in counterclockwise order.

        ``first``, if given, must be a neighbor of ``v`` and becomes the
        first ring entry.
        """
        h = self._spoke(v, first)
        ring = np.empty(self.valences[v], dtype=self.cells.dtype)
        for i in range(ring.shape[0]):
            ring[i] = self.he_dst(h)
            h = self.he_rot[h]
        return ring

    def _spoke(self, v: int, dst: int | None = None) -> int:
        key = (v, dst) if dst is not None else v
        h = self._spoke_index().get(key)
        if h is None:
            raise MeshError(f"no spoke {v}->{dst}")
        return h

    def _spoke_index(self):
        idx = getattr(self, "_spoke_cache", None)
        if idx is None:
            idx = {}
            src = self.cells.ravel()
            dst = self.cells[:, [1, 2, 0]].ravel()
            for h in range(src.shape[0]):
                idx[(int(src[h]), int(dst[h]))] = h
                idx.setdefault(int(src[h]), h)
            object.__setattr__(self, "_spoke_cache", idx)
        return idx

    def halfedge(self, a: int, b: int) -> int:
        """Directed half-edge a->b (raises if absent)."""
        return self._spoke(a, b)

    def apex_across(self, a: int, b: int, not_this: int) -> int:
        """Third vertex of the cell on edge (a, b) whose apex is not
        ``not_this``."""
        h = self._spoke_index().get((a, b))
        if h is None:
            raise MeshError(f"({a},{b}) is not an edge")
        apex = int(self.cells[h // 3, (h % 3 + 2) % 3])
        if apex != not_this:
            return apex
        ht = self.he_twin[h]
        return int(self.cells[ht // 3, (ht % 3 + 2) % 3])

    def cell_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(n, axis=1)


def build_mesh(triangles, positions) -> ControlMesh:
    """Validate a triangle soup and build the closed oriented manifold.

    Parameters
    ----------
    triangles : (F, 3) int array_like
        Vertex-index triples, consistently oriented.
    positions : (V, 3) float array_like

    Raises
    ------
    NonManifoldEdge, InconsistentOrientation, UnreferencedVertex,
    NonManifoldVertex, InvalidValence
    """
    cells = np.ascontiguousarray(triangles, dtype=np.int64)
    verts = np.ascontiguousarray(positions, dtype=np.float64)
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise MeshError("cells must be an (F, 3) index array")
    if verts.ndim != 2 or verts.shape[1] != 3:
        raise MeshError("positions must be a (V, 3) array")
    nv = verts.shape[0]
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        raise UnreferencedVertex("cell references a vertex id that does not exist")
    if np.any(cells[:, 0] == cells[:, 1]) or np.any(cells[:, 1] == cells[:, 2]) \
            or np.any(cells[:, 2] == cells[:, 0]):
        raise MeshError("degenerate cell (repeated vertex)")
    used = np.zeros(nv, dtype=bool)
    used[cells.ravel()] = True
    if not used.all():
        raise UnreferencedVertex(f"vertices {np.flatnonzero(~used)[:8].tolist()} "
                                 "are not referenced by any cell")
    return _finish_mesh(verts, cells, level=0, prolongation=None)


def _finish_mesh(verts, cells, level, prolongation) -> ControlMesh:
    nf = cells.shape[0]
    src = cells.ravel()
    dst = cells[:, [1, 2, 0]].ravel()

    # pair directed half-edges
    directed = {}
    for h in range(3 * nf):
        key = (int(src[h]), int(dst[h]))
        if key in directed:
            # same direction twice: either flipped neighbors or > 2 cells
            rkey = (key[1], key[0])
            if rkey in directed:
                raise NonManifoldEdge(f"edge {key} shared by more than two cells")
            raise InconsistentOrientation(f"edge {key} traversed twice in one direction")
        directed[key] = h
    he_twin = np.empty(3 * nf, dtype=np.int64)
    for (a, b), h in directed.items():
        t = directed.get((b, a))
        if t is None:
            raise NonManifoldEdge(f"boundary edge ({a},{b}): only one incident cell")
        he_twin[h] = t

    # rot[h]: twin of the previous half-edge in h's cell (next ccw spoke)
    h_arr = np.arange(3 * nf)
    prev = (h_arr // 3) * 3 + (h_arr % 3 + 2) % 3
    he_rot = he_twin[prev]

    # undirected edges, lexicographic; he_edge maps half-edges to edge ids
    und = np.stack([np.minimum(src, dst), np.maximum(src, dst)], axis=1)
    edges, he_edge = np.unique(und, axis=0, return_inverse=True)
    if edges.shape[0] * 2 != 3 * nf:
        raise NonManifoldEdge("closed manifold requires 2 half-edges per edge")
    edge_he = np.empty(edges.shape[0], dtype=np.int64)
    canonical = src < dst
    edge_he[he_edge[canonical]] = h_arr[canonical]

    valences = np.bincount(edges.ravel(), minlength=verts.shape[0])
    if valences.min() < 3:
        raise InvalidValence(f"vertex of valence {valences.min()} < 3")

    # each vertex's star must be one closed fan: rotating from any spoke
    # must come back in exactly `valence` steps
    nv = verts.shape[0]
    spokes = np.bincount(src, minlength=nv)
    first_spoke = np.full(nv, -1, dtype=np.int64)
    for h in range(3 * nf - 1, -1, -1):
        first_spoke[src[h]] = h
    h = first_spoke.copy()
    steps = np.zeros(nv, dtype=np.int64)
    active = np.ones(nv, dtype=bool)
    for _ in range(int(valences.max())):
        h[active] = he_rot[h[active]]
        steps[active] += 1
        active &= h != first_spoke
    if active.any() or np.any(steps != valences) or np.any(spokes != valences):
        raise NonManifoldVertex("vertex star is not a single closed fan")

    return ControlMesh(
        vertices=verts, cells=cells, edges=edges, valences=valences,
        level=level, prolongation=prolongation,
        he_twin=he_twin, he_edge=he_edge, he_rot=he_rot, edge_he=edge_he,
    )


def subdivision_matrix(mesh: ControlMesh) -> sp.csr_matrix:
    """Loop subdivision operator R: coefficients on ``mesh`` to
    coefficients on the refined mesh ((V + E) x V, sparse).

    Row v < V applies the vertex rule (1 - N beta(N)) v + beta(N) * ring;
    row V + e applies the edge rule 3/8 (ends) + 1/8 (flanks).
    """
    nv, ne = mesh.n_vertices, mesh.n_edges
    rows, cols, vals = [], [], []

    valences = mesh.valences
    bet = np.array([beta(n) for n in range(3, valences.max() + 1)])
    for v in range(nv):
        n = valences[v]
        b = bet[n - 3]
        ring = mesh.vertex_ring(v)
        rows.append(np.full(n + 1, v))
        cols.append(np.concatenate(([v], ring)))
        vals.append(np.concatenate(([1.0 - n * b], np.full(n, b))))

    # edge rows: ends from mesh.edges; flanks via the canonical half-edge
    h = mesh.edge_he
    f, i = h // 3, h % 3
    apex1 = mesh.cells[f, (i + 2) % 3]
    ht = mesh.he_twin[h]
    ft, it = ht // 3, ht % 3
    apex2 = mesh.cells[ft, (it + 2) % 3]
    erows = np.repeat(np.arange(nv, nv + ne), 4)
    ecols = np.stack([mesh.edges[:, 0], mesh.edges[:, 1], apex1, apex2], axis=1).ravel()
    evals = np.tile(np.array([0.375, 0.375, 0.125, 0.125]), ne)

    rows = np.concatenate([np.concatenate(rows), erows])
    cols = np.concatenate([np.concatenate(cols), ecols])
    vals = np.concatenate([np.concatenate(vals), evals])
    return sp.coo_matrix((vals, (rows, cols)), shape=(nv + ne, nv)).tocsr()


def loop_subdivide(mesh: ControlMesh) -> ControlMesh:
    """One Loop refinement step.

    Original vertices keep their ids; the midpoint of edge e gets id
    V + e.  Cell f is replaced by children 4f..4f+3 in the layout of
    :data:`CHILD_PARAM_MAPS`.
    """
    nv = mesh.n_vertices
    rmat = subdivision_matrix(mesh)
    new_verts = rmat @ mesh.vertices

    # edge id per half-edge of each cell: m_ab for local edge 0, etc.
    he_edge = mesh.he_edge.reshape(-1, 3)
    m = nv + he_edge  # (F, 3): midpoints of (a,b), (b,c), (c,a)
    a, b, c = mesh.cells[:, 0], mesh.cells[:, 1], mesh.cells[:, 2]
    mab, mbc, mca = m[:, 0], m[:, 1], m[:, 2]
    children = np.empty((4 * mesh.n_cells, 3), dtype=mesh.cells.dtype)
    children[0::4] = np.stack([a, mab, mca], axis=1)
    children[1::4] = np.stack([b, mbc, mab], axis=1)
    children[2::4] = np.stack([c, mca, mbc], axis=1)
    children[3::4] = np.stack([mab, mbc, mca], axis=1)

    return _finish_mesh(new_verts, children, level=mesh.level + 1, prolongation=rmat)


@dataclass(frozen=True)
class SubdivisionConfig:
    """Refinement request: ``levels`` repeated Loop steps (capped at 10
    to bound memory), optionally requiring isolated EVs afterwards."""

    levels: int
    require_isolated_EVs: bool = False

    def __post_init__(self):
        if not (0 <= self.levels <= 10):
            raise InvalidLevel(f"levels must be in [0, 10], got {self.levels}")


def subdivide(mesh: ControlMesh, config: SubdivisionConfig) -> ControlMesh:
    out = mesh
    for _ in range(config.levels):
        out = loop_subdivide(out)
    if config.require_isolated_EVs and has_adjacent_EVs(out):
        raise MeshError("mesh still has adjacent extraordinary vertices")
    return out


def mesh_size_h(mesh: ControlMesh) -> float:
    """Maximum Euclidean control-edge length."""
    d = mesh.vertices[mesh.edges[:, 0]] - mesh.vertices[mesh.edges[:, 1]]
    return float(np.sqrt((d * d).sum(axis=1).max()))


def has_adjacent_EVs(mesh: ControlMesh) -> bool:
    """True iff some edge joins two vertices of valence != 6."""
    ev = mesh.valences != REGULAR_VALENCE
    return bool(np.any(ev[mesh.edges[:, 0]] & ev[mesh.edges[:, 1]]))


def extraordinary_vertices(mesh: ControlMesh) -> np.ndarray:
    return np.flatnonzero(mesh.valences != REGULAR_VALENCE)


# ---------------------------------------------------------------- OBJ i/o

def read_obj(path) -> ControlMesh:
    """Read a triangles-only OBJ file (v/f records)."""
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(f"non-triangle face with {len(idx)} vertices")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return build_mesh(faces, verts)


def write_obj(mesh: ControlMesh, path) -> None:
    """Write vertices and faces in deterministic order."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in mesh.vertices:
            fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in mesh.cells:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
