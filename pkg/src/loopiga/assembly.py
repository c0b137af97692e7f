"""Galerkin assembly of the quadrature-modified mass matrix, the
Laplace-Beltrami and bi-Laplacian stiffness matrices, and load vectors.

Two independent paths exist:

* the generic cell iterator: per cell, basis tables at the rule's
  points (cached per valence and rule), geometry from the patch control
  points, local matrix, scatter;
* the edge iterator for the mid-edge rule: per edge, one row set from
  the closed-form mid-edge lookup table.  The integrands of all four
  bilinear/linear forms are invariant under the affine chart maps
  between the edge-canonical chart and the two incident cells' charts,
  so both cells' contributions equal one evaluation in the edge chart
  with combined weight 2 * 1/6.

Both paths produce exactly symmetric matrices and agree entrywise to
roundoff; the equality is enforced by the test suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from threading import Lock

import numpy as np
import scipy.sparse as sp

from .basis import (
    PatchStencil,
    collect_patch,
    eval_irregular_n,
    eval_regular,
    midedge_table,
)
from .errors import DegenerateMetric, TwoEVsOnEdge
from .quadrature import QuadratureRule
from .topology import REGULAR_VALENCE, ControlMesh

_DEGENERATE_REL = 1e-14

_table_cache: dict = {}
_table_lock = Lock()


def _basis_tables(n: int, rule: QuadratureRule):
    """Stacked basis arrays (K, n_basis) for a valence/rule pair."""
    key = (n, rule.key)
    tab = _table_cache.get(key)
    if tab is None:
        with _table_lock:
            tab = _table_cache.get(key)
            if tab is None:
                if n == REGULAR_VALENCE:
                    tab = eval_regular(rule.points)
                else:
                    tab = eval_irregular_n(n, rule.points)
                _table_cache[key] = tab
    return tab


# ----------------------------------------------------------- geometry

@dataclass
class GeometrySample:
    """Geometry mapping data at one parameter point of one cell."""

    J: np.ndarray           # (3, 2)
    G: np.ndarray           # (2, 2), first fundamental form J^T J
    sqrt_detG: float
    Ginv: np.ndarray        # (2, 2)
    X11: np.ndarray         # second derivatives of the mapping, (3,)
    X12: np.ndarray
    X22: np.ndarray


def geometry_sample(mesh: ControlMesh, patch: PatchStencil, xi) -> GeometrySample:
    """First fundamental form and mapping derivatives at ``xi``."""
    from .basis import eval_patch

    ev = eval_patch(patch, np.asarray(xi, dtype=float))
    p = mesh.vertices[patch.control_ids]
    j = np.stack([ev.d1 @ p, ev.d2 @ p], axis=-1)
    g = j.T @ j
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    scale = _detg_floor(mesh)
    if det <= scale:
        raise DegenerateMetric(f"det G = {det:.3e} at xi={tuple(xi)}")
    ginv = np.array([[g[1, 1], -g[0, 1]], [-g[0, 1], g[0, 0]]]) / det
    return GeometrySample(J=j, G=g, sqrt_detG=float(np.sqrt(det)), Ginv=ginv,
                          X11=ev.d11 @ p, X12=ev.d12 @ p, X22=ev.d22 @ p)


def _detg_floor(mesh: ControlMesh) -> float:
    mean_area = float(mesh.cell_areas().mean())
    return _DEGENERATE_REL * (2.0 * mean_area) ** 2


# ----------------------------------------------- patch/edge collection

def collect_patch_groups(mesh: ControlMesh):
    """Group cells by corner1 valence with stacked stencil id arrays.

    Returns a list of (valence, cell_ids (nc,), stencils (nc, n)).
    Regular cells are collected with vectorized ring walks; cells with
    an extraordinary corner go through :func:`collect_patch`.
    """
    val = mesh.valences
    corner_val = val[mesh.cells]
    regular = np.all(corner_val == REGULAR_VALENCE, axis=1)
    groups = []

    reg_cells = np.flatnonzero(regular)
    if reg_cells.size:
        he_dst = mesh.cells[:, [1, 2, 0]].ravel()

        def walk(start, steps):
            out = np.empty((steps, start.shape[0]), dtype=np.int64)
            h = start
            for k in range(steps):
                out[k] = he_dst[h]
                h = mesh.he_rot[h]
            return out

        base = 3 * reg_cells
        r1 = walk(base, 6)          # ring of corner1 from corner2
        r2 = walk(base + 1, 6)      # ring of corner2 from corner3
        r3 = walk(base + 2, 5)      # ring of corner3 from corner1
        sten = np.stack([
            mesh.cells[reg_cells, 0], r1[0], r1[1], r1[2], r1[3], r1[4], r1[5],
            r2[3], r2[4], r2[5], r3[3], r3[4],
        ], axis=1)
        groups.append((REGULAR_VALENCE, reg_cells, sten))

    ev_cells = np.flatnonzero(~regular)
    by_n: dict[int, list] = {}
    for c in ev_cells:
        patch = collect_patch(mesh, int(c))
        by_n.setdefault(patch.valence, []).append((c, patch.control_ids))
    for n, items in sorted(by_n.items()):
        ids = np.array([c for c, _ in items], dtype=np.int64)
        sten = np.stack([s for _, s in items])
        groups.append((n, ids, sten))
    return groups


def collect_edge_groups(mesh: ControlMesh):
    """Group edges by the valence of their canonical endpoint p1.

    p1 is the extraordinary endpoint if there is one (both endpoints
    extraordinary raises :class:`TwoEVsOnEdge`), otherwise the smaller
    vertex id.  Stencils follow the mid-edge table ordering
    [p1, p2, p3..p_{N+1}, p_{N+2}, p_{N+3}, p_{N+4}].
    """
    val = mesh.valences
    a, b = mesh.edges[:, 0], mesh.edges[:, 1]
    ev_a = val[a] != REGULAR_VALENCE
    ev_b = val[b] != REGULAR_VALENCE
    both = ev_a & ev_b
    if np.any(both):
        e = int(np.flatnonzero(both)[0])
        raise TwoEVsOnEdge(f"edge {tuple(mesh.edges[e])} joins two EVs")

    # canonical half-edge p1 -> p2
    h = mesh.edge_he.copy()
    swap = ev_b
    h[swap] = mesh.he_twin[h[swap]]
    p1 = np.where(swap, b, a)
    n_of_edge = val[p1]

    he_dst = mesh.cells[:, [1, 2, 0]].ravel()
    he_next = (h // 3) * 3 + (h % 3 + 1) % 3

    groups = []
    for n in np.unique(n_of_edge):
        sel = np.flatnonzero(n_of_edge == n)
        hs = h[sel]
        ring = np.empty((n, sel.size), dtype=np.int64)
        hh = hs
        for k in range(n):
            ring[k] = he_dst[hh]
            hh = mesh.he_rot[hh]
        # ring of p2 from p3 (p2 is always regular): entries 3,4,5 are
        # the outer points p_{N+2}, p_{N+3}, p_{N+4}
        hh = (hs // 3) * 3 + (hs % 3 + 1) % 3
        outer = np.empty((6, sel.size), dtype=np.int64)
        for k in range(6):
            outer[k] = he_dst[hh]
            hh = mesh.he_rot[hh]
        sten = np.concatenate([p1[sel][None, :], ring, outer[3:6]], axis=0).T
        groups.append((int(n), sel, np.ascontiguousarray(sten)))
    return groups


# --------------------------------------------------------- cell engine

def _group_geometry(pts, tab, need_second):
    """Geometry arrays for one cell group: pts (nc, n, 3), tab a
    BasisEval with (K, n) arrays."""
    j1 = np.einsum("ki,cid->ckd", tab.d1, pts)
    j2 = np.einsum("ki,cid->ckd", tab.d2, pts)
    g11 = np.einsum("ckd,ckd->ck", j1, j1)
    g12 = np.einsum("ckd,ckd->ck", j1, j2)
    g22 = np.einsum("ckd,ckd->ck", j2, j2)
    det = g11 * g22 - g12 * g12
    second = None
    if need_second:
        second = tuple(np.einsum("ki,cid->ckd", d, pts)
                       for d in (tab.d11, tab.d12, tab.d22))
    return (j1, j2), (g11, g12, g22), det, second


def _check_det(det, floor):
    if det.size and det.min() <= floor:
        raise DegenerateMetric(f"det G = {det.min():.3e} below threshold {floor:.3e}")


def _div_vectors(tab, jays, gees, det, second):
    """Per-basis div_xi(sqrt(det G) G^{-1} grad Phi_i): shape (nc, K, n)."""
    j1, j2 = jays
    g11, g12, g22 = gees
    x11, x12, x22 = second
    sq = np.sqrt(det)

    # dG/dxi_l from J_l = (X_{,l1} X_{,l2})
    def dg(ja, jb):
        # d(G)/dxi with J columns (j1, j2) differentiated to (ja, jb)
        d11 = 2.0 * np.einsum("ckd,ckd->ck", ja, j1)
        d12 = np.einsum("ckd,ckd->ck", ja, j2) + np.einsum("ckd,ckd->ck", j1, jb)
        d22 = 2.0 * np.einsum("ckd,ckd->ck", jb, j2)
        return d11, d12, d22

    dg1 = dg(x11, x12)
    dg2 = dg(x12, x22)

    def q_and_dq(dgl):
        # Q = sqrt(det) G^{-1}; dQ = dsqrt G^{-1} + sqrt(det) dG^{-1}
        d11, d12, d22 = dgl
        ddet = d11 * g22 + g11 * d22 - 2.0 * g12 * d12
        dsq = 0.5 * ddet / sq
        # dG^{-1} = -G^{-1} dG G^{-1}; with adj(G)/det form:
        inv11, inv12, inv22 = g22 / det, -g12 / det, g11 / det
        m11 = -(inv11 * (d11 * inv11 + d12 * inv12) + inv12 * (d12 * inv11 + d22 * inv12))
        m12 = -(inv11 * (d11 * inv12 + d12 * inv22) + inv12 * (d12 * inv12 + d22 * inv22))
        m22 = -(inv12 * (d11 * inv12 + d12 * inv22) + inv22 * (d12 * inv12 + d22 * inv22))
        q11 = dsq * inv11 + sq * m11
        q12 = dsq * inv12 + sq * m12
        q22 = dsq * inv22 + sq * m22
        return q11, q12, q22

    dq1 = q_and_dq(dg1)
    dq2 = q_and_dq(dg2)
    inv11, inv12, inv22 = g22 / det, -g12 / det, g11 / det
    q11, q12, q22 = sq * inv11, sq * inv12, sq * inv22

    d1 = tab.d1[None, :, :]
    d2 = tab.d2[None, :, :]
    h11 = tab.d11[None, :, :]
    h12 = tab.d12[None, :, :]
    h22 = tab.d22[None, :, :]
    # row l of d_l Q applied to grad, plus Q contracted with the Hessian
    return (dq1[0][:, :, None] * d1 + dq1[1][:, :, None] * d2
            + dq2[1][:, :, None] * d1 + dq2[2][:, :, None] * d2
            + q11[:, :, None] * h11 + 2.0 * q12[:, :, None] * h12
            + q22[:, :, None] * h22)


def _local_matrices(kind, tab, weights, pts, det_floor, f=None):
    """Local element contributions for one group.  Returns (nc, n, n)
    for matrix kinds or (nc, n) for the load vector."""
    need_second = kind in ("bilaplace",)
    jays, gees, det, second = _group_geometry(pts, tab, need_second)
    _check_det(det, det_floor)
    g11, g12, g22 = gees
    sq = np.sqrt(det)
    w = weights

    if kind == "mass":
        wsq = sq * w[None, :]
        loc = np.einsum("ck,ki,kj->cij", wsq, tab.values, tab.values)
    elif kind == "laplace":
        coef = w[None, :] * sq / det
        a11 = coef * g22
        a12 = -coef * g12
        a22 = coef * g11
        d1, d2 = tab.d1, tab.d2
        loc = (np.einsum("ck,ki,kj->cij", a11, d1, d1)
               + np.einsum("ck,ki,kj->cij", a12, d1, d2)
               + np.einsum("ck,ki,kj->cij", a12, d2, d1)
               + np.einsum("ck,ki,kj->cij", a22, d2, d2))
    elif kind == "bilaplace":
        div = _div_vectors(tab, jays, gees, det, second)
        loc = np.einsum("ck,ckn,ckm->cnm", w[None, :] / sq, div, div)
    elif kind == "rhs":
        x = np.einsum("ki,cid->ckd", tab.values, pts)
        fv = np.asarray(f(x.reshape(-1, 3))).reshape(x.shape[:2])
        return np.einsum("k,ck,ck,ki->ci", w, sq, fv, tab.values)
    else:
        raise ValueError(f"unknown assembly kind {kind!r}")
    return 0.5 * (loc + loc.transpose(0, 2, 1))


def _normalize_rules(rule):
    if isinstance(rule, QuadratureRule):
        return rule, rule
    reg, ev = rule
    return reg, ev


def assemble(mesh: ControlMesh, kind: str, rule, f=None, stats=None):
    """Generic cell-iterator assembly.

    ``rule`` is a :class:`QuadratureRule` applied everywhere or a pair
    (regular-cell rule, EV-cell rule).  ``kind`` is one of "mass",
    "laplace", "bilaplace", "rhs" (the latter needs ``f``).
    """
    t0 = time.perf_counter()
    rule_reg, rule_ev = _normalize_rules(rule)
    nv = mesh.n_vertices
    floor = _detg_floor(mesh)
    groups = collect_patch_groups(mesh)

    if kind == "rhs":
        out = np.zeros(nv)
        for n, cells, sten in groups:
            r = rule_reg if n == REGULAR_VALENCE else rule_ev
            tab = _basis_tables(n, r)
            loc = _local_matrices(kind, tab, r.weights, mesh.vertices[sten], floor, f=f)
            np.add.at(out, sten.ravel(), loc.ravel())
        if stats is not None:
            stats.update(wall_time=time.perf_counter() - t0, n_cells=mesh.n_cells)
        return out

    mat = None
    local_shapes = {}
    for n, cells, sten in groups:
        r = rule_reg if n == REGULAR_VALENCE else rule_ev
        tab = _basis_tables(n, r)
        loc = _local_matrices(kind, tab, r.weights, mesh.vertices[sten], floor)
        m = sten.shape[1]
        local_shapes[(m, m)] = local_shapes.get((m, m), 0) + sten.shape[0]
        sten32 = sten.astype(np.int32)
        part = sp.coo_matrix(
            (loc.ravel(), (np.repeat(sten32, m, axis=1).ravel(),
                           np.tile(sten32, (1, m)).ravel())),
            shape=(nv, nv),
        ).tocsr()
        mat = part if mat is None else mat + part
    if stats is not None:
        stats.update(wall_time=time.perf_counter() - t0, n_cells=mesh.n_cells,
                     local_shapes=local_shapes, path="cells")
    return mat


def assemble_mass(mesh, rule, stats=None):
    """Quadrature mass matrix, Eq. pattern sum_k sum_q w_q Phi_i Phi_j sqrt(det G)."""
    return assemble(mesh, "mass", rule, stats=stats)


def assemble_stiffness_laplace(mesh, rule, stats=None):
    """Laplace-Beltrami stiffness: grad^T G^{-1} grad weighted by the
    area element; symmetric PSD with constants in the kernel."""
    return assemble(mesh, "laplace", rule, stats=stats)


def assemble_stiffness_bilaplace(mesh, rule, stats=None):
    """Surface bi-Laplacian stiffness from the chart divergence form."""
    return assemble(mesh, "bilaplace", rule, stats=stats)


def assemble_rhs(mesh, rule, f, stats=None):
    """Load vector of f against the basis."""
    return assemble(mesh, "rhs", rule, f=f, stats=stats)


# --------------------------------------------------------- edge engine

def assemble_midedge(mesh: ControlMesh, kind: str, f=None, stats=None):
    """Mid-edge assembly by a single pass over edges.

    Each edge midpoint is evaluated once from the mid-edge lookup table
    in the edge-canonical chart; the integrand is chart-invariant, so
    the two incident cells contribute the same value and the combined
    weight is 1/3.  Identical (to roundoff) to the generic assembly
    with the mid-edge rule.
    """
    t0 = time.perf_counter()
    nv = mesh.n_vertices
    floor = _detg_floor(mesh)
    groups = collect_edge_groups(mesh)
    w = 1.0 / 3.0

    is_rhs = kind == "rhs"
    out = np.zeros(nv) if is_rhs else None
    mat = None
    local_shapes = {}
    for n, edge_ids, sten in groups:
        tcols = midedge_table(n).table.T      # (6, N+4)
        val, d1, d2, d11, d12, d22 = tcols
        pts = mesh.vertices[sten]             # (ne, N+4, 3)
        j1 = np.einsum("i,eid->ed", d1, pts)
        j2 = np.einsum("i,eid->ed", d2, pts)
        g11 = np.einsum("ed,ed->e", j1, j1)
        g12 = np.einsum("ed,ed->e", j1, j2)
        g22 = np.einsum("ed,ed->e", j2, j2)
        det = g11 * g22 - g12 * g12
        _check_det(det, floor)
        sq = np.sqrt(det)

        if kind == "mass":
            loc = np.einsum("e,i,j->eij", w * sq, val, val)
        elif kind == "laplace":
            coef = w * sq / det
            loc = (np.einsum("e,i,j->eij", coef * g22, d1, d1)
                   - np.einsum("e,i,j->eij", coef * g12, d1, d2)
                   - np.einsum("e,i,j->eij", coef * g12, d2, d1)
                   + np.einsum("e,i,j->eij", coef * g11, d2, d2))
        elif kind == "bilaplace":
            x11 = np.einsum("i,eid->ed", d11, pts)
            x12 = np.einsum("i,eid->ed", d12, pts)
            x22 = np.einsum("i,eid->ed", d22, pts)

            def dg(ja, jb):
                return (2.0 * np.einsum("ed,ed->e", ja, j1),
                        np.einsum("ed,ed->e", ja, j2) + np.einsum("ed,ed->e", j1, jb),
                        2.0 * np.einsum("ed,ed->e", jb, j2))

            inv11, inv12, inv22 = g22 / det, -g12 / det, g11 / det

            def dq(dgl):
                e11, e12, e22 = dgl
                ddet = e11 * g22 + g11 * e22 - 2.0 * g12 * e12
                dsq = 0.5 * ddet / sq
                m11 = -(inv11 * (e11 * inv11 + e12 * inv12)
                        + inv12 * (e12 * inv11 + e22 * inv12))
                m12 = -(inv11 * (e11 * inv12 + e12 * inv22)
                        + inv12 * (e12 * inv12 + e22 * inv22))
                m22 = -(inv12 * (e11 * inv12 + e12 * inv22)
                        + inv22 * (e12 * inv12 + e22 * inv22))
                return (dsq * inv11 + sq * m11, dsq * inv12 + sq * m12,
                        dsq * inv22 + sq * m22)

            dq1 = dq(dg(x11, x12))
            dq2 = dq(dg(x12, x22))
            div = (np.einsum("e,i->ei", dq1[0], d1) + np.einsum("e,i->ei", dq1[1], d2)
                   + np.einsum("e,i->ei", dq2[1], d1) + np.einsum("e,i->ei", dq2[2], d2)
                   + np.einsum("e,i->ei", sq * inv11, d11)
                   + 2.0 * np.einsum("e,i->ei", sq * inv12, d12)
                   + np.einsum("e,i->ei", sq * inv22, d22))
            loc = np.einsum("e,ei,ej->eij", w / sq, div, div)
        elif is_rhs:
            x = np.einsum("i,eid->ed", val, pts)
            fv = np.asarray(f(x))
            np.add.at(out, sten.ravel(),
                      ((w * sq * fv)[:, None] * val[None, :]).ravel())
            continue
        else:
            raise ValueError(f"unknown assembly kind {kind!r}")
        loc = 0.5 * (loc + loc.transpose(0, 2, 1))
        m = sten.shape[1]
        local_shapes[(m, m)] = local_shapes.get((m, m), 0) + sten.shape[0]
        sten32 = sten.astype(np.int32)
        part = sp.coo_matrix(
            (loc.ravel(), (np.repeat(sten32, m, axis=1).ravel(),
                           np.tile(sten32, (1, m)).ravel())),
            shape=(nv, nv),
        ).tocsr()
        mat = part if mat is None else mat + part

    if stats is not None:
        stats.update(wall_time=time.perf_counter() - t0, n_edges=mesh.n_edges,
                     local_shapes=local_shapes, path="edges")
    if is_rhs:
        return out
    return mat


# ------------------------------------------------------------- export

def save_matrix_market(matrix, path) -> None:
    """Write a sparse matrix in MatrixMarket coordinate format."""
    from scipy.io import mmwrite

    mmwrite(path, sp.coo_matrix(matrix), symmetry="symmetric")
