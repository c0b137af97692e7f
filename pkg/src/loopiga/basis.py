"""Loop basis functions: values and first/second parametric derivatives
on regular and irregular patches, plus the mid-edge lookup tables.

Canonical patch ordering
------------------------
A patch is the restriction of the limit surface to one cell.  With the
cell chart mapping corner1 -> (0,0), corner2 -> (1,0), corner3 -> (0,1),
the control points are ordered corner-major:

* regular cell (all corners valence 6), 12 points::

      1: corner1        2: corner2      3: corner3
      4..7: rest of corner1's ring, counterclockwise after corner3
      8, 9, 10: remaining ring of corner2 (continuing ccw past the ring
                of corner1, i.e. lattice offsets (2,-1), (2,0), (1,1))
      11, 12: remaining ring of corner3 (offsets (0,2), (-1,2))

* irregular cell (corner1 extraordinary, valence N), N + 6 points: the
  EV first, then its full one-ring counterclockwise starting at corner2
  (entries 2 .. N+1), then the three outer points around corner2 and the
  two outer points around corner3, as in the regular layout.

On the regular patch the basis functions are the 12 translates of the
quartic box spline; their polynomial coefficients on the central
triangle are embedded below as exact rationals (common denominator 12).
Irregular patches are evaluated by repeated application of the local
subdivision matrix: the parameter point descends through rings shrinking
toward the EV corner at (0,0) until it lands in one of the three regular
sub-patches, where the box spline applies; chain-rule factors 2 (first
derivatives) and 4 (second derivatives) accumulate per level.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from threading import Lock

import numpy as np

from .errors import (
    AtExtraordinaryVertex,
    InvalidValence,
    MaxDepthExceeded,
    OutOfDomain,
    TwoEVsInPatch,
)
from .topology import REGULAR_VALENCE, ControlMesh, beta

MAX_RING_DEPTH = 40
_DOMAIN_TOL = 1e-12

# monomial exponents (a, b) for xi1^a xi2^b, degree <= 4
_MONOMIALS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2),
              (3, 0), (2, 1), (1, 2), (0, 3),
              (4, 0), (3, 1), (2, 2), (1, 3), (0, 4)]

# numerators over the common denominator 12, rows = the 12 basis
# functions in canonical order, columns = _MONOMIALS
_BOX_NUM = np.array([
    [6, 0, 0, -12, -12, -12, 8, 12, 12, 8, -1, -2, 0, -2, -1],
    [1, 4, 2, 6, 6, 0, -4, -6, -12, -4, -1, -2, 0, 4, 2],
    [1, 2, 4, 0, 6, 6, -4, -12, -6, -4, 2, 4, 0, -2, -1],
    [1, -2, 2, 0, -6, 0, 2, 6, 0, -4, -1, -2, 0, 4, 2],
    [1, -4, -2, 6, 6, 0, -4, -6, 0, 2, 1, 2, 0, -2, -1],
    [1, -2, -4, 0, 6, 6, 2, 0, -6, -4, -1, -2, 0, 2, 1],
    [1, 2, -2, 0, -6, 0, -4, 0, 6, 2, 2, 4, 0, -2, -1],
    [0, 0, 0, 0, 0, 0, 2, 0, 0, 0, -1, -2, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 2, 6, 6, 2, -1, -2, 0, -2, -1],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 2, 1],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, -2, -1],
], dtype=np.int64)


def _diff_mono(coef, axis):
    """Differentiate monomial coefficients along xi1 (axis 0) or xi2."""
    out = np.zeros_like(coef)
    for m, (a, b) in enumerate(_MONOMIALS):
        e = (a, b)
        if e[axis] == 0:
            continue
        tgt = (a - 1, b) if axis == 0 else (a, b - 1)
        out[:, _MONOMIALS.index(tgt)] += e[axis] * coef[:, m]
    return out


_C0 = _BOX_NUM / 12.0
_C1 = _diff_mono(_BOX_NUM, 0) / 12.0
_C2 = _diff_mono(_BOX_NUM, 1) / 12.0
_C11 = _diff_mono(_diff_mono(_BOX_NUM, 0), 0) / 12.0
_C12 = _diff_mono(_diff_mono(_BOX_NUM, 0), 1) / 12.0
_C22 = _diff_mono(_diff_mono(_BOX_NUM, 1), 1) / 12.0


@dataclass
class BasisEval:
    """Basis values and xi-derivatives at one or more parameter points.

    Each array has shape (..., n) with n = 12 (regular) or N + 6.
    Partition of unity: values sum to 1 over the last axis; every
    derivative array sums to 0.
    """

    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d11: np.ndarray
    d12: np.ndarray
    d22: np.ndarray

    def arrays(self):
        return (self.values, self.d1, self.d2, self.d11, self.d12, self.d22)


def _check_domain(xi):
    xi = np.asarray(xi, dtype=float)
    x1, x2 = xi[..., 0], xi[..., 1]
    if np.any(x1 < -_DOMAIN_TOL) or np.any(x2 < -_DOMAIN_TOL) \
            or np.any(x1 + x2 > 1.0 + _DOMAIN_TOL):
        raise OutOfDomain("parameter point outside the unit triangle")
    return xi


def eval_regular(xi) -> BasisEval:
    """Evaluate the 12 regular-patch basis functions at ``xi``.

    ``xi`` may be a single (2,) point or an (..., 2) batch.
    """
    xi = _check_domain(xi)
    x1, x2 = xi[..., 0], xi[..., 1]
    mono = np.stack([x1 ** a * x2 ** b for (a, b) in _MONOMIALS], axis=-1)
    return BasisEval(*(mono @ c.T for c in (_C0, _C1, _C2, _C11, _C12, _C22)))


# ------------------------------------------------------- patch stencils

@dataclass(frozen=True)
class PatchStencil:
    """Ordered control-point ids governing one cell's surface patch.

    ``control_ids`` follows the canonical ordering above; ``valence``
    is the corner1 valence (6 for a regular patch); ``ev_corner`` is the
    local index of the extraordinary corner in the stored cell triple,
    or None.
    """

    cell_id: int
    control_ids: np.ndarray
    valence: int
    ev_corner: int | None

    @property
    def is_regular(self) -> bool:
        return self.valence == REGULAR_VALENCE and self.ev_corner is None

    @property
    def size(self) -> int:
        return self.control_ids.shape[0]


def collect_patch(mesh: ControlMesh, cell: int) -> PatchStencil:
    """Collect the ordered patch stencil of a cell.

    The cell's corners are rotated so that an extraordinary corner, if
    present, becomes corner1.  Requires isolated EVs: a cell with two
    extraordinary corners raises :class:`TwoEVsInPatch`.
    """
    corners = [int(v) for v in mesh.cells[cell]]
    irregular = [i for i, v in enumerate(corners) if mesh.valences[v] != REGULAR_VALENCE]
    if len(irregular) > 1:
        raise TwoEVsInPatch(f"cell {cell} has {len(irregular)} extraordinary corners")
    ev_corner = irregular[0] if irregular else None
    r = ev_corner or 0
    c1, c2, c3 = corners[r:] + corners[:r]
    n = int(mesh.valences[c1])

    ring = mesh.vertex_ring(c1, first=c2)
    # ring[0] == c2 and ring[1] == c3 by the rotation convention
    p = [c1, *ring.tolist()]
    pn1 = p[-1]                       # last ring entry, p_{N+1}
    pn2 = mesh.apex_across(c2, pn1, c1)
    pn3 = mesh.apex_across(c2, pn2, pn1)
    pn4 = mesh.apex_across(c2, c3, c1)
    pn5 = mesh.apex_across(c3, pn4, c2)
    pn6 = mesh.apex_across(c3, p[3], c1)   # across (corner3, p4)
    ids = np.array(p + [pn2, pn3, pn4, pn5, pn6], dtype=np.int64)
    return PatchStencil(cell_id=cell, control_ids=ids,
                        valence=n, ev_corner=ev_corner)


# ------------------------------------- local subdivision ring structure

_matrix_lock = Lock()


@lru_cache(maxsize=None)
def _subdivision_matrices(n: int):
    """(A, Abar) for a patch whose corner1 has valence ``n``.

    Abar maps the N+6 patch points to the N+12 refined points needed by
    the four sub-patches; A = Abar[: N+6] reproduces the shrunk
    irregular patch at the EV corner.
    """
    if n < 3:
        raise InvalidValence(f"valence must be >= 3, got {n}")
    b = beta(n)
    b6 = beta(REGULAR_VALENCE)
    size = n + 6
    abar = np.zeros((n + 12, size))

    def edge_row(r, e0, e1, f0, f1):
        abar[r, [e0, e1]] += 0.375
        abar[r, [f0, f1]] += 0.125

    # refined 0: EV update; ring locals are 1..N
    abar[0, 0] = 1.0 - n * b
    abar[0, 1:n + 1] = b
    # refined 1..N: spoke midpoints, flanked by the cyclic ring neighbors
    for r in range(1, n + 1):
        prv = r - 1 if r > 1 else n
        nxt = r + 1 if r < n else 1
        edge_row(r, 0, r, prv, nxt)
    edge_row(n + 1, 1, n, 0, n + 1)        # mid(p2, p_{N+1})
    abar[n + 2, 1] = 1.0 - 6 * b6          # p2 update (always valence 6)
    abar[n + 2, [0, 2, n + 3, n + 2, n + 1, n]] += b6
    edge_row(n + 3, 1, 2, 0, n + 3)        # mid(p2, p3)
    abar[n + 4, 2] = 1.0 - 6 * b6          # p3 update
    abar[n + 4, [0, 1, 3, n + 3, n + 4, n + 5]] += b6
    edge_row(n + 5, 2, 3, 0, n + 5)        # mid(p3, p4)
    edge_row(n + 6, 1, n + 1, n, n + 2)    # mid(p2, p_{N+2})
    edge_row(n + 7, 1, n + 2, n + 1, n + 3)
    edge_row(n + 8, 1, n + 3, n + 2, 2)
    edge_row(n + 9, 2, n + 3, 1, n + 4)
    edge_row(n + 10, 2, n + 4, n + 3, n + 5)
    edge_row(n + 11, 2, n + 5, n + 4, 3)
    return abar[:size].copy(), abar


def _sub_patch_picks(n: int):
    """Refined-point selections of the three regular sub-patches, in
    canonical 12-point order (0-based refined indices)."""
    s2 = [1, n + 2, n + 3, 2, 0, n, n + 1, n + 6, n + 7, n + 8, n + 9, n + 4]
    s3 = [2, n + 3, n + 4, n + 5, 3, 0, 1, n + 2, n + 8, n + 9, n + 10, n + 11]
    s4 = [n + 3, 2, 1, n + 2, n + 8, n + 9, n + 4, n + 5, 3, 0, n, n + 1]
    return s2, s3, s4


@lru_cache(maxsize=None)
def _pick_weights(n: int, depth: int, which: int):
    """Rows of the composite map (sub-patch of ring ``depth``) so that
    basis_on_patch(xi) = W.T @ basis_regular(t); W is 12 x (N+6)."""
    with _matrix_lock:
        a, abar = _subdivision_matrices(n)
        w = abar if depth == 1 else abar @ np.linalg.matrix_power(a, depth - 1)
        picks = _sub_patch_picks(n)[which - 2]
        return w[picks]


def _descend(xi):
    """Ring descent: returns (depth m, sub-patch index, mapped t, sign)."""
    x1, x2 = float(xi[0]), float(xi[1])
    if x1 + x2 <= 0.0:
        raise AtExtraordinaryVertex("evaluation exactly at the EV corner")
    m = 1
    while x1 + x2 < 0.5:
        x1, x2 = 2.0 * x1, 2.0 * x2
        m += 1
        if m > MAX_RING_DEPTH:
            raise MaxDepthExceeded(f"descent beyond {MAX_RING_DEPTH} rings")
    if x1 >= 0.5:
        return m, 2, (2.0 * x1 - 1.0, 2.0 * x2), 1.0
    if x2 >= 0.5:
        return m, 3, (2.0 * x1, 2.0 * x2 - 1.0), 1.0
    return m, 4, (1.0 - 2.0 * x1, 1.0 - 2.0 * x2), -1.0


def eval_irregular(patch: PatchStencil, xi) -> BasisEval:
    """Evaluate the N + 6 basis functions of an irregular patch.

    ``xi`` is one point or an (..., 2) batch; evaluation exactly at the
    EV corner raises.  Values for a valence-6 patch agree with
    :func:`eval_regular` (different code path, same function space).
    """
    return eval_irregular_n(patch.valence, xi)


def eval_irregular_n(n: int, xi) -> BasisEval:
    """Same as :func:`eval_irregular` keyed by the corner valence only."""
    xi = _check_domain(xi)
    flat = xi.reshape(-1, 2)
    size = n + 6
    out = [np.empty((flat.shape[0], size)) for _ in range(6)]
    for k, point in enumerate(flat):
        m, which, t, sign = _descend(point)
        w = _pick_weights(n, m, which)
        reg = eval_regular(np.asarray(t))
        s1 = sign * 2.0 ** m
        s2 = 4.0 ** m
        for arr, regarr, scale in zip(out, reg.arrays(),
                                      (1.0, s1, s1, s2, s2, s2)):
            arr[k] = scale * (regarr @ w)
    shape = xi.shape[:-1] + (size,)
    return BasisEval(*(a.reshape(shape) for a in out))


def eval_patch(patch: PatchStencil, xi) -> BasisEval:
    """Evaluate whichever basis applies to ``patch``."""
    if patch.is_regular:
        return eval_regular(xi)
    return eval_irregular(patch, xi)


# ----------------------------------------------------- limit quantities

def limit_weights(valence: int):
    """Limit-position mask: (center weight, per-neighbor weight)."""
    chi = 1.0 / (valence + 3.0 / (8.0 * beta(valence)))
    return 1.0 - valence * chi, chi


def limit_position(mesh: ControlMesh, vertex: int) -> np.ndarray:
    """Point of the limit surface associated with a control vertex."""
    w0, w1 = limit_weights(int(mesh.valences[vertex]))
    ring = mesh.vertex_ring(vertex)
    return w0 * mesh.vertices[vertex] + w1 * mesh.vertices[ring].sum(axis=0)


def limit_values(mesh: ControlMesh, coeffs: np.ndarray) -> np.ndarray:
    """Apply the limit mask to a coefficient vector (or stacked columns):
    exact limit-function values at all vertex parameter positions."""
    coeffs = np.asarray(coeffs, dtype=float)
    out = np.empty_like(coeffs)
    for v in range(mesh.n_vertices):
        w0, w1 = limit_weights(int(mesh.valences[v]))
        out[v] = w0 * coeffs[v] + w1 * coeffs[mesh.vertex_ring(v)].sum(axis=0)
    return out


def limit_surface_points(mesh: ControlMesh) -> np.ndarray:
    """Limit positions of every control vertex."""
    return limit_values(mesh, mesh.vertices)


# ------------------------------------------------- mid-edge lookup table

@dataclass(frozen=True)
class MidEdgeTable:
    """Per-valence constants: basis values and derivatives at the
    midpoint (1/2, 0) of the edge (p1, p2), in the chart of the triangle
    (p1, p2, p3).

    ``table`` has shape (N + 4, 6), columns (phi, d1, d2, d11, d12, d22),
    rows ordered p1, p2, p1's remaining ring p3..p_{N+1}, then the outer
    points p_{N+2}, p_{N+3}, p_{N+4} around p2.  The two outer points
    around p3 do not reach the midpoint and are omitted (zero rows).
    """

    valence: int
    table: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "phi", "d1", "d2", "d11", "d12", "d22"])
        for i, row in enumerate(self.table, start=1):
            w.writerow([i] + [f"{v:.17g}" for v in row])
        return buf.getvalue()


@lru_cache(maxsize=None)
def midedge_table(valence: int) -> MidEdgeTable:
    """Closed-form mid-edge constants for corner valence N >= 3,
    including the modified rows for N = 3 and N = 4."""
    n = int(valence)
    if n < 3:
        raise InvalidValence(f"valence must be >= 3, got {n}")
    b = beta(n)
    nb = n * b
    rows = np.zeros((n + 4, 6))
    rows[0] = [(69 - 16 * nb) / 192, (-19 + 16 * nb) / 24, (-19 + 16 * nb) / 48,
               (5 - 16 * nb) / 4, (5 - 16 * nb) / 8, -1.0]
    rows[1] = [(62 + 16 * b) / 192, (14 - 16 * b) / 24, (14 - 16 * b) / 48,
               (-2 + 16 * b) / 4, (-1 + 8 * b) / 4, -1.0]
    general_i3 = [(25 + 16 * b) / 192, (1 - 16 * b) / 24, (19 - 16 * b) / 48,
                  (-3 + 16 * b) / 4, (-3 + 16 * b) / 8, 0.5]
    general_i4 = [(2 + 16 * b) / 192, (-1 - 16 * b) / 24, (2 - 16 * b) / 48,
                  4 * b, (-1 + 8 * b) / 4, 0.0]
    fan = [16 * b / 192, -2 * b / 3, -b / 3, 4 * b, 2 * b, 0.0]
    general_iN = [(2 + 16 * b) / 192, (-1 - 16 * b) / 24, (-4 - 16 * b) / 48,
                  4 * b, (1 + 8 * b) / 4, 0.5]
    general_iN1 = [(25 + 16 * b) / 192, (1 - 16 * b) / 24, (-17 - 16 * b) / 48,
                   (-3 + 16 * b) / 4, (-3 + 16 * b) / 8, 0.5]
    if n == 3:
        rows[2] = [(27 + 16 * b) / 192, -2 * b / 3, (15 - 16 * b) / 48,
                   (-3 + 16 * b) / 4, (-1 + 16 * b) / 8, 1.0]
        rows[3] = [(27 + 16 * b) / 192, -2 * b / 3, (-15 - 16 * b) / 48,
                   (-3 + 16 * b) / 4, (-5 + 16 * b) / 8, 0.5]
    elif n == 4:
        rows[2] = general_i3
        rows[3] = [(4 + 16 * b) / 192, (-2 - 16 * b) / 24, (-2 - 16 * b) / 48,
                   4 * b, 2 * b, 0.5]
        rows[4] = general_iN1
    else:
        rows[2] = general_i3
        rows[3] = general_i4
        for i in range(4, n - 1):       # fan rows i = 5 .. N-1 (1-based)
            rows[i] = fan
        rows[n - 1] = general_iN
        rows[n] = general_iN1
    rows[n + 1] = [3 / 192, 1 / 12, -1 / 48, 0.25, -0.125, 0.0]
    rows[n + 2] = [1 / 192, 1 / 24, 1 / 48, 0.25, 0.125, 0.0]
    rows[n + 3] = [3 / 192, 1 / 12, 5 / 48, 0.25, 0.375, 0.5]
    rows.setflags(write=False)
    return MidEdgeTable(valence=n, table=rows)


def dump_midedge_tables(valences, directory) -> list[str]:
    """Write one CSV per valence into ``directory``; returns the paths."""
    import os

    paths = []
    os.makedirs(directory, exist_ok=True)
    for n in valences:
        path = os.path.join(directory, f"midedge_valence_{n}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(midedge_table(n).to_csv())
        paths.append(path)
    return paths
