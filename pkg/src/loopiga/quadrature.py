"""Quadrature rules on the unit triangle: Gaussian GA(p), adaptive
Gaussian AG(p, L), barycenter BC, and mid-edge ME.

All rules integrate with respect to the reference area measure, so the
weights of every rule sum to 1/2.  The adaptive rule splits the triangle
into ring triangles shrinking toward the corner (0, 0) -- the corner the
basis module places the extraordinary vertex at -- so that each
sub-triangle lies inside one polynomial piece of the irregular basis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidLevel, UnsupportedDegree

# symmetric Gaussian orbits in barycentric coordinates; values solved
# from the moment equations to 40 digits and validated by the exactness
# sweep in the test suite
_GA4_ORBITS = (
    # (weight per point, barycentric beta) for orbits (1-2b, b, b)
    (0.05497587182766093381916316245010526448, 0.09157621350977074345957146340220150785),
    (0.11169079483900573284750350421656140219, 0.44594849091596488631832925388305198840),
)
_GA6_ORBITS3 = (
    (0.02542245318510340846046840455343449202, 0.06308901449150222834033160287081915734),
    (0.05839313786318968301264480569278972066, 0.24928674517091042129163855310701907609),
)
_GA6_ORBIT6 = (
    0.04142553780918678759677672821022122699,
    0.63650249912139864723014259441204969980,
    0.31035245103378440541660773395655215320,
)


@dataclass(frozen=True)
class QuadratureRule:
    """Points (K, 2) and weights (K,) on the closed unit triangle.

    ``exact_degree`` is the total polynomial degree integrated exactly;
    ``key`` is a stable identifier used for caching basis tables.
    """

    points: np.ndarray
    weights: np.ndarray
    exact_degree: int
    key: str

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def integrate(self, f) -> float:
        """Integrate a callable f(xi) -> (K,) over the unit triangle."""
        return float(self.weights @ np.asarray(f(self.points)))


def _orbit3(b):
    a = 1.0 - 2.0 * b
    return [(a, b), (b, a), (b, b)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b), (b, a), (a, c), (c, a), (b, c), (c, b)]


def _from_barycentric(pairs):
    # barycentric (l1, l2, l3) with xi = (l2, l3): orbit lists carry (l2, l3)
    return np.array(pairs, dtype=float)


@lru_cache(maxsize=None)
def gauss_rule(p: int) -> QuadratureRule:
    """Symmetric Gaussian rule: 6 points for p=4, 12 points for p=6.

    These are the degrees needed to keep the full convergence order of
    the quartic basis for fourth- and second-order problems.
    """
    if p == 4:
        pts, wts = [], []
        for w, b in _GA4_ORBITS:
            pts.extend(_orbit3(b))
            wts.extend([w] * 3)
    elif p == 6:
        pts, wts = [], []
        for w, b in _GA6_ORBITS3:
            pts.extend(_orbit3(b))
            wts.extend([w] * 3)
        w, a, b = _GA6_ORBIT6
        pts.extend(_orbit6(a, b))
        wts.extend([w] * 6)
    else:
        raise UnsupportedDegree(f"no embedded Gaussian rule of degree {p}")
    return QuadratureRule(points=_from_barycentric(pts),
                          weights=np.array(wts), exact_degree=p, key=f"ga{p}")


@lru_cache(maxsize=None)
def barycenter_rule() -> QuadratureRule:
    """One point at the barycenter, weight 1/2; exact for affine
    integrands only."""
    return QuadratureRule(points=np.array([[1.0 / 3.0, 1.0 / 3.0]]),
                          weights=np.array([0.5]), exact_degree=1, key="bc")


@lru_cache(maxsize=None)
def midedge_rule() -> QuadratureRule:
    """Three points at the edge midpoints, weight 1/6 each; exact for
    quadratics."""
    pts = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
    return QuadratureRule(points=pts, weights=np.full(3, 1.0 / 6.0),
                          exact_degree=2, key="me")


def _ring_triangles(levels: int):
    """Ring decomposition of Figure-type: for l = 1..L three triangles
    between scales 2^-l and 2^-(l-1), plus the closing corner triangle
    at scale 2^-L.  Vertices listed (V0, V1, V2); the EV corner (0, 0)
    is a vertex of the closing triangle only."""
    tris = []
    for l in range(1, levels + 1):
        s = 0.5 ** l
        tris.append(((0.0, s), (0.0, 2 * s), (s, s)))
        tris.append(((0.0, s), (s, 0.0), (s, s)))
        tris.append(((s, 0.0), (s, s), (2 * s, 0.0)))
    s = 0.5 ** levels
    tris.append(((0.0, 0.0), (s, 0.0), (0.0, s)))
    return tris


@lru_cache(maxsize=None)
def adaptive_rule(p: int, levels: int) -> QuadratureRule:
    """Adaptive Gaussian rule AG(p, L): the base rule mapped onto the
    ring decomposition, (3 L + 1) * K_base points in total.

    Applied only on cells with an extraordinary corner; the rings align
    with the polynomial pieces of the basis there, so the rule restores
    the base rule's piecewise exactness."""
    if levels < 1:
        raise InvalidLevel(f"adaptive rule needs L >= 1, got {levels}")
    base = gauss_rule(p)
    pts, wts = [], []
    for (v0, v1, v2) in _ring_triangles(levels):
        v0 = np.array(v0)
        e1 = np.array(v1) - v0
        e2 = np.array(v2) - v0
        area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])    # 2 * area of sub-triangle
        pts.append(v0 + base.points[:, :1] * e1 + base.points[:, 1:] * e2)
        wts.append(base.weights * area2)
    return QuadratureRule(points=np.vstack(pts), weights=np.concatenate(wts),
                          exact_degree=p, key=f"ag{p}:{levels}")


def parse_rule_spec(spec: str):
    """Parse the CLI rule grammar: "ga", "ag:L", "bc", "me".

    Returns (kind, L) with L = None except for "ag".
    """
    s = spec.strip().lower()
    if s == "ga":
        return "ga", None
    if s.startswith("ag:"):
        try:
            lv = int(s[3:])
        except ValueError as exc:
            raise InvalidLevel(f"bad adaptive level in {spec!r}") from exc
        if lv < 1:
            raise InvalidLevel(f"adaptive level must be >= 1, got {lv}")
        return "ag", lv
    if s in ("bc", "me"):
        return s, None
    raise UnsupportedDegree(f"unknown quadrature spec {spec!r}")


def rules_for(spec: str, degree: int):
    """Resolve a rule spec into (regular-cell rule, EV-cell rule, kind).

    ``degree`` is the Gaussian exactness for "ga"/"ag" (6 for
    second-order, 4 for fourth-order problems).  BC and ME apply to
    regular and irregular cells alike; AG differs from GA only on EV
    cells.
    """
    kind, lv = parse_rule_spec(spec)
    if kind == "ga":
        g = gauss_rule(degree)
        return g, g, kind
    if kind == "ag":
        return gauss_rule(degree), adaptive_rule(degree, lv), kind
    if kind == "bc":
        r = barycenter_rule()
        return r, r, kind
    r = midedge_rule()
    return r, r, kind
