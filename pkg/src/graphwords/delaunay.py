"""Small-set planar Delaunay triangulation with exact predicates.

Predicates use a floating-point filter (Shewchuk's static error bounds) and
fall back to exact rational arithmetic. Cocircular quadruples are resolved by
symbolic perturbation of the lifted heights, keyed on the lexicographic rank
of each point, so the output never depends on input order.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

_EPS = 2.0 ** -53
_CCW_BOUND = (3.0 + 16.0 * _EPS) * _EPS
_ICC_BOUND = (10.0 + 96.0 * _EPS) * _EPS


def _sign(v) -> int:
    return int(v > 0) - int(v < 0)


def orient2d(a, b, c) -> int:
    """+1 if a, b, c turn counter-clockwise, -1 if clockwise, 0 if collinear."""
    left = (a[0] - c[0]) * (b[1] - c[1])
    right = (a[1] - c[1]) * (b[0] - c[0])
    det = left - right
    if abs(det) > _CCW_BOUND * (abs(left) + abs(right)):
        return _sign(det)
    ax, ay, bx, by, cx, cy = (Fraction(v) for v in (a[0], a[1], b[0], b[1], c[0], c[1]))
    return _sign((ax - cx) * (by - cy) - (ay - cy) * (bx - cx))


def _incircle_exact(a, b, c, d) -> int:
    dx, dy = Fraction(d[0]), Fraction(d[1])
    rows = []
    for p in (a, b, c):
        px, py = Fraction(p[0]) - dx, Fraction(p[1]) - dy
        rows.append((px, py, px * px + py * py))
    (ax, ay, al), (bx, by, bl), (cx, cy, cl) = rows
    det = al * (bx * cy - cx * by) + bl * (cx * ay - ax * cy) + cl * (ax * by - bx * ay)
    return _sign(det)


def incircle(a, b, c, d) -> int:
    """+1 if d lies strictly inside the circle through ccw a, b, c; 0 if on it."""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    bdxcdy, cdxbdy = bdx * cdy, cdx * bdy
    cdxady, adxcdy = cdx * ady, adx * cdy
    adxbdy, bdxady = adx * bdy, bdx * ady
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    det = alift * (bdxcdy - cdxbdy) + blift * (cdxady - adxcdy) + clift * (adxbdy - bdxady)
    permanent = (
        (abs(bdxcdy) + abs(cdxbdy)) * alift
        + (abs(cdxady) + abs(adxcdy)) * blift
        + (abs(adxbdy) + abs(bdxady)) * clift
    )
    if abs(det) > _ICC_BOUND * permanent:
        return _sign(det)
    return _incircle_exact(a, b, c, d)


def incircle_perturbed(quad: Sequence, ranks: Sequence[int]) -> int:
    """In-circle sign for ccw (a, b, c) and d, never zero.

    On an exact zero the lifted height of each point is raised by eps**rank;
    the sign is that of the first non-vanishing derivative of the lifted
    4x4 determinant, taken in increasing rank order.
    """
    s = incircle(*quad)
    if s != 0:
        return s
    a, b, c, d = quad
    cofactors = (
        lambda: orient2d(b, c, d),
        lambda: -orient2d(a, c, d),
        lambda: orient2d(a, b, d),
        lambda: -orient2d(a, b, c),
    )
    for slot in sorted(range(4), key=lambda i: ranks[i]):
        s = cofactors[slot]()
        if s != 0:
            return s
    raise ValueError("degenerate quadruple: all four points collinear")


def _triangulate_sorted(pts: list) -> tuple[list[tuple[int, int, int]], list[tuple[int, int]]]:
    """Triangulate lexicographically sorted distinct points.

    Returns (ccw triangles, path edges); path edges are only used when every
    point is collinear.
    """
    n = len(pts)
    k = 2
    while k < n and orient2d(pts[0], pts[1], pts[k]) == 0:
        k += 1
    if k == n:
        return [], [(i, i + 1) for i in range(n - 1)]

    tris = []
    for i in range(k - 1):
        if orient2d(pts[i], pts[i + 1], pts[k]) > 0:
            tris.append((i, i + 1, k))
        else:
            tris.append((i + 1, i, k))

    for m in range(k + 1, n):
        p = pts[m]
        directed = set()
        for t in tris:
            directed.update(((t[0], t[1]), (t[1], t[2]), (t[2], t[0])))
        for u, v in [e for e in directed if (e[1], e[0]) not in directed]:
            if orient2d(pts[u], pts[v], p) < 0:
                tris.append((v, u, m))

    _lawson_flip(pts, tris)
    return tris, []


def _lawson_flip(pts: list, tris: list) -> None:
    # Sorted input, so a point's position in pts is its lexicographic rank.
    changed = True
    while changed:
        changed = False
        owner = {}
        for ti, t in enumerate(tris):
            owner[(t[0], t[1])] = (ti, t[2])
            owner[(t[1], t[2])] = (ti, t[0])
            owner[(t[2], t[0])] = (ti, t[1])
        for (u, v), (ti, w) in owner.items():
            if u > v or (v, u) not in owner:
                continue
            tj, x = owner[(v, u)]
            quad = (u, v, w, x)
            if incircle_perturbed([pts[i] for i in quad], quad) > 0:
                tris[ti] = (u, x, w)
                tris[tj] = (x, v, w)
                changed = True
                break


def delaunay_triangles(points: Sequence[Sequence[float]]) -> list[tuple[int, int, int]]:
    """Delaunay triangles (ccw index triples into ``points``) of distinct points."""
    pts = [(float(p[0]), float(p[1])) for p in points]
    order = sorted(range(len(pts)), key=lambda i: pts[i])
    tris, _ = _triangulate_sorted([pts[i] for i in order])
    return [tuple(order[i] for i in t) for t in tris]


def delaunay_triangulate(points: Sequence[Sequence[float]]) -> set[tuple[int, int]]:
    """Undirected Delaunay edges ``(i, j)``, ``i < j``, over indices of ``points``.

    Coincident points are collapsed onto the lowest index, which alone carries
    edges. Fully collinear input yields the path linking consecutive points
    along the line.
    """
    pts = [(float(p[0]), float(p[1])) for p in points]
    rep = {}
    for i, p in enumerate(pts):
        rep.setdefault(p, i)
    uniq = sorted(rep.items())
    if len(uniq) < 2:
        raise ValueError("delaunay_triangulate needs at least 2 distinct points")
    index = [i for _, i in uniq]
    tris, path = _triangulate_sorted([p for p, _ in uniq])
    edges = set()
    for t in tris:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            i, j = index[a], index[b]
            edges.add((i, j) if i < j else (j, i))
    for a, b in path:
        i, j = index[a], index[b]
        edges.add((i, j) if i < j else (j, i))
    return edges
