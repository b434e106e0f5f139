"""Quadrature rules on triangles.

Rules are stored in barycentric form: ``points`` has shape (q, 3) and the
weights sum to one, so ``area * sum(w * f(points))`` integrates ``f``.
"""
from functools import lru_cache

import numpy as np

SUPPORTED_ORDERS = (1, 3, 4, 6, 7)


def _perm3(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (b, c, a), (c, a, b)]


@lru_cache(maxsize=None)
def triangle_rule(order):
    """Symmetric Gauss rule with ``order`` points (Strang-Fix / Dunavant)."""
    if order == 1:
        pts = [(1 / 3, 1 / 3, 1 / 3)]
        w = [1.0]
    elif order == 3:
        pts = _perm3(2 / 3, 1 / 6)
        w = [1 / 3] * 3
    elif order == 4:
        pts = [(1 / 3, 1 / 3, 1 / 3)] + _perm3(0.6, 0.2)
        w = [-27 / 48] + [25 / 48] * 3
    elif order == 6:
        a1, w1 = 0.445948490915965, 0.223381589678011
        a2, w2 = 0.091576213509771, 0.109951743655322
        pts = _perm3(1 - 2 * a1, a1) + _perm3(1 - 2 * a2, a2)
        w = [w1] * 3 + [w2] * 3
    elif order == 7:
        a1, w1 = 0.470142064105115, 0.132394152788506
        a2, w2 = 0.101286507323456, 0.125939180544827
        pts = ([(1 / 3, 1 / 3, 1 / 3)] + _perm3(1 - 2 * a1, a1)
               + _perm3(1 - 2 * a2, a2))
        w = [0.225] + [w1] * 3 + [w2] * 3
    else:
        raise ValueError(f"unsupported quadrature order {order}; "
                         f"choose one of {SUPPORTED_ORDERS}")
    pts = np.array(pts, dtype=float)
    w = np.array(w, dtype=float)
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def _graded_nodes(n, grading):
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (x + 1.0)
    w = 0.5 * w
    if grading <= 1:
        return t, w
    # sigmoidal map: clusters nodes at both ends, derivative vanishes there
    p = float(grading)
    a, b = t ** p, (1.0 - t) ** p
    s = a / (a + b)
    ds = p * (t * (1 - t)) ** (p - 1) / (a + b) ** 2
    return s, w * ds


@lru_cache(maxsize=None)
def graded_rule(n, grading=2):
    """Collapsed Gauss product rule with sigmoidal grading toward all edges.

    Meant for integrands that are smooth inside the triangle but have weak
    (logarithmic-derivative) singularities along its edges.
    """
    u, wu = _graded_nodes(n, grading)
    v, wv = _graded_nodes(n, grading)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ww = np.outer(wu, wv)
    # Duffy map square -> triangle: l1 = u, l2 = (1-u) v
    l1 = uu.ravel()
    l2 = ((1.0 - uu) * vv).ravel()
    l3 = 1.0 - l1 - l2
    w = (ww * (1.0 - uu)).ravel() * 2.0
    pts = np.column_stack([l1, l2, l3])
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def subdivide(tri):
    """Split a (3, 3) vertex array into its four midpoint children."""
    a, b, c = tri
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    return [np.array(t) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c),
                                  (bc, ca, ab))]
