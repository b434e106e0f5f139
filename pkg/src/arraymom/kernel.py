"""EFIE impedance blocks between two subdomains.

Entries follow the usual RWG Galerkin form with time convention e^{jwt}:

    z_mn = jk eta  int int f_m . f_n G dS dS'
           - (j eta / k) int int (div f_m)(div f_n) G dS dS'

with G = exp(-jkR) / (4 pi R). Everything is reduced to four triangle-pair
moments (normalised by both areas, with rho measured from each triangle's
centroid):

    J0 = <G>,  Jr = <G rho>,  Jrp = <G rho'>,  Jrr = <G rho . rho'>

Well-separated pairs use a symmetric Gauss rule on both triangles. Pairs
that coincide or touch use singularity extraction: the odd powers R^-1,
R and R^3 of the Taylor expansion of G are integrated in closed form over
the inner triangle, the smooth remainder by Gauss quadrature, and the outer
integral by an edge-graded collapsed Gauss rule.

A block is computed from the local subdomain geometry plus the translation
``delta = d_i - d_j`` only, so two blocks with the same relative offset are
bitwise identical.
"""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .potentials import potentials
from .quadrature import SUPPORTED_ORDERS, graded_rule, subdivide, triangle_rule

ETA0 = 376.730313668
C0 = 299792458.0
MATCH_TOLERANCE = 1e-9  # relative to the geometry diameter


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class KernelParams:
    k: float
    eta: float = ETA0
    quadrature_order: int = 7
    # graded singular rule uses 4 * (depth + 1) Gauss nodes per axis
    singular_refinement_depth: int = 3

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"wavenumber must be positive, got {self.k}")
        if not self.eta > 0:
            raise ValueError(f"impedance must be positive, got {self.eta}")
        if self.quadrature_order not in SUPPORTED_ORDERS:
            raise ValueError(f"quadrature order {self.quadrature_order} not in "
                             f"{SUPPORTED_ORDERS}")
        if self.singular_refinement_depth < 0:
            raise ValueError("singular refinement depth must be >= 0")

    @classmethod
    def from_frequency(cls, frequency, **kw):
        return cls(k=2 * np.pi * frequency / C0, **kw)

    @property
    def singular_nodes(self):
        return 4 * (self.singular_refinement_depth + 1)


@dataclass(frozen=True, eq=False)
class ImpedanceBlock:
    z: np.ndarray
    row_subdomain: str
    col_subdomain: str
    row_offset: tuple
    col_offset: tuple

    @property
    def shape(self):
        return self.z.shape


def greens(r, rp, k):
    r = np.asarray(r, dtype=float)
    rp = np.asarray(rp, dtype=float)
    dist = np.linalg.norm(r - rp, axis=-1)
    if np.any(dist == 0):
        raise ValueError("Green's function is singular at r == r'")
    return np.exp(-1j * k * dist) / (4 * np.pi * dist)


def canonical_corners(corners):
    """Sort the vertices of each triangle lexicographically (x, then y, z)."""
    corners = np.asarray(corners, dtype=float)
    out = np.empty_like(corners)
    for t, tri in enumerate(corners):
        out[t] = tri[np.lexsort(tri.T[::-1])]
    return out


def _smooth_remainder(dist, k):
    """G minus its R^-1, R and R^3 Taylor terms, times 4 pi / k."""
    x = k * dist
    small = x < 1.0
    xs = np.where(small, x, 0.0)
    x2 = xs * xs
    # (cos x - 1 + x^2/2 - x^4/24) / x by its alternating series
    series = np.zeros_like(xs)
    term = -xs ** 5 / 720.0
    for m in range(3, 10):
        series = series + term
        term = -term * x2 / ((2 * m + 1) * (2 * m + 2))
    xl = np.where(small, 1.0, x)
    direct = (np.cos(xl) - 1 + xl ** 2 / 2 - xl ** 4 / 24) / xl
    cos_part = np.where(small, series, direct)
    return cos_part - 1j * np.sinc(x / np.pi)


def _pair_moments_regular(ca, cb, delta, k, order, chunk=64):
    """Normalised moments for all pairs of triangles in ``ca`` x ``cb``."""
    pts, w = triangle_rule(order)
    na, nb = len(ca), len(cb)
    cena, cenb = ca.mean(axis=1), cb.mean(axis=1)
    ra = np.einsum("qi,tic->tqc", pts, ca)
    rb = np.einsum("qi,tic->tqc", pts, cb)
    rhoa = ra - cena[:, None, :]
    rhob = rb - cenb[:, None, :]
    ww = np.outer(w, w)
    j0 = np.empty((na, nb), complex)
    jr = np.empty((na, nb, 3), complex)
    jrp = np.empty((na, nb, 3), complex)
    jrr = np.empty((na, nb), complex)
    for s in range(0, na, chunk):
        e = min(s + chunk, na)
        diff = ra[s:e, :, None, None, :] - rb[None, None, :, :, :] + delta
        dist = np.sqrt(np.einsum("apbqc,apbqc->apbq", diff, diff))
        # coincident pairs give R = 0 here; they are replaced afterwards
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.exp(-1j * k * dist) / (4 * np.pi * dist)
        g *= ww[None, :, None, :]
        t = np.einsum("apbq,bqc->apbc", g, rhob)
        j0[s:e] = g.sum(axis=(1, 3))
        jr[s:e] = np.einsum("apbq,apc->abc", g, rhoa[s:e])
        jrp[s:e] = t.sum(axis=1)
        jrr[s:e] = np.einsum("apbc,apc->ab", t, rhoa[s:e])
    return j0, jr, jrp, jrr


def _pair_moments_singular(touter, tinner, k, nodes):
    """Moments for pairs in one common frame, extraction on the inner side.

    ``touter``/``tinner`` are (P, 3, 3). rho is measured from the outer
    centroid and rho' from the inner one.
    """
    opts, ow = graded_rule(nodes)
    ipts, iw = triangle_rule(7)
    r = np.einsum("qi,pic->pqc", opts, touter)               # (P, Q, 3)
    cen_o = touter.mean(axis=1)
    cen_i = tinner.mean(axis=1)
    area_i = 0.5 * np.linalg.norm(np.cross(tinner[:, 1] - tinner[:, 0],
                                           tinner[:, 2] - tinner[:, 0]), axis=-1)

    pot = potentials(r, tinner[:, None, :, :])
    c = k * k
    i0 = (pot[-1][0] - c / 2 * pot[1][0] + c * c / 24 * pot[3][0]) / (4 * np.pi)
    iv = (pot[-1][1] - c / 2 * pot[1][1] + c * c / 24 * pot[3][1]) / (4 * np.pi)
    i0 = i0.astype(complex)
    iv = iv.astype(complex)

    # smooth remainder: 7-point rule on the four children of the inner triangle
    kids = np.stack([np.stack(subdivide(t)) for t in tinner])  # (P, 4, 3, 3)
    rq = np.einsum("qi,pkic->pkqc", ipts, kids).reshape(len(tinner), -1, 3)
    wq = np.tile(iw, 4) * (area_i[:, None] / 4)               # (P, 28)
    diff = rq[:, None, :, :] - r[:, :, None, :]               # (P, Q, 28, 3)
    dist = np.linalg.norm(diff, axis=-1)
    gr = _smooth_remainder(dist, k) * (k / (4 * np.pi)) * wq[:, None, :]
    i0 += gr.sum(axis=-1)
    iv += np.einsum("pqn,pqnc->pqc", gr, diff)

    rho = r - cen_o[:, None, :]
    # int G rho' = int G (r' - r) + (r - c_inner) int G
    irp = iv + (r - cen_i[:, None, :]) * i0[..., None]
    scale = 1.0 / area_i[:, None]
    j0 = np.einsum("q,pq->p", ow, i0 * scale)
    jr = np.einsum("q,pq,pqc->pc", ow, i0 * scale, rho)
    jrp = np.einsum("q,pqc->pc", ow, irp * scale[..., None])
    jrr = np.einsum("q,pqc,pqc->p", ow, irp * scale[..., None], rho)
    return j0, jr, jrp, jrr


def _vertex_matches(ca, cb, delta, tol):
    """Number of coincident vertices for every touching triangle pair."""
    va = (ca + delta).reshape(-1, 3)
    vb = cb.reshape(-1, 3)
    if len(va) == 0 or len(vb) == 0:
        return {}
    hits = cKDTree(va).query_ball_tree(cKDTree(vb), r=tol)
    counts = {}
    for ia, lst in enumerate(hits):
        for ib in lst:
            key = (ia // 3, ib // 3)
            counts[key] = counts.get(key, 0) + 1
    return counts


def _singular_moments(ca, cb, delta, pairs, k, nodes, chunk=32):
    """Moments for the listed (a, b) pairs, evaluated symmetrically.

    Roles are fixed by a geometric ordering of the two triangles so that
    the pair (a, b) and its mirror (b, a) get the same numbers.
    """
    ta = ca[pairs[:, 0]]
    tb = cb[pairs[:, 1]] - delta
    flat_a = ta.reshape(len(ta), -1)
    flat_b = tb.reshape(len(tb), -1)
    swap = np.array([tuple(x) > tuple(y) for x, y in zip(flat_a, flat_b)], dtype=bool)
    outer = np.where(swap[:, None, None], tb, ta)
    inner = np.where(swap[:, None, None], ta, tb)
    parts = [_pair_moments_singular(outer[s:s + chunk], inner[s:s + chunk], k, nodes)
             for s in range(0, len(outer), chunk)]
    j0, jo, ji, jrr = (np.concatenate([p[i] for p in parts]) for i in range(4))
    jr = np.where(swap[:, None], ji, jo)
    jrp = np.where(swap[:, None], jo, ji)
    size = np.abs(ta - ta.mean(axis=1, keepdims=True)).max(axis=(1, 2))
    same = np.abs(ta - tb).max(axis=(1, 2)) <= MATCH_TOLERANCE * size
    avg = 0.5 * (jr + jrp)
    jr = np.where(same[:, None], avg, jr)
    jrp = np.where(same[:, None], avg, jrp)
    return j0, jr, jrp, jrr


def classify_pairs(ca, cb, delta, tol):
    """Return (coincident pairs, touching pairs) as (n, 2) index arrays."""
    counts = _vertex_matches(ca, cb, delta, tol)
    coincident = sorted(p for p, c in counts.items() if c >= 3)
    touching = sorted(p for p, c in counts.items() if c < 3)
    return (np.array(coincident, dtype=np.int64).reshape(-1, 2),
            np.array(touching, dtype=np.int64).reshape(-1, 2))


def _check_overlaps(ca, cb, delta, tol, coincident):
    """Centroids that coincide without all three vertices matching."""
    cena = ca.mean(axis=1) + delta
    cenb = cb.mean(axis=1)
    if len(cena) == 0 or len(cenb) == 0:
        return
    hits = cKDTree(cena).query_ball_tree(cKDTree(cenb), r=tol)
    ok = {tuple(p) for p in coincident.tolist()}
    for a, lst in enumerate(hits):
        for b in lst:
            if (a, b) not in ok:
                raise GeometryError(f"triangles {a} and {b} overlap but their "
                                    f"vertices do not match")


def pair_moments(ca, cb, delta, params, shared_pairs=None, tol=None):
    """All normalised moments for the triangle sets ``ca`` and ``cb``.

    ``shared_pairs`` lists the coincident (a, b) pairs the caller expects.
    When given, it must agree with the geometric coincidence test.
    """
    ca = canonical_corners(ca)
    cb = canonical_corners(cb)
    delta = np.asarray(delta, dtype=float)
    if tol is None:
        pts = np.concatenate([ca.reshape(-1, 3) + delta, cb.reshape(-1, 3)])
        tol = MATCH_TOLERANCE * max(np.linalg.norm(np.ptp(pts, axis=0)), 1e-300)
    j0, jr, jrp, jrr = _pair_moments_regular(ca, cb, delta, params.k,
                                             params.quadrature_order)
    coincident, touching = classify_pairs(ca, cb, delta, tol)
    if shared_pairs is not None:
        declared = {tuple(int(v) for v in p) for p in np.asarray(shared_pairs).reshape(-1, 2)}
        found = {tuple(p) for p in coincident.tolist()}
        if declared - found:
            bad = sorted(declared - found)[:5]
            raise GeometryError(f"declared shared triangle pairs {bad} are not "
                                f"geometrically coincident")
        if found - declared:
            bad = sorted(found - declared)[:5]
            raise GeometryError(f"coincident triangle pairs {bad} were not "
                                f"declared as shared")
    _check_overlaps(ca, cb, delta, tol, coincident)
    special = np.concatenate([coincident, touching])
    if len(special):
        s0, sr, srp, srr = _singular_moments(ca, cb, delta, special, params.k,
                                             params.singular_nodes)
        a, b = special[:, 0], special[:, 1]
        j0[a, b], jr[a, b], jrp[a, b], jrr[a, b] = s0, sr, srp, srr
    return j0, jr, jrp, jrr, ca, cb


def assemble_entries(mom, ca, cb, edges_a, edges_b, params):
    """Combine triangle-pair moments into RWG impedance entries.

    ``edges_x`` is a tuple (plus_tri, minus_tri, plus_free, minus_free,
    length) with tri indices into ``cx`` and free-vertex coordinates.
    """
    j0, jr, jrp, jrr = mom
    k, eta = params.k, params.eta
    cena, cenb = ca.mean(axis=1), cb.mean(axis=1)
    pa, ma, pfa, mfa, la = edges_a
    pb, mb, pfb, mfb, lb = edges_b
    z = np.zeros((len(la), len(lb)), complex)
    for sa, ta, fa in ((1.0, pa, pfa), (-1.0, ma, mfa)):
        u = fa - cena[ta]
        for sb, tb, fb in ((1.0, pb, pfb), (-1.0, mb, mfb)):
            w = fb - cenb[tb]
            g0 = j0[np.ix_(ta, tb)]
            vec = (jrr[np.ix_(ta, tb)]
                   - np.einsum("abc,bc->ab", jr[np.ix_(ta, tb)], w)
                   - np.einsum("abc,ac->ab", jrp[np.ix_(ta, tb)], u)
                   + (u @ w.T) * g0)
            z += sa * sb * (1j * k * eta / 4 * vec - 1j * eta / k * g0)
    return z * np.outer(la, lb)


def _edge_tuple(d):
    return (d.intrinsic_plus, d.intrinsic_minus, d.plus_free, d.minus_free,
            d.edge_length)


def self_pairs(d):
    """Shared pairs of a subdomain with itself: every triangle with itself."""
    idx = np.arange(d.n_tris)
    return np.column_stack([idx, idx])


def compute_block(di, dj, offsets, shared_pairs, params):
    """Impedance block between subdomain ``di`` at ``d_i`` and ``dj`` at ``d_j``.

    ``shared_pairs`` holds (intrinsic tri of di, intrinsic tri of dj) pairs
    that coincide after offsetting.
    """
    d_i = np.asarray(offsets[0], dtype=float)
    d_j = np.asarray(offsets[1], dtype=float)
    delta = d_i - d_j
    if di.n_edges == 0 or dj.n_edges == 0:
        z = np.zeros((di.n_edges, dj.n_edges), complex)
    else:
        # free vertices live in the same local frame as the corners
        ea, eb = _edge_tuple(di), _edge_tuple(dj)
        *mom, ca, cb = pair_moments(di.tri_corners, dj.tri_corners, delta,
                                    params, shared_pairs)
        z = assemble_entries(mom, ca, cb, ea, eb, params)
    if not np.all(np.isfinite(z)):
        raise GeometryError("non-finite impedance entries")
    return ImpedanceBlock(z, di.name, dj.name, tuple(d_i), tuple(d_j))


def singular_self_term(tri, free_m, free_n, params, length_m=1.0, length_n=1.0,
                       sign_m=1.0, sign_n=1.0):
    """Contribution of one triangle to z_mn when both basis functions live on it.

    ``free_m``/``free_n`` are the vertices opposite the two basis edges.
    """
    tri = np.asarray(tri, dtype=float).reshape(1, 3, 3)
    area = 0.5 * np.linalg.norm(np.cross(tri[0, 1] - tri[0, 0], tri[0, 2] - tri[0, 0]))
    if area <= 1e-12 * max(np.ptp(tri[0], axis=0).max(), 1e-300) ** 2:
        raise GeometryError("degenerate triangle")
    ct = canonical_corners(tri)
    j0, jr, jrp, jrr = _singular_moments(ct, ct, np.zeros(3), np.array([[0, 0]]),
                                         params.k, params.singular_nodes)
    cen = ct[0].mean(axis=0)
    u = np.asarray(free_m, dtype=float) - cen
    w = np.asarray(free_n, dtype=float) - cen
    k, eta = params.k, params.eta
    vec = jrr[0] - jr[0] @ w - jrp[0] @ u + (u @ w) * j0[0]
    z = length_m * length_n * (1j * k * eta / 4 * vec - 1j * eta / k * j0[0])
    return complex(z * sign_m * sign_n)
