"""Closed-form potential integrals over a flat triangle.

For an observation point ``r`` and a source triangle ``T`` this module
evaluates, for odd powers n in {-1, 1, 3},

    I_n(r) = int_T |r - r'|^n dS'
    V_n(r) = int_T (r' - r) |r - r'|^n dS'

with the edge-based recursions for polynomial sources on planar triangles
(the n = -1 case is the classic static single-layer potential). These are
the pieces subtracted from the Green's function near its singularity.
"""
import numpy as np

POWERS = (-1, 1, 3)


def _edge_terms(r, tri):
    v0, v1, v2 = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    normal = np.cross(v1 - v0, v2 - v0)
    normal = normal / np.linalg.norm(normal, axis=-1, keepdims=True)
    scale = np.maximum.reduce([np.linalg.norm(v1 - v0, axis=-1),
                               np.linalg.norm(v2 - v1, axis=-1),
                               np.linalg.norm(v0 - v2, axis=-1)])
    d = np.sum((r - v0) * normal, axis=-1)
    rho = r - d[..., None] * normal
    tiny = 1e-13 * scale
    edges = []
    for a, b in ((v0, v1), (v1, v2), (v2, v0)):
        edge = b - a
        lhat = edge / np.linalg.norm(edge, axis=-1, keepdims=True)
        uhat = np.cross(lhat, normal)  # outward in-plane normal
        s_minus = np.sum((a - rho) * lhat, axis=-1)
        s_plus = np.sum((b - rho) * lhat, axis=-1)
        p0 = np.sum((a - rho) * uhat, axis=-1)
        r0sq = p0 * p0 + d * d
        r_plus = np.linalg.norm(r - b, axis=-1)
        r_minus = np.linalg.norm(r - a, axis=-1)
        # ln((R+ + s+)/(R- + s-)), each factor in its cancellation-free form;
        # on the edge line the log only ever appears multiplied by zero
        degenerate = r0sq <= tiny * tiny
        r0sq_safe = np.where(degenerate, 1.0, r0sq)
        up = np.where(s_plus >= 0, r_plus + s_plus,
                      r0sq_safe / np.maximum(r_plus - s_plus, tiny))
        um = np.where(s_minus >= 0, r_minus + s_minus,
                      r0sq_safe / np.maximum(r_minus - s_minus, tiny))
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(degenerate, 0.0,
                         np.log(np.where(degenerate, 1.0, up / um)))
        edges.append((uhat, s_minus, s_plus, p0, r0sq, r_minus, r_plus, f))
    return normal, d, edges


def potentials(r, tri):
    """Return ``{n: (I_n, V_n)}`` for n in POWERS.

    ``r`` has shape (..., 3); ``tri`` is (3, 3) or (..., 3, 3) and must
    broadcast against ``r``.
    """
    r = np.asarray(r, dtype=float)
    tri = np.asarray(tri, dtype=float)
    normal, d, edges = _edge_terms(r, tri)
    ad = np.abs(d)
    shape = np.broadcast_shapes(r.shape[:-1], tri.shape[:-2])
    scal = {n: np.zeros(shape) for n in POWERS}
    vec = {n: np.zeros(shape + (3,)) for n in POWERS}

    i_minus1 = np.zeros(shape)
    k_edge = []
    for uhat, sm, sp, p0, r0sq, rm, rp, f in edges:
        at = (np.arctan2(p0 * sp, r0sq + ad * rp)
              - np.arctan2(p0 * sm, r0sq + ad * rm))
        i_minus1 = i_minus1 + p0 * f - ad * at
        ks = {-1: f}
        for n in (1, 3, 5):
            ks[n] = (sp * rp ** n - sm * rm ** n + n * r0sq * ks[n - 2]) / (n + 1)
        k_edge.append((uhat, p0, ks))

    scal[-1] = i_minus1
    for n in (1, 3):
        acc = n * d * d * scal[n - 2]
        for _, p0, ks in k_edge:
            acc = acc + p0 * ks[n]
        scal[n] = acc / (n + 2)
    for n in POWERS:
        inplane = np.zeros(shape + (3,))
        for uhat, _, ks in k_edge:
            inplane = inplane + uhat * ks[n + 2][..., None]
        vec[n] = inplane / (n + 2) - (d * scal[n])[..., None] * normal
    return {n: (scal[n], vec[n]) for n in POWERS}


def static_potentials(r, tri):
    """``int_T 1/R dS'`` and ``int_T (r' - r)/R dS'``."""
    return potentials(r, tri)[-1]
