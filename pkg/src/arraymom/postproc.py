"""Far fields, port networks and surface currents from solved coefficients.

Far-field convention: with the time factor exp(jwt) and the Green's function
exp(-jkR)/(4 pi R), the radiated field behaves as exp(-jkr)/r times

    F(r) = -jk eta * sum_p exp(jk r.d_p) sum_n I_{n,p} Fhat_n(r),
    Fhat_n(r) = e_tau . int f_n(r') exp(jk r.r') dS'

where d_p is the offset of part p. Polarisation follows Ludwig's third
definition with the reference axis given per call (x or y).
"""
import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .quadrature import triangle_rule

POLARIZATIONS = ("co", "cx")


# ------------------------------------------------------------- directions

def spherical_angles(directions):
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.arctan2(d[:, 1], d[:, 0])
    return theta, phi


def unit_vectors(theta, phi):
    """(r, theta_hat, phi_hat) for arrays of angles."""
    st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
    r = np.stack([st * cp, st * sp, ct], axis=-1)
    th = np.stack([ct * cp, ct * sp, -st], axis=-1)
    ph = np.stack([-sp, cp, np.zeros_like(phi)], axis=-1)
    return r, th, ph


def ludwig3(theta, phi, axis="x"):
    """Co- and cross-polar unit vectors; co-pol is ``axis`` at broadside."""
    _, th, ph = unit_vectors(theta, phi)
    c, s = np.cos(phi)[:, None], np.sin(phi)[:, None]
    if axis == "x":
        return c * th - s * ph, s * th + c * ph
    if axis == "y":
        return s * th + c * ph, c * th - s * ph
    raise ValueError(f"polarisation axis must be 'x' or 'y', got {axis!r}")


@dataclass(frozen=True)
class DirectionGrid:
    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray     # solid-angle weights, sum 4 pi (zeros off-sphere)
    shape: tuple

    @property
    def directions(self):
        return unit_vectors(self.theta, self.phi)[0]


def sphere_grid(n_theta=91, n_phi=180):
    """Midpoint grid in theta, uniform in phi, weights sin(theta) dtheta dphi.

    The weights are scaled by a common factor so that they sum to exactly
    4 pi; the factor is 1 + O(dtheta^2).
    """
    dt, dp = np.pi / n_theta, 2 * np.pi / n_phi
    t = (np.arange(n_theta) + 0.5) * dt
    p = np.arange(n_phi) * dp
    tt, pp = np.meshgrid(t, p, indexing="ij")
    w = np.sin(tt) * dt * dp
    w *= 4 * np.pi / w.sum()
    return DirectionGrid(tt.ravel(), pp.ravel(), w.ravel(), (n_theta, n_phi))


def cut_grid(plane="u", n=181):
    """Principal-plane cut from -90 to 90 degrees (``u``: xz, ``v``: yz plane)."""
    ang = np.linspace(-np.pi / 2, np.pi / 2, n)
    base = 0.0 if plane == "u" else np.pi / 2
    theta = np.abs(ang)
    phi = np.where(ang < 0, base + np.pi, base)
    return DirectionGrid(theta, phi, np.zeros(n), (n,)), np.degrees(ang)


def uv_grid(n=101):
    """(u, v) grid over the upper hemisphere; points outside u^2+v^2<=1 are dropped."""
    u = np.linspace(-1.0, 1.0, n)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    inside = uu ** 2 + vv ** 2 <= 1.0
    uu, vv = uu[inside], vv[inside]
    theta = np.arcsin(np.clip(np.hypot(uu, vv), 0.0, 1.0))
    phi = np.arctan2(vv, uu)
    return DirectionGrid(theta, phi, np.zeros(len(uu)), (len(uu),)), uu, vv


# -------------------------------------------------------------- far field

@dataclass(frozen=True)
class FarfieldTensor:
    directions: np.ndarray   # (M, 3)
    e_co: np.ndarray         # (M, 3)
    e_cx: np.ndarray         # (M, 3)
    tensor: np.ndarray       # (M, 2, N)


def _rwg_radiation_vectors(data, directions, k, order):
    """int f_n exp(jk r.r') dS' for every basis function, shape (M, N, 3)."""
    pts, w = triangle_rule(order)
    corners = data.tri_corners
    qp = np.einsum("qv,tvc->tqc", pts, corners)                 # (T, Q, 3)
    phase = np.exp(1j * k * np.einsum("mc,tqc->mtq", directions, qp))
    s0 = phase @ w                                              # (M, T)
    s1 = np.einsum("mtq,q,tqc->mtc", phase, w, qp)              # (M, T, 3)
    half = 0.5 * data.edge_length[None, :, None]
    plus = (s1[:, data.intrinsic_plus]
            - data.plus_free[None] * s0[:, data.intrinsic_plus, None])
    minus = (data.minus_free[None] * s0[:, data.intrinsic_minus, None]
             - s1[:, data.intrinsic_minus])
    return half * (plus + minus)


def component_farfield_tensor(data, theta, phi, k, axis="x", order=7, chunk=512):
    """Projected radiation integrals of one component's basis functions."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    r, _, _ = unit_vectors(theta, phi)
    e_co, e_cx = ludwig3(theta, phi, axis)
    out = np.zeros((len(r), 2, data.n_edges), dtype=complex)
    if data.n_edges:
        for s in range(0, len(r), chunk):
            sl = slice(s, s + chunk)
            vec = _rwg_radiation_vectors(data, r[sl], k, order)
            out[sl, 0] = np.einsum("mc,mnc->mn", e_co[sl], vec)
            out[sl, 1] = np.einsum("mc,mnc->mn", e_cx[sl], vec)
    return FarfieldTensor(r, e_co, e_cx, out)


def component_tensors(model, theta, phi, k, axis="x", order=7):
    """One tensor per component present in ``model``."""
    comps = sorted({model.comp(p) for p in range(model.n_parts)})
    return {c: component_farfield_tensor(model.components.components[c], theta,
                                         phi, k, axis, order) for c in comps}


def array_farfield(tensors, currents, model, k, eta, excitation=None, offsets=None):
    """Far field of the whole array for each column of ``currents``.

    With ``excitation`` the columns are first combined, ``I @ a``.
    Returns shape (M, 2) for a single column, else (M, 2, columns).
    """
    cur = np.asarray(currents, dtype=complex)
    single = cur.ndim == 1
    if single:
        cur = cur[:, None]
    if excitation is not None:
        cur = cur @ np.asarray(excitation, dtype=complex).reshape(-1, 1)
        single = True
    if cur.shape[0] != model.n_unknowns:
        raise ValueError(f"currents have {cur.shape[0]} rows, model has "
                         f"{model.n_unknowns} unknowns")
    offsets = model.offsets if offsets is None else np.asarray(offsets, dtype=float)
    some = next(iter(tensors.values()))
    out = np.zeros(some.tensor.shape[:2] + (cur.shape[1],), dtype=complex)
    for p in range(model.n_parts):
        sl = model.part_slice(p)
        if sl.stop == sl.start:
            continue
        t = tensors[model.comp(p)]
        shift = np.exp(1j * k * t.directions @ offsets[p])
        out += shift[:, None, None] * (t.tensor @ cur[sl])
    out *= -1j * k * eta
    return out[..., 0] if single else out


def farfield_of_basis(data, coeffs, theta, phi, k, eta, axis="x", order=7,
                      offset=(0.0, 0.0, 0.0)):
    """Far field of one subdomain with its own coefficients (no factoring)."""
    t = component_farfield_tensor(data, theta, phi, k, axis, order)
    shift = np.exp(1j * k * t.directions @ np.asarray(offset, dtype=float))
    field = t.tensor @ np.asarray(coeffs, dtype=complex)
    return -1j * k * eta * shift.reshape((-1,) + (1,) * (field.ndim - 1)) * field


def embedded_element_patterns(model, rep, feed_edge, ports, theta, phi, k, eta,
                              axis="x", solver="gmres", order=7, **solve_kw):
    """Pattern of each port fed alone, the other ports short-circuited.

    Returns (patterns of shape (M, 2, ports), SolveResult).
    """
    from .linsolve import ExcitationSet, solve
    exc = ExcitationSet.from_ports(model, feed_edge, ports)
    res = solve(rep, exc, solver, **solve_kw)
    tensors = component_tensors(model, theta, phi, k, axis, order)
    return array_farfield(tensors, res.currents, model, k, eta), res


# ------------------------------------------------------------ directivity

def radiated_power(field, weights):
    """Integral of |F|^2 over the sphere (both polarisations)."""
    f = np.asarray(field)
    mag = np.abs(f) ** 2
    if mag.ndim > 1:
        mag = mag.reshape(len(weights), -1).sum(axis=1)
    power = float(np.dot(weights, mag))
    if power <= 0:
        raise ValueError("zero radiated power")
    return power


def directivity(field, power):
    """4 pi |F|^2 / P, per polarisation when ``field`` has a polarisation axis."""
    return 4 * np.pi * np.abs(np.asarray(field)) ** 2 / power


def to_db(x, floor=1e-30):
    return 10 * np.log10(np.maximum(x, floor))


def normalized_cut_db(d):
    d = np.asarray(d, dtype=float)
    return to_db(d) - to_db(d.max())


def array_factor_directivity(positions, k):
    """Broadside directivity of isotropic in-phase sources at ``positions``."""
    pos = np.asarray(positions, dtype=float)
    dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    return len(pos) ** 2 / np.sinc(k * dist / np.pi).sum()


# --------------------------------------------------------------- networks

@dataclass(frozen=True)
class NetworkData:
    port_currents: np.ndarray   # I-hat (p x p)
    scaling: np.ndarray         # diagonal of L
    y: np.ndarray
    z: np.ndarray
    z0: np.ndarray
    s: np.ndarray


def scattering_from_impedance(z, z0):
    """Power-wave scattering matrix for real reference impedances ``z0``."""
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), (len(z),))
    if np.any(z0 <= 0):
        raise ValueError("reference impedances must be positive")
    f = np.diag(1 / (2 * np.sqrt(z0)))
    g = np.diag(z0)
    return f @ (z - g) @ np.linalg.solve(z + g, np.linalg.inv(f))


def port_network(currents, feed_rows, edge_lengths, z0=50.0):
    """Port network matrices (admittance with its inverse) plus scattering.

    ``currents[:, j]`` solves for a unit right-hand side on feed edge j.
    With the edge-length normalised basis such a source is a gap voltage of
    1/l and the port current is l times the coefficient, hence Y = L I L
    with L = diag(l).
    """
    cur = np.asarray(currents, dtype=complex)
    rows = np.asarray(feed_rows, dtype=np.int64)
    ihat = cur[rows, :]
    if ihat.shape[0] != ihat.shape[1]:
        raise ValueError("need one current column per port")
    lengths = np.broadcast_to(np.asarray(edge_lengths, dtype=float), (len(rows),))
    y = lengths[:, None] * ihat * lengths[None, :]
    if np.linalg.cond(y) > 1e14:
        raise ValueError("port admittance matrix is singular")
    z = np.linalg.inv(y)
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), (len(rows),)).copy()
    return NetworkData(ihat, lengths.copy(), y, z, z0, scattering_from_impedance(z, z0))


def tarc(s, a):
    """Total active reflection coefficient sqrt(|S a|^2 / |a|^2)."""
    a = np.asarray(a, dtype=complex)
    na = np.vdot(a, a).real
    if na <= 0:
        raise ValueError("zero excitation")
    b = np.asarray(s, dtype=complex) @ a
    return float(np.sqrt(np.vdot(b, b).real / na))


# ---------------------------------------------------------- surface current

@dataclass(frozen=True)
class SurfaceCurrentField:
    centroids: np.ndarray    # (T, 3), one row per physical triangle
    vectors: np.ndarray      # (T, 3) complex current density at the centroid
    contributions: np.ndarray  # number of parts that touched each triangle

    @property
    def magnitude(self):
        return np.linalg.norm(self.vectors, axis=1)


def triangle_currents(data, coeffs, offset=(0.0, 0.0, 0.0)):
    """Current density at the centroid of each triangle of one subdomain."""
    coeffs = np.asarray(coeffs, dtype=complex)
    cen = data.tri_corners.mean(axis=1)
    v = data.tri_corners
    area = 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
    j = np.zeros((data.n_tris, 3), dtype=complex)
    scale = coeffs * data.edge_length
    tp, tm = data.intrinsic_plus, data.intrinsic_minus
    plus = (scale / (2 * area[tp]))[:, None] * (cen[tp] - data.plus_free)
    minus = (scale / (2 * area[tm]))[:, None] * (data.minus_free - cen[tm])
    np.add.at(j, tp, plus)
    np.add.at(j, tm, minus)
    return cen + np.asarray(offset, dtype=float), j


def part_currents(currents, model):
    """Unmerged per-part triangle currents, a list of (part, centroids, J)."""
    cur = np.asarray(currents, dtype=complex).reshape(-1)
    out = []
    for p in range(model.n_parts):
        d = model.data(p)
        if d.n_tris == 0:
            continue
        cen, j = triangle_currents(d, cur[model.part_slice(p)], model.offsets[p])
        out.append((p, cen, j))
    return out


def merge_by_position(centroids, vectors, tol):
    """Sum vectors whose centroids coincide within ``tol``; first-seen order."""
    tree = cKDTree(centroids)
    rep = np.full(len(centroids), -1, dtype=np.int64)
    for i in range(len(centroids)):
        if rep[i] >= 0:
            continue
        near = tree.query_ball_point(centroids[i], tol)
        rep[near] = i
    keys, inverse = np.unique(rep, return_inverse=True)
    merged = np.zeros((len(keys), 3), dtype=complex)
    np.add.at(merged, inverse, vectors)
    counts = np.bincount(inverse, minlength=len(keys))
    return centroids[keys], merged, counts


def export_surface_current(currents, model):
    """Merged current density: shared triangles are summed as vectors."""
    pieces = part_currents(currents, model)
    cen = np.concatenate([c for _, c, _ in pieces])
    vec = np.concatenate([j for _, _, j in pieces])
    cen, vec, counts = merge_by_position(cen, vec, model.components.tolerance)
    return SurfaceCurrentField(cen, vec, counts)


# ------------------------------------------------------------------ CSV

def _fmt(x):
    return f"{float(x):.12e}"


def write_cut_csv(path, angles_deg, d_co_db, d_cx_db):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["angle_deg", "D_co_dB", "D_cx_dB"])
        for a, c, x in zip(angles_deg, d_co_db, d_cx_db):
            w.writerow([_fmt(a), _fmt(c), _fmt(x)])


def write_sparams_csv(path, s, frequency):
    s = np.atleast_2d(s)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frequency_hz", "port_i", "port_j", "re", "im"])
        for i in range(s.shape[0]):
            for j in range(s.shape[1]):
                w.writerow([_fmt(frequency), i + 1, j + 1, _fmt(s[i, j].real),
                            _fmt(s[i, j].imag)])


def write_tarc_csv(path, label, xs, values_db):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([label, "tarc_dB"])
        for x, v in zip(xs, values_db):
            w.writerow([_fmt(x), _fmt(v)])


def write_current_csv(path, field):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z", "abs_J"])
        for c, m in zip(field.centroids, field.magnitude):
            w.writerow([_fmt(c[0]), _fmt(c[1]), _fmt(c[2]), _fmt(m)])
