"""Brute-force reference path: the directly meshed array as one subdomain.

Used to validate the nine-component decomposition. The dense matrix is
computed with the same kernel and quadrature, so the two paths should agree
to rounding error.
"""
import numpy as np
from scipy.spatial import cKDTree

from .kernel import MATCH_TOLERANCE, compute_block, self_pairs
from .mesh import TriangleMesh
from .partition import designated_data


def whole_mesh(basis, name="direct mesh"):
    return designated_data(basis, np.arange(len(basis)), name)


def direct_impedance(basis, params):
    """Dense impedance matrix over all edges of ``basis``."""
    d = whole_mesh(basis)
    return compute_block(d, d, (np.zeros(3), np.zeros(3)), self_pairs(d), params).z


def translation_index(model, basis):
    """Map part-ordered unknowns to the edges of a directly meshed array.

    Returns ``(index, sign)`` such that
    ``Z_part[m, n] == sign[m] * sign[n] * Z_direct[index[m], index[n]]``.
    The sign accounts for the two meshes choosing different T+ triangles.
    """
    mesh = basis.mesh
    tol = MATCH_TOLERANCE * max(mesh.diameter(), 1e-300)
    tree = cKDTree(basis.center)
    cen = mesh.centroids()
    index = np.empty(model.n_unknowns, dtype=np.int64)
    sign = np.empty(model.n_unknowns)
    for p in range(model.n_parts):
        d = model.data(p)
        if d.n_edges == 0:
            continue
        sl = model.part_slice(p)
        dist, idx = tree.query(d.edge_center + model.offsets[p])
        if np.any(dist > tol):
            raise ValueError(f"part {p}: edges not found in the direct mesh")
        plus = d.tri_corners[d.intrinsic_plus].mean(axis=1) + model.offsets[p]
        same = np.abs(cen[basis.plus_tri[idx]] - plus).max(axis=1) <= tol
        other = np.abs(cen[basis.minus_tri[idx]] - plus).max(axis=1) <= tol
        if not np.all(same | other):
            raise ValueError(f"part {p}: supporting triangles do not match")
        index[sl] = idx
        sign[sl] = np.where(same, 1.0, -1.0)
    if len(np.unique(index)) != len(index) or len(index) != len(basis):
        raise ValueError("part unknowns do not map one-to-one onto the direct mesh")
    return index, sign


def glue_array_mesh(model):
    """One mesh for the whole array, stitched from the translated parts.

    Coincident vertices and triangles (shared triangles appear in two
    parts) are merged by position. The result is an independent brute-force
    geometry for checking the component decomposition.
    """
    corners = [model.data(p).tri_corners + model.offsets[p]
               for p in range(model.n_parts) if model.data(p).n_tris]
    corners = np.concatenate(corners)
    tol = model.components.tolerance
    pts = corners.reshape(-1, 3)
    tree = cKDTree(pts)
    rep = np.full(len(pts), -1, dtype=np.int64)
    for i in range(len(pts)):
        if rep[i] < 0:
            rep[tree.query_ball_point(pts[i], tol)] = i
    keys, inverse = np.unique(rep, return_inverse=True)
    tris = inverse.reshape(-1, 3)
    canon = np.sort(tris, axis=1)
    _, first = np.unique(canon, axis=0, return_index=True)
    first = np.sort(first)
    return TriangleMesh(pts[keys], tris[first])
