"""Bounding-box partitioning of an RWG basis into subdomains.

Each subdomain carries its "designated data": the global edge and triangle
indices it owns, plus intrinsic (subdomain-local) triangle numbers for the
T+/T- of every edge, so an impedance block can be computed from the
subdomain alone.
"""
from dataclasses import dataclass, field

import numpy as np


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise PartitionError("bounding box corners must be 3D points")
        if any(a > b for a, b in zip(lo, hi)):
            raise PartitionError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, pts, closed_hi=(False, False, False)):
        """Half-open membership test; ``closed_hi`` closes chosen upper faces."""
        pts = np.atleast_2d(pts)
        inside = np.ones(len(pts), dtype=bool)
        for ax in range(3):
            x = pts[:, ax]
            upper = x <= self.hi[ax] if closed_hi[ax] else x < self.hi[ax]
            inside &= (x >= self.lo[ax]) & upper
        return inside


@dataclass(frozen=True, eq=False)
class DesignatedData:
    """Per-subdomain index sets and cached local geometry.

    All index arrays are 0-based. ``intrinsic_plus[m]`` is the position of
    the m-th edge's T+ inside ``global_tris``.
    """
    global_edges: np.ndarray
    global_plus_tris: np.ndarray
    global_minus_tris: np.ndarray
    global_tris: np.ndarray
    intrinsic_plus: np.ndarray
    intrinsic_minus: np.ndarray
    tri_corners: np.ndarray      # (N^T_i, 3, 3)
    tri_vertex_ids: np.ndarray   # (N^T_i, 3) global vertex indices
    edge_length: np.ndarray
    plus_free: np.ndarray        # (N_i, 3) coordinates of the free vertices
    minus_free: np.ndarray
    edge_center: np.ndarray
    name: str = field(default="")

    @property
    def n_edges(self):
        return len(self.global_edges)

    @property
    def n_tris(self):
        return len(self.global_tris)

    def tri_centroids(self):
        return self.tri_corners.mean(axis=1)

    def is_empty(self):
        return self.n_edges == 0


def intrinsic_triangle_indices(global_tris, per_edge_tris):
    """Position of every value of ``per_edge_tris`` inside ``global_tris``.

    ``global_tris`` must be sorted ascending, as produced by partitioning.
    """
    global_tris = np.asarray(global_tris)
    per_edge_tris = np.asarray(per_edge_tris)
    if len(global_tris) == 0:
        if len(per_edge_tris):
            raise PartitionError("edge triangles given for an empty triangle set")
        return np.zeros(0, dtype=np.int64)
    pos = np.searchsorted(global_tris, per_edge_tris)
    pos = np.minimum(pos, len(global_tris) - 1)
    missing = global_tris[pos] != per_edge_tris
    if missing.any():
        raise PartitionError(f"triangles {per_edge_tris[missing].tolist()} are not "
                             f"in the subdomain triangle set")
    return pos.astype(np.int64)


def designated_data(basis, edges, name=""):
    """Build the designated data for an explicit list of global edges."""
    edges = np.asarray(edges, dtype=np.int64)
    plus = basis.plus_tri[edges]
    minus = basis.minus_tri[edges]
    tris = np.unique(np.concatenate([plus, minus]))
    mesh = basis.mesh
    verts = mesh.vertices
    return DesignatedData(
        global_edges=edges,
        global_plus_tris=plus,
        global_minus_tris=minus,
        global_tris=tris,
        intrinsic_plus=intrinsic_triangle_indices(tris, plus),
        intrinsic_minus=intrinsic_triangle_indices(tris, minus),
        tri_corners=verts[mesh.triangles[tris]].reshape(-1, 3, 3),
        tri_vertex_ids=mesh.triangles[tris].reshape(-1, 3),
        edge_length=basis.length[edges],
        plus_free=verts[basis.plus_free[edges]].reshape(-1, 3),
        minus_free=verts[basis.minus_free[edges]].reshape(-1, 3),
        edge_center=basis.center[edges].reshape(-1, 3),
        name=name,
    )


def _closed_upper_faces(boxes):
    top = [max(b.hi[ax] for b in boxes) for ax in range(3)]
    return [tuple(b.hi[ax] == top[ax] for ax in range(3)) for b in boxes]


def assign_edges(centers, boxes):
    """Box index for every edge center; raises on gaps or overlaps."""
    centers = np.atleast_2d(centers)
    closed = _closed_upper_faces(boxes)
    hits = np.zeros((len(boxes), len(centers)), dtype=bool)
    for i, (box, c) in enumerate(zip(boxes, closed)):
        hits[i] = box.contains(centers, c)
    count = hits.sum(axis=0)
    if (count == 0).any():
        bad = np.flatnonzero(count == 0)
        raise PartitionError(f"edge centers not covered by any box: edges {bad.tolist()}")
    if (count > 1).any():
        bad = np.flatnonzero(count > 1)
        raise PartitionError(f"edge centers inside more than one box: edges {bad.tolist()}")
    return np.argmax(hits, axis=0)


def partition_by_boxes(basis, boxes, names=None):
    boxes = list(boxes)
    if not boxes:
        raise PartitionError("at least one bounding box is required")
    owner = assign_edges(basis.center, boxes) if len(basis) else np.zeros(0, int)
    names = names or [""] * len(boxes)
    return [designated_data(basis, np.flatnonzero(owner == i), names[i])
            for i in range(len(boxes))]
