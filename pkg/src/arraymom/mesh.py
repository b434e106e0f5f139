"""Triangle surface meshes and RWG basis enumeration.

Indices are 0-based in memory. The text file format stores 1-based vertex
indices, as most mesh tools do, and the loader converts on the way in.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

AREA_EPSILON = 1e-12


class MeshError(ValueError):
    """Raised for malformed mesh files or invalid mesh topology."""


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray   # (V, 3) float, meters
    triangles: np.ndarray  # (T, 3) int, 0-based

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must have shape (T, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            bad = np.flatnonzero((t < 0).any(1) | (t >= len(v)).any(1))
            raise MeshError(f"triangles {bad.tolist()} reference missing vertices")
        dup = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        if dup.any():
            raise MeshError(f"triangles {np.flatnonzero(dup).tolist()} repeat a vertex")
        areas = triangle_areas(v[t])
        small = areas <= AREA_EPSILON
        if small.any():
            raise MeshError(f"triangles {np.flatnonzero(small).tolist()} have "
                            f"area <= {AREA_EPSILON} m^2")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def corners(self):
        """Vertex coordinates per triangle, shape (T, 3, 3)."""
        return self.vertices[self.triangles]

    def centroids(self):
        return self.corners().mean(axis=1)

    def diameter(self):
        if len(self.vertices) == 0:
            return 0.0
        return float(np.linalg.norm(np.ptp(self.vertices, axis=0)))


@dataclass(frozen=True, eq=False)
class RwgBasis:
    """Interior-edge basis functions of a mesh.

    ``plus_free``/``minus_free`` hold the vertex of T+/T- opposite the edge.
    """
    mesh: TriangleMesh
    vertex_pairs: np.ndarray  # (N, 2), sorted per row
    plus_tri: np.ndarray
    minus_tri: np.ndarray
    plus_free: np.ndarray
    minus_free: np.ndarray
    length: np.ndarray
    center: np.ndarray

    def __len__(self):
        return len(self.plus_tri)


def triangle_areas(corners):
    corners = np.asarray(corners, dtype=float)
    cr = np.cross(corners[..., 1, :] - corners[..., 0, :],
                  corners[..., 2, :] - corners[..., 0, :])
    return 0.5 * np.linalg.norm(cr, axis=-1)


def load_mesh(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MeshError(f"mesh file not found: {path}") from None
    return parse_mesh(text, source=str(path))


def parse_mesh(text, source="<string>"):
    lines = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].strip()
        if body:
            lines.append((lineno, body))
    it = iter(lines)

    def take(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshError(f"{source}: unexpected end of file, expected {what}") from None

    lineno, head = take("header")
    if head.split() != ["mesh", "v1"]:
        raise MeshError(f"{source}:{lineno}: expected header 'mesh v1', got {head!r}")

    def section(name, ncols, conv):
        lineno, line = take(f"'{name} <count>'")
        parts = line.split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshError(f"{source}:{lineno}: expected '{name} <count>', got {line!r}")
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshError(f"{source}:{lineno}: bad count {parts[1]!r}") from None
        rows = []
        for _ in range(count):
            lineno, line = take(f"{name} row")
            parts = line.split()
            if len(parts) != ncols:
                raise MeshError(f"{source}:{lineno}: expected {ncols} values, got {line!r}")
            try:
                rows.append([conv(p) for p in parts])
            except ValueError:
                raise MeshError(f"{source}:{lineno}: cannot parse {line!r}") from None
        return rows

    verts = section("vertices", 3, float)
    tris = section("triangles", 3, int)
    extra = next(it, None)
    if extra is not None:
        raise MeshError(f"{source}:{extra[0]}: trailing content {extra[1]!r}")
    tri_arr = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if tri_arr.size and tri_arr.min() < 1:
        raise MeshError(f"{source}: vertex indices are 1-based; found {tri_arr.min()}")
    return TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3), tri_arr - 1)


def format_mesh(mesh):
    out = ["mesh v1", f"vertices {len(mesh.vertices)}"]
    out += [" ".join(repr(float(c)) for c in p) for p in mesh.vertices]
    out.append(f"triangles {mesh.n_triangles}")
    out += [" ".join(str(int(i) + 1) for i in t) for t in mesh.triangles]
    return "\n".join(out) + "\n"


def save_mesh(mesh, path):
    Path(path).write_text(format_mesh(mesh), encoding="utf-8")


def build_rwg_basis(mesh):
    """Enumerate interior edges, ordered by (min vertex, max vertex).

    The triangle with the lower index becomes T+.
    """
    tris = mesh.triangles
    nt = len(tris)
    # every (edge, triangle, opposite vertex) incidence
    local = np.array([(0, 1, 2), (1, 2, 0), (2, 0, 1)])
    a = tris[:, local[:, 0]].ravel()
    b = tris[:, local[:, 1]].ravel()
    opp = tris[:, local[:, 2]].ravel()
    owner = np.repeat(np.arange(nt), 3)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    order = np.lexsort((owner, hi, lo))
    lo, hi, opp, owner = lo[order], hi[order], opp[order], owner[order]

    if len(lo):
        new = np.ones(len(lo), dtype=bool)
        new[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
        starts = np.flatnonzero(new)
        counts = np.diff(np.append(starts, len(lo)))
    else:
        starts = counts = np.zeros(0, dtype=np.int64)
    if (counts > 2).any():
        i = starts[np.argmax(counts > 2)]
        raise MeshError(f"non-manifold edge between vertices {lo[i] + 1} and "
                        f"{hi[i] + 1} (1-based) is shared by "
                        f"{counts[counts > 2][0]} triangles")
    first = starts[counts == 2]
    second = first + 1
    pairs = np.column_stack([lo[first], hi[first]])
    verts = mesh.vertices
    p0, p1 = verts[pairs[:, 0]], verts[pairs[:, 1]]
    return RwgBasis(
        mesh=mesh,
        vertex_pairs=pairs,
        plus_tri=owner[first],
        minus_tri=owner[second],
        plus_free=opp[first],
        minus_free=opp[second],
        length=np.linalg.norm(p1 - p0, axis=1),
        center=0.5 * (p0 + p1),
    )
