"""Synthetic array geometries used by the examples, the CLI and the tests.

All coordinates are integer multiples of a power-of-two step, so lattice
translations and edge midpoints are exact in floating point. That makes the
element-plus-margin mesh and a directly meshed full array agree bit for bit
up to translation.

The unit cell is a square ``pitch`` x ``pitch`` tile. The element+margin
mesh covers one cell plus ``margin`` quads on every side and is partitioned
into nine components by :meth:`StripArray.boxes`.
"""
from dataclasses import dataclass

import numpy as np

from .array_model import COMPONENT_CELLS
from .mesh import TriangleMesh
from .partition import BoundingBox


class _Builder:
    def __init__(self, step):
        self.step = step
        self.index = {}
        self.points = []
        self.tris = []

    def vertex(self, key):
        if key not in self.index:
            self.index[key] = len(self.points)
            self.points.append(key)
        return self.index[key]

    def quad(self, bl, br, tr, tl, diagonal):
        a, b, c, d = (self.vertex(k) for k in (bl, br, tr, tl))
        if diagonal == "\\":
            self.tris += [(a, b, d), (b, c, d)]
        else:
            self.tris += [(a, b, c), (a, c, d)]

    def mesh(self):
        pts = np.array(self.points, dtype=float) * self.step
        return TriangleMesh(pts, np.array(self.tris, dtype=np.int64).reshape(-1, 3))


@dataclass(frozen=True)
class StripArray:
    """Strip-over-ground array with optional ground plane.

    ``axis`` gives the direction in which the strip runs (and therefore the
    direction in which elements are electrically connected through it).
    With ``ground=False`` and ``axis='y'`` the elements are connected only
    in y and the x-side margin components are empty.

    ``staggered`` shifts the quad grid by half a quad and uses backslash
    diagonals, so that triangles straddle cell corners and diagonal
    (north-west / south-east) sharing occurs.
    """
    pitch: float = 0.5
    quads: int = 4
    margin: int = 1
    height: float = 0.0625
    ground: bool = True
    axis: str = "x"
    staggered: bool = False

    def __post_init__(self):
        if self.axis not in ("x", "y"):
            raise ValueError("axis must be 'x' or 'y'")
        if self.quads < 2 or self.quads % 2:
            raise ValueError("quads per cell must be even and >= 2")
        if self.margin < 1:
            raise ValueError("margin must be at least one quad")

    @property
    def h(self):
        return self.pitch / self.quads

    @property
    def _unit(self):
        # coordinates are stored as integers in units of h/2
        return self.h / 2

    def _z(self):
        z = self.height / self._unit
        if z != int(z):
            raise ValueError("strip height must be a multiple of half a quad")
        return int(z)

    def mesh(self, nx=1, ny=1):
        """Directly meshed ``nx`` x ``ny`` array including its margin."""
        b = _Builder(self._unit)
        q, m = self.quads, self.margin
        diag = "\\" if self.staggered else "/"
        shift = 1 if self.staggered else 0
        # quad index ranges in units of h (lower-left corners)
        ix0, ix1 = -m, nx * q + m - shift
        iy0, iy1 = -m, ny * q + m - shift
        if self.ground:
            for j in range(iy0, iy1):
                for i in range(ix0, ix1):
                    x, y = 2 * i + shift, 2 * j + shift
                    b.quad((x, y, 0), (x + 2, y, 0), (x + 2, y + 2, 0),
                           (x, y + 2, 0), diag)
        z = self._z()
        if self.axis == "x":
            # one quad wide, just below the cell's mid-line
            yc = q // 2 - 1
            for r in range(ny):
                y = 2 * (r * q + yc) + shift
                for i in range(ix0, ix1):
                    x = 2 * i + shift
                    b.quad((x, y, z), (x + 2, y, z), (x + 2, y + 2, z),
                           (x, y + 2, z), diag)
        else:
            xc = q // 2 - 1
            for c in range(nx):
                x = 2 * (c * q + xc) + shift
                for j in range(iy0, iy1):
                    y = 2 * j + shift
                    b.quad((x, y, z), (x + 2, y, z), (x + 2, y + 2, z),
                           (x, y + 2, z), diag)
        return b.mesh()

    def boxes(self):
        """Nine bounding boxes for the element+margin mesh, keyed by component."""
        p = self.pitch
        lo_z, hi_z = -p, p + self.height
        spans = {-1: (-p, 0.0), 0: (0.0, p), 1: (p, 2 * p)}
        out = {}
        for comp, (cx, cy) in COMPONENT_CELLS.items():
            (x0, x1), (y0, y1) = spans[cx], spans[cy]
            out[comp] = BoundingBox((x0, y0, lo_z), (x1, y1, hi_z))
        return out

    def feed_point(self):
        """Centre of the strip edge used as the element's port."""
        q, h = self.quads, self.h
        shift = h / 2 if self.staggered else 0.0
        along = (q // 2) * h + shift
        across = (q // 2 - 0.5) * h + shift
        if self.axis == "x":
            return np.array([along, across, self.height])
        return np.array([across, along, self.height])

    def pol_axis(self):
        return self.axis


def plate(n=1, size=1.0):
    """Square plate in z = 0 split into ``2 n^2`` triangles."""
    b = _Builder(size / n)
    for j in range(n):
        for i in range(n):
            b.quad((i, j, 0), (i + 1, j, 0), (i + 1, j + 1, 0), (i, j + 1, 0), "/")
    return b.mesh()


def right_triangle_plate(leg):
    """Two right triangles with legs ``leg`` sharing their hypotenuse."""
    v = np.array([[0, 0, 0], [leg, 0, 0], [leg, leg, 0], [0, leg, 0]], float)
    return TriangleMesh(v, np.array([[0, 1, 3], [1, 2, 3]]))


def bowtie(n=4, size=1.0):
    """Planar bowtie: two triangular wings joined by a short feed strip."""
    h = size / n
    b = _Builder(h)
    for j in range(-n, n):
        for i in range(-n, n):
            # keep quads inside |y| <= |x| + 1 (two wings plus a neck)
            xm, ym = i + 0.5, j + 0.5
            if abs(ym) <= abs(xm) + 1:
                b.quad((i, j, 0), (i + 1, j, 0), (i + 1, j + 1, 0), (i, j + 1, 0), "/")
    return b.mesh()
