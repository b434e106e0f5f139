"""Nine-component model of a finite Nx x Ny array.

The element+margin geometry is meshed once and split into nine components,
numbered like a keypad turned on its side::

    3 6 9
    2 5 8
    1 4 7

Component 5 is the array element; 2/8 are the left/right margin columns,
6/4 the top/bottom margin rows and 3/9/1/7 the corners. Parts are
components placed on the lattice. They are numbered component by component
in the order 5, 2, 8, 6, 4, 3, 9, 1, 7, bottom-left first and row-major
inside each component.

Triangles cut by a component border belong to two components ("shared"
triangles). Between two parts of the array they are matched by position:
the side lists of each component are sorted along the border and zipped.
"""
from dataclasses import dataclass, field

import numpy as np

from .kernel import MATCH_TOLERANCE
from .mesh import build_rwg_basis
from .partition import partition_by_boxes

# component number -> (x cell, y cell) in the element+margin layout
COMPONENT_CELLS = {5: (0, 0), 2: (-1, 0), 8: (1, 0), 6: (0, 1), 4: (0, -1),
                   3: (-1, 1), 9: (1, 1), 1: (-1, -1), 7: (1, -1)}
PART_ORDER = (5, 2, 8, 6, 4, 3, 9, 1, 7)
SIDES = ("l", "r", "t", "b", "sc", "nc")
# lattice direction of the neighbour behind each side; "sc" is the
# south-east corner and "nc" the north-west corner
SIDE_DIRECTION = {"l": (-1, 0), "r": (1, 0), "t": (0, 1), "b": (0, -1),
                  "sc": (1, -1), "nc": (-1, 1)}
# sort keys (centroid axes, most significant first)
SIDE_SORT = {"l": (1, 2, 0), "r": (1, 2, 0), "t": (0, 2, 1), "b": (0, 2, 1),
             "sc": (0, 1, 2), "nc": (0, 1, 2)}


class ConformityError(ValueError):
    pass


def _neighbour(comp, side):
    cx, cy = COMPONENT_CELLS[comp]
    dx, dy = SIDE_DIRECTION[side]
    for other, cell in COMPONENT_CELLS.items():
        if cell == (cx + dx, cy + dy):
            return other
    return None


# component pairs touching across a north-east/south-west corner
_ANTI_DIAGONAL = [(a, b) for a, ca in COMPONENT_CELLS.items()
                  for b, cb in COMPONENT_CELLS.items()
                  if (cb[0] - ca[0], cb[1] - ca[1]) == (1, 1)]

# (component, side) -> neighbour component in the element+margin layout
SIDE_TABLE = {(c, s): _neighbour(c, s) for c in PART_ORDER for s in SIDES
              if _neighbour(c, s) is not None}


@dataclass(frozen=True, eq=False)
class ComponentSet:
    components: dict          # comp number -> DesignatedData
    pitch: tuple              # (dx, dy)
    tolerance: float

    def __post_init__(self):
        if self.components[5].n_edges == 0:
            raise ConformityError("the element component (5) has no edges")

    @classmethod
    def from_mesh(cls, mesh, boxes, pitch):
        """Partition an element+margin mesh with a dict of nine boxes."""
        missing = set(PART_ORDER) - set(boxes)
        if missing:
            raise ConformityError(f"missing boxes for components {sorted(missing)}")
        basis = build_rwg_basis(mesh)
        comps = list(PART_ORDER)
        data = partition_by_boxes(basis, [boxes[c] for c in comps],
                                  names=[f"component {c}" for c in comps])
        tol = MATCH_TOLERANCE * max(mesh.diameter(), 1e-300)
        dx, dy = (float(pitch), float(pitch)) if np.isscalar(pitch) else map(float, pitch)
        return cls(dict(zip(comps, data)), (dx, dy), tol)

    def sizes(self):
        return {c: self.components[c].n_edges for c in PART_ORDER}

    def present(self, comp):
        return self.components[comp].n_edges > 0


@dataclass(frozen=True, eq=False)
class SharedTriangleTable:
    sides: dict  # (comp, side) -> intrinsic triangle indices sorted by position

    def get(self, comp, side):
        return self.sides.get((comp, side), np.zeros(0, dtype=np.int64))


def _sorted_positions(data, tris, side, tol):
    cen = data.tri_corners[tris].mean(axis=1)
    key = np.round(cen / tol).astype(np.int64)
    axes = SIDE_SORT[side]
    order = np.lexsort(tuple(key[:, a] for a in reversed(axes)))
    return tris[order]


def _common(a, b):
    """Intrinsic positions of the global triangles common to ``a`` and ``b``."""
    both = np.intersect1d(a.global_tris, b.global_tris)
    return (np.searchsorted(a.global_tris, both),
            np.searchsorted(b.global_tris, both))


def classify_sides(components):
    comps = components.components
    sides = {}
    for (comp, side), other in SIDE_TABLE.items():
        mine, _ = _common(comps[comp], comps[other])
        sides[(comp, side)] = _sorted_positions(comps[comp], mine, side,
                                                components.tolerance)
    # diagonal sharing along the other diagonal is outside the model
    for a, b in _ANTI_DIAGONAL:
        if len(_common(comps[a], comps[b])[0]):
            raise ConformityError(
                f"components {a} and {b} share triangles across a "
                f"north-east/south-west corner; only north-west/south-east "
                f"corner sharing is supported")
    return SharedTriangleTable(sides)


@dataclass(frozen=True, eq=False)
class ArrayModel:
    components: ComponentSet
    nx: int
    ny: int
    offsets: np.ndarray        # (P_N, 3)
    table: np.ndarray          # (P_N, 3): row, col, comp (row/col 0-based)
    cells: np.ndarray          # (P_N, 2) lattice cell (x, y) of each part
    shared: SharedTriangleTable
    part_start: np.ndarray     # first Z^part row of every part, plus total
    _pairs: dict = field(default_factory=dict, repr=False)

    @property
    def n_parts(self):
        return len(self.table)

    @property
    def n_unknowns(self):
        return int(self.part_start[-1])

    def comp(self, p):
        return int(self.table[p, 2])

    def data(self, p):
        return self.components.components[self.comp(p)]

    def part_slice(self, p):
        return slice(int(self.part_start[p]), int(self.part_start[p + 1]))

    def parts_of(self, comp):
        return np.flatnonzero(self.table[:, 2] == comp)

    def element_part(self, row, col):
        return row * self.nx + col

    def n_element_unknowns(self):
        return int(self.part_start[self.nx * self.ny])


def part_count(nx, ny):
    return nx * ny + 2 * nx + 2 * ny + 4


def _layout(nx, ny):
    """Rows of (row, col, comp, cell_x, cell_y) in part order."""
    rows = []
    for r in range(ny):
        for c in range(nx):
            rows.append((r, c, 5, c, r))
    for r in range(ny):
        rows.append((r, 0, 2, -1, r))
    for r in range(ny):
        rows.append((r, 0, 8, nx, r))
    for c in range(nx):
        rows.append((0, c, 6, c, ny))
    for c in range(nx):
        rows.append((0, c, 4, c, -1))
    rows += [(0, 0, 3, -1, ny), (0, 0, 9, nx, ny), (0, 0, 1, -1, -1),
             (0, 0, 7, nx, -1)]
    return np.array(rows, dtype=np.int64)


def build_array(components, nx, ny):
    if nx < 1 or ny < 1:
        raise ValueError(f"array size must be at least 1 x 1, got {nx} x {ny}")
    lay = _layout(nx, ny)
    assert len(lay) == part_count(nx, ny)
    dx, dy = components.pitch
    home = np.array([COMPONENT_CELLS[c] for c in lay[:, 2]])
    shift = lay[:, 3:5] - home
    offsets = np.column_stack([shift[:, 0] * dx, shift[:, 1] * dy,
                               np.zeros(len(lay))])
    sizes = components.sizes()
    counts = np.array([sizes[c] for c in lay[:, 2]])
    start = np.concatenate([[0], np.cumsum(counts)])
    model = ArrayModel(components, nx, ny, offsets, lay[:, :3].copy(),
                       lay[:, 3:5].copy(), classify_sides(components), start)
    # resolve every adjacent pair once; this also checks conformity
    cell_index = {tuple(cell): p for p, cell in enumerate(model.cells)}
    for p, (cx, cy) in enumerate(model.cells):
        for ddx in (-1, 0, 1):
            for ddy in (-1, 0, 1):
                q = cell_index.get((cx + ddx, cy + ddy))
                if q is not None and q >= p:
                    shared_triangles_between_parts(p, q, model)
    return model


def _zip(model, pi, pj, side_i, side_j):
    ti = model.shared.get(model.comp(pi), side_i)
    tj = model.shared.get(model.comp(pj), side_j)
    if len(ti) != len(tj):
        raise ConformityError(
            f"parts {pi} and {pj}: side '{side_i}' of component {model.comp(pi)} "
            f"has {len(ti)} shared triangles but side '{side_j}' of component "
            f"{model.comp(pj)} has {len(tj)}")
    return np.column_stack([ti, tj]).astype(np.int64)


def _check_coincident(model, pi, pj, pairs):
    if len(pairs) == 0:
        return
    ci = model.data(pi).tri_corners[pairs[:, 0]].mean(axis=1) + model.offsets[pi]
    cj = model.data(pj).tri_corners[pairs[:, 1]].mean(axis=1) + model.offsets[pj]
    gap = np.abs(ci - cj).max(axis=1)
    bad = gap > model.components.tolerance
    if bad.any():
        k = int(np.argmax(bad))
        raise ConformityError(
            f"parts {pi} and {pj}: matched shared triangles do not coincide "
            f"(centroids {ci[k].tolist()} and {cj[k].tolist()})")


def shared_triangles_between_parts(pi, pj, model):
    """Coincident (intrinsic tri of pi, intrinsic tri of pj) pairs."""
    key = (pi, pj)
    if key in model._pairs:
        return model._pairs[key]
    if (pj, pi) in model._pairs:
        out = model._pairs[(pj, pi)][:, ::-1].copy()
        model._pairs[key] = out
        return out
    di, dj = model.data(pi), model.data(pj)
    if di.n_tris == 0 or dj.n_tris == 0:
        pairs = np.zeros((0, 2), dtype=np.int64)
    elif pi == pj:
        idx = np.arange(di.n_tris)
        pairs = np.column_stack([idx, idx])
    elif np.array_equal(model.offsets[pi], model.offsets[pj]):
        # parts cut from the same element+margin placement
        a, b = _common(di, dj)
        pairs = np.column_stack([a, b]).astype(np.int64)
    else:
        ddx, ddy = model.cells[pj] - model.cells[pi]
        if (ddx, ddy) == (1, 0):
            pairs = _zip(model, pi, pj, "r", "l")
        elif (ddx, ddy) == (-1, 0):
            pairs = _zip(model, pj, pi, "r", "l")[:, ::-1]
        elif (ddx, ddy) == (0, -1):
            pairs = _zip(model, pi, pj, "b", "t")
        elif (ddx, ddy) == (0, 1):
            pairs = _zip(model, pj, pi, "b", "t")[:, ::-1]
        elif (ddx, ddy) == (1, -1):
            pairs = _zip(model, pi, pj, "sc", "nc")
        elif (ddx, ddy) == (-1, 1):
            pairs = _zip(model, pj, pi, "sc", "nc")[:, ::-1]
        else:
            pairs = np.zeros((0, 2), dtype=np.int64)
    if len(pairs):
        pairs = np.unique(pairs, axis=0)
    pairs = np.ascontiguousarray(pairs, dtype=np.int64).reshape(-1, 2)
    _check_coincident(model, pi, pj, pairs)
    model._pairs[key] = pairs
    return pairs
