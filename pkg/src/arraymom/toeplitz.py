"""Block-Toeplitz storage of the part-ordered impedance matrix.

With parts ordered elements first, the matrix splits as

    Z = [[A, B^T],
         [B, C   ]]

A (element/element) is two-level block Toeplitz and symmetric, B couples the
margin parts to the elements and C the margin parts to each other. Three
storage modes are offered:

* ``sparse`` keeps one generator per distinct relative placement,
* ``semisparse`` keeps the first block row of A at the y level and B, C dense,
* ``full`` keeps the dense matrix.

Every block is produced by the same routine, keyed by the relative placement
of the two parts, so the three modes agree bit for bit.

All part indices here are 0-based.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
import json
import struct

import numpy as np

from .array_model import shared_triangles_between_parts
from .kernel import compute_block

CORNERS = (3, 9, 1, 7)
# margin groups in part order: 1 = comp 2, 2 = comp 8, 3 = comp 6,
# 4 = comp 4, 5 = the corners
GROUP_OF = {5: 0, 2: 1, 8: 2, 6: 3, 4: 4, 3: 5, 9: 5, 1: 5, 7: 5}
MAGIC = b"ZTOE1"


class StorageMode(str, Enum):
    FULL = "full"
    SEMISPARSE = "semisparse"
    SPARSE = "sparse"


class CacheError(ValueError):
    pass


# ---------------------------------------------------------------- index maps

def _check_range(name, value, lo, hi):
    if not lo <= value <= hi:
        raise IndexError(f"{name} = {value} outside [{lo}, {hi}]")


def locate_a_block(i, j, nx, ny):
    """Part pair generating the A block with y shift ``i`` and x shift ``j``."""
    _check_range("i", i, 0, ny - 1)
    _check_range("j", j, 1 - nx, nx - 1)
    return i * nx + (abs(j) + j) // 2, (abs(j) - j) // 2


def b_block_map(region, shift, index, nx, ny):
    """Part pair generating a Toeplitz B block.

    For B1/B2 (left/right margin columns) ``shift`` is the row difference
    margin row minus element row and ``index`` the element column. For
    B3/B4 (top/bottom margin rows) ``shift`` is the column difference and
    ``index`` the element row.
    """
    base = nx * ny
    if region in ("B1", "B2"):
        _check_range("shift", shift, 1 - ny, ny - 1)
        _check_range("column", index, 0, nx - 1)
        p = base + (int(region[1]) - 1) * ny + (abs(shift) + shift) // 2
        return p, (abs(shift) - shift) // 2 * nx + index
    if region in ("B3", "B4"):
        _check_range("shift", shift, 1 - nx, nx - 1)
        _check_range("row", index, 0, ny - 1)
        p = base + 2 * ny + (int(region[1]) - 3) * nx + (abs(shift) + shift) // 2
        return p, index * nx + (abs(shift) - shift) // 2
    raise KeyError(f"no Toeplitz map for region {region!r}")


def c_block_map(region, shift, nx, ny):
    """Part pair generating a Toeplitz C block (C11, C21, C22, C33, C43, C44)."""
    i, j = int(region[1]), int(region[2])
    base = nx * ny
    if region in ("C11", "C21", "C22"):
        lo = 0 if i == j else 1 - ny
        _check_range("shift", shift, lo, ny - 1)
        start_i, start_j = base + (i - 1) * ny, base + (j - 1) * ny
    elif region in ("C33", "C43", "C44"):
        lo = 0 if i == j else 1 - nx
        _check_range("shift", shift, lo, nx - 1)
        start_i = base + 2 * ny + (i - 3) * nx
        start_j = base + 2 * ny + (j - 3) * nx
    else:
        raise KeyError(f"no Toeplitz map for region {region!r}")
    return start_i + (abs(shift) + shift) // 2, start_j + (abs(shift) - shift) // 2


# ------------------------------------------------------------ part geometry

class _Layout:
    """Part numbering helpers for an nx x ny model."""

    def __init__(self, model):
        self.nx, self.ny = model.nx, model.ny
        self.table = model.table
        n = self.nx * self.ny
        self.group_start = [0, n, n + self.ny, n + 2 * self.ny,
                            n + 2 * self.ny + self.nx, n + 2 * self.ny + 2 * self.nx]

    def group(self, p):
        row, col, comp = (int(v) for v in self.table[p])
        g = GROUP_OF[comp]
        if g == 0:
            return 0, (row, col)
        if g in (1, 2):
            return g, row
        if g in (3, 4):
            return g, col
        return 5, CORNERS.index(comp)

    def part(self, g, idx):
        if g == 0:
            return idx[0] * self.nx + idx[1]
        return self.group_start[g] + idx


def sparse_source(lay, p, q):
    """Sparse key holding block (p, q) and whether it is stored transposed."""
    gp, ip = lay.group(p)
    gq, iq = lay.group(q)
    if gp < gq:
        key, t = sparse_source(lay, q, p)
        return key, not t
    if gp == 0:
        i, j = ip[0] - iq[0], ip[1] - iq[1]
        if i > 0 or (i == 0 and j >= 0):
            return ("A", i, j), False
        return ("A", -i, -j), True
    if gq == 0:
        if gp in (1, 2):
            return (f"B{gp}", ip - iq[0], iq[1]), False
        if gp in (3, 4):
            return (f"B{gp}", ip - iq[1], iq[0]), False
        return (f"B{5 + ip}", iq[0], iq[1]), False
    if gp == gq and gp < 5:
        s = ip - iq
        return ((f"C{gp}{gp}", s), False) if s >= 0 else ((f"C{gp}{gp}", -s), True)
    if (gp, gq) in ((2, 1), (4, 3)):
        return (f"C{gp}{gq}", ip - iq), False
    if gp == 5 and gq == 5:
        if ip >= iq:
            return ("C55", ip, iq), False
        return ("C55", iq, ip), True
    return (f"C{gp}{gq}", ip, iq), False


def sparse_keys(nx, ny):
    """Every block key stored in sparse mode, in storage order."""
    keys = [("A", 0, j) for j in range(nx)]
    keys += [("A", i, j) for i in range(1, ny) for j in range(1 - nx, nx)]
    for g in (1, 2):
        keys += [(f"B{g}", s, c) for s in range(1 - ny, ny) for c in range(nx)]
    for g in (3, 4):
        keys += [(f"B{g}", s, r) for s in range(1 - nx, nx) for r in range(ny)]
    for b in range(5, 9):
        keys += [(f"B{b}", r, c) for r in range(ny) for c in range(nx)]
    keys += [("C11", s) for s in range(ny)]
    keys += [("C21", s) for s in range(1 - ny, ny)]
    keys += [("C22", s) for s in range(ny)]
    keys += [(f"C3{g}", a, b) for g in (1, 2) for a in range(nx) for b in range(ny)]
    keys += [("C33", s) for s in range(nx)]
    keys += [(f"C4{g}", a, b) for g in (1, 2) for a in range(nx) for b in range(ny)]
    keys += [("C43", s) for s in range(1 - nx, nx)]
    keys += [("C44", s) for s in range(nx)]
    for g, count in ((1, ny), (2, ny), (3, nx), (4, nx)):
        keys += [(f"C5{g}", k, i) for k in range(4) for i in range(count)]
    keys += [("C55", a, b) for a in range(4) for b in range(a + 1)]
    return keys


def key_parts(key, nx, ny):
    """Generating part pair of a sparse key."""
    tag = key[0]
    if tag == "A":
        return locate_a_block(key[1], key[2], nx, ny)
    if tag in ("B1", "B2", "B3", "B4"):
        return b_block_map(tag, key[1], key[2], nx, ny)
    base = nx * ny
    corner0 = base + 2 * ny + 2 * nx
    if tag in ("B5", "B6", "B7", "B8"):
        return corner0 + int(tag[1]) - 5, key[1] * nx + key[2]
    if tag in ("C11", "C21", "C22", "C33", "C43", "C44"):
        return c_block_map(tag, key[1], nx, ny)
    starts = {1: base, 2: base + ny, 3: base + 2 * ny, 4: base + 2 * ny + nx,
              5: corner0}
    return starts[int(tag[1])] + key[1], starts[int(tag[2])] + key[2]


# ------------------------------------------------------------------ memory

@dataclass(frozen=True)
class MemoryReport:
    mode: str
    mem_a: int
    mem_b: int
    mem_c: int
    approx: int | None = None   # equal-count closed form (sparse mode only)

    @property
    def total(self):
        return self.mem_a + self.mem_b + self.mem_c


def _counts(e):
    e = {k: int(v) for k, v in e.items()}
    return e, sum(e[c] for c in CORNERS)


def sparse_memory(nx, ny, e):
    e, ec = _counts(e)
    mem_a = (2 * nx * ny - nx - ny + 1) * e[5] ** 2
    mem_b = ((2 * nx * ny - nx) * e[5] * (e[2] + e[8])
             + (2 * nx * ny - ny) * e[5] * (e[6] + e[4])
             + nx * ny * e[5] * ec)
    mem_c = (nx * ny * (e[2] + e[8]) * (e[4] + e[6])
             + ny * (e[2] ** 2 + e[8] ** 2) + nx * (e[6] ** 2 + e[4] ** 2)
             + (2 * ny - 1) * e[2] * e[8] + (2 * nx - 1) * e[6] * e[4]
             + (nx * (e[6] + e[4]) + ny * (e[2] + e[8])) * ec
             + e[7] ** 2 + e[3] * ec + e[9] * (e[9] + e[1] + e[7])
             + e[1] * (e[1] + e[7]))
    return mem_a, mem_b, mem_c


def approx_memory(nx, ny, e_element, e_margin, e_corner):
    """Closed form for equal margin counts ``e_margin`` and corner counts ``e_corner``."""
    E, m, c = e_element, e_margin, e_corner
    return ((2 * nx * ny - nx - ny + 1) * E * E
            + (8 * nx * ny - 2 * nx - 2 * ny) * E * m + 4 * nx * ny * E * c
            + (4 * nx * ny + 4 * nx + 4 * ny - 2) * m * m
            + 8 * (nx + ny) * m * c + 10 * c * c)


def memory_report(nx, ny, e, mode=StorageMode.SPARSE):
    """Stored complex entries of a representation; ``e`` maps component -> edges."""
    mode = StorageMode(mode)
    e, ec = _counts(e)
    n_elem = nx * ny * e[5]
    n_margin = ny * (e[2] + e[8]) + nx * (e[6] + e[4]) + ec
    if mode is StorageMode.SPARSE:
        a, b, c = sparse_memory(nx, ny, e)
        approx = None
        margins = {e[2], e[8], e[6], e[4]}
        corners = {e[c_] for c_ in CORNERS}
        if len(margins) == 1 and len(corners) == 1:
            approx = approx_memory(nx, ny, e[5], e[2], e[3])
        return MemoryReport(mode.value, a, b, c, approx)
    if mode is StorageMode.SEMISPARSE:
        return MemoryReport(mode.value, ny * (nx * e[5]) ** 2,
                            n_margin * n_elem, n_margin ** 2)
    return MemoryReport(mode.value, n_elem ** 2, 2 * n_margin * n_elem,
                        n_margin ** 2)


# ------------------------------------------------------------ representation

@dataclass(frozen=True, eq=False)
class ToeplitzRep:
    mode: StorageMode
    model: object
    blocks: dict                     # key tuple -> column-major complex array
    sizes: dict                      # component -> edge count
    _lay: _Layout = field(repr=False, default=None)

    def __post_init__(self):
        if self._lay is None:
            object.__setattr__(self, "_lay", _Layout(self.model))

    @property
    def nx(self):
        return self.model.nx

    @property
    def ny(self):
        return self.model.ny

    @property
    def n_unknowns(self):
        return self.model.n_unknowns

    @property
    def n_element_unknowns(self):
        return self.model.n_element_unknowns()

    def stored_entries(self):
        return int(sum(b.size for b in self.blocks.values()))

    def a_block_count(self):
        if self.mode is StorageMode.SPARSE:
            return sum(1 for k in self.blocks if k[0] == "A")
        if self.mode is StorageMode.SEMISPARSE:
            return self.ny * self.nx * self.nx
        return (self.nx * self.ny) ** 2

    def memory_report(self):
        return memory_report(self.nx, self.ny, self.sizes, self.mode)

    def block(self, p, q):
        """Block of Z between parts ``p`` (rows) and ``q`` (columns)."""
        m = self.model
        if self.mode is StorageMode.SPARSE:
            key, transposed = sparse_source(self._lay, p, q)
            b = self.blocks[key]
            return b.T if transposed else b
        if self.mode is StorageMode.FULL:
            return self.blocks[("Z",)][m.part_slice(p), m.part_slice(q)]
        n_el = self.n_element_unknowns
        gp, ip = self._lay.group(p)
        gq, iq = self._lay.group(q)
        if gp == 0 and gq == 0:
            e5 = self.sizes[5]
            i = ip[0] - iq[0]
            if i < 0:
                return self.block(q, p).T
            gen = self.blocks[("A", i)]
            return gen[ip[1] * e5:(ip[1] + 1) * e5, iq[1] * e5:(iq[1] + 1) * e5]
        if gq == 0:
            sp = m.part_slice(p)
            return self.blocks[("B",)][sp.start - n_el:sp.stop - n_el, m.part_slice(q)]
        if gp == 0:
            return self.block(q, p).T
        sp, sq = m.part_slice(p), m.part_slice(q)
        return self.blocks[("C",)][sp.start - n_el:sp.stop - n_el,
                                    sq.start - n_el:sq.stop - n_el]

    def a_generator(self, i, j):
        """A block between element (i + r, j + c) and element (r, c), any signs."""
        lay = self._lay
        p = lay.part(0, (max(i, 0), max(j, 0)))
        q = lay.part(0, (max(-i, 0), max(-j, 0)))
        return self.block(p, q)

    def reconstruct_full(self):
        """Dense Z in part order and the (part, local edge) of every unknown."""
        m = self.model
        if self.mode is StorageMode.FULL:
            z = np.array(self.blocks[("Z",)])
        else:
            z = np.empty((m.n_unknowns, m.n_unknowns), dtype=complex)
            for p in range(m.n_parts):
                for q in range(m.n_parts):
                    z[m.part_slice(p), m.part_slice(q)] = self.block(p, q)
        index = np.concatenate(
            [np.column_stack([np.full(m.data(p).n_edges, p),
                              np.arange(m.data(p).n_edges)])
             for p in range(m.n_parts)]).astype(np.int64)
        return z, index

    def global_edge_index(self):
        """Global edge (in the element+margin mesh) of every unknown."""
        m = self.model
        return np.concatenate([m.data(p).global_edges for p in range(m.n_parts)])


class _BlockSource:
    """Computes blocks by relative placement and remembers them."""

    def __init__(self, model, params):
        self.model = model
        self.params = params
        self.cache = {}

    def config(self, p, q):
        m = self.model
        cell = tuple(int(v) for v in m.cells[q] - m.cells[p])
        return m.comp(p), m.comp(q), cell

    def _compute(self, p, q):
        m = self.model
        try:
            pairs = shared_triangles_between_parts(p, q, m)
            return compute_block(m.data(p), m.data(q),
                                 (m.offsets[p], m.offsets[q]), pairs,
                                 self.params).z
        except ValueError as exc:
            raise type(exc)(f"block of parts {p} and {q}: {exc}") from exc

    def prepare(self, pairs, threads=1):
        """Compute every distinct block needed for ``pairs`` of parts."""
        todo = {}
        for p, q in pairs:
            a, b = (p, q) if p <= q else (q, p)
            cfg = self.config(a, b)
            if cfg not in self.cache and cfg not in todo:
                todo[cfg] = (a, b)
        # resolve the shared-triangle tables serially; the model cache is a dict
        for a, b in todo.values():
            shared_triangles_between_parts(a, b, self.model)
        items = list(todo.items())
        if threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda it: self._compute(*it[1]), items))
        else:
            results = [self._compute(*it[1]) for it in items]
        for (cfg, _), z in zip(items, results):
            self.cache[cfg] = z

    def get(self, p, q):
        if p <= q:
            return self.cache[self.config(p, q)]
        return self.cache[self.config(q, p)].T


def assemble(model, params, mode=StorageMode.SPARSE, threads=1):
    """Compute the blocks needed by ``mode`` and return a :class:`ToeplitzRep`."""
    mode = StorageMode(mode)
    src = _BlockSource(model, params)
    nx, ny = model.nx, model.ny
    sizes = model.components.sizes()
    blocks = {}
    if mode is StorageMode.SPARSE:
        keys = sparse_keys(nx, ny)
        parts = [key_parts(k, nx, ny) for k in keys]
        src.prepare(parts, threads)
        for k, (p, q) in zip(keys, parts):
            blocks[k] = np.asfortranarray(src.get(p, q))
    elif mode is StorageMode.SEMISPARSE:
        n_el = nx * ny
        e5 = sizes[5]
        margin = range(n_el, model.n_parts)
        pairs = [(i * nx + c, c2) for i in range(ny) for c in range(nx)
                 for c2 in range(nx)]
        pairs += [(p, q) for p in margin for q in range(n_el)]
        pairs += [(p, q) for p in margin for q in margin]
        src.prepare(pairs, threads)
        for i in range(ny):
            gen = np.empty((nx * e5, nx * e5), dtype=complex, order="F")
            for c in range(nx):
                for c2 in range(nx):
                    gen[c * e5:(c + 1) * e5, c2 * e5:(c2 + 1) * e5] = \
                        src.get(i * nx + c, c2)
            blocks[("A", i)] = gen
        n_e = model.n_element_unknowns()
        n_m = model.n_unknowns - n_e
        b = np.empty((n_m, n_e), dtype=complex, order="F")
        c_ = np.empty((n_m, n_m), dtype=complex, order="F")
        for p in margin:
            sp = model.part_slice(p)
            rows = slice(sp.start - n_e, sp.stop - n_e)
            for q in range(n_el):
                b[rows, model.part_slice(q)] = src.get(p, q)
            for q in margin:
                sq = model.part_slice(q)
                c_[rows, sq.start - n_e:sq.stop - n_e] = src.get(p, q)
        blocks[("B",)] = b
        blocks[("C",)] = c_
    else:
        n = model.n_parts
        # upper triangle computed, lower filled by transposition
        src.prepare([(p, q) for p in range(n) for q in range(p, n)], threads)
        z = np.empty((model.n_unknowns, model.n_unknowns), dtype=complex, order="F")
        for p in range(n):
            for q in range(p, n):
                blk = src.get(p, q)
                z[model.part_slice(p), model.part_slice(q)] = blk
                if q != p:
                    z[model.part_slice(q), model.part_slice(p)] = blk.T
        blocks[("Z",)] = z
    return ToeplitzRep(mode, model, blocks, sizes)


# ------------------------------------------------------------------- cache

def _encode_key(key):
    tag = key[0].encode("ascii")
    ints = [int(v) for v in key[1:]]
    return (struct.pack("<B", len(tag)) + tag + struct.pack("<B", len(ints))
            + struct.pack(f"<{len(ints)}i", *ints))


def save_cache(rep, path, meta=None):
    """Write the stored blocks to a ``ZTOE1`` file."""
    header = {"mode": rep.mode.value, "nx": rep.nx, "ny": rep.ny,
              "sizes": {str(k): int(v) for k, v in sorted(rep.sizes.items())},
              "blocks": len(rep.blocks)}
    header.update(meta or {})
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for key, arr in rep.blocks.items():
            fh.write(_encode_key(key))
            rows, cols = arr.shape
            fh.write(struct.pack("<II", rows, cols))
            fh.write(np.asarray(arr, dtype="<c16").tobytes(order="F"))


def _read(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise CacheError(f"{path}: truncated cache file")
    return data


def read_cache_header(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CacheError(f"{path}: not a ZTOE1 cache file")
        (n,) = struct.unpack("<I", _read(fh, 4, path))
        return json.loads(_read(fh, n, path).decode("utf-8"))


def load_cache(path, model):
    """Read a cache written by :func:`save_cache` for the same ``model``."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CacheError(f"{path}: not a ZTOE1 cache file")
        (n,) = struct.unpack("<I", _read(fh, 4, path))
        header = json.loads(_read(fh, n, path).decode("utf-8"))
        sizes = {int(k): v for k, v in header["sizes"].items()}
        if (header["nx"], header["ny"]) != (model.nx, model.ny) or \
                sizes != model.components.sizes():
            raise CacheError(f"{path}: cache does not match the configured array")
        blocks = {}
        for _ in range(header["blocks"]):
            (tlen,) = struct.unpack("<B", _read(fh, 1, path))
            tag = _read(fh, tlen, path).decode("ascii")
            (nint,) = struct.unpack("<B", _read(fh, 1, path))
            ints = struct.unpack(f"<{nint}i", _read(fh, 4 * nint, path))
            rows, cols = struct.unpack("<II", _read(fh, 8, path))
            raw = _read(fh, 16 * rows * cols, path)
            arr = np.frombuffer(raw, dtype="<c16").reshape((rows, cols), order="F")
            blocks[(tag, *ints)] = np.asfortranarray(arr.astype(complex))
        if fh.read(1):
            raise CacheError(f"{path}: trailing data after the last block")
    return ToeplitzRep(StorageMode(header["mode"]), model, blocks, sizes), header
