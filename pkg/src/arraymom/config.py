"""Run configuration: a flat ``key = value`` file with dotted keys.

Example::

    # strip over ground, 2 x 3 elements
    mesh.path = element.mesh
    box.5 = 0 0 -0.5  0.5 0.5 0.5625
    ...
    array.nx = 2
    array.ny = 3
    array.pitch = 0.5
    physics.frequency = 299792458
    feed.edge = 52

Relative paths are resolved against the directory of the config file.
Blank lines and ``#`` comments are ignored; unknown or repeated keys are
errors.
"""
from dataclasses import dataclass
import hashlib
import math
import json
from pathlib import Path

from .array_model import PART_ORDER
from .kernel import C0
from .partition import BoundingBox
from .quadrature import SUPPORTED_ORDERS
from .toeplitz import StorageMode

SOLVERS = ("dense", "gmres", "schur")
PRECONDITIONERS = ("none", "diagonal", "block", "nearfield")


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "array.nx": "1",
    "array.ny": "1",
    "kernel.quadrature_order": "7",
    "kernel.singular_depth": "3",
    "storage.mode": "sparse",
    "solver.method": "gmres",
    "solver.tol": "1e-8",
    "solver.restart": "60",
    "solver.max_iter": "2000",
    "solver.preconditioner": "nearfield",
    "ports": "all",
    "network.z0": "50",
    "farfield.axis": "x",
    "farfield.cut_points": "181",
    "farfield.n_theta": "90",
    "farfield.n_phi": "180",
    "farfield.excitation": "uniform",
    "output.dir": "out",
    "threads": "1",
}
_OPTIONAL = {"array.pitch", "array.dx", "array.dy", "physics.frequency",
             "physics.k", "feed.edge", "feed.point", "mesh.path"}
KNOWN_KEYS = (set(_DEFAULTS) | _OPTIONAL | {f"box.{c}" for c in PART_ORDER})


def parse_config_text(text, source="<string>"):
    """Raw dict of dotted keys to string values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: key '{key}' given twice")
        if not value:
            raise ConfigError(f"{source}:{lineno}: empty value for '{key}'")
        values[key] = value
    return values


def _number(values, key, kind=float):
    try:
        return kind(values[key])
    except ValueError:
        raise ConfigError(f"'{key}' must be {'an integer' if kind is int else 'a number'}, "
                          f"got '{values[key]}'") from None


def _floats(values, key, count):
    parts = values[key].split()
    if len(parts) != count:
        raise ConfigError(f"'{key}' needs {count} numbers, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"'{key}' contains a non-numeric entry") from None


@dataclass(frozen=True)
class RunConfig:
    mesh_path: Path
    boxes: dict
    pitch: tuple
    nx: int
    ny: int
    k: float
    frequency: float
    quadrature_order: int
    singular_depth: int
    mode: StorageMode
    solver: str
    tol: float
    restart: int
    max_iter: int
    preconditioner: str
    feed_edge: int | None
    feed_point: tuple | None
    ports: tuple | None        # None means every element
    z0: float
    axis: str
    cut_points: int
    n_theta: int
    n_phi: int
    excitation: str
    out_dir: Path
    threads: int

    def with_overrides(self, **kw):
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig(**data)

    def geometry_digest(self):
        """Hash of everything the impedance blocks depend on."""
        h = hashlib.sha256()
        h.update(self.mesh_path.read_bytes())
        h.update(json.dumps({
            "boxes": {str(c): [list(b.lo), list(b.hi)] for c, b in sorted(self.boxes.items())},
            "pitch": list(self.pitch), "nx": self.nx, "ny": self.ny,
            "k": repr(self.k), "order": self.quadrature_order,
            "depth": self.singular_depth}, sort_keys=True).encode())
        return h.hexdigest()


def build_config(values, base_dir=Path(".")):
    v = dict(_DEFAULTS)
    v.update(values)
    base_dir = Path(base_dir)
    if "mesh.path" not in v:
        raise ConfigError("'mesh.path' is required")
    mesh_path = (base_dir / v["mesh.path"]).resolve()
    if not mesh_path.is_file():
        raise ConfigError(f"mesh file not found: {mesh_path}")
    missing = [c for c in PART_ORDER if f"box.{c}" not in v]
    if missing:
        raise ConfigError(f"missing bounding boxes for components {missing}")
    boxes = {}
    for c in PART_ORDER:
        f = _floats(v, f"box.{c}", 6)
        try:
            boxes[c] = BoundingBox(f[:3], f[3:])
        except ValueError as exc:
            raise ConfigError(f"box.{c}: {exc}") from None
    if "array.pitch" in v:
        pitch = (_number(v, "array.pitch"),) * 2
    elif "array.dx" in v and "array.dy" in v:
        pitch = (_number(v, "array.dx"), _number(v, "array.dy"))
    else:
        raise ConfigError("give 'array.pitch' or both 'array.dx' and 'array.dy'")
    if min(pitch) <= 0:
        raise ConfigError("lattice pitch must be positive")
    nx, ny = _number(v, "array.nx", int), _number(v, "array.ny", int)
    if nx < 1 or ny < 1:
        raise ConfigError(f"array size must be at least 1 x 1, got {nx} x {ny}")
    if ("physics.frequency" in v) == ("physics.k" in v):
        raise ConfigError("give exactly one of 'physics.frequency' and 'physics.k'")
    if "physics.frequency" in v:
        freq = _number(v, "physics.frequency")
        if freq <= 0:
            raise ConfigError("frequency must be positive")
        k = 2 * math.pi * freq / C0
    else:
        k = _number(v, "physics.k")
        if k <= 0:
            raise ConfigError("wavenumber must be positive")
        freq = k * C0 / (2 * math.pi)
    order = _number(v, "kernel.quadrature_order", int)
    if order not in SUPPORTED_ORDERS:
        raise ConfigError(f"quadrature order must be one of {SUPPORTED_ORDERS}")
    depth = _number(v, "kernel.singular_depth", int)
    if depth < 0:
        raise ConfigError("singular depth must be >= 0")
    try:
        mode = StorageMode(v["storage.mode"])
    except ValueError:
        raise ConfigError(f"unknown storage mode '{v['storage.mode']}'") from None
    solver = v["solver.method"]
    if solver not in SOLVERS:
        raise ConfigError(f"unknown solver '{solver}'; choose from {SOLVERS}")
    prec = v["solver.preconditioner"]
    if prec not in PRECONDITIONERS:
        raise ConfigError(f"unknown preconditioner '{prec}'")
    feed_edge = _number(v, "feed.edge", int) if "feed.edge" in v else None
    feed_point = tuple(_floats(v, "feed.point", 3)) if "feed.point" in v else None
    if feed_edge is None and feed_point is None:
        raise ConfigError("give 'feed.edge' or 'feed.point'")
    ports_text = v["ports"].strip()
    if ports_text == "all":
        ports = None
    elif ports_text == "none":
        ports = ()
    else:
        try:
            ports = tuple(int(p) for p in ports_text.replace(",", " ").split())
        except ValueError:
            raise ConfigError("'ports' must be 'all', 'none' or element indices") from None
    axis = v["farfield.axis"]
    if axis not in ("x", "y"):
        raise ConfigError("'farfield.axis' must be x or y")
    excitation = v["farfield.excitation"]
    if excitation != "uniform" and not excitation.isdigit():
        raise ConfigError("'farfield.excitation' must be 'uniform' or a port index")
    return RunConfig(
        mesh_path=mesh_path, boxes=boxes, pitch=pitch, nx=nx, ny=ny, k=k,
        frequency=freq, quadrature_order=order, singular_depth=depth, mode=mode,
        solver=solver, tol=_number(v, "solver.tol"),
        restart=_number(v, "solver.restart", int),
        max_iter=_number(v, "solver.max_iter", int), preconditioner=prec,
        feed_edge=feed_edge, feed_point=feed_point, ports=ports,
        z0=_number(v, "network.z0"), axis=axis,
        cut_points=_number(v, "farfield.cut_points", int),
        n_theta=_number(v, "farfield.n_theta", int),
        n_phi=_number(v, "farfield.n_phi", int), excitation=excitation,
        out_dir=(base_dir / v["output.dir"]).resolve(),
        threads=max(1, _number(v, "threads", int)))


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return build_config(parse_config_text(path.read_text(), str(path)), path.parent)
