"""Regenerate the example meshes and configurations under ``configs/``.

    python3 scripts/make_examples.py
"""
from pathlib import Path

import numpy as np

from arraymom.array_model import ComponentSet, PART_ORDER
from arraymom.mesh import save_mesh
from arraymom.toy import StripArray

ROOT = Path(__file__).resolve().parents[1] / "configs"

EXAMPLES = {
    "strip_ground": (StripArray(), 2, 3,
                     "Strip dipoles over a ground plane, connected along x.\n"
                     "All nine components are populated."),
    "strip_yonly": (StripArray(ground=False, axis="y"), 2, 3,
                    "Free-standing strips connected along y only.\n"
                    "Components 2, 8 and the corners are empty."),
}


def box_line(box):
    return " ".join(f"{v:g}" for v in (*box.lo, *box.hi))


def write_example(name, toy, nx, ny, note):
    folder = ROOT / name
    folder.mkdir(parents=True, exist_ok=True)
    mesh = toy.mesh(1, 1)
    save_mesh(mesh, folder / "element.mesh")
    boxes = toy.boxes()
    comps = ComponentSet.from_mesh(mesh, boxes, toy.pitch)
    d5 = comps.components[5]
    feed = int(np.argmin(np.linalg.norm(d5.edge_center - toy.feed_point(), axis=1)))
    lines = [f"# {line}" for line in note.splitlines()]
    lines += ["", "mesh.path = element.mesh"]
    lines += [f"box.{c} = {box_line(boxes[c])}" for c in PART_ORDER]
    lines += ["", f"array.nx = {nx}", f"array.ny = {ny}", f"array.pitch = {toy.pitch:g}",
              "physics.frequency = 299792458", "",
              "# edge of component 5 (0-based) at the centre of the strip",
              f"feed.edge = {feed}", "ports = all", "network.z0 = 50", "",
              "storage.mode = sparse", "solver.method = schur", "solver.tol = 1e-8",
              "", f"farfield.axis = {toy.axis}", "farfield.excitation = uniform",
              "output.dir = out", ""]
    (folder / "run.cfg").write_text("\n".join(lines))


if __name__ == "__main__":
    for name, (toy, nx, ny, note) in EXAMPLES.items():
        write_example(name, toy, nx, ny, note)
        print(f"wrote {ROOT / name}")
