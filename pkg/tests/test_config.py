import math
from pathlib import Path

import pytest

from arraymom.config import ConfigError, build_config, load_config, parse_config_text
from arraymom.toeplitz import StorageMode

EXAMPLE = Path(__file__).resolve().parents[1] / "configs" / "strip_ground" / "run.cfg"


def values(**changes):
    base = parse_config_text(EXAMPLE.read_text())
    for key, val in changes.items():
        key = key.replace("__", ".")
        if val is None:
            base.pop(key, None)
        else:
            base[key] = val
    return base


def build(**changes):
    return build_config(values(**changes), EXAMPLE.parent)


def test_example_loads():
    cfg = load_config(EXAMPLE)
    assert (cfg.nx, cfg.ny, cfg.pitch) == (2, 3, (0.5, 0.5))
    assert cfg.k == pytest.approx(2 * math.pi, rel=1e-15)
    assert cfg.mode is StorageMode.SPARSE and cfg.solver == "schur"
    assert cfg.ports is None and cfg.feed_edge == 52
    assert cfg.mesh_path.is_file() and cfg.out_dir == EXAMPLE.parent / "out"


@pytest.mark.parametrize("text, message", [
    ("array.nx 3", "expected 'key = value'"),
    ("array.nz = 3", "unknown key 'array.nz'"),
    ("array.nx = 3\narray.nx = 4", "given twice"),
    ("array.nx =", "empty value"),
])
def test_parse_errors_carry_line_numbers(text, message):
    with pytest.raises(ConfigError, match=message) as info:
        parse_config_text("# header\n" + text, "run.cfg")
    assert str(info.value).startswith("run.cfg:")


def test_comments_and_blank_lines():
    assert parse_config_text("\n  # x\narray.nx = 4  # trailing\n") == {"array.nx": "4"}


def test_missing_mesh_names_the_path():
    with pytest.raises(ConfigError, match="nowhere.mesh"):
        build(mesh__path="nowhere.mesh")


def test_missing_box():
    with pytest.raises(ConfigError, match=r"\[7\]"):
        build(box__7=None)


@pytest.mark.parametrize("changes, message", [
    ({"array__nx": "0"}, "at least 1 x 1"),
    ({"array__nx": "two"}, "must be an integer"),
    ({"array__pitch": None}, "array.pitch"),
    ({"array__pitch": "-0.5"}, "positive"),
    ({"physics__k": "6.28"}, "exactly one"),
    ({"physics__frequency": None}, "exactly one"),
    ({"physics__frequency": "0"}, "positive"),
    ({"kernel__quadrature_order": "5"}, "quadrature order"),
    ({"storage__mode": "compressed"}, "storage mode"),
    ({"solver__method": "cg"}, "unknown solver"),
    ({"solver__preconditioner": "ilu"}, "preconditioner"),
    ({"feed__edge": None}, "feed.edge"),
    ({"ports": "1 two"}, "'ports'"),
    ({"farfield__axis": "z"}, "x or y"),
    ({"farfield__excitation": "taper"}, "uniform"),
    ({"box__5": "0 0 0 1 1"}, "6 numbers"),
    ({"box__5": "1 0 -0.5 0 0.5 0.5"}, "box.5"),
])
def test_invalid_values(changes, message):
    with pytest.raises(ConfigError, match=message):
        build(**changes)


def test_rectangular_lattice_and_wavenumber():
    cfg = build(array__pitch=None, array__dx="0.5", array__dy="0.6",
                physics__frequency=None, physics__k="3.0")
    assert cfg.pitch == (0.5, 0.6) and cfg.k == 3.0
    assert cfg.frequency == pytest.approx(3.0 * 299792458 / (2 * math.pi))


def test_port_lists():
    assert build(ports="0, 2 5").ports == (0, 2, 5)
    assert build(ports="none").ports == ()


def test_overrides_skip_none():
    cfg = build()
    new = cfg.with_overrides(solver="dense", threads=None)
    assert new.solver == "dense" and new.threads == cfg.threads


def test_digest_tracks_geometry_only():
    cfg = build()
    assert cfg.geometry_digest() == build(solver__method="dense").geometry_digest()
    assert cfg.geometry_digest() != build(array__nx="3").geometry_digest()
    assert cfg.geometry_digest() != build(kernel__singular_depth="2").geometry_digest()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.cfg")
