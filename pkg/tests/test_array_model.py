import numpy as np
import pytest
from scipy.spatial import cKDTree

from arraymom.array_model import (PART_ORDER, ComponentSet, ConformityError,
                                  build_array, classify_sides, part_count,
                                  shared_triangles_between_parts)
from arraymom.mesh import TriangleMesh
from arraymom.toy import StripArray


@pytest.fixture(scope="module")
def staggered():
    toy = StripArray(staggered=True, margin=2)
    return toy, ComponentSet.from_mesh(toy.mesh(), toy.boxes(), toy.pitch)


@pytest.mark.parametrize("nx, ny, expected", [(1, 1, 9), (4, 6, 48), (3, 2, 20)])
def test_part_count(components, nx, ny, expected):
    assert part_count(nx, ny) == expected
    assert build_array(components, nx, ny).n_parts == expected


def test_part_table_order(components):
    m = build_array(components, 4, 6)
    comps = m.table[:, 2].tolist()
    runs = [c for i, c in enumerate(comps) if i == 0 or comps[i - 1] != c]
    assert runs == list(PART_ORDER)
    assert comps.count(5) == 24
    # element parts row-major from the bottom-left
    assert m.table[0].tolist() == [0, 0, 5]
    np.testing.assert_array_equal(m.offsets[0], [0, 0, 0])
    assert m.table[1].tolist() == [0, 1, 5] and m.table[4].tolist() == [1, 0, 5]
    np.testing.assert_allclose(m.offsets[4 * 6 - 1], [3 * 0.5, 5 * 0.5, 0])
    # margin parts surround the element block
    cells = {tuple(c) for c in m.cells}
    assert cells == {(x, y) for x in range(-1, 5) for y in range(-1, 7)}


def test_rejects_empty_array(components):
    with pytest.raises(ValueError):
        build_array(components, 0, 3)


def _border_scan(toy, data):
    """Element triangles with an edge on the plane x = pitch (left of it)."""
    cen = data.tri_corners.mean(axis=1)
    on_plane = (np.abs(data.tri_corners[:, :, 0] - toy.pitch) < 1e-12).sum(axis=1) == 2
    return np.flatnonzero(on_plane & (cen[:, 0] < toy.pitch)), cen


def test_right_side_matches_border_scan(toy, components):
    table = classify_sides(components)
    d5 = components.components[5]
    right = table.get(5, "r")
    scan, cen = _border_scan(toy, d5)
    # the corner triangle at y = 0 belongs to the bottom-right corner instead
    assert set(right) <= set(scan) and len(right) > 0
    assert len(right) == len(table.get(5, "l"))
    # sorted by y, then z
    key = cen[right]
    assert all(tuple(key[i, [1, 2]]) <= tuple(key[i + 1, [1, 2]])
               for i in range(len(right) - 1))


def test_right_side_count_without_ground():
    toy = StripArray(ground=False)
    comps = ComponentSet.from_mesh(toy.mesh(), toy.boxes(), toy.pitch)
    scan, _ = _border_scan(toy, comps.components[5])
    assert len(classify_sides(comps).get(5, "r")) == len(scan) == 1


def test_empty_side_lists_for_y_only_variant():
    toy = StripArray(ground=False, axis="y")
    comps = ComponentSet.from_mesh(toy.mesh(), toy.boxes(), toy.pitch)
    assert comps.sizes()[2] == comps.sizes()[8] == 0
    table = classify_sides(comps)
    assert len(table.get(5, "l")) == len(table.get(5, "r")) == 0
    assert len(table.get(5, "t")) > 0


def test_side_by_side_elements(components, model23):
    right = len(classify_sides(components).get(5, "r"))
    pairs = shared_triangles_between_parts(0, 1, model23)
    assert len(pairs) == right
    far = build_array(components, 3, 1)
    assert len(shared_triangles_between_parts(0, 2, far)) == 0


def test_swap_transposes(model23):
    for p, q in [(0, 1), (0, 2), (1, 6), (3, 10), (12, 13)]:
        np.testing.assert_array_equal(shared_triangles_between_parts(q, p, model23),
                                      shared_triangles_between_parts(p, q, model23)[:, ::-1])


def _coincidences_by_geometry(model):
    cen, owner = [], []
    for p in range(model.n_parts):
        d = model.data(p)
        cen.append(d.tri_centroids() + model.offsets[p])
        owner += [(p, t) for t in range(d.n_tris)]
    cen = np.concatenate(cen)
    found = set()
    for i, j in cKDTree(cen).query_pairs(1e-9):
        (p, a), (q, b) = owner[i], owner[j]
        if p != q:
            found.add((p, a, q, b) if p < q else (q, b, p, a))
    return found


def _coincidences_by_model(model):
    found = set()
    for p in range(model.n_parts):
        for q in range(p + 1, model.n_parts):
            for a, b in shared_triangles_between_parts(p, q, model):
                found.add((p, int(a), q, int(b)))
    return found


def test_all_coincidences_found_2x2(components):
    m = build_array(components, 2, 2)
    geometric = _coincidences_by_geometry(m)
    assert geometric and _coincidences_by_model(m) == geometric


def test_all_coincidences_found_with_diagonal_sharing(staggered):
    toy, comps = staggered
    table = classify_sides(comps)
    assert len(table.get(5, "sc")) > 0 and len(table.get(5, "nc")) > 0
    m = build_array(comps, 2, 3)
    assert _coincidences_by_model(m) == _coincidences_by_geometry(m)


def test_non_conformal_border_is_reported(toy):
    mesh = toy.mesh()
    v = mesh.vertices.copy()
    on_border = np.flatnonzero((v[:, 0] == toy.pitch) & (v[:, 1] == 0.25) & (v[:, 2] == 0))
    v[on_border[0], 1] += 0.01
    comps = ComponentSet.from_mesh(TriangleMesh(v, mesh.triangles), toy.boxes(), toy.pitch)
    with pytest.raises(ConformityError, match="parts 0 and 1"):
        build_array(comps, 2, 2)


def test_missing_box_is_reported(toy):
    boxes = toy.boxes()
    del boxes[7]
    with pytest.raises(ConformityError, match="7"):
        ComponentSet.from_mesh(toy.mesh(), boxes, toy.pitch)
