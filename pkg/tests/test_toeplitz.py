import random

import numpy as np
import pytest

from arraymom.array_model import ComponentSet, build_array
from arraymom.direct import direct_impedance, glue_array_mesh, translation_index
from arraymom.kernel import GeometryError, KernelParams
from arraymom.mesh import build_rwg_basis
from arraymom.toeplitz import (MAGIC, CacheError, StorageMode, approx_memory,
                               assemble, b_block_map, c_block_map, key_parts,
                               load_cache, locate_a_block, memory_report,
                               read_cache_header, save_cache, sparse_keys)
from arraymom.toy import StripArray

from conftest import max_rel, permuted_direct
from oracles import mem_closed_form


def counted_entries(nx, ny, sizes, components):
    """Entries of the blocks a sparse assembly stores, from their part pairs."""
    model = build_array(components, nx, ny)
    total = 0
    for key in sparse_keys(nx, ny):
        p, q = key_parts(key, nx, ny)
        total += model.data(p).n_edges * model.data(q).n_edges
    return total


# --------------------------------------------------------------- index maps

@pytest.mark.parametrize("i, j, nx, expected", [
    (0, 0, 4, (0, 0)), (0, 1, 4, (1, 0)), (0, -1, 4, (0, 1)), (1, 0, 4, (4, 0)),
    (2, -3, 4, (8, 3)),
])
def test_locate_a_block(i, j, nx, expected):
    assert locate_a_block(i, j, nx, 6) == expected


def test_locate_a_block_range():
    with pytest.raises(IndexError):
        locate_a_block(6, 0, 4, 6)
    with pytest.raises(IndexError):
        locate_a_block(0, 4, 4, 6)


def test_first_margin_maps():
    nx, ny = 4, 6
    assert c_block_map("C11", 0, nx, ny) == (nx * ny, nx * ny)
    assert b_block_map("B1", 0, 0, nx, ny) == (nx * ny, 0)
    with pytest.raises(KeyError):
        b_block_map("B5", 0, 0, nx, ny)


def test_maps_reproduce_every_block(rep23, dense23, direct23):
    # every stored block, placed by its map, equals the oracle entries
    oracle = permuted_direct(direct23)
    m = rep23.model
    for key, blk in rep23.blocks.items():
        p, q = key_parts(key, m.nx, m.ny)
        ref = oracle[m.part_slice(p), m.part_slice(q)]
        if blk.size:
            assert np.abs(blk - ref).max() <= 1e-12 * np.abs(oracle).max(), key


# ------------------------------------------------------------------ assembly

@pytest.mark.parametrize("nx, ny, count", [(4, 6, 39), (1, 1, 1), (2, 3, 8), (5, 2, 14)])
def test_unique_a_blocks(components, nx, ny, count):
    keys = [k for k in sparse_keys(nx, ny) if k[0] == "A"]
    assert len(keys) == count == nx * ny + (nx - 1) * (ny - 1)


def test_assembled_a_block_count(rep23):
    assert rep23.a_block_count() == 2 * 3 + 1 * 2
    assert set(rep23.blocks) == set(sparse_keys(2, 3))


def test_single_element_a_is_one_self_block(components, params):
    rep = assemble(build_array(components, 1, 1), params)
    assert rep.a_block_count() == 1
    assert rep.memory_report().mem_a == components.sizes()[5] ** 2


def test_sparse_equals_direct_oracle(dense23, direct23):
    assert max_rel(dense23, permuted_direct(direct23)) < 1e-12


def test_modes_agree_bitwise(model23, params, rep23, dense23):
    for mode in (StorageMode.SEMISPARSE, StorageMode.FULL):
        rep = assemble(model23, params, mode)
        z, _ = rep.reconstruct_full()
        np.testing.assert_array_equal(z, dense23)
        assert rep.stored_entries() == rep.memory_report().total


def test_full_reconstruction_returns_stored_data(model23, params):
    rep = assemble(model23, params, StorageMode.FULL)
    z, index = rep.reconstruct_full()
    np.testing.assert_array_equal(z, rep.blocks[("Z",)])
    assert len(index) == model23.n_unknowns


def test_symmetric(dense23):
    assert np.abs(dense23 - dense23.T).max() / np.abs(dense23).max() < 1e-10


def test_a_is_two_level_toeplitz(rep23):
    m = rep23.model
    for r in range(m.ny):
        for c in range(m.nx):
            for r2 in range(m.ny):
                for c2 in range(m.nx):
                    blk = rep23.block(m.element_part(r, c), m.element_part(r2, c2))
                    np.testing.assert_array_equal(blk, rep23.a_generator(r - r2, c - c2))


def test_stored_entries_match_report(rep23):
    assert rep23.stored_entries() == rep23.memory_report().total


def test_threads_do_not_change_blocks(model23, params, rep23):
    rep = assemble(model23, params, StorageMode.SPARSE, threads=3)
    for key, blk in rep23.blocks.items():
        np.testing.assert_array_equal(rep.blocks[key], blk)


def test_translation_index(rep23, direct23):
    basis, z, index, sign = direct23
    assert sorted(index) == list(range(len(basis)))
    assert len(rep23.global_edge_index()) == rep23.n_unknowns


def test_diagonal_sharing_against_direct_mesh(params):
    toy = StripArray(staggered=True, margin=2)
    comps = ComponentSet.from_mesh(toy.mesh(), toy.boxes(), toy.pitch)
    model = build_array(comps, 2, 2)
    z, _ = assemble(model, params).reconstruct_full()
    basis = build_rwg_basis(glue_array_mesh(model))
    index, sign = translation_index(model, basis)
    ref = direct_impedance(basis, params)
    assert max_rel(z, sign[:, None] * sign[None, :] * ref[np.ix_(index, index)]) < 1e-12


def test_kernel_errors_name_the_parts(model23):
    bad = KernelParams(2 * np.pi, singular_refinement_depth=0)
    # corrupt the declared pairs of one part couple to trigger a geometry error
    model = build_array(model23.components, 2, 3)
    model._pairs[(0, 1)] = np.zeros((0, 2), dtype=np.int64)
    with pytest.raises(GeometryError, match="block of parts 0 and 1"):
        assemble(model, bad)


# -------------------------------------------------------------------- memory

def test_memory_closed_form_all_sizes(components):
    sizes = components.sizes()
    for nx in range(1, 7):
        for ny in range(1, 7):
            rep = memory_report(nx, ny, sizes)
            assert (rep.mem_a, rep.mem_b, rep.mem_c) == mem_closed_form(nx, ny, sizes)
            assert counted_entries(nx, ny, sizes, components) == rep.total


def test_memory_single_element():
    e = {c: c + 3 for c in range(1, 10)}
    assert memory_report(1, 1, e).mem_a == e[5] ** 2


def test_equal_count_closed_form_random_pairs():
    rng = random.Random(20)
    for _ in range(20):
        nx, ny = rng.randint(1, 40), rng.randint(1, 40)
        E, m, c = rng.randint(0, 500), rng.randint(0, 200), rng.randint(0, 50)
        e = {5: E, 2: m, 8: m, 6: m, 4: m, 3: c, 9: c, 1: c, 7: c}
        assert sum(mem_closed_form(nx, ny, e)) == approx_memory(nx, ny, E, m, c)
        assert memory_report(nx, ny, e).approx == memory_report(nx, ny, e).total


def test_mode_ordering(components):
    sizes = components.sizes()
    totals = [memory_report(4, 6, sizes, m).total for m in
              (StorageMode.FULL, StorageMode.SEMISPARSE, StorageMode.SPARSE)]
    assert totals[0] > totals[1] > totals[2]


def _slope(xs, ys):
    return np.polyfit(np.log(xs), np.log(ys), 1)[0]


def test_growth_rates():
    # interior-dominated counts so that margin terms are small
    e = {5: 400, 2: 4, 8: 4, 6: 4, 4: 4, 3: 1, 9: 1, 1: 1, 7: 1}
    n = np.array([8, 16, 32, 64])
    sparse = [memory_report(k, k, e, StorageMode.SPARSE).total for k in n]
    full = [memory_report(k, k, e, StorageMode.FULL).total for k in n]
    semi = [memory_report(k, 4 * k, e, StorageMode.SEMISPARSE).total for k in n]
    assert _slope(n * n, sparse) == pytest.approx(1, rel=0.1)
    assert _slope(n * n, full) == pytest.approx(2, rel=0.1)
    # nx^2 ny with ny = 4 nx grows as n^3
    assert _slope(n, semi) == pytest.approx(3, rel=0.1)


# --------------------------------------------------------------------- cache

def test_cache_round_trip(tmp_path, rep23):
    path = tmp_path / "z.ztoe"
    save_cache(rep23, path, {"digest": "abc"})
    assert path.read_bytes()[:5] == MAGIC
    assert read_cache_header(path)["digest"] == "abc"
    again, header = load_cache(path, rep23.model)
    assert again.mode is rep23.mode and set(again.blocks) == set(rep23.blocks)
    for key, blk in rep23.blocks.items():
        np.testing.assert_array_equal(again.blocks[key], blk)


def test_cache_rejects_other_files(tmp_path, rep23, components):
    junk = tmp_path / "junk"
    junk.write_bytes(b"hello world")
    with pytest.raises(CacheError):
        load_cache(junk, rep23.model)
    path = tmp_path / "z.ztoe"
    save_cache(rep23, path)
    with pytest.raises(CacheError, match="does not match"):
        load_cache(path, build_array(components, 3, 2))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CacheError, match="truncated"):
        load_cache(path, rep23.model)
