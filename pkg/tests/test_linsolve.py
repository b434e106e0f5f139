import numpy as np
import pytest
import scipy.sparse.linalg as spla

from arraymom.array_model import COMPONENT_CELLS, ComponentSet, build_array
from arraymom.linsolve import (ExcitationSet, SolverError, ToeplitzOperator,
                               dense_solve, gmres_batch, iterative_solve,
                               schur_solve, solve, toeplitz_matvec)
from arraymom.partition import BoundingBox
from arraymom.toeplitz import StorageMode, assemble
from arraymom.toy import plate

from conftest import FEED_EDGE


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture(scope="module")
def op23(rep23):
    return ToeplitzOperator(rep23)


@pytest.fixture(scope="module")
def exc23(model23):
    return ExcitationSet.from_ports(model23, FEED_EDGE)


@pytest.fixture(scope="module")
def dense_result(rep23, exc23):
    return dense_solve(rep23, exc23)


# ----------------------------------------------------------------- excitation

def test_excitation_columns(model23, exc23):
    assert exc23.v.shape == (model23.n_unknowns, 6)
    e5 = model23.components.sizes()[5]
    rows = exc23.feed_rows(model23)
    assert rows.tolist() == [FEED_EDGE + n * e5 for n in range(6)]
    np.testing.assert_array_equal(exc23.v[rows, range(6)], 1)
    assert np.count_nonzero(exc23.v) == 6


@pytest.mark.parametrize("ports, message", [((), "no excitation"), ((6,), "not element"),
                                            ((1, 1), "duplicate")])
def test_excitation_errors(model23, ports, message):
    with pytest.raises(ValueError, match=message):
        ExcitationSet.from_ports(model23, FEED_EDGE, ports)


# ---------------------------------------------------------------------- dense

def test_dense_recovers_unit_vector(rep23, dense23):
    res = dense_solve(rep23, dense23[:, 0])
    e1 = np.zeros(len(dense23))
    e1[0] = 1
    assert np.abs(res.currents[:, 0] - e1).max() < 1e-10


def test_dense_residual(dense_result, dense23, exc23):
    r = dense23 @ dense_result.currents - exc23.v
    assert (np.linalg.norm(r, axis=0) / np.linalg.norm(exc23.v, axis=0)).max() < 1e-12
    assert dense_result.residuals.max() < 1e-12


def test_dense_singular(model23, params):
    rep = assemble(build_array(model23.components, 1, 1), params, StorageMode.FULL)
    rep.blocks[("Z",)][:, 1] = rep.blocks[("Z",)][:, 0]
    with pytest.raises(SolverError, match="singular"):
        dense_solve(rep, np.ones(rep.n_unknowns))


# --------------------------------------------------------------------- matvec

def test_matvec_zero(op23):
    np.testing.assert_array_equal(op23.matvec(np.zeros(op23.n)), 0)


def test_matvec_matches_dense_on_50_vectors(op23, dense23):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(op23.n, 50)) + 1j * rng.normal(size=(op23.n, 50))
    y = op23.matvec(x)
    for k in range(50):
        assert rel(y[:, k], dense23 @ x[:, k]) < 1e-12


def test_matvec_linearity(op23):
    rng = np.random.default_rng(2)
    x, w = rng.normal(size=(2, op23.n)) + 1j * rng.normal(size=(2, op23.n))
    a, b = 0.3 - 2j, 1.7 + 0.4j
    lhs = op23.matvec(a * x + b * w)
    assert rel(lhs, a * op23.matvec(x) + b * op23.matvec(w)) < 1e-12


def test_matvec_semisparse(model23, params, dense23):
    rep = assemble(model23, params, StorageMode.SEMISPARSE)
    x = np.random.default_rng(3).normal(size=dense23.shape[0]).astype(complex)
    assert rel(toeplitz_matvec(rep, x), dense23 @ x) < 1e-12


def test_matvec_dimension_check(op23):
    with pytest.raises(ValueError, match="entries"):
        op23.matvec(np.zeros(op23.n + 1))


def test_embedding_round_trip(op23, rep23):
    g = np.fft.ifft2(op23.ahat, axes=(0, 1))
    my, mx = op23.shape_a
    assert my >= 2 * rep23.ny - 1 and mx >= 2 * rep23.nx - 1
    for i in range(1 - rep23.ny, rep23.ny):
        for j in range(1 - rep23.nx, rep23.nx):
            gen = rep23.a_generator(i, j)
            assert np.abs(g[i % my, j % mx] - gen).max() <= 1e-14 * np.abs(gen).max()
    for *_, fwd, _ in op23.margin:
        back = np.fft.ifft(fwd.ghat, axis=0)
        assert fwd.size >= fwd.n_in + fwd.n_out - 1
        # unused wrap-around slots stay empty
        gap = back[fwd.n_out:fwd.size - fwd.n_in + 1]
        assert np.abs(gap).max(initial=0) < 1e-15


# -------------------------------------------------------------------- GMRES

def test_gmres_kernel_matches_scipy():
    rng = np.random.default_rng(4)
    n = 80
    a = np.eye(n) * 4 + rng.normal(size=(n, n)) / np.sqrt(n) + 1j * rng.normal(size=(n, n)) / n
    b = rng.normal(size=(n, 3)) + 0j
    x, res, _ = gmres_batch(lambda y: a @ y, b, tol=1e-12, restart=20)
    for k in range(3):
        ref, info = spla.gmres(a, b[:, k], rtol=1e-13, restart=20, maxiter=500)
        assert info == 0
        assert rel(x[:, k], ref) < 1e-10
    assert res.max() < 1e-12


def test_gmres_zero_rhs():
    x, res, its = gmres_batch(lambda y: 2 * y, np.zeros((5, 2), complex))
    np.testing.assert_array_equal(x, 0)
    assert its.tolist() == [0, 0]


def test_gmres_recovers_unit_vector(rep23, op23):
    e1 = np.zeros(op23.n, complex)
    e1[0] = 1
    res = iterative_solve(rep23, op23.matvec(e1), tol=1e-10)
    assert np.abs(res.currents[:, 0] - e1).max() < 1e-8


def test_gmres_agrees_with_dense(rep23, exc23, dense_result, op23):
    res = iterative_solve(rep23, exc23, tol=1e-10, operator=op23)
    assert res.residuals.max() < 1e-10
    for k in range(exc23.n_ports):
        assert rel(res.currents[:, k], dense_result.currents[:, k]) < 1e-8


def test_diagonal_preconditioning_needs_no_more_iterations(rep23, exc23, op23):
    rhs = exc23.v[:, :1]
    plain = iterative_solve(rep23, rhs, precondition="none", operator=op23)
    diag = iterative_solve(rep23, rhs, precondition="diagonal", operator=op23)
    assert diag.iterations[0] <= plain.iterations[0]


def test_near_field_preconditioner(rep23, exc23, dense_result, op23):
    near = iterative_solve(rep23, exc23, tol=1e-10, operator=op23)
    block = iterative_solve(rep23, exc23, tol=1e-10, precondition="block", operator=op23)
    assert near.iterations.max() * 5 < block.iterations.min()
    ref = dense_result.currents
    assert np.abs(near.currents - ref).max() / np.abs(ref).max() < 1e-8


def test_gmres_reports_non_convergence(rep23, exc23, op23):
    with pytest.raises(SolverError) as info:
        iterative_solve(rep23, exc23.v[:, :1], max_iter=5, operator=op23)
    assert info.value.residual > 1e-8


# --------------------------------------------------------------------- Schur

def test_schur_agrees_with_dense(rep23, exc23, dense_result, op23, dense23):
    res = schur_solve(rep23, exc23, operator=op23)
    for k in range(exc23.n_ports):
        assert rel(res.currents[:, k], dense_result.currents[:, k]) < 1e-8
    r = op23.matvec(res.currents) - exc23.v
    assert (np.linalg.norm(r, axis=0) / np.linalg.norm(exc23.v, axis=0)).max() < 1e-8


def test_schur_on_full_storage(model23, params, exc23, dense_result):
    rep = assemble(model23, params, StorageMode.FULL)
    res = solve(rep, exc23, "schur")
    assert rel(res.currents, dense_result.currents) < 1e-8


def test_schur_rejects_margin_excitation(rep23):
    v = np.zeros(rep23.n_unknowns)
    v[-1] = 1
    with pytest.raises(ValueError, match="margin"):
        schur_solve(rep23, v)


def test_schur_without_margin(params):
    # an isolated plate strictly inside the unit cell: every margin part is empty
    mesh = plate(2, 0.2)
    mesh = type(mesh)(mesh.vertices + [0.15, 0.15, 0], mesh.triangles)
    span = {-1: (-0.5, 0.0), 0: (0.0, 0.5), 1: (0.5, 1.0)}
    boxes = {c: BoundingBox((span[x][0], span[y][0], -1), (span[x][1], span[y][1], 1))
             for c, (x, y) in COMPONENT_CELLS.items()}
    comps = ComponentSet.from_mesh(mesh, boxes, 0.5)
    assert sum(comps.sizes().values()) == comps.sizes()[5]
    rep = assemble(build_array(comps, 3, 2), params)
    exc = ExcitationSet.from_ports(rep.model, 3)
    a = schur_solve(rep, exc, tol=1e-10)
    b = iterative_solve(rep, exc, tol=1e-10)
    c = dense_solve(rep, exc)
    assert rel(a.currents, c.currents) < 1e-8 and rel(b.currents, c.currents) < 1e-8


def test_unknown_method(rep23):
    with pytest.raises(ValueError):
        solve(rep23, np.ones(rep23.n_unknowns), "cholesky")
