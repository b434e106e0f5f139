"""Linear solvers for the part-ordered system Z I = V.

Three paths share one interface:

``dense_solve``
    LU factorization of the reconstructed matrix. Used as the reference.
``iterative_solve``
    Restarted GMRES on top of :class:`ToeplitzOperator`, whose matvec applies
    the element block through a two-level circulant embedding and FFTs.
``schur_solve``
    Eliminates the element unknowns with Toeplitz-aware GMRES solves and
    factors the small margin Schur complement densely.

Both iterative paths are left-preconditioned by default with a sparse LU of
the near field, meaning every block between parts in the same or adjacent
lattice cells.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .toeplitz import CORNERS, StorageMode

DEFAULT_TOL = 1e-8
DEFAULT_RESTART = 60
DEFAULT_MAXITER = 2000
PIVOT_FLOOR = 1e-14
NEAR_REACH = 1.6        # near-field radius in lattice pitches; takes in diagonal cells


class SolverError(RuntimeError):
    """Numerical failure: singular system or no convergence."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class ExcitationSet:
    """Unit voltage sources on one edge of selected element parts.

    ``feed_edge`` is the local edge index inside the element component and
    ``ports`` the element parts that are fed, one column of ``v`` per port.
    """
    v: np.ndarray
    feed_edge: int
    ports: tuple

    @property
    def n_ports(self):
        return self.v.shape[1]

    @classmethod
    def from_ports(cls, model, feed_edge, ports=None):
        e5 = model.components.sizes()[5]
        if not 0 <= feed_edge < e5:
            raise ValueError(f"feed edge {feed_edge} outside the element's "
                             f"{e5} edges")
        n_el = model.nx * model.ny
        ports = tuple(range(n_el)) if ports is None else tuple(int(p) for p in ports)
        if not ports:
            raise ValueError("no excitation: the port list is empty")
        bad = [p for p in ports if not 0 <= p < n_el]
        if bad:
            raise ValueError(f"ports {bad} are not element parts (0..{n_el - 1})")
        if len(set(ports)) != len(ports):
            raise ValueError("duplicate ports")
        v = np.zeros((model.n_unknowns, len(ports)), dtype=complex)
        for col, p in enumerate(ports):
            v[model.part_start[p] + feed_edge, col] = 1.0
        return cls(v, int(feed_edge), ports)

    def feed_rows(self, model):
        return np.array([model.part_start[p] + self.feed_edge for p in self.ports])


@dataclass(frozen=True)
class SolveResult:
    currents: np.ndarray       # (unknowns, ports)
    residuals: np.ndarray      # relative residual per column
    iterations: np.ndarray     # inner iterations per column (0 for direct)
    method: str


def _as_matrix(v):
    v = np.asarray(v, dtype=complex)
    return v[:, None] if v.ndim == 1 else v


def _excitation_matrix(v):
    return _as_matrix(v.v if isinstance(v, ExcitationSet) else v)


def _relative_residuals(apply, x, v):
    r = apply(x) - v
    vn = np.linalg.norm(v, axis=0)
    return np.linalg.norm(r, axis=0) / np.where(vn > 0, vn, 1.0)


def _next_pow2(n):
    return 1 << max(int(n) - 1, 0).bit_length()


# ------------------------------------------------------------------- dense

def dense_solve(rep, v):
    """Solve by LU of the reconstructed dense matrix."""
    z, _ = rep.reconstruct_full()
    v = _excitation_matrix(v)
    if v.shape[0] != z.shape[0]:
        raise ValueError(f"right-hand side has {v.shape[0]} rows, system has {z.shape[0]}")
    lu, piv = sla.lu_factor(z, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.size and pivots.min() < PIVOT_FLOOR * pivots.max():
        raise SolverError("impedance matrix is numerically singular")
    x = sla.lu_solve((lu, piv), v)
    res = _relative_residuals(lambda y: z @ y, x, v)
    return SolveResult(x, res, np.zeros(v.shape[1], dtype=int), "dense")


# ------------------------------------------------------------ fast matvec

class _Toeplitz1:
    """Sum over a Toeplitz index of block products, via a 1-level embedding.

    ``y[t] = sum_s sum_c G(t - s, c) x[s, c]`` for t in [0, n_out), s in
    [0, n_in), where ``gen(d, c)`` returns G(d, c). With ``spread=True``
    the sum over c is dropped: ``y[t, c] = sum_s G(t - s, c) x[s]``.
    """

    def __init__(self, gen, n_out, n_in, n_c, rows, cols, spread=False):
        self.n_out, self.n_in = n_out, n_in
        self.spread = spread
        self.size = _next_pow2(n_out + n_in - 1)
        g = np.zeros((self.size, n_c, rows, cols), dtype=complex)
        for d in range(1 - n_in, n_out):
            for c in range(n_c):
                g[d % self.size, c] = gen(d, c)
        self.ghat = np.fft.fft(g, axis=0)

    def apply(self, x):
        # x: (n_in, n_c, cols, k), or (n_in, cols, k) when spreading
        pad = np.zeros((self.size,) + x.shape[1:], dtype=complex)
        pad[:self.n_in] = x
        xhat = np.fft.fft(pad, axis=0)
        if self.spread:
            yhat = self.ghat @ xhat[:, None]
        else:
            yhat = (self.ghat @ xhat).sum(axis=1)
        return np.fft.ifft(yhat, axis=0)[:self.n_out]


class ToeplitzOperator:
    """Matrix-free Z for a sparse or semisparse representation."""

    def __init__(self, rep):
        self.rep = rep
        m = rep.model
        self.n = m.n_unknowns
        self.n_el = m.n_element_unknowns()
        nx, ny, e = m.nx, m.ny, rep.sizes
        self.nx, self.ny, self.e5 = nx, ny, e[5]
        if rep.mode is StorageMode.FULL:
            self.dense = rep.blocks[("Z",)]
            return
        self.dense = None
        # element block: two-level circulant embedding
        my, mx = _next_pow2(2 * ny - 1), _next_pow2(2 * nx - 1)
        g = np.zeros((my, mx, self.e5, self.e5), dtype=complex)
        for i in range(1 - ny, ny):
            for j in range(1 - nx, nx):
                g[i % my, j % mx] = rep.a_generator(i, j)
        self.shape_a = (my, mx)
        self.ahat = np.fft.fft2(g, axes=(0, 1))
        # margin/element coupling, Toeplitz along the margin direction
        lay = rep._lay
        self.margin = []
        base = m.n_element_unknowns()
        elem = lambda r, c: r * nx + c
        for g_id, comp in ((1, 2), (2, 8)):
            rows = e[comp]
            parts = [lay.part(g_id, r) for r in range(ny)]
            fwd = _Toeplitz1(lambda d, c, g_id=g_id: rep.block(
                *_b_pair(lay, g_id, d, c, ny)), ny, ny, nx, rows, self.e5)
            bwd = _Toeplitz1(lambda d, c, g_id=g_id: rep.block(
                *_b_pair(lay, g_id, -d, c, ny)).T, ny, ny, nx, self.e5, rows,
                spread=True)
            self.margin.append(("y", parts, rows, fwd, bwd))
        for g_id, comp in ((3, 6), (4, 4)):
            rows = e[comp]
            parts = [lay.part(g_id, c) for c in range(nx)]
            fwd = _Toeplitz1(lambda d, r, g_id=g_id: rep.block(
                *_b_pair(lay, g_id, d, r, nx)), nx, nx, ny, rows, self.e5)
            bwd = _Toeplitz1(lambda d, r, g_id=g_id: rep.block(
                *_b_pair(lay, g_id, -d, r, nx)).T, nx, nx, ny, self.e5, rows,
                spread=True)
            self.margin.append(("x", parts, rows, fwd, bwd))
        # corners and margin/margin interaction, blockwise
        self.corners = []
        for k, comp in enumerate(CORNERS):
            p = lay.part(5, k)
            blk = np.concatenate([rep.block(p, elem(r, c)) for r in range(ny)
                                  for c in range(nx)], axis=1)
            self.corners.append((m.part_slice(p), blk))
        self.c_blocks = []
        for p in range(nx * ny, m.n_parts):
            for q in range(nx * ny, m.n_parts):
                b = rep.block(p, q)
                if b.size:
                    self.c_blocks.append((m.part_slice(p), m.part_slice(q), b))
        self.base = base

    def diagonal(self):
        m = self.rep.model
        return np.concatenate([np.diag(self.rep.block(p, p)) for p in range(m.n_parts)])

    def apply_a(self, x):
        """Element block only; ``x`` has shape (n_el,) or (n_el, k)."""
        x2 = _as_matrix(x)
        k = x2.shape[1]
        my, mx = self.shape_a
        pad = np.zeros((my, mx, self.e5, k), dtype=complex)
        pad[:self.ny, :self.nx] = x2.reshape(self.ny, self.nx, self.e5, k)
        yhat = self.ahat @ np.fft.fft2(pad, axes=(0, 1))
        y = np.fft.ifft2(yhat, axes=(0, 1))[:self.ny, :self.nx]
        y = y.reshape(self.n_el, k)
        return y[:, 0] if np.ndim(x) == 1 else y

    def apply_b(self, x_el):
        """Margin rows of Z times element unknowns."""
        x2 = _as_matrix(x_el)
        k = x2.shape[1]
        m = self.rep.model
        y = np.zeros((self.n - self.n_el, k), dtype=complex)
        grid = x2.reshape(self.ny, self.nx, self.e5, k)
        for axis, parts, rows, fwd, _ in self.margin:
            if rows == 0:
                continue
            src = grid if axis == "y" else grid.transpose(1, 0, 2, 3)
            out = fwd.apply(src)
            for t, p in enumerate(parts):
                sl = m.part_slice(p)
                y[sl.start - self.n_el:sl.stop - self.n_el] = out[t]
        for sl, blk in self.corners:
            y[sl.start - self.n_el:sl.stop - self.n_el] = blk @ x2
        return y if np.ndim(x_el) > 1 else y[:, 0]

    def apply_bt(self, x_m):
        """Element rows of Z times margin unknowns."""
        x2 = _as_matrix(x_m)
        k = x2.shape[1]
        m = self.rep.model
        y = np.zeros((self.ny, self.nx, self.e5, k), dtype=complex)
        for axis, parts, rows, _, bwd in self.margin:
            if rows == 0:
                continue
            stack = np.stack([x2[m.part_slice(p).start - self.n_el:
                                 m.part_slice(p).stop - self.n_el] for p in parts])
            out = bwd.apply(stack)      # (n_out, n_c, e5, k)
            y += out if axis == "y" else out.transpose(1, 0, 2, 3)
        y = y.reshape(self.n_el, k)
        for sl, blk in self.corners:
            y += blk.T @ x2[sl.start - self.n_el:sl.stop - self.n_el]
        return y if np.ndim(x_m) > 1 else y[:, 0]

    def matvec(self, x):
        x = np.asarray(x, dtype=complex)
        if x.shape[0] != self.n:
            raise ValueError(f"vector has {x.shape[0]} entries, operator has {self.n}")
        if self.dense is not None:
            return self.dense @ x
        x2 = _as_matrix(x)
        xe, xm = x2[:self.n_el], x2[self.n_el:]
        y = np.empty_like(x2)
        y[:self.n_el] = self.apply_a(xe) + self.apply_bt(xm)
        ym = self.apply_b(xe)
        for sp, sq, b in self.c_blocks:
            ym[sp.start - self.n_el:sp.stop - self.n_el] += \
                b @ xm[sq.start - self.n_el:sq.stop - self.n_el]
        y[self.n_el:] = ym
        return y if x.ndim > 1 else y[:, 0]

    def margin_matrix(self):
        """Dense C (margin/margin block)."""
        nm = self.n - self.n_el
        c = np.zeros((nm, nm), dtype=complex)
        for sp, sq, b in self.c_blocks:
            c[sp.start - self.n_el:sp.stop - self.n_el,
              sq.start - self.n_el:sq.stop - self.n_el] = b
        return c


def _b_pair(lay, g_id, shift, index, count):
    """Parts (margin, element) with the given Toeplitz shift along the margin."""
    margin_idx = max(shift, 0)
    elem_idx = max(-shift, 0)
    if g_id in (1, 2):
        return lay.part(g_id, margin_idx), lay.part(0, (elem_idx, index))
    return lay.part(g_id, margin_idx), lay.part(0, (index, elem_idx))


def toeplitz_matvec(rep, x):
    return ToeplitzOperator(rep).matvec(x)


# ---------------------------------------------------------------- iterative

def _gmres_cycle(apply, precond, x, b, restart, target):
    """One restart cycle for every column of ``b``; columns stay independent.

    Returns the updated ``x`` and the Arnoldi steps taken per column.
    """
    n, k = b.shape
    r = precond(b - apply(x)).T
    beta = np.linalg.norm(r, axis=1)
    # Krylov vectors stored per column: basis[c, i] is the i-th vector of column c
    basis = np.zeros((k, restart + 1, n), dtype=complex)
    hess = np.zeros((k, restart + 1, restart), dtype=complex)
    cs = np.zeros((restart, k), dtype=complex)
    sn = np.zeros((restart, k), dtype=complex)
    g = np.zeros((restart + 1, k), dtype=complex)
    g[0] = beta
    basis[:, 0] = r / np.where(beta > 0, beta, 1.0)[:, None]
    steps = np.full(k, restart)
    done = beta <= target
    steps[done] = 0
    for j in range(restart):
        if done.all():
            break
        w = precond(apply(basis[:, j].T)).T
        col = np.zeros((k, j + 1), dtype=complex)
        for i in range(j + 1):      # modified Gram-Schmidt, per column
            h = np.einsum("kn,kn->k", basis[:, i].conj(), w)
            col[:, i] = h
            w = w - basis[:, i] * h[:, None]
        h_next = np.linalg.norm(w, axis=1)
        basis[:, j + 1] = w / np.where(h_next > 0, h_next, 1.0)[:, None]
        for i in range(j):          # earlier Givens rotations
            a, c = col[:, i].copy(), col[:, i + 1].copy()
            col[:, i] = cs[i].conj() * a + sn[i].conj() * c
            col[:, i + 1] = -sn[i] * a + cs[i] * c
        a, c = col[:, j], h_next
        denom = np.sqrt(np.abs(a) ** 2 + c ** 2)
        safe = np.where(denom > 0, denom, 1.0)
        cs[j] = np.where(denom > 0, a / safe, 1.0)
        sn[j] = np.where(denom > 0, c / safe, 0.0)
        col[:, j] = denom
        hess[:, :j + 1, j] = col
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j].conj() * g[j]
        newly = ~done & ((np.abs(g[j + 1]) <= target) | (h_next == 0))
        steps[newly] = j + 1
        done |= newly
    x = x.copy()
    for c_ in range(k):
        m = steps[c_]
        if m == 0:
            continue
        y = sla.solve_triangular(hess[c_, :m, :m], g[:m, c_])
        x[:, c_] += basis[c_, :m].T @ y
    return x, steps


def gmres_batch(apply, b, tol=DEFAULT_TOL, restart=DEFAULT_RESTART,
                max_iter=DEFAULT_MAXITER, precond=None):
    """Restarted GMRES run on all columns of ``b`` in lockstep.

    Every column builds its own Krylov space; running them together only
    batches the operator applications. ``precond`` (left preconditioner)
    maps an (n, k) block to an (n, k) block. ``max_iter`` bounds the inner
    iterations per column. Convergence is judged on the true residual
    ``|b - A x| / |b| < tol``.
    """
    b = _as_matrix(b)
    n, k = b.shape
    precond = precond or (lambda y: y)
    restart = max(1, min(restart, n))
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b, axis=0)
    safe = np.where(bnorm > 0, bnorm, 1.0)
    its = np.zeros(k, dtype=int)
    res = np.zeros(k)
    active = bnorm > 0
    # target on the preconditioned residual, tightened if the true residual lags
    scale = np.linalg.norm(precond(b), axis=0) / safe
    factor = np.full(k, 0.5)
    while active.any():
        cols = np.flatnonzero(active)
        target = tol * factor[cols] * scale[cols] * bnorm[cols]
        budget = min(restart, int(max_iter - its[cols].max()))
        if budget <= 0:
            break
        xc, steps = _gmres_cycle(apply, precond, x[:, cols], b[:, cols], budget,
                                 target)
        x[:, cols] = xc
        its[cols] += steps
        true = np.linalg.norm(apply(xc) - b[:, cols], axis=0) / bnorm[cols]
        res[cols] = true
        finished = true < tol
        stalled = ~finished & (steps < budget)
        factor[cols[stalled]] *= 0.1
        active[cols[finished]] = False
        if (factor < 1e-8).any():
            break
    if active.any():
        worst = float(res[active].max())
        raise SolverError(f"GMRES did not converge for {int(active.sum())} column(s) "
                          f"within {max_iter} iterations (residual {worst:.3e})",
                          residual=worst)
    return x, res, its


def _preconditioner(op, kind, n=None):
    if kind in (None, False, "none"):
        return None
    if kind in (True, "diagonal"):
        inv = 1.0 / op.diagonal()
        if n is not None:
            inv = inv[:n]
        return lambda y: inv[:, None] * y
    if kind == "block":
        return _block_jacobi(op, op.n if n is None else n)
    if kind == "nearfield":
        return _near_field(op, op.n if n is None else n)
    raise ValueError(f"unknown preconditioner {kind!r}")


def _block_jacobi(op, n):
    """Inverse self blocks of every part; element parts share one inverse."""
    rep = op.rep
    m = rep.model
    n_el, e5 = op.n_el, op.e5
    inv5 = np.linalg.inv(rep.block(0, 0))
    margin = []
    for p in range(m.nx * m.ny, m.n_parts):
        sl = m.part_slice(p)
        if sl.stop > sl.start and sl.stop <= n:
            margin.append((sl, np.linalg.inv(rep.block(p, p))))

    def apply(y):
        out = np.empty_like(y)
        out[:n_el] = (inv5 @ y[:n_el].reshape(-1, e5, y.shape[1])).reshape(n_el, -1)
        for sl, inv in margin:
            out[sl] = inv @ y[sl]
        return out
    return apply


def _near_field(op, n):
    """Sparse LU of all blocks between parts in the same or adjacent cells.

    Only parts whose unknowns lie below ``n`` take part, so the element
    system of the block elimination gets an element-only near field.
    """
    rep = op.rep
    m = rep.model
    reach = NEAR_REACH * max(m.components.pitch)
    parts = [p for p in range(m.n_parts)
             if m.part_slice(p).stop > m.part_slice(p).start and m.part_slice(p).stop <= n]
    centre = {p: m.data(p).tri_corners.mean(axis=(0, 1))[:2] + m.offsets[p][:2]
              for p in parts}
    rows, cols, vals = [], [], []
    for p in parts:
        sp = m.part_slice(p)
        for q in parts:
            if np.linalg.norm(centre[p] - centre[q]) > reach:
                continue
            sq = m.part_slice(q)
            r, c = np.meshgrid(np.arange(sp.start, sp.stop), np.arange(sq.start, sq.stop),
                               indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(np.asarray(rep.block(p, q)).ravel())
    near = sps.csc_matrix((np.concatenate(vals), (np.concatenate(rows),
                                                  np.concatenate(cols))), shape=(n, n))
    try:
        lu = spla.splu(near)
    except RuntimeError as exc:
        raise SolverError(f"near-field preconditioner is singular: {exc}") from None
    return lambda y: lu.solve(np.asarray(y, dtype=complex))


def iterative_solve(rep, v, tol=DEFAULT_TOL, max_iter=DEFAULT_MAXITER,
                    restart=DEFAULT_RESTART, precondition="nearfield", operator=None):
    """Columnwise restarted GMRES with the FFT matvec.

    ``max_iter`` bounds the total number of inner iterations per column.
    """
    op = operator or ToeplitzOperator(rep)
    v = _excitation_matrix(v)
    if v.shape[0] != op.n:
        raise ValueError(f"right-hand side has {v.shape[0]} rows, system has {op.n}")
    x, res, its = gmres_batch(op.matvec, v, tol, restart, max_iter,
                              _preconditioner(op, precondition))
    return SolveResult(x, res, its, "gmres")


def schur_solve(rep, v, tol=DEFAULT_TOL, inner_tol=1e-11, max_iter=DEFAULT_MAXITER,
                restart=DEFAULT_RESTART, precondition="nearfield", operator=None):
    """Block elimination for excitations that vanish on the margin.

    Solves A [U F] = [V1 B^T] iteratively, then
    (C - B F) I2 = -B U densely and I1 = U - F I2.
    """
    op = operator or ToeplitzOperator(rep)
    v = _excitation_matrix(v)
    n_el = op.n_el
    if v.shape[0] != op.n:
        raise ValueError(f"right-hand side has {v.shape[0]} rows, system has {op.n}")
    if np.any(v[n_el:] != 0):
        raise ValueError("block elimination needs excitations that vanish on "
                         "the margin unknowns")
    n_m = op.n - n_el
    if op.dense is not None:
        z = op.dense
        apply_a = lambda x: z[:n_el, :n_el] @ x
        bt = np.array(z[:n_el, n_el:])
        b_apply = lambda x: z[n_el:, :n_el] @ x
        c = np.array(z[n_el:, n_el:])
    else:
        apply_a = op.apply_a
        bt = op.apply_bt(np.eye(n_m, dtype=complex)) if n_m else np.zeros((n_el, 0))
        b_apply = op.apply_b
        c = op.margin_matrix()
    rhs = np.concatenate([v[:n_el], bt], axis=1)
    sol, _, its = gmres_batch(apply_a, rhs, inner_tol, restart, max_iter,
                              _preconditioner(op, precondition, n_el))
    u, f = sol[:, :v.shape[1]], sol[:, v.shape[1]:]
    if n_m:
        schur = c - _as_matrix(b_apply(f))
        lu, piv = sla.lu_factor(schur)
        pivots = np.abs(np.diag(lu))
        if pivots.min() < PIVOT_FLOOR * pivots.max():
            raise SolverError("margin Schur complement is numerically singular")
        i2 = -sla.lu_solve((lu, piv), _as_matrix(b_apply(u)))
        i1 = u - f @ i2
    else:
        i1, i2 = u, np.zeros((0, v.shape[1]), dtype=complex)
    x = np.concatenate([i1, i2], axis=0)
    res = _relative_residuals(op.matvec, x, v)
    if np.any(res > tol):
        raise SolverError(f"block elimination residual {res.max():.3e} above {tol:g}",
                          residual=float(res.max()))
    return SolveResult(x, res, its[:v.shape[1]], "schur")


def solve(rep, v, method="gmres", **kw):
    if method == "dense":
        return dense_solve(rep, v)
    if method == "gmres":
        return iterative_solve(rep, v, **kw)
    if method == "schur":
        return schur_solve(rep, v, **kw)
    raise ValueError(f"unknown solver {method!r}")
