"""Command-line front end.

    arraymom assemble  --config run.cfg   # block cache + memory report
    arraymom solve     --config run.cfg   # port currents, residuals, surface current
    arraymom farfield  --config run.cfg   # directivity cuts
    arraymom sparams   --config run.cfg   # S-parameters and TARC
    arraymom memreport --config run.cfg   # entry counts for every mode
    arraymom validate  --config run.cfg   # oracle checks on a small array

Exit status: 0 on success, 1 for configuration or input errors, 2 for
numerical failures (including failed validation checks).
"""
import csv
import logging
import sys
import time
from pathlib import Path

import click
import numpy as np

from .array_model import ComponentSet, ConformityError, build_array
from .config import ConfigError, load_config
from .direct import direct_impedance, glue_array_mesh, translation_index
from .kernel import ETA0, GeometryError, KernelParams
from .linsolve import ExcitationSet, SolverError, ToeplitzOperator, solve
from .mesh import MeshError, build_rwg_basis, load_mesh
from .partition import PartitionError
from .postproc import (array_farfield, component_tensors, cut_grid, directivity,
                       export_surface_current, port_network, radiated_power,
                       sphere_grid, tarc, to_db, write_current_csv, write_cut_csv,
                       write_sparams_csv, write_tarc_csv)
from .toeplitz import (CacheError, StorageMode, assemble, load_cache, memory_report,
                       read_cache_header, save_cache)

log = logging.getLogger("arraymom")

USER_ERRORS = (ConfigError, MeshError, PartitionError, ConformityError, CacheError,
               FileNotFoundError)
NUMERIC_ERRORS = (SolverError, GeometryError, np.linalg.LinAlgError)
CACHE_NAME = "zmatrix.ztoe"


class ValidationFailed(RuntimeError):
    pass


class Run:
    """Lazily built pipeline state for one command."""

    def __init__(self, cfg):
        self.cfg = cfg
        self._components = self._model = self._rep = self._result = None
        self._exc = None

    @property
    def params(self):
        return KernelParams(self.cfg.k, quadrature_order=self.cfg.quadrature_order,
                            singular_refinement_depth=self.cfg.singular_depth)

    @property
    def components(self):
        if self._components is None:
            mesh = load_mesh(self.cfg.mesh_path)
            self._components = ComponentSet.from_mesh(mesh, self.cfg.boxes,
                                                      self.cfg.pitch)
        return self._components

    def model(self, nx=None, ny=None):
        if nx is not None:
            return build_array(self.components, nx, ny)
        if self._model is None:
            self._model = build_array(self.components, self.cfg.nx, self.cfg.ny)
        return self._model

    def feed_edge(self):
        cfg = self.cfg
        d5 = self.components.components[5]
        if cfg.feed_edge is not None:
            if not 0 <= cfg.feed_edge < d5.n_edges:
                raise ConfigError(f"feed.edge {cfg.feed_edge} outside the element's "
                                  f"{d5.n_edges} edges")
            return cfg.feed_edge
        dist = np.linalg.norm(d5.edge_center - np.asarray(cfg.feed_point), axis=1)
        return int(np.argmin(dist))

    def representation(self):
        if self._rep is not None:
            return self._rep
        cache = self.cfg.out_dir / CACHE_NAME
        digest = self.cfg.geometry_digest()
        if cache.is_file():
            try:
                head = read_cache_header(cache)
            except CacheError:
                head = {}
            if head.get("digest") == digest and head.get("mode") == self.cfg.mode.value:
                log.info("reusing block cache %s", cache)
                self._rep, _ = load_cache(cache, self.model())
                return self._rep
        t = time.perf_counter()
        self._rep = assemble(self.model(), self.params, self.cfg.mode, self.cfg.threads)
        log.info("assembled %s representation in %.2f s", self.cfg.mode.value,
                 time.perf_counter() - t)
        self.cfg.out_dir.mkdir(parents=True, exist_ok=True)
        save_cache(self._rep, cache, {"digest": digest})
        return self._rep

    def excitation(self):
        if self._exc is None:
            if self.cfg.ports == ():
                raise ConfigError("no excitation: the port list is empty")
            try:
                self._exc = ExcitationSet.from_ports(self.model(), self.feed_edge(),
                                                     self.cfg.ports)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return self._exc

    def solution(self):
        if self._result is None:
            cfg = self.cfg
            kw = {}
            if cfg.solver in ("gmres", "schur"):
                kw = dict(tol=cfg.tol, restart=cfg.restart, max_iter=cfg.max_iter,
                          precondition=cfg.preconditioner)
            self._result = solve(self.representation(), self.excitation(),
                                 cfg.solver, **kw)
            if np.any(self._result.residuals > max(cfg.tol, 1e-12)):
                raise SolverError(f"residual {self._result.residuals.max():.3e} above "
                                  f"tolerance {cfg.tol:g}")
        return self._result


def _fmt(x):
    return f"{float(x):.12e}"


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _memory_rows(model):
    sizes = model.components.sizes()
    rows = []
    for mode in StorageMode:
        rep = memory_report(model.nx, model.ny, sizes, mode)
        rows.append([mode.value, rep.mem_a, rep.mem_b, rep.mem_c, rep.total,
                     "" if rep.approx is None else rep.approx])
    return rows


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Finite-array method-of-moments solver with block-Toeplitz storage."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)


def _common(f):
    f = click.option("--out", type=click.Path(file_okay=False, path_type=Path),
                     help="Output directory (overrides output.dir).")(f)
    f = click.option("--threads", type=click.IntRange(min=1),
                     help="Worker cap for block assembly.")(f)
    f = click.option("--solver", type=click.Choice(["dense", "gmres", "schur"]),
                     help="Linear solver (overrides solver.method).")(f)
    f = click.option("--mode", type=click.Choice([m.value for m in StorageMode]),
                     help="Storage mode (overrides storage.mode).")(f)
    f = click.option("--config", "config_path", required=True,
                     type=click.Path(path_type=Path), help="Run configuration file.")(f)
    return f


def _run(config_path, mode, solver, threads, out):
    cfg = load_config(config_path)
    cfg = cfg.with_overrides(mode=StorageMode(mode) if mode else None, solver=solver,
                             threads=threads,
                             out_dir=out.resolve() if out else None)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return Run(cfg)


@cli.command("assemble")
@_common
def cmd_assemble(config_path, mode, solver, threads, out):
    """Assemble the impedance blocks and write the cache and memory report."""
    run = _run(config_path, mode, solver, threads, out)
    rep = run.representation()
    model = run.model()
    mem = rep.memory_report()
    lines = [f"mode = {rep.mode.value}", f"nx = {model.nx}", f"ny = {model.ny}",
             "edges = " + " ".join(f"e{c}:{n}" for c, n in sorted(rep.sizes.items())),
             f"unknowns = {model.n_unknowns}", f"a_blocks = {rep.a_block_count()}",
             f"mem_a = {mem.mem_a}", f"mem_b = {mem.mem_b}", f"mem_c = {mem.mem_c}",
             f"mem_total = {mem.total}", f"stored_entries = {rep.stored_entries()}"]
    if mem.approx is not None:
        lines.append(f"mem_approx = {mem.approx}")
    text = "\n".join(lines) + "\n"
    (run.cfg.out_dir / "memory_report.txt").write_text(text)
    click.echo(text, nl=False)


@cli.command("solve")
@_common
def cmd_solve(config_path, mode, solver, threads, out):
    """Solve for every configured port and write currents and residuals."""
    run = _run(config_path, mode, solver, threads, out)
    res = run.solution()
    model, exc = run.model(), run.excitation()
    rows = []
    for col, port in enumerate(exc.ports):
        for p in range(model.n_parts):
            sl = model.part_slice(p)
            for local, val in enumerate(res.currents[sl, col]):
                rows.append([port, sl.start + local, p, local, _fmt(val.real),
                             _fmt(val.imag)])
    _write_rows(run.cfg.out_dir / "currents.csv",
                ["port", "unknown", "part", "local_edge", "re", "im"], rows)
    _write_rows(run.cfg.out_dir / "residuals.csv", ["port", "residual", "iterations"],
                [[port, _fmt(r), int(i)] for port, r, i in
                 zip(exc.ports, res.residuals, res.iterations)])
    field = export_surface_current(res.currents @ _port_weights(run.cfg, exc), model)
    write_current_csv(run.cfg.out_dir / "surface_current.csv", field)
    click.echo(f"solved {len(exc.ports)} port(s) with {res.method}; "
               f"max residual {res.residuals.max():.3e}")


def _port_weights(cfg, exc):
    """Port amplitudes selected by ``farfield.excitation``."""
    if cfg.excitation == "uniform":
        return np.ones(exc.n_ports)
    port = int(cfg.excitation)
    if port not in exc.ports:
        raise ConfigError(f"farfield.excitation port {port} is not a solved port")
    a = np.zeros(exc.n_ports)
    a[exc.ports.index(port)] = 1.0
    return a


@cli.command("farfield")
@_common
def cmd_farfield(config_path, mode, solver, threads, out):
    """Directivity cuts in the two principal planes."""
    run = _run(config_path, mode, solver, threads, out)
    cfg, model = run.cfg, run.model()
    res = run.solution()
    a = _port_weights(cfg, run.excitation())
    sphere = sphere_grid(cfg.n_theta, cfg.n_phi)
    tens = component_tensors(model, sphere.theta, sphere.phi, cfg.k, cfg.axis,
                             cfg.quadrature_order)
    power = radiated_power(array_farfield(tens, res.currents, model, cfg.k, ETA0, a),
                           sphere.weights)
    for plane in ("u", "v"):
        grid, ang = cut_grid(plane, cfg.cut_points)
        tens = component_tensors(model, grid.theta, grid.phi, cfg.k, cfg.axis,
                                 cfg.quadrature_order)
        d = directivity(array_farfield(tens, res.currents, model, cfg.k, ETA0, a), power)
        write_cut_csv(cfg.out_dir / f"cut_{plane}.csv", ang, to_db(d[:, 0]),
                      to_db(d[:, 1]))
    click.echo(f"wrote cut_u.csv and cut_v.csv to {cfg.out_dir}")


@cli.command("sparams")
@_common
def cmd_sparams(config_path, mode, solver, threads, out):
    """Scattering matrix of the configured ports and TARC versus scan angle."""
    run = _run(config_path, mode, solver, threads, out)
    cfg, model = run.cfg, run.model()
    res, exc = run.solution(), run.excitation()
    d5 = model.components.components[5]
    net = port_network(res.currents, exc.feed_rows(model), d5.edge_length[exc.feed_edge],
                       cfg.z0)
    write_sparams_csv(cfg.out_dir / "sparams.csv", net.s, cfg.frequency)
    # progressive phase along the polarisation axis
    centres = np.array([model.offsets[p][:2] for p in exc.ports])
    along = centres[:, 0] if cfg.axis == "x" else centres[:, 1]
    angles = np.arange(-60, 61, 5, dtype=float)
    values = [tarc(net.s, np.exp(-1j * cfg.k * along * np.sin(np.radians(t))))
              for t in angles]
    write_tarc_csv(cfg.out_dir / "tarc.csv", "scan_deg", angles, to_db(np.square(values)))
    click.echo(f"wrote sparams.csv ({net.s.shape[0]} port(s)) and tarc.csv")


@cli.command("memreport")
@_common
def cmd_memreport(config_path, mode, solver, threads, out):
    """Stored complex entries for every storage mode (no assembly)."""
    run = _run(config_path, mode, solver, threads, out)
    rows = _memory_rows(run.model())
    _write_rows(run.cfg.out_dir / "memreport.csv",
                ["mode", "mem_a", "mem_b", "mem_c", "total", "approx"], rows)
    for r in rows:
        click.echo(f"{r[0]:>10}  total {r[4]}")


def validation_checks(run, cap=3, vectors=10, seed=0):
    """List of (name, passed, measured) on an array capped at ``cap`` x ``cap``."""
    cfg = run.cfg
    nx, ny = min(cfg.nx, cap), min(cfg.ny, cap)
    checks = []
    comps = run.components
    basis = build_rwg_basis(load_mesh(cfg.mesh_path))
    covered = sum(comps.sizes().values())
    checks.append(("partition coverage", covered == len(basis),
                   f"{covered} of {len(basis)} edges"))
    model = run.model(nx, ny)
    checks.append(("conformity", True, f"{model.n_parts} parts"))
    rep = assemble(model, run.params, StorageMode.SPARSE, cfg.threads)
    z, _ = rep.reconstruct_full()
    glued = build_rwg_basis(glue_array_mesh(model))
    idx, sign = translation_index(model, glued)
    zd = direct_impedance(glued, run.params)
    oracle = sign[:, None] * sign[None, :] * zd[np.ix_(idx, idx)]
    err = float((np.abs(z - oracle) / np.abs(oracle)).max())
    checks.append(("oracle equivalence", err < 1e-12, f"{err:.3e}"))
    stored, expected = rep.stored_entries(), rep.memory_report().total
    checks.append(("memory count", stored == expected, f"{stored} vs {expected}"))
    sym = float(np.abs(z - z.T).max() / np.abs(z).max())
    checks.append(("symmetry", sym < 1e-10, f"{sym:.3e}"))
    op = ToeplitzOperator(rep)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(vectors):
        x = rng.standard_normal(len(z)) + 1j * rng.standard_normal(len(z))
        y = z @ x
        worst = max(worst, float(np.linalg.norm(op.matvec(x) - y) / np.linalg.norm(y)))
    checks.append(("matvec equivalence", worst < 1e-12, f"{worst:.3e}"))
    return checks, (nx, ny)


@cli.command("validate")
@_common
def cmd_validate(config_path, mode, solver, threads, out):
    """Check the decomposition against a brute-force assembly (at most 3 x 3)."""
    run = _run(config_path, mode, solver, threads, out)
    checks, (nx, ny) = validation_checks(run)
    _write_rows(run.cfg.out_dir / "validation.csv", ["check", "passed", "measured"],
                [[n, "yes" if ok else "no", m] for n, ok, m in checks])
    click.echo(f"validation on a {nx} x {ny} array")
    for name, ok, measured in checks:
        click.echo(f"  {'PASS' if ok else 'FAIL'}  {name:<20} {measured}")
    if not all(ok for _, ok, _ in checks):
        raise ValidationFailed("one or more validation checks failed")


def main(argv=None):
    """Entry point with the documented exit codes."""
    try:
        cli.main(args=argv, prog_name="arraymom", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except USER_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except ValidationFailed as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except NUMERIC_ERRORS as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
