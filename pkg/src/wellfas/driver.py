"""Time stepping, synthetic case generation, configuration and output files."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.ndimage import gaussian_filter

from wellfas.fas import CycleConfig, FASSolver
from wellfas.fluid import FluidModel
from wellfas.grid import Mesh, build_cartesian_mesh, read_mesh
from wellfas.hierarchy import build_hierarchy
from wellfas.linsolve import LinearSolveError, LinearSolver
from wellfas.smoother import SmoothingError
from wellfas.wells import WellSet

log = logging.getLogger(__name__)

CSV_COLUMNS = ("step", "dt", "CFL", "nonlinear_iter", "linear_iter", "step_time", "converged")


class SimulationError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    dt0: float = 1.0
    ramp: float = 2.0
    t_final: float | None = None
    n_steps: int | None = None
    time_unit: str = "s"
    tol: float = 1e-6
    max_iter: int = 40
    solver: str = "fas"
    levels: int = 3
    beta: float = 32
    seed: int = 0
    well_layers: int = 4
    well_edge_scale: float = 1e6
    theta: float = 0.5
    max_backtrack: int = 4
    coarse_max: int = 10
    alpha: float = 0.5
    linear: str = "cpr"
    lin_rtol: float = 1e-8
    lin_maxiter: int = 200
    max_retries: int = 3
    dt_max: float | None = None
    out: str | None = None

    def __post_init__(self):
        if self.ramp <= 1:
            raise ValueError("ramp factor must exceed 1")
        if self.dt0 <= 0:
            raise ValueError("initial time step must be positive")
        if self.solver not in ("fas", "newton"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.time_unit not in ("s", "pvi"):
            raise ValueError("time_unit must be 's' or 'pvi'")
        if self.t_final is None and self.n_steps is None:
            raise ValueError("give t_final or n_steps")

    def cycle_config(self) -> CycleConfig:
        levels = 1 if self.solver == "newton" else self.levels
        return CycleConfig(levels=levels, theta=self.theta, max_backtrack=self.max_backtrack, tol=self.tol,
                           max_iter=self.max_iter, coarse_max=self.coarse_max, alpha=self.alpha)

    def linear_solver(self) -> LinearSolver:
        return LinearSolver(self.linear, self.lin_rtol, self.lin_maxiter)


@dataclass
class StepReport:
    step: int
    dt: float
    CFL: float
    nonlinear_iter: int
    linear_iter: int
    step_time: float
    converged: bool


@dataclass
class SimulationResult:
    reports: list
    state: np.ndarray
    time: float
    layout: object
    metadata: dict = field(default_factory=dict)

    @property
    def saturation(self):
        return self.state[self.layout.s]

    @property
    def pressure(self):
        return self.state[self.layout.pr]


def generate_lognormal_case(nx, ny, nz, layers=None, contrast=1e3, seed=0, k_max=2.6e-13, k_min=2.6e-16,
                            layer_offsets=None, correlation=2.0, porosity=0.2, spacing=(3.048, 3.048, 3.048)):
    """Layered lognormal permeability on an ``nx x ny x nz`` box.

    A smoothed Gaussian field is shifted per layer by ``layer_offsets`` (in
    decades; default drops the middle layer by ``log10(contrast)``) and its
    logarithm is rescaled affinely onto ``[k_min, k_max]``. ``contrast = 1``
    gives a homogeneous field of value ``k_max``. ``layers`` lists the number
    of cell rows in z per layer.
    """
    if layers is None:
        layers = [1] * nz if nz <= 3 else [nz // 3, nz - 2 * (nz // 3), nz // 3]
    layers = [int(v) for v in layers]
    if any(v < 1 for v in layers) or sum(layers) != nz:
        raise ValueError("layer thicknesses must be positive and sum to nz")
    if contrast < 1:
        raise ValueError("contrast must be >= 1")
    if layer_offsets is None:
        layer_offsets = [0.0] * len(layers)
        if len(layers) >= 3:
            layer_offsets[len(layers) // 2] = -np.log10(contrast)
    if len(layer_offsets) != len(layers):
        raise ValueError("one offset per layer")
    hx, hy, hz = spacing
    if contrast == 1:
        k = np.full(nx * ny * nz, float(k_max))
    else:
        rng = np.random.default_rng(seed)
        g = gaussian_filter(rng.standard_normal((nz, ny, nx)), sigma=(0.0, correlation, correlation), mode="wrap")
        g = (g - g.mean()) / (g.std() or 1.0)
        z = np.repeat(np.asarray(layer_offsets, float), layers)
        # spread of the random part: a third of a decade per standard deviation
        v = (g / 3.0 + z[:, None, None]).ravel()
        lo, hi = np.log10(k_min), np.log10(k_max)
        k = 10.0 ** (lo + (v - v.min()) / (v.max() - v.min()) * (hi - lo))
        k[np.argmax(v)] = k_max
        k[np.argmin(v)] = k_min
    perm = np.repeat(k[:, None], 3, axis=1)
    return build_cartesian_mesh(nx, ny, nz, hx, hy, hz, perm, np.full(nx * ny * nz, porosity))


def five_well_case(gamma=2.0, seed=0, n=32, nz=3, rate=3e-5, bhp=1e6, contrast=1e3):
    """Layered lognormal box with four corner RATE injectors and a central BHP producer.

    Every well perforates the full column. Cell size and well data follow the
    usual thin-layer synthetic setup (3.048 x 3.048 x 0.3048 m cells).
    """
    mesh = generate_lognormal_case(n, n, nz, contrast=contrast, seed=seed, spacing=(3.048, 3.048, 0.3048))
    a, b, c = n // 8, n - 1 - n // 8, n // 2
    entries = [dict(name=f"inj{i}", control="rate", target=rate, perforations=[[x, y, k] for k in range(nz)])
               for i, (x, y) in enumerate([(a, a), (a, b), (b, a), (b, b)])]
    entries.append(dict(name="prod", control="bhp", target=bhp, perforations=[[c, c, k] for k in range(nz)]))
    return mesh, WellSet.from_config(entries, mesh), FluidModel(gamma=gamma)


def calibrate_dt0(mesh: Mesh, wells: WellSet, fluid: FluidModel, cfl: float = 0.5, probe: float = 1.0) -> float:
    """Time step (s) whose first step has the given maximum CFL number.

    One Newton step of length ``probe`` gives the flux field; from the zero
    initial saturation the CFL number is proportional to ``dt``.
    """
    cfg = SolverConfig(dt0=probe, n_steps=1, solver="newton", linear="direct")
    rep = run_simulation(mesh, wells, fluid, cfg).reports[-1]
    if not rep.converged or rep.CFL <= 0:
        raise SimulationError("could not calibrate the initial time step")
    return probe * cfl / rep.CFL


def initial_state(op, wells: WellSet) -> np.ndarray:
    """Zero saturation and flux; pressures at the (mean) BHP target."""
    bhp = wells.targets[~wells.is_rate]
    if len(bhp) == 0:
        raise SimulationError("at least one BHP-controlled well is required")
    p0 = float(np.mean(bhp))
    lay = op.layout
    return lay.join(0.0, 0.0, p0, p0, 0.0)


def reference_scales(wells: WellSet) -> tuple[float, float]:
    q = wells.total_injection
    bhp = wells.targets[~wells.is_rate]
    p = float(np.max(np.abs(bhp))) if len(bhp) else 1.0
    return (q if q > 0 else 1.0), (p if p > 0 else 1.0)


def pvi_seconds(mesh: Mesh, wells: WellSet) -> float:
    """Seconds needed to inject one pore volume."""
    q = wells.total_injection
    if q <= 0:
        raise SimulationError("PVI time needs a positive total injection rate")
    return float(mesh.pore_volume.sum() / q)


def run_simulation(mesh: Mesh, wells: WellSet, fluid: FluidModel, config: SolverConfig, hierarchy=None,
                   callback=None, on_step=None) -> SimulationResult:
    """Advance from the initial state with geometrically ramped time steps.

    ``callback(report)`` sees every attempt; ``on_step(report, x, s_prev)``
    sees every accepted step with its converged state.
    """
    wells.validate(mesh.n_cells)
    if not np.any(~wells.is_rate):
        raise SimulationError("at least one BHP-controlled well is required")
    unit = pvi_seconds(mesh, wells) if config.time_unit == "pvi" else 1.0
    cyc = config.cycle_config()
    if hierarchy is None:
        hierarchy = build_hierarchy(mesh, wells, fluid, levels=cyc.levels, beta=config.beta, seed=config.seed,
                                    n_lay=config.well_layers, scale=config.well_edge_scale)
    solver = FASSolver(hierarchy, cyc, config.linear_solver())
    op = hierarchy.ops[0]
    lay = op.layout
    q_ref, p_ref = reference_scales(wells)
    x = initial_state(op, wells)
    t, dt = 0.0, config.dt0 * unit
    t_end = None if config.t_final is None else config.t_final * unit
    dt_max = None if config.dt_max is None else config.dt_max * unit
    reports = []
    step = 0
    while True:
        if config.n_steps is not None and step >= config.n_steps:
            break
        if t_end is not None and t >= t_end * (1 - 1e-12):
            break
        if t_end is not None:
            dt = min(dt, t_end - t)
        s_prev = x[lay.s].copy()
        trial_dt = dt
        for attempt in range(config.max_retries + 1):
            t0 = time.perf_counter()
            try:
                xn, nit, lit, ok, _ = solver.solve_step(x, trial_dt, s_prev, q_ref, p_ref)
            except (LinearSolveError, SmoothingError) as exc:
                log.warning("step %d: %s", step, exc)
                xn, nit, lit, ok = x, cyc.max_iter, 0, False
            elapsed = time.perf_counter() - t0
            rep = StepReport(step, trial_dt / unit, op.cfl(xn if ok else x, trial_dt), nit, lit, elapsed, ok)
            reports.append(rep)
            if callback is not None:
                callback(rep)
            log.info("step %d dt=%.4g CFL=%.3g iters=%d converged=%s", step, rep.dt, rep.CFL, nit, ok)
            if ok:
                if on_step is not None:
                    on_step(rep, xn, s_prev)
                break
            trial_dt *= 0.5
        else:
            raise SimulationError(f"step {step}: no convergence after {config.max_retries} dt halvings")
        x = xn
        t += trial_dt
        step += 1
        dt = trial_dt * config.ramp
        if dt_max is not None:
            dt = min(dt, dt_max)
    meta = {"time_unit": config.time_unit, "residual_norm": "scaled l2", "tolerance": config.tol,
            "solver": config.solver, "levels": cyc.levels}
    return SimulationResult(reports, x, t / unit, lay, meta)


def write_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in reports:
            d = asdict(r)
            w.writerow([d["step"], repr(float(d["dt"])), repr(float(d["CFL"])), d["nonlinear_iter"],
                        d["linear_iter"], f"{d['step_time']:.6f}", int(d["converged"])])


def write_vtk(mesh: Mesh, fields: dict, path) -> None:
    """Legacy ASCII VTK: structured points for Cartesian meshes, vertex cloud otherwise."""
    n = mesh.n_cells
    lines = ["# vtk DataFile Version 3.0", "wellfas output", "ASCII"]
    if mesh.dims is not None:
        nx, ny, nz = mesh.dims
        hx, hy, hz = mesh.spacing
        lines += ["DATASET STRUCTURED_POINTS", f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}", "ORIGIN 0 0 0",
                  f"SPACING {hx!r} {hy!r} {hz!r}"]
    else:
        lines += ["DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
        lines += [" ".join(repr(float(v)) for v in c) for c in mesh.centroid]
        lines += [f"CELLS {n} {2 * n}"] + [f"1 {i}" for i in range(n)]
        lines += [f"CELL_TYPES {n}"] + ["1"] * n
    lines.append(f"CELL_DATA {n}")
    for name, vals in fields.items():
        vals = np.asarray(vals, float)
        if len(vals) != n:
            raise ValueError(f"field {name!r} has wrong length")
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(v)) for v in vals]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_cell_count(path) -> int:
    for line in Path(path).read_text().splitlines():
        if line.startswith("CELL_DATA"):
            return int(line.split()[1])
    raise ValueError("no CELL_DATA section")


def write_outputs(result: SimulationResult, mesh: Mesh, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "steps.csv", "vtk": out / "final.vtk", "meta": out / "metadata.yaml"}
    write_csv(result.reports, paths["csv"])
    write_vtk(mesh, {"pressure": result.pressure, "saturation": result.saturation}, paths["vtk"])
    paths["meta"].write_text(yaml.safe_dump({**result.metadata, "final_time": float(result.time)}))
    return paths


def load_case(cfg: dict):
    """Mesh, wells and fluid from a parsed config mapping."""
    mcfg = cfg.get("mesh", {})
    if "file" in mcfg:
        mesh = read_mesh(mcfg["file"])
    elif "lognormal" in mcfg:
        g = dict(mcfg["lognormal"])
        dims = g.pop("dims")
        if "spacing" in g:
            g["spacing"] = tuple(g["spacing"])
        mesh = generate_lognormal_case(*dims, **g)
    elif "cartesian" in mcfg:
        c = mcfg["cartesian"]
        nx, ny, nz = c["dims"]
        hx, hy, hz = c.get("spacing", (1.0, 1.0, 1.0))
        n = nx * ny * nz
        perm = np.broadcast_to(np.asarray(c.get("perm", 1e-13), float), (n,))
        mesh = build_cartesian_mesh(nx, ny, nz, hx, hy, hz, np.repeat(perm[:, None], 3, axis=1),
                                    np.full(n, float(c.get("porosity", 0.2))))
    else:
        raise ValueError("mesh section needs 'file', 'lognormal' or 'cartesian'")
    wells = WellSet.from_config(cfg.get("wells", []), mesh)
    fluid = FluidModel.from_config(cfg.get("fluid", {}))
    return mesh, wells, fluid


def load_config(path) -> dict:
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ValueError("config must be a mapping")
    return cfg


def solver_config(cfg: dict, **overrides) -> SolverConfig:
    vals = dict(cfg.get("solver", {}))
    vals.update({k: v for k, v in overrides.items() if v is not None})
    return SolverConfig(**vals)
