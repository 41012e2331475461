"""Command line entry point: ``wellfas simulate --config case.yaml``."""

from __future__ import annotations

import argparse
import logging
import sys

from wellfas.driver import (SimulationError, calibrate_dt0, load_case, load_config, run_simulation, solver_config,
                            write_outputs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wellfas", description="Two-phase reservoir/well simulation with FAS or Newton.")
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", help="run a simulation from a YAML config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--solver", choices=("fas", "newton"))
    sim.add_argument("--levels", type=int)
    sim.add_argument("--coarsening-factor", dest="beta", type=float)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out")
    sim.add_argument("--well-layers", dest="well_layers", type=int)
    sim.add_argument("--well-edge-scale", dest="well_edge_scale", type=float)
    sim.add_argument("--theta", type=float)
    sim.add_argument("--max-backtrack", dest="max_backtrack", type=int)
    sim.add_argument("--alpha-split", dest="alpha", type=float)
    sim.add_argument("--linear", choices=("cpr", "direct"))
    sim.add_argument("--lin-rtol", dest="lin_rtol", type=float)
    sim.add_argument("--lin-maxiter", dest="lin_maxiter", type=int)
    sim.add_argument("-v", "--verbose", action="store_true")
    return parser


def simulate(args) -> int:
    cfg = load_config(args.config)
    mesh, wells, fluid = load_case(cfg)
    solver_section = dict(cfg.get("solver", {}))
    target_cfl = solver_section.pop("dt0_cfl", None)
    if target_cfl is not None:
        solver_section["dt0"] = calibrate_dt0(mesh, wells, fluid, float(target_cfl))
        solver_section["time_unit"] = "s"
    overrides = {k: getattr(args, k) for k in ("solver", "levels", "beta", "seed", "out", "well_layers", "well_edge_scale",
                                                "theta", "max_backtrack", "alpha", "linear", "lin_rtol", "lin_maxiter")}
    config = solver_config({"solver": solver_section}, **overrides)
    result = run_simulation(mesh, wells, fluid, config,
                            callback=lambda r: print(f"step {r.step:3d}  dt={r.dt:.4g}  CFL={r.CFL:8.3f}  "
                                                     f"iters={r.nonlinear_iter:3d}  converged={r.converged}"))
    out = config.out or "wellfas_out"
    paths = write_outputs(result, mesh, out)
    print(f"wrote {paths['csv']} and {paths['vtk']}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return simulate(args)
    except (SimulationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
