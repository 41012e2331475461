import csv

import numpy as np
import pytest
import yaml

from conftest import box_case
from wellfas.cli import main
from wellfas.driver import (CSV_COLUMNS, SimulationError, SolverConfig, StepReport, generate_lognormal_case,
                            load_case, pvi_seconds, read_vtk_cell_count, run_simulation, solver_config, write_csv,
                            write_outputs, write_vtk)
from wellfas.grid import build_cartesian_mesh, write_mesh

WELLS = [("inj", "rate", 1e-5, [(0, 0, 0)]), ("prod", "bhp", 1e6, [(5, 5, 0)])]


def small_config(**kw):
    base = dict(dt0=2e3, n_steps=4, levels=2, beta=4, linear="direct")
    base.update(kw)
    return SolverConfig(**base)


def test_geometric_ramp():
    res = run_simulation(*box_case(6, 6, 1, WELLS), SolverConfig(dt0=1.0, ramp=2.0, n_steps=4, levels=2, beta=4))
    assert [r.dt for r in res.reports] == [1.0, 2.0, 4.0, 8.0]
    assert res.time == pytest.approx(15.0)


def test_rest_state():
    wells = [("inj", "rate", 0.0, [(0, 0, 0)]), ("prod", "bhp", 1e6, [(5, 5, 0)])]
    case = box_case(6, 6, 1, wells)
    res = run_simulation(*case, small_config())
    assert all(r.converged and r.nonlinear_iter <= 1 for r in res.reports)
    assert np.all(res.saturation == 0.0)


def test_t_final_and_pvi_units():
    case = box_case(6, 6, 1, WELLS)
    res = run_simulation(*case, small_config(n_steps=None, t_final=0.01, dt0=0.002, time_unit="pvi"))
    assert res.time == pytest.approx(0.01)
    assert res.metadata["time_unit"] == "pvi"
    assert pvi_seconds(case[0], case[1]) == pytest.approx(36 * 0.2 / 1e-5)


def test_injected_volume_balance():
    case = box_case(6, 6, 1, WELLS)
    res = run_simulation(*case, small_config())
    mesh = case[0]
    injected = sum(r.dt for r in res.reports if r.converged) * 1e-5
    assert (mesh.pore_volume * res.saturation).sum() == pytest.approx(injected, rel=1e-5)
    assert res.saturation.min() >= 0 and res.saturation.max() <= 1


def test_rejects_missing_bhp_well():
    wells = [("inj", "rate", 1e-5, [(0, 0, 0)])]
    with pytest.raises(SimulationError):
        run_simulation(*box_case(4, 4, 1, wells), small_config())


def test_retry_halves_dt_and_aborts():
    case = box_case(6, 6, 1, WELLS)
    cfg = small_config(dt0=1e7, n_steps=1, max_iter=2, max_retries=2, solver="newton")
    with pytest.raises(SimulationError):
        run_simulation(*case, cfg)
    cfg = small_config(dt0=4e4, n_steps=1, max_iter=6, max_retries=3, solver="newton")
    res = run_simulation(*case, cfg)
    dts = [r.dt for r in res.reports]
    assert dts == [4e4 / 2**i for i in range(len(dts))]
    assert res.reports[-1].converged and not res.reports[0].converged


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt0=1.0)
    with pytest.raises(ValueError):
        SolverConfig(dt0=1.0, n_steps=1, ramp=1.0)
    with pytest.raises(ValueError):
        SolverConfig(dt0=1.0, n_steps=1, solver="picard")
    cfg = solver_config({"solver": {"dt0": 5.0, "n_steps": 2}}, levels=4, seed=None)
    assert cfg.levels == 4 and cfg.seed == 0
    assert SolverConfig(dt0=1.0, n_steps=1, solver="newton").cycle_config().levels == 1


def test_lognormal_bounds_and_determinism():
    a = generate_lognormal_case(10, 8, 3, contrast=1e3, seed=5)
    b = generate_lognormal_case(10, 8, 3, contrast=1e3, seed=5)
    k = a.perm[:, 0]
    assert k.min() == pytest.approx(2.6e-16, rel=1e-12) and k.max() == pytest.approx(2.6e-13, rel=1e-12)
    assert np.array_equal(a.perm, b.perm)
    assert not np.array_equal(a.perm, generate_lognormal_case(10, 8, 3, seed=6).perm)
    # the middle layer is on average much less permeable
    lk = np.log10(k).reshape(3, -1).mean(axis=1)
    assert lk[1] < min(lk[0], lk[2]) - 1.5


def test_lognormal_homogeneous_and_errors():
    m = generate_lognormal_case(4, 4, 2, contrast=1.0)
    assert np.all(m.perm == m.perm[0, 0])
    with pytest.raises(ValueError):
        generate_lognormal_case(4, 4, 3, layers=[1, 1])
    with pytest.raises(ValueError):
        generate_lognormal_case(4, 4, 3, layers=[1, 1, 1], layer_offsets=[0.0])


def test_csv_outputs(tmp_path):
    write_csv([], tmp_path / "empty.csv")
    rows = list(csv.reader(open(tmp_path / "empty.csv")))
    assert rows == [list(CSV_COLUMNS)]
    reps = [StepReport(i, 1.0, 0.1, 2, 3, 0.01, True) for i in range(3)]
    write_csv(reps, tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert len(rows) == 4


def test_outputs_round_trip(tmp_path):
    case = box_case(6, 6, 1, WELLS)
    res = run_simulation(*case, small_config(n_steps=2))
    paths = write_outputs(res, case[0], tmp_path / "out")
    assert read_vtk_cell_count(paths["vtk"]) == case[0].n_cells
    rows = list(csv.DictReader(open(paths["csv"])))
    assert len(rows) == len(res.reports)
    meta = yaml.safe_load(paths["meta"].read_text())
    assert meta["time_unit"] == "s"


def test_vtk_unstructured(tmp_path):
    mesh = build_cartesian_mesh(3, 2, 1, 1, 1, 1, 1.0, 0.2)
    write_mesh(mesh, tmp_path / "m.txt")
    from wellfas.grid import read_mesh
    m = read_mesh(tmp_path / "m.txt")
    write_vtk(m, {"p": np.zeros(6)}, tmp_path / "u.vtk")
    text = (tmp_path / "u.vtk").read_text()
    assert "UNSTRUCTURED_GRID" in text and read_vtk_cell_count(tmp_path / "u.vtk") == 6
    with pytest.raises(ValueError):
        write_vtk(m, {"p": np.zeros(5)}, tmp_path / "bad.vtk")


def test_direct_path_bit_identical(tmp_path):
    case = box_case(6, 6, 1, WELLS)
    outs = []
    for i in range(2):
        res = run_simulation(*case, small_config())
        write_csv([r.__class__(**{**r.__dict__, "step_time": 0.0}) for r in res.reports], tmp_path / f"{i}.csv")
        outs.append(res.state)
    assert np.array_equal(outs[0], outs[1])
    assert (tmp_path / "0.csv").read_bytes() == (tmp_path / "1.csv").read_bytes()


def _write_config(tmp_path, wells=None, mesh=None):
    cfg = {
        "mesh": mesh or {"cartesian": {"dims": [6, 6, 1], "spacing": [1.0, 1.0, 1.0], "perm": 1e-13, "porosity": 0.2}},
        "fluid": {"gamma": 2.0},
        "wells": wells if wells is not None else [
            {"name": "inj", "control": "rate", "target": 1e-5, "perforations": [[0, 0, 0]]},
            {"name": "prod", "control": "bhp", "target": 1e6, "perforations": [[5, 5, 0]]},
        ],
        "solver": {"dt0_cfl": 0.5, "n_steps": 3, "levels": 2, "beta": 4},
    }
    path = tmp_path / "case.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


@pytest.mark.parametrize("solver", ["fas", "newton"])
def test_cli_simulate(tmp_path, capsys, solver):
    path = _write_config(tmp_path)
    out = tmp_path / f"out_{solver}"
    assert main(["simulate", "--config", str(path), "--solver", solver, "--out", str(out), "--linear", "direct"]) == 0
    rows = list(csv.DictReader(open(out / "steps.csv")))
    assert len(rows) == 3 and all(r["converged"] == "1" for r in rows)
    assert read_vtk_cell_count(out / "final.vtk") == 36
    assert "step" in capsys.readouterr().out


def test_cli_mesh_file(tmp_path):
    mesh = build_cartesian_mesh(4, 4, 1, 1, 1, 1, 1e-13, 0.2)
    write_mesh(mesh, tmp_path / "m.txt")
    wells = [{"name": "inj", "control": "rate", "target": 1e-5, "perforations": [0], "wi_override": [1e-13]},
             {"name": "prod", "control": "bhp", "target": 1e6, "perforations": [15], "wi_override": [1e-13]}]
    path = _write_config(tmp_path, wells=wells, mesh={"file": str(tmp_path / "m.txt")})
    mesh2, ws, fluid = load_case(yaml.safe_load(path.read_text()))
    assert mesh2.n_cells == 16 and ws.n_perfs == 2
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 0


def test_cli_errors(tmp_path, capsys):
    path = _write_config(tmp_path, wells=[{"name": "inj", "control": "rate", "target": 1e-5,
                                           "perforations": [[0, 0, 0]]}])
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) != 0
    assert "error" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) != 0
