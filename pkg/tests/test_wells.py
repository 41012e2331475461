import math

import numpy as np
import pytest

from wellfas.fluid import FluidModel
from wellfas.grid import build_cartesian_mesh
from wellfas.wells import Well, WellError, WellSet, control_residual, peaceman_well_index, perforation_residuals


def test_equivalent_radius_isotropic():
    h, k, dz = 2.0, 1e-13, 1.0
    r_o = 0.28 * math.sqrt(2 * h * h) / 2
    assert r_o == pytest.approx(0.198 * h, rel=1e-2)
    wi = peaceman_well_index(h, h, dz, k, k, r_w=0.1)
    assert wi == pytest.approx(2 * math.pi * k * dz / math.log(r_o / 0.1))


def test_well_index_with_unit_log():
    h, k, dz = 3.0, 2e-13, 0.5
    r_o = 0.28 * math.sqrt(2 * h * h) / 2
    assert peaceman_well_index(h, h, dz, k, k, r_w=r_o / math.e) == pytest.approx(2 * math.pi * k * dz)


def test_well_index_errors():
    with pytest.raises(WellError):
        peaceman_well_index(0.1, 0.1, 1.0, 1e-13, 1e-13, r_w=0.5)
    with pytest.raises(WellError):
        peaceman_well_index(1.0, 1.0, 1.0, -1.0, 1.0)


def _single(control="bhp", target=0.0, cells=(0,), wi=(1e-12,)):
    return WellSet((Well("w", control, target, tuple(cells), tuple(wi)),))


def test_perforation_residual_equilibrium():
    ws = _single()
    r = perforation_residuals(ws, FluidModel(), [0.0], np.array([5.0]), np.array([5.0]), np.array([0.4]))
    assert r[0] == 0.0


def test_perforation_residual_hand_value():
    ws = _single()
    # s = 1 gives lam = 1/mu_w = 1000
    r = perforation_residuals(ws, FluidModel(), [1e-9], np.array([2.0]), np.array([2.0]), np.array([1.0]))
    assert r[0] == pytest.approx(1.0)


def test_control_residuals():
    ws = _single("bhp", 1e6)
    assert control_residual(ws, [0.0], [1e6])[0] == 0.0
    ws = _single("rate", 3e-5, cells=(0, 1), wi=(1.0, 1.0))
    assert control_residual(ws, [-1.5e-5, -1.5e-5], [0.0])[0] == pytest.approx(0.0, abs=1e-20)
    assert control_residual(ws, [0.0, 0.0], [0.0])[0] == pytest.approx(-3e-5)


def test_well_validation():
    with pytest.raises(WellError):
        Well("w", "flow", 0.0, (0,), (1.0,))
    with pytest.raises(WellError):
        Well("w", "bhp", 0.0, (), ())
    with pytest.raises(WellError):
        Well("w", "bhp", 0.0, (0, 0), (1.0, 1.0))
    with pytest.raises(WellError):
        _single(cells=(5,)).validate(2)


def test_from_config_ijk_and_override():
    mesh = build_cartesian_mesh(3, 3, 2, 1, 1, 1, 1e-13, 0.2)
    ws = WellSet.from_config([
        dict(name="i", control="RATE", target=1e-5, perforations=[[1, 1, 0], [1, 1, 1]]),
        dict(name="p", control="bhp", target=1e6, perforations=[0], wi_override=[2e-13]),
    ], mesh)
    assert ws.n_perfs == 3 and ws.n_wells == 2
    np.testing.assert_array_equal(ws.perf_cell, [4, 13, 0])
    np.testing.assert_array_equal(ws.perf_well, [0, 0, 1])
    assert ws.perf_wi[2] == 2e-13
    assert ws.total_injection == pytest.approx(1e-5)
    np.testing.assert_array_equal(ws.is_rate, [True, False])
