"""Peaceman wells with multiple perforations and a single wellbore pressure.

Sign convention for perforation fluxes: ``sigma_w > 0`` is flow from the
reservoir cell into the wellbore (production); injection makes it negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BHP = "bhp"
RATE = "rate"


class WellError(ValueError):
    pass


def peaceman_well_index(dx, dy, dz, kx, ky, r_w=0.1, skin=0.0):
    """Well index of a vertical well through the centre of a box cell."""
    if min(dx, dy, dz) <= 0 or kx <= 0 or ky <= 0:
        raise WellError("cell sizes and horizontal permeabilities must be positive")
    ryx = math.sqrt(ky / kx)
    rxy = math.sqrt(kx / ky)
    r_o = 0.28 * math.sqrt(ryx * dx**2 + rxy * dy**2) / ((ky / kx) ** 0.25 + (kx / ky) ** 0.25)
    if r_o <= r_w:
        raise WellError(f"equivalent radius {r_o:.4g} m does not exceed wellbore radius {r_w:.4g} m")
    return 2.0 * math.pi * math.sqrt(kx * ky) * dz / (math.log(r_o / r_w) + skin)


@dataclass(frozen=True)
class Well:
    """A well; RATE wells inject the wetting phase, BHP wells produce."""

    name: str
    control: str
    target: float
    cells: tuple[int, ...]
    wi: tuple[float, ...]
    r_w: float = 0.1

    def __post_init__(self):
        if self.control not in (BHP, RATE):
            raise WellError(f"well {self.name!r}: control must be 'bhp' or 'rate'")
        if len(self.cells) == 0:
            raise WellError(f"well {self.name!r} has no perforations")
        if len(set(self.cells)) != len(self.cells):
            raise WellError(f"well {self.name!r} perforates a cell twice")
        if len(self.wi) != len(self.cells):
            raise WellError(f"well {self.name!r}: one well index per perforation required")
        if any(w <= 0 for w in self.wi):
            raise WellError(f"well {self.name!r}: well indices must be positive")

    @property
    def is_injector(self) -> bool:
        return self.control == RATE


@dataclass(frozen=True)
class WellSet:
    """Wells plus the global perforation ordering (well-major, as listed)."""

    wells: tuple[Well, ...] = ()
    perf_cell: np.ndarray = field(init=False)
    perf_well: np.ndarray = field(init=False)
    perf_wi: np.ndarray = field(init=False)

    def __post_init__(self):
        wells = tuple(self.wells)
        object.__setattr__(self, "wells", wells)
        cells = [c for w in wells for c in w.cells]
        owner = [i for i, w in enumerate(wells) for _ in w.cells]
        wi = [x for w in wells for x in w.wi]
        object.__setattr__(self, "perf_cell", np.asarray(cells, dtype=np.int64))
        object.__setattr__(self, "perf_well", np.asarray(owner, dtype=np.int64))
        object.__setattr__(self, "perf_wi", np.asarray(wi, dtype=float))

    @property
    def n_wells(self) -> int:
        return len(self.wells)

    @property
    def n_perfs(self) -> int:
        return len(self.perf_cell)

    @property
    def is_rate(self) -> np.ndarray:
        return np.array([w.control == RATE for w in self.wells], dtype=bool)

    @property
    def targets(self) -> np.ndarray:
        return np.array([w.target for w in self.wells], dtype=float)

    @property
    def total_injection(self) -> float:
        return float(sum(w.target for w in self.wells if w.control == RATE))

    def validate(self, n_cells: int) -> None:
        if self.n_perfs and (self.perf_cell.min() < 0 or self.perf_cell.max() >= n_cells):
            raise WellError("perforation references a nonexistent cell")

    @classmethod
    def from_config(cls, entries, mesh=None) -> "WellSet":
        """Build wells from config dicts.

        Keys: ``name, control, target, perforations`` (cell indices or
        ``[i, j, k]`` triples on Cartesian meshes), ``r_w`` and the optional
        ``wi_override`` list.
        """
        wells = []
        for e in entries:
            cells = []
            for p in e["perforations"]:
                if isinstance(p, (list, tuple)):
                    if mesh is None or mesh.dims is None:
                        raise WellError("ijk perforations need a Cartesian mesh")
                    cells.append(mesh.cell_index(*p))
                else:
                    cells.append(int(p))
            r_w = float(e.get("r_w", 0.1))
            if e.get("wi_override") is not None:
                wi = [float(x) for x in e["wi_override"]]
            else:
                if mesh is None or mesh.spacing is None:
                    raise WellError(f"well {e['name']!r}: no geometry for Peaceman index; give wi_override")
                dx, dy, dz = mesh.spacing
                wi = [peaceman_well_index(dx, dy, dz, mesh.perm[c, 0], mesh.perm[c, 1], r_w, float(e.get("skin", 0.0))) for c in cells]
            wells.append(Well(str(e["name"]), str(e["control"]).lower(), float(e["target"]), tuple(cells), tuple(wi), r_w))
        ws = cls(tuple(wells))
        if mesh is not None:
            ws.validate(mesh.n_cells)
        return ws


def perforation_residuals(wells: WellSet, fluid, sigma_w, p_cell, p_well, s):
    """Perforation flux equations ``sigma/(lam WI) - (p_cell - p_well)``, one per perforation."""
    lam, _ = fluid.total_mobility(np.asarray(s)[wells.perf_cell])
    pc = np.asarray(p_cell)[wells.perf_cell]
    pw = np.asarray(p_well)[wells.perf_well]
    return np.asarray(sigma_w) / (lam * wells.perf_wi) - (pc - pw)


def control_residual(wells: WellSet, sigma_w, p_well):
    """BHP: ``p_w - target``; RATE: ``-sum(sigma_w) - target`` (injected volume rate)."""
    net = np.bincount(wells.perf_well, weights=np.asarray(sigma_w, float), minlength=wells.n_wells)
    return np.where(wells.is_rate, -net - wells.targets, np.asarray(p_well, float) - wells.targets)
