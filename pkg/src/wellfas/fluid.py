"""Phase mobilities and fractional flow for power-law relative permeabilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WETTING = "w"
NON_WETTING = "nw"


@dataclass(frozen=True)
class FluidModel:
    """Two incompressible phases with ``k_r = s**gamma`` relative permeabilities.

    With ``extend`` on, saturations are clamped to [0, 1] before any mobility
    evaluation, which extends the mobilities by constants outside that range.
    Derivatives are zero wherever the clamp is active.
    """

    mu_w: float = 1e-3
    mu_nw: float = 5e-3
    gamma: float = 2.0
    extend: bool = True

    def __post_init__(self):
        if self.mu_w <= 0 or self.mu_nw <= 0:
            raise ValueError("viscosities must be positive")
        if self.gamma < 1:
            raise ValueError("relative permeability exponent must be >= 1")

    @classmethod
    def from_config(cls, cfg: dict) -> "FluidModel":
        return cls(
            mu_w=float(cfg.get("mu_w", 1e-3)),
            mu_nw=float(cfg.get("mu_nw", 5e-3)),
            gamma=float(cfg.get("gamma", 2.0)),
        )

    def _arg(self, s):
        s = np.asarray(s, dtype=float)
        if self.extend:
            inside = (s >= 0.0) & (s <= 1.0)
            return np.clip(s, 0.0, 1.0), inside
        return s, np.ones(s.shape, dtype=bool)

    def phase_mobilities(self, s):
        """Return ``(lam_w, lam_nw, dlam_w, dlam_nw)`` as functions of wetting saturation."""
        sc, inside = self._arg(s)
        g = self.gamma
        lw = sc**g / self.mu_w
        lnw = (1.0 - sc) ** g / self.mu_nw
        dlw = np.where(inside, g * sc ** (g - 1) / self.mu_w, 0.0)
        dlnw = np.where(inside, -g * (1.0 - sc) ** (g - 1) / self.mu_nw, 0.0)
        return lw, lnw, dlw, dlnw

    def mobility(self, phase: str, s):
        lw, lnw, _, _ = self.phase_mobilities(s)
        if phase == WETTING:
            return lw
        if phase == NON_WETTING:
            return lnw
        raise ValueError(f"unknown phase {phase!r}")

    def total_mobility(self, s):
        """Total mobility and its derivative."""
        lw, lnw, dlw, dlnw = self.phase_mobilities(s)
        return lw + lnw, dlw + dlnw

    def fractional_flow(self, s):
        """Wetting-phase fractional flow ``f_w`` and ``df_w/ds``."""
        lw, lnw, dlw, dlnw = self.phase_mobilities(s)
        lt = lw + lnw
        f = lw / lt
        df = (dlw * lnw - lw * dlnw) / lt**2
        return f, df

    def max_fractional_flow_derivative(self, n: int = 10001) -> float:
        s = np.linspace(0.0, 1.0, n)
        return float(np.max(self.fractional_flow(s)[1]))
