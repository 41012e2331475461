"""Nonlinear multigrid (full approximation scheme) V-cycle and the per-step solvers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from wellfas.hierarchy import Hierarchy
from wellfas.linsolve import LinearSolver
from wellfas.smoother import NewtonStats, newton_smooth

log = logging.getLogger(__name__)


@dataclass
class CycleConfig:
    levels: int = 3
    n_smooth: int = 1
    coarse_max: int = 10
    coarse_rtol: float = 1e-6
    theta: float = 0.5
    max_backtrack: int = 4
    tol: float = 1e-6
    max_iter: int = 40
    alpha: float = 0.5

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.levels < 1:
            raise ValueError("need at least one level")
        if self.n_smooth < 1 or self.coarse_max < 1 or self.max_iter < 1:
            raise ValueError("iteration counts must be positive")
        if self.max_backtrack < 0:
            raise ValueError("max_backtrack must be >= 0")


def backtracking(x, dx, norm_fn, theta=0.5, max_backtrack=4, post=None, base=None):
    """Accept ``x + theta**j dx`` for the smallest ``j`` that does not increase ``norm_fn``.

    ``post`` maps a trial state before it is evaluated (saturation chopping on
    the fine level). Returns ``(x_new, j)``, with ``j = -1`` when every trial is
    rejected and ``x`` is returned unchanged.
    """
    if not np.all(np.isfinite(dx)):
        raise ValueError("non-finite correction")
    if not np.any(dx):
        return x, 0
    ref = norm_fn(x) if base is None else base
    step = 1.0
    for j in range(max_backtrack + 1):
        trial = x + step * dx
        if post is not None:
            trial = post(trial)
        val = norm_fn(trial)
        if np.isfinite(val) and val <= ref:
            return trial, j
        step *= theta
    return x, -1


def _same_rhs(a, b) -> bool:
    if a is b:
        return True
    return np.isscalar(a) and np.isscalar(b) and a == b


@dataclass
class StepContext:
    """Per-time-step data shared by the levels: ``dt``, previous saturations and row scales."""

    dt: float
    w_sprev: list
    scales: list
    stats: NewtonStats = field(default_factory=NewtonStats)
    # smoothing on non-coarsest levels stops once the defect is below this
    target: float = 0.0
    # last defect per level: (state, rhs, value)
    cache: dict = field(default_factory=dict)


class FASSolver:
    """V-cycles on a :class:`Hierarchy`; with one level this is plain Newton."""

    def __init__(self, hierarchy: Hierarchy, config: CycleConfig | None = None, linear: LinearSolver | None = None):
        self.h = hierarchy
        self.cfg = config or CycleConfig(levels=hierarchy.n_levels)
        self.linear = linear or LinearSolver()
        self.n_levels = min(self.cfg.levels, hierarchy.n_levels)

    def _chop(self, level):
        if level != 0:
            return None
        s = self.h.ops[0].layout.s

        def clip(x):
            x = x.copy()
            np.clip(x[s], 0.0, 1.0, out=x[s])
            return x

        return clip

    def defect(self, level, x, b, ctx: StepContext):
        hit = ctx.cache.get(level)
        if hit is not None and _same_rhs(hit[1], b) and np.array_equal(hit[0], x):
            return hit[2]
        d = self.h.ops[level].residual(x, ctx.dt, ctx.w_sprev[level]) - b
        ctx.cache[level] = (np.array(x, copy=True), b, d)
        return d

    def norm(self, level, x, b, ctx: StepContext) -> float:
        return float(np.linalg.norm(self.defect(level, x, b, ctx) * ctx.scales[level]))

    def _smooth(self, level, x, b, ctx, n_steps, stop=None):
        if stop is None and ctx.target > 0:
            stop = lambda y: self.norm(level, y, b, ctx) <= ctx.target  # noqa: E731
        method = "primal" if level == 0 else "hybrid"
        return newton_smooth(self.h.ops[level], x, b, ctx.dt, ctx.w_sprev[level], n_steps, self.linear,
                             method=method, alpha=self.cfg.alpha, chop=level == 0, stop=stop, stats=ctx.stats,
                             defect_fn=lambda y: self.defect(level, y, b, ctx))

    def _coarse_solve(self, level, x, b, ctx):
        r0 = self.norm(level, x, b, ctx)
        target = max(self.cfg.coarse_rtol * r0, 1e-3 * self.cfg.tol)
        return self._smooth(level, x, b, ctx, self.cfg.coarse_max, stop=lambda y: self.norm(level, y, b, ctx) <= target)

    def cycle(self, level, x, b, ctx: StepContext):
        """One V-cycle from ``level`` downward; returns the updated state.

        ``n_smooth`` caps the smoothing iterations; a smoothing call does
        nothing once the level defect already meets the step tolerance.
        """
        if level == self.n_levels - 1:
            return self._coarse_solve(level, x, b, ctx) if level > 0 else self._smooth(level, x, b, ctx, self.cfg.n_smooth)
        x = self._smooth(level, x, b, ctx, self.cfg.n_smooth)
        tr = self.h.transfers[level]
        xc = tr.project(x)
        bc = self.defect(level + 1, xc, 0.0, ctx) - tr.restrict(self.defect(level, x, b, ctx))
        y = self.cycle(level + 1, xc, bc, ctx)
        x, _ = backtracking(x, tr.interpolate(y - xc), lambda z: self.norm(level, z, b, ctx),
                            self.cfg.theta, self.cfg.max_backtrack, post=self._chop(level))
        return self._smooth(level, x, b, ctx, self.cfg.n_smooth)

    def context(self, x, dt, s_prev, q_ref, p_ref) -> StepContext:
        h = self.h
        w_sprev = h.restrict_previous(h.ops[0].pore_volume * np.asarray(s_prev, float))
        scales, xl = [], np.asarray(x, float)
        for lvl in range(self.n_levels):
            scales.append(h.ops[lvl].row_scales(xl, dt, q_ref, p_ref))
            if lvl < self.n_levels - 1:
                xl = h.transfers[lvl].project(xl)
        return StepContext(dt, w_sprev, scales)

    def solve_step(self, x, dt, s_prev, q_ref=1.0, p_ref=1.0):
        """Iterate V-cycles until the scaled residual meets the tolerance.

        Returns ``(x, iterations, linear_iterations, converged, residual_history)``.
        """
        ctx = self.context(x, dt, s_prev, q_ref, p_ref)
        x = np.asarray(x, float).copy()
        hist = [self.norm(0, x, 0.0, ctx)]
        tol = self.cfg.tol
        if self.n_levels > 1:
            ctx.target = max(tol, tol * hist[0])
        it = 0
        while not (hist[-1] <= tol or hist[-1] <= tol * hist[0]):
            if it >= self.cfg.max_iter or not np.isfinite(hist[-1]):
                return x, it, ctx.stats.linear_iterations, False, hist
            x = self.cycle(0, x, 0.0, ctx)
            it += 1
            hist.append(self.norm(0, x, 0.0, ctx))
            log.debug("iteration %d scaled residual %.3e", it, hist[-1])
        return x, it, ctx.stats.linear_iterations, True, hist
