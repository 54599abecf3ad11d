"""Semi-Lagrangian solvers for the travel-cost HJB.

One backup over a field V is

    (T V)(x) = min_u  w * h(x + dt/2 f(x,u))  +  gamma * V(x + dt f(x,u))

with gamma = exp(-lambda dt) and w = (1 - gamma)/lambda (w = dt when
lambda = 0).  Successor points and running-cost terms depend only on the
grid, so they are computed once per configuration in a ``BackupPlan`` and each
sweep is a gather plus a few array ops.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .costs import DiscountConfig, Horizon, TravelCost, eval_cost, state_norm, value_range
from .dynamics import ControlledDynamics, FlowStep, Scheme, flow_step
from .errors import ContractError
from .grid import Grid2, ScalarField, Stencil, apply_stencil, clamp_field, make_stencil

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepConfig:
    disc: DiscountConfig
    tol: float = 1e-6
    max_iters: int = 2000

    def __post_init__(self):
        if not self.tol > 0:
            raise ContractError(f"tolerance must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ContractError("max_iters must be at least 1")


@dataclass
class ValueSolution:
    field: ScalarField
    iterations: int
    final_delta: float
    converged: bool
    deltas: list[float] = field(default_factory=list)
    raw: ScalarField | None = None  # last iterate before clamping to the value range


@dataclass
class TimeDependentSolution:
    slices: list[ScalarField]
    horizon: Horizon | None
    dt: float

    def at(self, k: int) -> ScalarField:
        return self.slices[k]

    @property
    def final(self) -> ScalarField:
        return self.slices[-1]


@dataclass(frozen=True)
class BackupPlan:
    grid: Grid2
    gamma: float
    stencils: tuple[Stencil, ...]
    step_costs: tuple[np.ndarray, ...]  # w * h(midpoint), one flat array per control


def make_plan(grid: Grid2, disc: DiscountConfig, dyn: ControlledDynamics, cost: TravelCost) -> BackupPlan:
    pts = grid.points().reshape(-1, 2)
    euler = FlowStep(Scheme.EXPLICIT_EULER, disc.dt)
    mid = FlowStep(Scheme.MIDPOINT, disc.dt)
    stencils, step_costs = [], []
    for u in dyn.controls:
        stencils.append(make_stencil(grid, flow_step(dyn, euler, pts, u)))
        step_costs.append(disc.weight * eval_cost(cost, flow_step(dyn, mid, pts, u)))
    return BackupPlan(grid, disc.gamma, tuple(stencils), tuple(step_costs))


def plan_backup(plan: BackupPlan, values_flat: np.ndarray, with_policy: bool = False):
    q = np.stack([c + plan.gamma * apply_stencil(values_flat, st)
                  for c, st in zip(plan.step_costs, plan.stencils)])
    best = np.argmin(q, axis=0)  # first control wins ties
    out = np.take_along_axis(q, best[None], axis=0)[0]
    return (out, best) if with_policy else out


def sl_backup(V: ScalarField, cfg: SweepConfig, dyn: ControlledDynamics, cost: TravelCost,
              plan: BackupPlan | None = None) -> ScalarField:
    """One synchronous semi-Lagrangian backup of ``V``."""
    if plan is None:
        plan = make_plan(V.grid, cfg.disc, dyn, cost)
    elif plan.grid != V.grid:
        raise ContractError("backup plan was built for a different grid")
    return ScalarField(V.grid, plan_backup(plan, V.flat()).reshape(V.grid.shape))


def greedy_policy(V: ScalarField, cfg: SweepConfig, dyn: ControlledDynamics, cost: TravelCost) -> np.ndarray:
    """Index into ``dyn.controls`` of the minimising action at every node."""
    plan = make_plan(V.grid, cfg.disc, dyn, cost)
    _, best = plan_backup(plan, V.flat(), with_policy=True)
    return best.reshape(V.grid.shape)


def solve_stationary(cfg: SweepConfig, dyn: ControlledDynamics, cost: TravelCost, grid: Grid2,
                     initial: ScalarField | None = None) -> ValueSolution:
    """Value iteration V <- T V until the sup-norm change is at most ``cfg.tol``."""
    if not cfg.disc.rate > 0:
        raise ContractError("stationary solve needs a positive discount rate (strict contraction)")
    plan = make_plan(grid, cfg.disc, dyn, cost)
    v = np.zeros(grid.size) if initial is None else initial.flat().copy()
    deltas: list[float] = []
    converged = False
    for it in range(1, cfg.max_iters + 1):
        nxt = plan_backup(plan, v)
        delta = float(np.max(np.abs(nxt - v)))
        deltas.append(delta)
        v = nxt
        if delta <= cfg.tol:
            converged = True
            break
    log.info("stationary solve: %d iterations, final delta %.3e, converged=%s", it, delta, converged)
    raw = ScalarField(grid, v.reshape(grid.shape))
    lo, hi = value_range(cost, cfg.disc)
    return ValueSolution(field=clamp_field(raw, lo, hi), iterations=it, final_delta=delta,
                         converged=converged, deltas=deltas, raw=raw)


def solve_travel_finite_horizon(cfg: SweepConfig, dyn: ControlledDynamics, cost: TravelCost, grid: Grid2,
                                horizon: Horizon | None = None, n_steps: int | None = None) -> TimeDependentSolution:
    """March W(tau_k) from W(0) = 0 with tau_k = k*dt; lambda = 0 is allowed."""
    if n_steps is None:
        if horizon is None:
            raise ContractError("need a horizon or an explicit step count")
        n_steps = horizon.n_steps(cfg.disc.dt)
    elif horizon is not None and horizon.n_steps(cfg.disc.dt) != n_steps:
        raise ContractError("step count disagrees with horizon")
    if n_steps < 0:
        raise ContractError("step count must be nonnegative")
    plan = make_plan(grid, cfg.disc, dyn, cost)
    slices = [ScalarField.constant(grid, 0.0)]
    v = slices[0].flat()
    for _ in range(n_steps):
        v = plan_backup(plan, v)
        slices.append(ScalarField(grid, v.reshape(grid.shape)))
    return TimeDependentSolution(slices=slices, horizon=horizon, dt=cfg.disc.dt)


def target_signed_distance(cost: TravelCost):
    """l(x) = |x| - r, negative inside the target."""
    def l(pts):
        return state_norm(pts) - cost.radius
    return l


def solve_reach_min_over_time(dyn: ControlledDynamics, grid: Grid2, dt: float, l,
                              horizon: Horizon | None = None, n_steps: int | None = None) -> TimeDependentSolution:
    """Classical reach value U_{k+1} = min(l, min_u U_k(x + dt f(x,u))), U_0 = l."""
    if n_steps is None:
        if horizon is None:
            raise ContractError("need a horizon or an explicit step count")
        n_steps = horizon.n_steps(dt)
    pts = grid.points().reshape(-1, 2)
    euler = FlowStep(Scheme.EXPLICIT_EULER, dt)
    stencils = [make_stencil(grid, flow_step(dyn, euler, pts, u)) for u in dyn.controls]
    lvals = np.asarray(l(pts), dtype=float).reshape(-1)
    slices = [ScalarField(grid, lvals.reshape(grid.shape))]
    u_k = lvals
    for _ in range(n_steps):
        cont = np.min(np.stack([apply_stencil(u_k, st) for st in stencils]), axis=0)
        u_k = np.minimum(lvals, cont)
        slices.append(ScalarField(grid, u_k.reshape(grid.shape)))
    return TimeDependentSolution(slices=slices, horizon=horizon, dt=dt)
