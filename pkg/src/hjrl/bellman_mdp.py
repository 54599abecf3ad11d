"""The one-step deterministic discounted MDP behind the semi-Lagrangian scheme.

``mdp_backup`` evaluates the numerical Bellman operator at a single point with
plain Python floats.  It is written independently of the vectorised sweep in
``hjb_solver`` but performs the same IEEE operations in the same order, so the
two agree bitwise; the test suite relies on that.

Residual helpers work with analytic test functions phi(tau, x) rather than
grid fields, which isolates the time-discretisation error from interpolation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .costs import DiscountConfig, Horizon, TravelCost, make_discount
from .dynamics import ControlledDynamics
from .errors import ContractError
from .grid import ScalarField, interpolate
from .hjb_solver import make_plan, plan_backup


@dataclass(frozen=True)
class OneStepMdp:
    dyn: ControlledDynamics
    cost: TravelCost
    disc: DiscountConfig
    horizon: Horizon | None = None

    @property
    def sigma(self) -> float:
        return self.disc.dt

    @property
    def gamma(self) -> float:
        return self.disc.gamma

    def with_step(self, sigma: float) -> "OneStepMdp":
        return replace(self, disc=make_discount(self.disc.rate, sigma))


def _h(cost: TravelCost, x1: float, x2: float) -> float:
    n = math.sqrt(x1 * x1 + x2 * x2)
    if n < cost.radius:
        return -cost.scale * (cost.radius - n) + 0.0
    return 0.0


def _field(dyn: ControlledDynamics, x1: float, x2: float, u: float) -> tuple[float, float]:
    f = dyn.vector_field(np.array([x1, x2]), u)
    return float(f[0]), float(f[1])


def step_cost(mdp: OneStepMdp, x, u: float) -> float:
    """w * h at the Euler half-step point (midpoint quadrature)."""
    x1, x2 = float(x[0]), float(x[1])
    f1, f2 = _field(mdp.dyn, x1, x2, u)
    half = 0.5 * mdp.disc.dt
    return mdp.disc.weight * _h(mdp.cost, x1 + half * f1, x2 + half * f2)


def successor(mdp: OneStepMdp, x, u: float) -> tuple[float, float]:
    x1, x2 = float(x[0]), float(x[1])
    f1, f2 = _field(mdp.dyn, x1, x2, u)
    return (x1 + mdp.disc.dt * f1, x2 + mdp.disc.dt * f2)


def mdp_backup(mdp: OneStepMdp, Psi: ScalarField, tau: float, x) -> tuple[float, float]:
    """(value, argmin control) of the numerical Bellman operator at one point.

    ``Psi`` is the continuation slice at tau - sigma.  For tau < sigma the
    operator's boundary data applies and the result is (0, first control).
    """
    actions = mdp.dyn.controls.actions
    if tau < mdp.sigma:
        return 0.0, actions[0]
    best_v, best_u = math.inf, actions[0]
    for u in actions:
        q = step_cost(mdp, x, u) + mdp.gamma * interpolate(Psi, successor(mdp, x, u))
        if q < best_v:
            best_v, best_u = q, u
    return best_v, best_u


def mdp_sweep(mdp: OneStepMdp, Psi: ScalarField) -> ScalarField:
    """The operator at every node of Psi's grid (vectorised)."""
    plan = make_plan(Psi.grid, mdp.disc, mdp.dyn, mdp.cost)
    return ScalarField(Psi.grid, plan_backup(plan, Psi.flat()).reshape(Psi.grid.shape))


def contraction_probe(mdp: OneStepMdp, Psi1: ScalarField, Psi2: ScalarField) -> tuple[float, float]:
    """(sup |T Psi1 - T Psi2|, gamma * sup |Psi1 - Psi2|)."""
    if Psi1.grid != Psi2.grid:
        raise ContractError("contraction probe needs fields on a shared grid")
    plan = make_plan(Psi1.grid, mdp.disc, mdp.dyn, mdp.cost)
    lhs = float(np.max(np.abs(plan_backup(plan, Psi1.flat()) - plan_backup(plan, Psi2.flat()))))
    bound = mdp.gamma * float(np.max(np.abs(Psi1.values - Psi2.values)))
    return lhs, bound


def value_iterate_mdp(mdp: OneStepMdp, seed: ScalarField, iters: int,
                      keep_history: bool = True) -> tuple[list[ScalarField], list[float]]:
    """Phi_{k+1} = T Phi_k from ``seed``; returns (history, sup-norm deltas)."""
    if not mdp.disc.rate > 0:
        raise ContractError("value iteration needs a positive discount rate")
    plan = make_plan(seed.grid, mdp.disc, mdp.dyn, mdp.cost)
    history = [seed]
    deltas = []
    v = seed.flat()
    for _ in range(iters):
        nxt = plan_backup(plan, v)
        deltas.append(float(np.max(np.abs(nxt - v))))
        v = nxt
        if keep_history:
            history.append(ScalarField(seed.grid, v.reshape(seed.grid.shape)))
    if not keep_history:
        history.append(ScalarField(seed.grid, v.reshape(seed.grid.shape)))
    return history, deltas


# -- residuals at smooth test functions ---------------------------------------

FD_STEP = 1e-5


@dataclass(frozen=True)
class SmoothTestFn:
    """phi(tau, x) with optional analytic derivatives (finite differences otherwise)."""

    eval: Callable[[float, np.ndarray], float]
    grad_x: Callable[[float, np.ndarray], np.ndarray] | None = None
    dtau: Callable[[float, np.ndarray], float] | None = None

    def __call__(self, tau, x) -> float:
        return float(self.eval(tau, np.asarray(x, dtype=float)))

    def fd_grad_x(self, tau, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = np.empty(2)
        for k in range(2):
            e = np.zeros(2)
            e[k] = FD_STEP
            g[k] = (self(tau, x + e) - self(tau, x - e)) / (2 * FD_STEP)
        return g

    def fd_dtau(self, tau, x) -> float:
        return (self(tau + FD_STEP, x) - self(tau - FD_STEP, x)) / (2 * FD_STEP)

    def gradient(self, tau, x) -> np.ndarray:
        if self.grad_x is None:
            return self.fd_grad_x(tau, x)
        return np.asarray(self.grad_x(tau, np.asarray(x, dtype=float)), dtype=float)

    def time_derivative(self, tau, x) -> float:
        if self.dtau is None:
            return self.fd_dtau(tau, x)
        return float(self.dtau(tau, np.asarray(x, dtype=float)))

    def certify(self, probes: Iterable[tuple[float, Sequence[float]]], rtol: float = 1e-6) -> float:
        """Worst relative mismatch between supplied and finite-difference derivatives."""
        worst = 0.0
        for tau, x in probes:
            pairs = list(zip(self.gradient(tau, x), self.fd_grad_x(tau, x)))
            pairs.append((self.time_derivative(tau, x), self.fd_dtau(tau, x)))
            for a, b in pairs:
                worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1.0))
        if worst > rtol:
            raise ContractError(f"test function derivatives disagree with finite differences ({worst:.2e})")
        return worst


def affine_test_fn(c0: float, c_tau: float, c1: float, c2: float) -> SmoothTestFn:
    return SmoothTestFn(
        eval=lambda tau, x: c0 + c_tau * tau + c1 * x[0] + c2 * x[1],
        grad_x=lambda tau, x: np.array([c1, c2]),
        dtau=lambda tau, x: c_tau,
    )


def apply_operator(mdp: OneStepMdp, phi: SmoothTestFn, tau: float, x) -> float:
    """Numerical Bellman operator applied to an analytic phi (no grid)."""
    best = math.inf
    for u in mdp.dyn.controls.actions:
        q = step_cost(mdp, x, u) + mdp.gamma * phi(tau - mdp.sigma, successor(mdp, x, u))
        best = min(best, q)
    return best


def bellman_residual(mdp: OneStepMdp, phi: SmoothTestFn, tau: float, x) -> float:
    """(phi - T phi) / sigma."""
    return (phi(tau, x) - apply_operator(mdp, phi, tau, x)) / mdp.sigma


def hjb_residual(phi: SmoothTestFn, cost: TravelCost, dyn: ControlledDynamics, lam: float, tau: float, x) -> float:
    """phi_tau - min_u [h(x,u) + grad phi . f(x,u)] + lam * phi."""
    x = np.asarray(x, dtype=float)
    p = phi.gradient(tau, x)
    h = _h(cost, float(x[0]), float(x[1]))
    ham = min(h + float(p @ dyn.vector_field(x, u)) for u in dyn.controls.actions)
    return phi.time_derivative(tau, x) - ham + lam * phi(tau, x)


@dataclass(frozen=True)
class ResidualReport:
    sigma: float
    tau: float
    x: tuple[float, float]
    bellman_residual: float
    hjb_residual: float

    @property
    def gap(self) -> float:
        return abs(self.bellman_residual - self.hjb_residual)


def consistency_study(mdp_template: OneStepMdp, phi: SmoothTestFn, probes, sigmas: Sequence[float]) -> list[ResidualReport]:
    """Bellman vs HJB residual gaps for each step size (outer) and probe (inner)."""
    sigmas = list(sigmas)
    if any(b >= a for a, b in zip(sigmas, sigmas[1:])):
        raise ContractError("step sizes must be strictly decreasing")
    lam = mdp_template.disc.rate
    reports = []
    for s in sigmas:
        mdp = mdp_template.with_step(s)
        for tau, x in probes:
            x = (float(x[0]), float(x[1]))
            reports.append(ResidualReport(
                sigma=s, tau=float(tau), x=x,
                bellman_residual=bellman_residual(mdp, phi, tau, x),
                hjb_residual=hjb_residual(phi, mdp.cost, mdp.dyn, lam, tau, x),
            ))
    return reports


def halving_ratios(reports: list[ResidualReport]) -> np.ndarray:
    """gap(sigma_{i+1}) / gap(sigma_i), shape (n_sigmas - 1, n_probes)."""
    sigmas = sorted({r.sigma for r in reports}, reverse=True)
    gaps = np.array([[r.gap for r in reports if r.sigma == s] for s in sigmas])
    with np.errstate(divide="ignore", invalid="ignore"):
        return gaps[1:] / gaps[:-1]


def asymptotic_onset(ratios: np.ndarray, lo: float, hi: float) -> int | None:
    """First row index from which every later row of ratios lies in [lo, hi]."""
    ok = np.all((ratios >= lo) & (ratios <= hi), axis=1)
    for start in range(len(ok)):
        if ok[start:].all():
            return start
    return None


def write_residual_csv(reports: list[ResidualReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma", "tau", "x1", "x2", "bellman_res", "hjb_res", "gap"])
        for r in reports:
            w.writerow([repr(r.sigma), repr(r.tau), repr(r.x[0]), repr(r.x[1]),
                        repr(r.bellman_residual), repr(r.hjb_residual), repr(r.gap)])
