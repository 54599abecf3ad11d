"""Randomized property suites for the backup operator and the value network.

Each suite returns a ``SuiteResult`` with a pass flag and the rows that back
it up; ``write_suite_csv`` dumps those rows as evidence.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .bellman_mdp import (
    OneStepMdp,
    affine_test_fn,
    asymptotic_onset,
    consistency_study,
    halving_ratios,
)
from .costs import DiscountConfig, TravelCost, make_discount
from .dynamics import ControlledDynamics
from .grid import Grid2
from .hjb_solver import make_plan, plan_backup
from .siren import gradient_check, init_siren


@dataclass
class SuiteResult:
    name: str
    passed: bool
    header: list[str]
    rows: list[list] = field(default_factory=list)
    summary: str = ""


def contraction_suite(grid: Grid2, dyn: ControlledDynamics, cost: TravelCost, rates, sigmas,
                      trials: int, rng: np.random.Generator, ulps: int = 8) -> SuiteResult:
    """sup|T a - T b| <= exp(-rate*sigma) sup|a - b| + ulps on random fields in [-1, 1]."""
    res = SuiteResult("contraction", True, ["rate", "sigma", "trial", "lhs", "bound", "ok"])
    worst = -np.inf
    for rate in rates:
        for sigma in sigmas:
            disc = make_discount(rate, sigma)
            plan = make_plan(grid, disc, dyn, cost)
            for t in range(trials):
                a = rng.uniform(-1, 1, grid.size)
                b = rng.uniform(-1, 1, grid.size)
                lhs = float(np.max(np.abs(plan_backup(plan, a) - plan_backup(plan, b))))
                bound = disc.gamma * float(np.max(np.abs(a - b)))
                ok = lhs <= bound + ulps * np.spacing(bound)
                res.passed &= bool(ok)
                worst = max(worst, lhs - bound)
                res.rows.append([rate, sigma, t, repr(lhs), repr(bound), int(ok)])
    res.summary = f"{len(res.rows)} trials, worst lhs - bound = {worst:.3e}"
    return res


def monotonicity_suite(grid: Grid2, disc: DiscountConfig, dyn: ControlledDynamics, cost: TravelCost,
                       trials: int, rng: np.random.Generator) -> SuiteResult:
    """Psi1 <= Psi2 nodewise must give T Psi1 <= T Psi2 nodewise."""
    res = SuiteResult("monotonicity", True, ["trial", "violations"])
    plan = make_plan(grid, disc, dyn, cost)
    total = 0
    for t in range(trials):
        lo = rng.uniform(-1, 1, grid.size)
        hi = lo + rng.random(grid.size) * (rng.random(grid.size) < 0.5)
        bad = int(np.count_nonzero(plan_backup(plan, lo) > plan_backup(plan, hi)))
        total += bad
        res.rows.append([t, bad])
    res.passed = total == 0
    res.summary = f"{trials} ordered pairs, {total} nodewise violations"
    return res


def off_target_probes(grid: Grid2, cost: TravelCost, n: int, rng: np.random.Generator,
                      margin: float = 0.5) -> list[tuple[float, np.ndarray]]:
    """(tau, x) pairs with |x| > r + margin inside the ROI and tau in [0.5, 1]."""
    out = []
    while len(out) < n:
        x = np.array([rng.uniform(grid.x_min, grid.x_max), rng.uniform(grid.y_min, grid.y_max)])
        if np.hypot(*x) > cost.radius + margin:
            out.append((float(rng.uniform(0.5, 1.0)), x))
    return out


def residual_suite(grid: Grid2, disc: DiscountConfig, dyn: ControlledDynamics, cost: TravelCost,
                   sigmas, n_probes: int, lo: float, hi: float, rng: np.random.Generator):
    """Gap between Bellman and HJB residuals of an affine test function under step halving.

    Returns the suite result together with the raw reports and ratio table.
    """
    mdp = OneStepMdp(dyn, cost, disc)
    phi = affine_test_fn(0.3, 0.5, 0.05, 0.3)
    reports = consistency_study(mdp, phi, off_target_probes(grid, cost, n_probes, rng), sigmas)
    ratios = halving_ratios(reports)
    onset = asymptotic_onset(ratios, lo, hi)
    res = SuiteResult("residual_consistency", onset is not None, ["sigma_from", "sigma_to", "probe", "ratio"])
    for r in range(ratios.shape[0]):
        for p in range(ratios.shape[1]):
            res.rows.append([sigmas[r], sigmas[r + 1], p, repr(float(ratios[r, p]))])
    res.summary = (f"ratios in [{np.nanmin(ratios):.3f}, {np.nanmax(ratios):.3f}], "
                   f"onset row {onset} of {ratios.shape[0]}")
    return res, reports, ratios


def gradient_suite(n_nets: int, n_probes: int, roi: Grid2, rtol: float, rng: np.random.Generator) -> SuiteResult:
    res = SuiteResult("gradient_check", True, ["net", "probe", "worst_rel_err"])
    scale = (max(abs(roi.x_min), abs(roi.x_max)), max(abs(roi.y_min), abs(roi.y_max)))
    worst = 0.0
    for k in range(n_nets):
        net = init_siren(seed=int(rng.integers(2**32)), input_scale=scale)
        for p in range(n_probes):
            x = np.array([rng.uniform(roi.x_min, roi.x_max), rng.uniform(roi.y_min, roi.y_max)])
            err = gradient_check(net, x, float(rng.uniform(-1, 0)), rng)
            worst = max(worst, err)
            res.rows.append([k, p, repr(err)])
    res.passed = worst <= rtol
    res.summary = f"{n_nets * n_probes} pairs, worst relative error {worst:.3e}"
    return res


def write_suite_csv(res: SuiteResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(res.header)
        w.writerows(res.rows)
