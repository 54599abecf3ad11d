"""Travel cost and discount bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class TravelCost:
    """h(x) = -scale * (radius - |x|) inside the open disk, 0 on and outside it."""

    radius: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ContractError(f"radius must be positive, got {self.radius}")
        if self.scale < 0:
            raise ContractError(f"scale must be nonnegative, got {self.scale}")

    @property
    def bound(self) -> float:
        return self.scale * self.radius

    @property
    def lipschitz(self) -> float:
        return self.scale


def state_norm(x) -> np.ndarray:
    # sqrt(x1*x1 + x2*x2) rather than hypot: the scalar backup path in
    # bellman_mdp repeats this exact op sequence with math.sqrt.
    x = np.asarray(x, dtype=float)
    return np.sqrt(x[..., 0] * x[..., 0] + x[..., 1] * x[..., 1])


def eval_cost(cost: TravelCost, x, time_to_go: float | None = None) -> np.ndarray | float:
    """Running cost at state(s) ``x``. ``time_to_go`` is accepted but unused."""
    n = state_norm(x)
    h = np.where(n < cost.radius, -cost.scale * (cost.radius - n), 0.0)
    # -0.0 would survive into sums; keep the off-target value a clean zero
    h = h + 0.0
    return float(h) if np.ndim(h) == 0 else h


@dataclass
class CalibrationReport:
    s0_violations: list[tuple[float, float]] = field(default_factory=list)
    s1_violations: list[tuple[float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.s0_violations and not self.s1_violations

    def __len__(self):
        return len(self.s0_violations) + len(self.s1_violations)


def check_calibration(cost: TravelCost, samples) -> CalibrationReport:
    """Flag samples where h != 0 off target (S0) or h >= 0 on target (S1)."""
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    if pts.shape[0] == 0:
        raise ContractError("calibration check needs at least one sample")
    h = np.atleast_1d(eval_cost(cost, pts))
    on_target = state_norm(pts) < cost.radius
    report = CalibrationReport()
    for p, hv, inside in zip(pts, h, on_target):
        if inside and not hv < 0:
            report.s1_violations.append((float(p[0]), float(p[1])))
        elif not inside and hv != 0:
            report.s0_violations.append((float(p[0]), float(p[1])))
    return report


@dataclass(frozen=True)
class DiscountConfig:
    rate: float
    dt: float
    gamma: float
    weight: float


def make_discount(rate: float, dt: float) -> DiscountConfig:
    """gamma = exp(-rate*dt), weight = (1-gamma)/rate (dt in the undiscounted limit)."""
    if rate < 0:
        raise ContractError(f"discount rate must be nonnegative, got {rate}")
    if not dt > 0:
        raise ContractError(f"time step must be positive, got {dt}")
    rate = float(rate)
    dt = float(dt)
    gamma = math.exp(-rate * dt)
    weight = (1.0 - gamma) / rate if rate > 0 else dt
    return DiscountConfig(rate=rate, dt=dt, gamma=gamma, weight=weight)


@dataclass(frozen=True)
class Horizon:
    T: float
    forward: bool = True

    def __post_init__(self):
        if not self.T > 0:
            raise ContractError(f"horizon must be positive, got {self.T}")

    def n_steps(self, dt: float) -> int:
        k = round(self.T / dt)
        if abs(k * dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ContractError(f"horizon {self.T} is not an integer multiple of dt={dt}")
        return int(k)


def value_range(cost: TravelCost, disc: DiscountConfig) -> tuple[float, float]:
    if not disc.rate > 0:
        raise ContractError("stationary value range needs a positive discount rate")
    return (-cost.bound / disc.rate, 0.0)
