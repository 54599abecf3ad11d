"""Controlled ODEs, bang-bang control sets and one-step flow maps.

States are arrays whose last axis has length ``state_dim``; every function
here broadcasts over leading axes so the same code serves single points and
whole grids.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError

VectorField = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class ControlSet:
    actions: tuple[float, ...]

    def __post_init__(self):
        if len(self.actions) == 0:
            raise ContractError("control set must be non-empty")

    @classmethod
    def bang_bang(cls, a_max: float = 1.0) -> "ControlSet":
        if not a_max > 0:
            raise ContractError(f"a_max must be positive, got {a_max}")
        return cls((-float(a_max), float(a_max)))

    def __contains__(self, u) -> bool:
        return any(float(u) == a for a in self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __len__(self):
        return len(self.actions)


@dataclass(frozen=True)
class ControlledDynamics:
    state_dim: int
    vector_field: VectorField
    controls: ControlSet
    lipschitz_const_x: float
    # Bound on |f| over the configured ROI only; f is unbounded on R^n.
    speed_bound_on_roi: float


def _double_integrator_field(x: np.ndarray, u: float) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    out[..., 0] = x[..., 1]
    out[..., 1] = u
    return out


def double_integrator(a_max: float = 1.0, roi_half_width: float = 2.5) -> ControlledDynamics:
    """x1' = x2, x2' = u with u in {-a_max, +a_max}."""
    controls = ControlSet.bang_bang(a_max)
    return ControlledDynamics(
        state_dim=2,
        vector_field=_double_integrator_field,
        controls=controls,
        lipschitz_const_x=1.0,
        speed_bound_on_roi=float(np.hypot(roi_half_width, a_max)),
    )


class Scheme(enum.Enum):
    EXPLICIT_EULER = "euler"
    MIDPOINT = "midpoint"


@dataclass(frozen=True)
class FlowStep:
    scheme: Scheme
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractError(f"step size must be positive, got {self.dt}")


def _as_state(dyn: ControlledDynamics, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (dyn.state_dim,):
        raise ContractError(f"expected state of dimension {dyn.state_dim}, got shape {x.shape}")
    return x


def _check_control(dyn: ControlledDynamics, u) -> float:
    if u not in dyn.controls:
        raise ContractError(f"control {u!r} not in control set {dyn.controls.actions}")
    return float(u)


def eval_field(dyn: ControlledDynamics, x, u) -> np.ndarray:
    x = _as_state(dyn, x)
    return dyn.vector_field(x, _check_control(dyn, u))


def flow_step(dyn: ControlledDynamics, step: FlowStep, x, u) -> np.ndarray:
    """Euler step ``x + dt f(x,u)``, or the Euler half-step point for MIDPOINT."""
    x = _as_state(dyn, x)
    fx = dyn.vector_field(x, _check_control(dyn, u))
    if step.scheme is Scheme.EXPLICIT_EULER:
        return x + step.dt * fx
    return x + (0.5 * step.dt) * fx


def rollout(dyn: ControlledDynamics, step: FlowStep, x0, controls: Sequence) -> np.ndarray:
    if len(controls) == 0:
        raise ContractError("rollout needs at least one control")
    x = _as_state(dyn, x0)
    states = [x]
    for u in controls:
        x = flow_step(dyn, step, x, u)
        states.append(x)
    return np.stack(states)
