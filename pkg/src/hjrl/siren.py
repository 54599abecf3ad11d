"""Sinusoidal value network trained by fitted TD iteration, in plain numpy.

Architecture: two hidden sine layers of width 100 and a linear output,

    h1 = sin(omega0 * (W1 z + b1)),  h2 = sin(omega0 * (W2 h1 + b2)),  y = W3 . h2 + b3

where z = x / input_scale maps the ROI onto [-1, 1]^2.  Gradients are
hand-derived; ``tests/test_siren.py`` checks them against finite differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .costs import DiscountConfig, TravelCost, eval_cost, value_range
from .dynamics import ControlledDynamics, FlowStep, Scheme, flow_step
from .errors import ContractError, ParseError, TrainingDiverged
from .grid import Grid2, ScalarField

log = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass
class SirenNet:
    W1: np.ndarray  # (H, 2)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H, H)
    b2: np.ndarray  # (H,)
    W3: np.ndarray  # (H,)
    b3: np.ndarray  # (1,)
    omega0: float = 30.0
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(2))

    @property
    def width(self) -> int:
        return self.W1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "SirenNet":
        return SirenNet(**{k: v.copy() for k, v in self.params().items()},
                        omega0=self.omega0, input_scale=self.input_scale.copy())

    def check_finite(self):
        for k, v in self.params().items():
            if not np.all(np.isfinite(v)):
                raise ContractError(f"non-finite entries in {k}")

    def __call__(self, x) -> np.ndarray | float:
        return net_forward(self, x)


def init_siren(seed: int = 0, width: int = 100, omega0: float = 30.0, input_scale=(1.0, 1.0)) -> SirenNet:
    rng = np.random.default_rng(seed)
    in_dim = 2
    hidden_bound = math.sqrt(6.0 / width) / omega0
    return SirenNet(
        W1=rng.uniform(-1.0 / in_dim, 1.0 / in_dim, size=(width, in_dim)),
        b1=rng.uniform(-1.0 / math.sqrt(in_dim), 1.0 / math.sqrt(in_dim), size=width),
        W2=rng.uniform(-hidden_bound, hidden_bound, size=(width, width)),
        b2=rng.uniform(-1.0 / math.sqrt(width), 1.0 / math.sqrt(width), size=width),
        W3=rng.uniform(-hidden_bound, hidden_bound, size=width),
        b3=rng.uniform(-1.0 / math.sqrt(width), 1.0 / math.sqrt(width), size=1),
        omega0=float(omega0),
        input_scale=np.asarray(input_scale, dtype=float),
    )


def zero_siren(width: int = 100, omega0: float = 30.0) -> SirenNet:
    return SirenNet(np.zeros((width, 2)), np.zeros(width), np.zeros((width, width)),
                    np.zeros(width), np.zeros(width), np.zeros(1), omega0=omega0)


def _forward(net: SirenNet, X: np.ndarray):
    z = X / net.input_scale
    a1 = net.omega0 * (z @ net.W1.T + net.b1)
    h1 = np.sin(a1)
    a2 = net.omega0 * (h1 @ net.W2.T + net.b2)
    h2 = np.sin(a2)
    y = h2 @ net.W3 + net.b3[0]
    return y, (z, a1, h1, a2, h2)


def net_forward(net: SirenNet, x) -> np.ndarray | float:
    """Network output at one point (float) or a batch of shape (N, 2) (array)."""
    net.check_finite()
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    y, _ = _forward(net, np.atleast_2d(X))
    return float(y[0]) if single else y


def loss_and_grad(net: SirenNet, X: np.ndarray, targets: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error over the batch and its gradient w.r.t. every parameter."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y, (z, a1, h1, a2, h2) = _forward(net, X)
    r = y - targets
    n = X.shape[0]
    dy = (2.0 / n) * r
    g = {}
    g["W3"] = h2.T @ dy
    g["b3"] = np.array([dy.sum()])
    dpre2 = net.omega0 * np.outer(dy, net.W3) * np.cos(a2)
    g["W2"] = dpre2.T @ h1
    g["b2"] = dpre2.sum(axis=0)
    dpre1 = net.omega0 * (dpre2 @ net.W2) * np.cos(a1)
    g["W1"] = dpre1.T @ z
    g["b1"] = dpre1.sum(axis=0)
    return float(np.mean(r * r)), g


def net_gradient(net: SirenNet, x, y: float) -> dict[str, np.ndarray]:
    """Gradient of (net(x) - y)^2 at a single point."""
    _, g = loss_and_grad(net, np.asarray(x, dtype=float).reshape(1, 2), np.array([float(y)]))
    return g


def gradient_check(net: SirenNet, x, y: float, rng: np.random.Generator, per_tensor: int = 8,
                   step: float = 1e-5, floor: float = 1e-4) -> float:
    """Worst relative gap between ``net_gradient`` and central differences of (net(x) - y)^2.

    ``per_tensor`` coordinates are drawn from each parameter array.  The
    denominator is max(|analytic|, |numeric|, floor) so that near-zero
    gradients, where round-off in the difference quotient dominates, are
    compared absolutely.
    """
    g = net_gradient(net, x, y)
    worst = 0.0
    for k in PARAM_NAMES:
        flat = getattr(net, k).reshape(-1)
        for i in rng.choice(flat.size, min(per_tensor, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + step
            lp = (net_forward(net, x) - y) ** 2
            flat[i] = orig - step
            lm = (net_forward(net, x) - y) ** 2
            flat[i] = orig
            fd = (lp - lm) / (2 * step)
            a = g[k].reshape(-1)[i]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), floor))
    return worst


# -- TD targets ---------------------------------------------------------------

def td_targets(net, X: np.ndarray, cost: TravelCost, dyn: ControlledDynamics, disc: DiscountConfig,
               roi: Grid2) -> np.ndarray:
    """min_u [w h(x + dt/2 f) + gamma * net(clamp(x + dt f))], clipped to the value range.

    ``net`` may be any callable mapping an (N, 2) batch to N values, which lets
    the tests substitute a grid interpolant for the network.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    euler = FlowStep(Scheme.EXPLICIT_EULER, disc.dt)
    mid = FlowStep(Scheme.MIDPOINT, disc.dt)
    q = []
    for u in dyn.controls:
        c = disc.weight * eval_cost(cost, flow_step(dyn, mid, X, u))
        nxt = roi.clamp(flow_step(dyn, euler, X, u))
        q.append(c + disc.gamma * np.asarray(net(nxt), dtype=float))
    out = np.min(np.stack(q), axis=0)
    if disc.rate > 0:
        lo, hi = value_range(cost, disc)
        out = np.clip(out, lo, hi)
    return out


def td_target(net, x, cost: TravelCost, dyn: ControlledDynamics, disc: DiscountConfig, roi: Grid2) -> float:
    return float(td_targets(net, np.asarray(x, dtype=float).reshape(1, 2), cost, dyn, disc, roi)[0])


# -- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    steps: int = 30_000
    learning_rate: float = 3e-4
    seed: int = 0
    target_refresh: int = 200
    optimizer: str = "adam"
    lr_final_fraction: float = 0.03  # exponential decay of the step size down to lr * this
    probe_every: int = 500
    probe_size: int = 1024
    guard_factor: float = 10.0
    guard_window: int = 100

    def __post_init__(self):
        for name in ("batch_size", "steps", "target_refresh", "probe_every", "probe_size", "guard_window"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if not 0 < self.lr_final_fraction <= 1:
            raise ContractError("lr_final_fraction must be in (0, 1]")
        if self.seed < 0:
            raise ContractError("seed must be nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    probe_steps: list[int] = field(default_factory=list)
    probe_residuals: list[float] = field(default_factory=list)


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, net: SirenNet, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * self.b1 + (1.0 - self.b1) * g
            v = self.v.get(k, 0.0) * self.b2 + (1.0 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            p = getattr(net, k)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, net: SirenNet, grads):
        for k, g in grads.items():
            p = getattr(net, k)
            p -= self.lr * g


def sample_states(rng: np.random.Generator, roi: Grid2, n: int) -> np.ndarray:
    return np.column_stack([rng.uniform(roi.x_min, roi.x_max, n), rng.uniform(roi.y_min, roi.y_max, n)])


def td_residual(net: SirenNet, X, cost, dyn, disc, roi) -> float:
    """Mean squared Bellman residual of ``net`` against its own TD targets."""
    return float(np.mean((net_forward(net, X) - td_targets(net, X, cost, dyn, disc, roi)) ** 2))


def train(cfg: TrainConfig, cost: TravelCost, dyn: ControlledDynamics, disc: DiscountConfig, roi: Grid2,
          history: TrainHistory | None = None, callback=None) -> SirenNet:
    """Fitted TD iteration with a target network refreshed every ``cfg.target_refresh`` steps."""
    if not disc.rate > 0:
        raise ContractError("training needs a positive discount rate")
    rng = np.random.default_rng(cfg.seed)
    scale = (max(abs(roi.x_min), abs(roi.x_max)), max(abs(roi.y_min), abs(roi.y_max)))
    net = init_siren(seed=int(rng.integers(2**32)), input_scale=scale)
    probe = sample_states(np.random.default_rng(cfg.seed + 1), roi, cfg.probe_size)
    opt = _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else _Sgd(cfg.learning_rate)
    hist = history if history is not None else TrainHistory()
    frozen = net.copy()
    window: list[float] = []
    reference = None
    for step in range(1, cfg.steps + 1):
        if (step - 1) % cfg.target_refresh == 0:
            frozen = net.copy()
        X = sample_states(rng, roi, cfg.batch_size)
        targets = td_targets(frozen, X, cost, dyn, disc, roi)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = loss_and_grad(net, X, targets)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        opt.lr = cfg.learning_rate * cfg.lr_final_fraction ** ((step - 1) / max(1, cfg.steps - 1))
        with np.errstate(over="ignore", invalid="ignore"):
            opt.step(net, grads)
        if not all(np.all(np.isfinite(v)) for v in net.params().values()):
            raise TrainingDiverged(f"non-finite weights after step {step}")
        hist.losses.append(loss)

        window.append(loss)
        if len(window) > cfg.guard_window:
            window.pop(0)
        running = sum(window) / len(window)
        if step == cfg.guard_window:
            reference = running
        elif reference is not None and running > cfg.guard_factor * reference:
            raise TrainingDiverged(
                f"running mean loss {running:.3e} at step {step} exceeds "
                f"{cfg.guard_factor:g}x its step-{cfg.guard_window} value {reference:.3e}")

        if step % cfg.probe_every == 0:
            hist.probe_steps.append(step)
            hist.probe_residuals.append(td_residual(net, probe, cost, dyn, disc, roi))
            log.debug("step %d loss %.3e probe residual %.3e", step, loss, hist.probe_residuals[-1])
        if callback is not None:
            callback(step, net)
    return net


def predict_field(net: SirenNet, grid: Grid2, clamp: tuple[float, float] | None = None) -> ScalarField:
    vals = net_forward(net, grid.points().reshape(-1, 2))
    if clamp is not None:
        vals = np.clip(vals, *clamp)
    return ScalarField(grid, vals.reshape(grid.shape))


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(net: SirenNet, path) -> None:
    """Text checkpoint: header, dims, omega0, input scale, then W1 b1 W2 b2 W3 b3 row-major."""
    lines = [
        "SIREN v1",
        f"2 {net.width} {net.width} 1",
        repr(float(net.omega0)),
        f"{float(net.input_scale[0])!r} {float(net.input_scale[1])!r}",
    ]
    for k in PARAM_NAMES:
        lines.extend(repr(float(v)) for v in getattr(net, k).reshape(-1))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> SirenNet:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "SIREN v1":
        raise ParseError("missing 'SIREN v1' header", line=1)
    try:
        in_dim, h1, h2, out_dim = (int(s) for s in lines[1].split())
    except ValueError:
        raise ParseError("bad layer dimensions", line=2) from None
    if in_dim != 2 or out_dim != 1 or h1 != h2:
        raise ParseError("unsupported layer dimensions", line=2)
    try:
        omega0 = float(lines[2])
        scale = np.array([float(s) for s in lines[3].split()])
    except (ValueError, IndexError):
        raise ParseError("bad omega0 / input scale", line=3) from None
    shapes = {"W1": (h1, 2), "b1": (h1,), "W2": (h1, h1), "b2": (h1,), "W3": (h1,), "b3": (1,)}
    body = lines[4:]
    pos = 0
    params = {}
    for k in PARAM_NAMES:
        n = int(np.prod(shapes[k]))
        chunk = body[pos:pos + n]
        if len(chunk) != n:
            raise ParseError(f"truncated checkpoint while reading {k}", line=5 + pos + len(chunk))
        try:
            params[k] = np.array([float(s) for s in chunk]).reshape(shapes[k])
        except ValueError:
            raise ParseError(f"bad number in {k}", line=5 + pos) from None
        pos += n
    net = SirenNet(**params, omega0=omega0, input_scale=scale)
    net.check_finite()
    return net
