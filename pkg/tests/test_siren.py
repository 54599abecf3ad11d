import math

import numpy as np
import pytest

from hjrl.costs import TravelCost, make_discount, value_range
from hjrl.dynamics import double_integrator
from hjrl.errors import ContractError, ParseError, TrainingDiverged
from hjrl.grid import Grid2, ScalarField, interpolate_many
from hjrl.hjb_solver import SweepConfig, sl_backup, solve_stationary
from hjrl.siren import (
    PARAM_NAMES,
    TrainConfig,
    TrainHistory,
    init_siren,
    load_checkpoint,
    loss_and_grad,
    net_forward,
    net_gradient,
    predict_field,
    save_checkpoint,
    td_target,
    td_targets,
    train,
    zero_siren,
)

FD_STEP = 1e-5
# gradients below this magnitude are compared absolutely; FD round-off is ~1e-11
GRAD_FLOOR = 1e-4


@pytest.fixture(scope="module")
def dyn():
    return double_integrator(1.0)


@pytest.fixture(scope="module")
def cost():
    return TravelCost(1.0, 1.0)


@pytest.fixture(scope="module")
def disc():
    return make_discount(1.0, 0.05)


@pytest.fixture(scope="module")
def roi():
    return Grid2.square(2.5, 201)


def fd_check(net, x, y, rng, per_tensor=8):
    """Worst relative error of analytic vs central-difference gradient over sampled coordinates."""
    g = net_gradient(net, x, y)
    worst = 0.0
    for k in PARAM_NAMES:
        flat = getattr(net, k).reshape(-1)
        for i in rng.choice(flat.size, min(per_tensor, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + FD_STEP
            lp = (net_forward(net, x) - y) ** 2
            flat[i] = orig - FD_STEP
            lm = (net_forward(net, x) - y) ** 2
            flat[i] = orig
            fd = (lp - lm) / (2 * FD_STEP)
            a = g[k].reshape(-1)[i]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), GRAD_FLOOR))
    return worst


def test_zero_net_outputs_zero():
    assert net_forward(zero_siren(), (0.3, -1.2)) == 0.0
    assert np.all(net_forward(zero_siren(), np.ones((5, 2))) == 0.0)


def test_bias_passthrough():
    net = zero_siren()
    net.b3[0] = -0.42
    assert net_forward(net, (1.0, 2.0)) == -0.42


def test_golden_seed_zero_value():
    assert net_forward(init_siren(0), (0.0, 0.0)) == pytest.approx(0.0762634379466002, abs=1e-15)


def test_non_finite_weights_rejected():
    net = init_siren(0)
    net.W2[3, 4] = np.inf
    with pytest.raises(ContractError):
        net_forward(net, (0.0, 0.0))


def test_zero_net_zero_gradient():
    g = net_gradient(zero_siren(), (0.7, -0.2), 0.0)
    assert all(np.all(v == 0.0) for v in g.values())


def test_gradient_matches_finite_differences():
    worst = 0.0
    for s in range(20):
        rng = np.random.default_rng(100 + s)
        net = init_siren(seed=s, input_scale=(2.5, 2.5))
        for _ in range(5):
            worst = max(worst, fd_check(net, rng.uniform(-2.5, 2.5, 2), rng.uniform(-1, 0), rng))
    assert worst <= 1e-5


def test_output_gradient_linear_in_residual():
    net = init_siren(3)
    x = np.array([0.4, -0.9])
    out = net_forward(net, x)
    g1 = net_gradient(net, x, out - 0.25)
    g2 = net_gradient(net, x, out - 0.5)
    assert np.array_equal(2 * g1["W3"], g2["W3"])
    assert np.array_equal(2 * g1["b3"], g2["b3"])


def test_batch_loss_is_mean_of_points():
    net = init_siren(4)
    rng = np.random.default_rng(0)
    X, y = rng.uniform(-1, 1, (7, 2)), rng.uniform(-1, 0, 7)
    loss, g = loss_and_grad(net, X, y)
    assert loss == pytest.approx(np.mean((net_forward(net, X) - y) ** 2), rel=1e-14)
    per = [net_gradient(net, X[i], y[i])["W2"] for i in range(7)]
    assert np.allclose(g["W2"], np.mean(per, axis=0), rtol=1e-12, atol=1e-15)


# -- TD targets ---------------------------------------------------------------

def test_td_target_zero_net(cost, dyn, disc, roi):
    z = zero_siren()
    assert td_target(z, (2.0, 0.0), cost, dyn, disc, roi) == 0.0
    v = td_target(z, (0.0, 0.0), cost, dyn, disc, roi)
    assert v == pytest.approx(-(1 - math.exp(-0.05)) * 0.975, rel=1e-14)


def test_td_target_constant_net(cost, dyn, disc, roi):
    net = zero_siren()
    net.b3[0] = -0.3
    for x in [(2.0, 1.0), (0.2, 0.1)]:
        expect = min(
            disc.weight * (-(1 - math.hypot(x[0] + 0.025 * x[1], x[1] + 0.025 * u)) if
                           math.hypot(x[0] + 0.025 * x[1], x[1] + 0.025 * u) < 1 else 0.0)
            + disc.gamma * -0.3
            for u in (-1.0, 1.0))
        assert td_target(net, x, cost, dyn, disc, roi) == pytest.approx(expect, abs=1e-15)


def test_td_targets_clamped_to_value_range(cost, dyn, disc, roi):
    net = zero_siren()
    net.b3[0] = -50.0
    t = td_targets(net, np.zeros((3, 2)), cost, dyn, disc, roi)
    assert np.all(t == value_range(cost, disc)[0])


def test_td_targets_with_interpolant_equal_sweep(cost, dyn, disc, roi):
    sol = solve_stationary(SweepConfig(disc, max_iters=40), dyn, cost, roi)
    oracle = lambda P: interpolate_many(sol.field, P)
    nodes = roi.points().reshape(-1, 2)
    got = td_targets(oracle, nodes, cost, dyn, disc, roi)
    expect = sl_backup(sol.field, SweepConfig(disc), dyn, cost).values.reshape(-1)
    assert np.array_equal(got, np.clip(expect, *value_range(cost, disc)))


# -- training -----------------------------------------------------------------

def test_train_config_rejects_bad_values():
    with pytest.raises(ContractError):
        TrainConfig(batch_size=0)
    with pytest.raises(ContractError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ContractError):
        TrainConfig(optimizer="rmsprop")


def test_train_needs_discount(cost, dyn, roi):
    with pytest.raises(ContractError):
        train(TrainConfig(steps=1), cost, dyn, make_discount(0.0, 0.05), roi)


@pytest.mark.slow
def test_zero_cost_trains_to_zero(dyn, disc, roi):
    # every TD target is clipped to the value range {0}, so this is plain
    # regression to zero; shorter schedules stall at ~2e-3 of Adam noise
    cfg = TrainConfig(steps=15000, seed=1, probe_every=5000)
    net = train(cfg, TravelCost(1.0, 0.0), dyn, disc, roi)
    pred = net_forward(net, Grid2.square(2.5, 51).points().reshape(-1, 2))
    assert np.max(np.abs(pred)) <= 1e-3


def test_training_is_deterministic(cost, dyn, disc, roi):
    cfg = TrainConfig(steps=300, seed=7, probe_every=100)
    h1, h2 = TrainHistory(), TrainHistory()
    a = train(cfg, cost, dyn, disc, roi, h1)
    b = train(cfg, cost, dyn, disc, roi, h2)
    for k in PARAM_NAMES:
        assert getattr(a, k).tobytes() == getattr(b, k).tobytes()
    assert h1.losses == h2.losses and h1.probe_residuals == h2.probe_residuals
    c = train(TrainConfig(steps=300, seed=8, probe_every=100), cost, dyn, disc, roi)
    assert not np.array_equal(a.W2, c.W2)


def test_divergence_guard_on_running_loss(cost, dyn, disc, roi):
    def blow_up(step, net):
        if step == 150:
            net.b3[0] += 5.0

    cfg = TrainConfig(steps=400, seed=0)
    with pytest.raises(TrainingDiverged, match="exceeds"):
        train(cfg, cost, dyn, disc, roi, callback=blow_up)


def test_divergence_guard_on_non_finite(cost, dyn, disc, roi):
    cfg = TrainConfig(steps=400, learning_rate=50.0, optimizer="sgd", seed=0)
    with pytest.raises(TrainingDiverged, match="non-finite"):
        train(cfg, cost, dyn, disc, roi)


def test_predict_field_clamped(cost, disc):
    net = zero_siren()
    net.b3[0] = 3.0
    f = predict_field(net, Grid2.square(2.5, 11), value_range(cost, disc))
    assert np.all(f.values == 0.0)


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = init_siren(5, input_scale=(2.5, 2.5))
    p = tmp_path / "net.txt"
    save_checkpoint(net, p)
    back = load_checkpoint(p)
    for k in PARAM_NAMES:
        assert getattr(back, k).tobytes() == getattr(net, k).tobytes()
    X = np.random.default_rng(0).uniform(-2.5, 2.5, (100, 2))
    assert net_forward(back, X).tobytes() == net_forward(net, X).tobytes()


def test_checkpoint_truncated(tmp_path):
    p = tmp_path / "net.txt"
    save_checkpoint(init_siren(0), p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-10]) + "\n")
    with pytest.raises(ParseError):
        load_checkpoint(p)
    p.write_text("SIREN v9\n")
    with pytest.raises(ParseError, match="line 1"):
        load_checkpoint(p)
