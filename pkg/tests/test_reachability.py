import numpy as np
import pytest

from hjrl.costs import Horizon, TravelCost, make_discount
from hjrl.dynamics import double_integrator
from hjrl.errors import ContractError
from hjrl.grid import Grid2, ScalarField, resample
from hjrl.hjb_solver import SweepConfig, solve_travel_finite_horizon
from hjrl.reachability import (
    BrtMask,
    OracleConfig,
    compare_masks,
    control_sequences,
    extract_brt,
    oracle_mask,
    oracle_reachable,
    write_disagreements_csv,
    write_pbm,
)

TOL = 1e-6


@pytest.fixture(scope="module")
def dyn():
    return double_integrator(1.0)


@pytest.fixture(scope="module")
def cost():
    return TravelCost(1.0, 1.0)


def test_extract_brt_examples():
    g = Grid2.square(1, 5)
    assert extract_brt(ScalarField.constant(g, 0.0), -1e-6).count() == 0
    vals = np.zeros(g.shape)
    vals[2, 3] = -0.5
    m = extract_brt(ScalarField(g, vals), -1e-6)
    assert m.count() == 1 and m.inside[2, 3]
    with pytest.raises(ContractError):
        extract_brt(ScalarField.constant(g, 0.0), 0.0)


def test_target_nodes_are_in_travel_brt(dyn, cost):
    g = Grid2.square(10, 101)
    sol = solve_travel_finite_horizon(SweepConfig(make_discount(0.0, 0.05)), dyn, cost, g, n_steps=1)
    m = extract_brt(sol.final, -TOL)
    inside_target = np.linalg.norm(g.points(), axis=-1) < 1.0
    assert np.all(m.inside[inside_target])


def test_control_sequences_count():
    seqs = control_sequences(20, 3, (-1.0, 1.0))
    # 2 * sum_{s<=3} C(19, s)
    assert seqs.shape == (2 * (1 + 19 + 171 + 969), 20)
    assert len({tuple(s) for s in seqs}) == seqs.shape[0]
    switches = (np.diff(seqs, axis=1) != 0).sum(axis=1)
    assert switches.max() == 3


def test_oracle_examples(dyn, cost):
    cfg = OracleConfig(20, 0.05, 3)
    assert oracle_reachable((0.2, -0.3), cost, cfg, dyn)
    assert not oracle_reachable((10.0, 0.0), cost, cfg, dyn)
    # braking from (-1.4, 1.0) passes (-0.905, 0.1) at t = 0.9
    assert oracle_reachable((-1.4, 1.0), cost, cfg, dyn)
    assert not oracle_reachable((-2.5, 2.0), cost, cfg, dyn)
    with pytest.raises(ContractError):
        OracleConfig(20, 0.05, 4)


def test_oracle_excludes_capture_at_horizon(dyn, cost):
    # (-0.97, 0.3) is outside; one Euler step with u=-1 lands at (-0.955, 0.25), inside.
    # A one-step horizon only checks the start state.
    x0 = (-0.97, 0.3)
    assert not oracle_reachable(x0, cost, OracleConfig(1, 0.05, 0), dyn)
    assert oracle_reachable(x0, cost, OracleConfig(2, 0.05, 0), dyn)


def test_oracle_substeps_sensitivity(dyn, cost):
    g = Grid2.square(10, 21)
    a = oracle_mask(g, cost, OracleConfig(20, 0.05, 2), dyn)
    b = oracle_mask(g, cost, OracleConfig(20, 0.05, 2, substeps=4), dyn)
    assert compare_masks(a, b, 1).out_of_band == 0


def test_compare_masks_examples():
    g = Grid2.square(1, 9)
    rng = np.random.default_rng(0)
    a = BrtMask(g, rng.random(g.shape) < 0.5)
    c = compare_masks(a, a, 2)
    assert (c.disagreements, c.out_of_band, c.agreements) == (0, 0, 81)
    disk = np.linalg.norm(g.points(), axis=-1) < 0.6
    grown = np.linalg.norm(g.points(), axis=-1) < 0.85
    c = compare_masks(BrtMask(g, disk), BrtMask(g, grown), 2)
    assert c.disagreements > 0 and c.out_of_band == 0
    g3 = Grid2.square(1, 3)
    c = compare_masks(BrtMask(g3, np.ones((3, 3), bool)), BrtMask(g3, np.zeros((3, 3), bool)), 2)
    assert c.disagreements == 9 and c.out_of_band == 9  # no frontier in an all-true mask
    with pytest.raises(ContractError):
        compare_masks(BrtMask(g3, np.ones((3, 3), bool)), a, 2)


@pytest.fixture(scope="module")
def stage1(dyn, cost):
    fine = Grid2.square(10, 501)
    coarse = Grid2.square(10, 51)
    out = {}
    for lam in (0.0, 1.0):
        sol = solve_travel_finite_horizon(SweepConfig(make_discount(lam, 0.05)), dyn, cost, fine, Horizon(1.0))
        out[lam] = sol
    oracle = oracle_mask(coarse, cost, OracleConfig(20, 0.05, 3), dyn)
    return fine, coarse, out, oracle


def test_soundness_and_completeness(stage1):
    fine, coarse, sols, oracle = stage1
    v = resample(sols[0.0].final, coarse).values
    mask = extract_brt(resample(sols[0.0].final, coarse), -TOL)
    cmp = compare_masks(mask, oracle, 2)
    band_free = np.ones(coarse.shape, bool)
    for i, j in cmp.disagreement_nodes:
        band_free[j, i] = False
    # unreachable nodes away from the frontier carry no negative value
    unreachable = ~oracle.inside & band_free
    assert v[unreachable].min() >= -TOL
    # nodes whose whole 4-neighbourhood is reachable are strictly negative
    o = oracle.inside
    deep = o.copy()
    deep[1:, :] &= o[:-1, :]
    deep[:-1, :] &= o[1:, :]
    deep[:, 1:] &= o[:, :-1]
    deep[:, :-1] &= o[:, 1:]
    assert deep.any()
    assert np.all(v[deep] < -TOL)


def test_discount_invariance_of_mask(stage1):
    fine, coarse, sols, _ = stage1
    m0 = extract_brt(resample(sols[0.0].final, coarse), -TOL)
    m1 = extract_brt(resample(sols[1.0].final, coarse), -TOL)
    assert compare_masks(m0, m1, 2).out_of_band == 0


def test_masks_grow_with_horizon(stage1):
    _, _, sols, _ = stage1
    masks = [extract_brt(s, -TOL).inside for s in sols[0.0].slices[1:]]
    for a, b in zip(masks, masks[1:]):
        assert np.all(b[a])


def test_exports(tmp_path):
    g = Grid2.square(1, 3)
    a = BrtMask(g, np.array([[1, 0, 0], [0, 1, 0], [0, 0, 0]], bool))
    write_pbm(a, tmp_path / "m.pbm")
    lines = (tmp_path / "m.pbm").read_text().splitlines()
    assert lines == ["P1", "3 3", "0 0 0", "0 1 0", "1 0 0"]
    c = compare_masks(a, BrtMask(g, np.zeros((3, 3), bool)), 0)
    write_disagreements_csv(c, g, tmp_path / "d.csv")
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert rows[0] == "i,j,x1,x2,out_of_band" and len(rows) == 3
