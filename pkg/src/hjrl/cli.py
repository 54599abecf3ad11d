"""Command-line entry point: ``hjrl <command> --config FILE --out DIR [--seed N]``.

Commands
  solve-pde   stationary discounted value on the stage-2 grid
  stage1      finite-horizon travel solves, reach baseline, oracle and mask comparisons
  train-rl    fitted TD training of the sinusoidal value network
  compare     grid error between a solved field and a trained network
  properties  contraction, monotonicity, residual-consistency and gradient suites

Every run writes the canonical config it used and a ``manifest.json``.
Exit status: 0 on success, 1 on non-convergence, divergence or a failed
property, 2 on bad input (config, files, arguments).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ExperimentConfig, config_hash, dump_config, load_config
from .costs import Horizon, value_range
from .errors import ContractError, ParseError, TrainingDiverged
from .grid import ScalarField, read_field, resample, sup_diff, write_field, write_pgm
from .hjb_solver import SweepConfig, solve_reach_min_over_time, solve_stationary, solve_travel_finite_horizon, \
    target_signed_distance
from .properties import contraction_suite, gradient_suite, monotonicity_suite, residual_suite, write_suite_csv
from .reachability import OracleConfig, compare_masks, extract_brt, oracle_mask, write_disagreements_csv, write_pbm
from .siren import TrainHistory, load_checkpoint, predict_field, save_checkpoint, train
from .bellman_mdp import write_residual_csv

log = logging.getLogger("hjrl")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


@dataclass
class Run:
    """Bookkeeping for one command invocation."""
    out: Path
    cfg: ExperimentConfig
    outputs: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    checks: dict[str, object] = field(default_factory=dict)

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def stage(self, name: str):
        return _Timer(self.timings, name)


class _Timer:
    def __init__(self, sink, name):
        self.sink, self.name = sink, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.name] = round(time.perf_counter() - self.t0, 3)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _heat_range(cost, disc) -> tuple[float, float]:
    """Graymap range: the value range, widened to [-1, 0] when the cost is zero."""
    lo, hi = value_range(cost, disc)
    return (lo, hi) if lo < hi else (hi - 1.0, hi)


def _tag(rate: float) -> str:
    return f"{rate:g}".replace(".", "p")


# -- commands -----------------------------------------------------------------

def cmd_solve_pde(run: Run, args) -> int:
    cfg = run.cfg
    grid, dyn, cost, disc = cfg.stage2_grid(), cfg.dyn(), cfg.travel_cost(), cfg.disc()
    sweep = SweepConfig(disc, cfg.sweep.tol, cfg.sweep.max_iters)
    with run.stage("solve"):
        sol = solve_stationary(sweep, dyn, cost, grid)
    lo, hi = value_range(cost, disc)
    write_field(sol.field, run.path("value.field"))
    write_field(sol.raw, run.path("value_raw.field"))
    _write_rows(run.path("convergence.csv"), ["iter", "delta"],
                [[k + 1, repr(d)] for k, d in enumerate(sol.deltas)])
    write_pgm(sol.field, run.path("value.pgm"), *_heat_range(cost, disc))
    raw = sol.raw.values
    in_range = bool(raw.min() >= lo - sweep.tol and raw.max() <= hi + sweep.tol)
    d = np.array(sol.deltas)
    geometric = bool(np.all(d[1:] <= disc.gamma * d[:-1] + 1e-12))
    run.checks.update(converged=sol.converged, iterations=sol.iterations, final_delta=sol.final_delta,
                      value_in_range=in_range, geometric_decay=geometric,
                      value_min=float(raw.min()), value_max=float(raw.max()))
    log.info("solve-pde: %d iterations, final delta %.3e, values in [%.4f, %.4f]",
             sol.iterations, sol.final_delta, raw.min(), raw.max())
    return EXIT_OK if (sol.converged and in_range and geometric) else EXIT_FAIL


def cmd_stage1(run: Run, args) -> int:
    cfg, s1 = run.cfg, run.cfg.stage1
    fine, coarse = cfg.stage1_grid(), cfg.stage1_compare_grid()
    dyn, cost = cfg.dyn(s1.half_width), cfg.travel_cost()
    horizon = Horizon(s1.horizon)
    dt = cfg.discount.dt

    masks, travel = {}, {}
    with run.stage("travel_solves"):
        for rate in s1.rates:
            sweep = SweepConfig(cfg.disc(rate), cfg.sweep.tol, cfg.sweep.max_iters)
            sol = solve_travel_finite_horizon(sweep, dyn, cost, fine, horizon)
            name = f"travel_rate{_tag(rate)}"
            travel[name] = sol.final
            write_field(sol.final, run.path(f"{name}.field"))
            masks[name] = extract_brt(resample(sol.final, coarse), s1.threshold)
    with run.stage("reach_solve"):
        reach = solve_reach_min_over_time(dyn, fine, dt, target_signed_distance(cost), horizon).final
        write_field(reach, run.path("reach.field"))
        masks["reach"] = extract_brt(resample(reach, coarse), s1.threshold)
    with run.stage("oracle"):
        ocfg = OracleConfig(horizon.n_steps(dt), dt, s1.max_switches)
        masks["oracle"] = oracle_mask(coarse, cost, ocfg, dyn)
    for name, m in masks.items():
        write_pbm(m, run.path(f"mask_{name}.pbm"))

    base = f"travel_rate{_tag(s1.rates[0])}"
    pairs = [(base, "oracle")] + [(base, n) for n in travel if n != base] + [(base, "reach")]
    rows, ok = [], True
    for a, b in pairs:
        c = compare_masks(masks[a], masks[b], s1.band_cells)
        rows.append([a, b, c.agreements, c.disagreements, c.out_of_band])
        if b == "oracle":
            write_disagreements_csv(c, coarse, run.path("disagreements_oracle.csv"))
        if b != "reach":  # the reach baseline is reported, not asserted
            ok &= c.out_of_band == 0
        run.checks[f"out_of_band_{a}_vs_{b}"] = c.out_of_band
        log.info("stage1: %s vs %s: %d disagreements, %d out of band", a, b, c.disagreements, c.out_of_band)
    _write_rows(run.path("mask_report.csv"), ["a", "b", "agreements", "disagreements", "out_of_band"], rows)

    inside = reach.values <= 0.0
    vals = travel[base].values[inside]
    counts, edges = np.histogram(vals, bins=s1.hist_bins)
    _write_rows(run.path("hist_travel_in_reach.csv"), ["bin_lo", "bin_hi", "count"],
                [[repr(float(edges[k])), repr(float(edges[k + 1])), int(counts[k])] for k in range(len(counts))])
    run.checks["hist_samples"] = int(vals.size)
    run.checks["hist_max_value"] = float(vals.max()) if vals.size else None
    return EXIT_OK if ok else EXIT_FAIL


def cmd_train_rl(run: Run, args) -> int:
    cfg = run.cfg
    grid, dyn, cost, disc = cfg.stage2_grid(), cfg.dyn(), cfg.travel_cost(), cfg.disc()
    hist = TrainHistory()
    code = EXIT_OK
    net = None
    with run.stage("train"):
        try:
            net = train(cfg.train_config(), cost, dyn, disc, grid, hist)
        except TrainingDiverged as e:
            log.error("train-rl: %s", e)
            run.checks["diverged"] = str(e)
            code = EXIT_FAIL
    _write_rows(run.path("loss.csv"), ["step", "loss"], [[k + 1, repr(v)] for k, v in enumerate(hist.losses)])
    _write_rows(run.path("probe_residual.csv"), ["step", "td_residual"],
                [[s, repr(v)] for s, v in zip(hist.probe_steps, hist.probe_residuals)])
    if net is None:
        return code
    save_checkpoint(net, run.path("net.txt"))
    lo, hi = value_range(cost, disc)
    pred = predict_field(net, grid, (lo, hi))
    write_field(pred, run.path("prediction.field"))
    write_pgm(pred, run.path("prediction.pgm"), *_heat_range(cost, disc))
    pr = np.array(hist.probe_residuals)
    if pr.size > 1:
        run.checks["probe_nonincreasing_fraction"] = float(np.mean(np.diff(pr) <= 0))
    run.checks["final_loss"] = hist.losses[-1]
    return code


def cmd_compare(run: Run, args) -> int:
    if not args.pde or not args.net:
        raise ContractError("compare needs --pde FIELD and --net CHECKPOINT")
    cfg = run.cfg
    cost, disc = cfg.travel_cost(), cfg.disc()
    pde = read_field(args.pde)
    if pde.grid != cfg.stage2_grid():
        raise ContractError(f"PDE field grid {pde.grid} does not match the configured grid {cfg.stage2_grid()}")
    net = load_checkpoint(args.net)
    lo, hi = value_range(cost, disc)
    with run.stage("evaluate"):
        pred = predict_field(net, pde.grid, (lo, hi))
        stats = sup_diff(pred, pde)
    err = ScalarField(pde.grid, np.abs(pred.values - pde.values))
    write_field(err, run.path("error.field"))
    _write_rows(run.path("stats.csv"), ["max_abs", "mean_abs", "argmax_i", "argmax_j"],
                [[repr(stats.max_abs), repr(stats.mean_abs), *stats.argmax]])
    hl, hh = _heat_range(cost, disc)
    write_pgm(pde, run.path("pde.pgm"), hl, hh)
    write_pgm(pred, run.path("net.pgm"), hl, hh)
    write_pgm(err, run.path("error.pgm"), 0.0, hh - hl)
    run.checks.update(max_abs=stats.max_abs, mean_abs=stats.mean_abs)
    log.info("compare: max |W - V| = %.4f, mean = %.4f", stats.max_abs, stats.mean_abs)
    return EXIT_OK


def cmd_properties(run: Run, args) -> int:
    cfg, p = run.cfg, run.cfg.properties
    grid, dyn, cost, disc = cfg.stage2_grid(), cfg.dyn(), cfg.travel_cost(), cfg.disc()
    seed = cfg.run.seed
    suites = []
    with run.stage("contraction"):
        suites.append(contraction_suite(grid, dyn, cost, p.rates, p.sigmas, p.trials,
                                        np.random.default_rng([seed, 1])))
    with run.stage("monotonicity"):
        suites.append(monotonicity_suite(grid, disc, dyn, cost, p.trials, np.random.default_rng([seed, 2])))
    with run.stage("residual_consistency"):
        res, reports, _ = residual_suite(grid, disc, dyn, cost, p.residual_sigmas, p.residual_probes,
                                         p.ratio_lo, p.ratio_hi, np.random.default_rng([seed, 3]))
        suites.append(res)
        write_residual_csv(reports, run.path("residuals.csv"))
    with run.stage("gradient_check"):
        suites.append(gradient_suite(p.grad_nets, p.grad_probes, grid, p.grad_rtol,
                                     np.random.default_rng([seed, 4])))
    for s in suites:
        write_suite_csv(s, run.path(f"{s.name}.csv"))
        run.checks[s.name] = {"passed": s.passed, "summary": s.summary}
        log.info("%s: %s (%s)", s.name, "pass" if s.passed else "FAIL", s.summary)
    return EXIT_OK if all(s.passed for s in suites) else EXIT_FAIL


COMMANDS = {
    "solve-pde": cmd_solve_pde,
    "stage1": cmd_stage1,
    "train-rl": cmd_train_rl,
    "compare": cmd_compare,
    "properties": cmd_properties,
}


# -- plumbing -----------------------------------------------------------------

def _thread_limit():
    raw = os.environ.get("HJRL_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ContractError(f"HJRL_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ContractError("HJRL_THREADS must be nonnegative")
    return threadpool_limits(limits=n) if n > 0 else nullcontext()


def _plain(o):
    """JSON fallback for numpy scalars."""
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjrl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="INI config; defaults are used for anything missing")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="overrides [run] seed")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "compare":
            sp.add_argument("--pde", type=Path, help="field written by solve-pde")
            sp.add_argument("--net", type=Path, help="checkpoint written by train-rl")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if args.seed < 0:
                raise ContractError("--seed must be nonnegative")
            cfg = cfg.with_seed(args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        run = Run(args.out, cfg)
        (args.out / "config.ini").write_text(dump_config(cfg))
        t0 = time.perf_counter()
        with _thread_limit():
            code = COMMANDS[args.command](run, args)
        run.timings["total"] = round(time.perf_counter() - t0, 3)
    except (ParseError, ContractError, OSError) as e:
        log.error("%s", e)
        return EXIT_INPUT

    manifest = {
        "command": args.command,
        "version": __version__,
        "config_sha256": config_hash(cfg),
        "seed": cfg.run.seed,
        "exit_code": code,
        "outputs": {name: _sha256(args.out / name) for name in sorted(set(run.outputs))},
        "wall_clock_s": run.timings,
        "checks": run.checks,
    }
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_plain) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
