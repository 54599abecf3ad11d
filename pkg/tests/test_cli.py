import json

import numpy as np
import pytest

from hjrl.cli import main
from hjrl.config import ExperimentConfig, config_hash, dump_config, parse_config
from hjrl.errors import ParseError
from hjrl.grid import read_field

SMALL = """
[stage1]
n = 101
compare_n = 21
[stage2]
n = 41
[train]
steps = 200
probe_every = 50
[properties]
trials = 3
grad_nets = 2
grad_probes = 2
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


# -- config -------------------------------------------------------------------

def test_empty_config_is_benchmark_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert cfg.discount.dt == 0.05 and cfg.discount.rate == 1.0
    assert cfg.sweep.tol == 1e-6 and cfg.sweep.max_iters == 2000
    assert (cfg.stage1.n, cfg.stage1.half_width) == (501, 10.0)
    assert (cfg.stage2.n, cfg.stage2.half_width) == (201, 2.5)


def test_config_round_trip():
    cfg = parse_config(SMALL + "\n[discount]\nrate = 0.5\n")
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    assert dump_config(parse_config(text)) == text
    assert "rate = 0.5" in text and "steps = 200" in text
    assert config_hash(cfg) != config_hash(ExperimentConfig())


@pytest.mark.parametrize("text,key", [
    ("[train]\nlearning_rat = 1e-4\n", "train.learning_rat"),
    ("[train]\nsteps = many\n", "train.steps"),
    ("[discount]\ndt = -0.1\n", "discount.dt"),
    ("[stage1]\nrates = 0 x\n", "stage1.rates"),
    ("[train]\nseed = 3\n", "train.seed"),
])
def test_bad_key_is_named(text, key):
    with pytest.raises(ParseError, match=key.replace(".", r"\.")):
        parse_config(text)


def test_unknown_section_and_syntax():
    with pytest.raises(ParseError, match="nonsense"):
        parse_config("[nonsense]\na = 1\n")
    with pytest.raises(ParseError, match="line"):
        parse_config("no section header\n")


# -- commands -----------------------------------------------------------------

def test_bad_config_exit_code(tmp_path, caplog):
    cfg = write(tmp_path, "[sweep]\ntoll = 1\n")
    assert main(["solve-pde", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "sweep.toll" in caplog.text


def test_solve_pde_zero_cost(tmp_path):
    cfg = write(tmp_path, SMALL + "[cost]\nscale = 0.0\n")
    out = tmp_path / "o"
    assert main(["solve-pde", "--config", str(cfg), "--out", str(out)]) == 0
    assert np.all(read_field(out / "value.field").values == 0.0)
    m = manifest(out)
    assert m["checks"]["converged"] and m["exit_code"] == 0
    assert set(m["outputs"]) >= {"value.field", "convergence.csv", "value.pgm"}
    assert (out / "convergence.csv").read_text().splitlines()[0] == "iter,delta"


def test_solve_pde_non_convergence_exit(tmp_path):
    cfg = write(tmp_path, SMALL + "[sweep]\nmax_iters = 5\n")
    assert main(["solve-pde", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert manifest(tmp_path / "o")["checks"]["converged"] is False


def test_properties_pass_and_fail(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "ok"
    assert main(["properties", "--config", str(cfg), "--out", str(out)]) == 0
    for name in ("contraction.csv", "monotonicity.csv", "residual_consistency.csv", "gradient_check.csv",
                 "residuals.csv"):
        assert (out / name).exists()
    strict = write(tmp_path, SMALL + "ratio_lo = 0.9\n", "strict.ini")  # appended to [properties]
    assert main(["properties", "--config", str(strict), "--out", str(tmp_path / "bad")]) == 1
    assert manifest(tmp_path / "bad")["checks"]["residual_consistency"]["passed"] is False


def test_stage1_small_and_deterministic(tmp_path):
    cfg = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["stage1", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["stage1", "--config", str(cfg), "--out", str(b)]) == 0
    ma, mb = manifest(a), manifest(b)
    assert ma["outputs"] == mb["outputs"]
    assert {"mask_report.csv", "hist_travel_in_reach.csv", "mask_oracle.pbm", "reach.field"} <= set(ma["outputs"])
    rows = (a / "mask_report.csv").read_text().splitlines()
    assert rows[0] == "a,b,agreements,disagreements,out_of_band"
    assert ma["checks"]["hist_max_value"] < 0


def test_train_and_compare(tmp_path):
    cfg = write(tmp_path, SMALL)
    pde, net = tmp_path / "pde", tmp_path / "net"
    assert main(["solve-pde", "--config", str(cfg), "--out", str(pde)]) == 0
    assert main(["train-rl", "--config", str(cfg), "--out", str(net), "--seed", "3"]) == 0
    assert manifest(net)["seed"] == 3
    out = tmp_path / "cmp"
    code = main(["compare", "--config", str(cfg), "--out", str(out),
                 "--pde", str(pde / "value.field"), "--net", str(net / "net.txt")])
    assert code == 0
    header, row = (out / "stats.csv").read_text().splitlines()
    assert header == "max_abs,mean_abs,argmax_i,argmax_j"
    assert float(row.split(",")[0]) >= float(row.split(",")[1]) >= 0
    # rerun with the same seed reproduces every numeric file
    net2 = tmp_path / "net2"
    assert main(["train-rl", "--config", str(cfg), "--out", str(net2), "--seed", "3"]) == 0
    assert manifest(net)["outputs"] == manifest(net2)["outputs"]


def test_compare_rejects_mismatched_grid(tmp_path):
    small = write(tmp_path, SMALL)
    pde, net = tmp_path / "pde", tmp_path / "net"
    assert main(["solve-pde", "--config", str(small), "--out", str(pde)]) == 0
    assert main(["train-rl", "--config", str(small), "--out", str(net)]) == 0
    other = write(tmp_path, SMALL.replace("n = 41", "n = 51"), "other.ini")
    code = main(["compare", "--config", str(other), "--out", str(tmp_path / "c"),
                 "--pde", str(pde / "value.field"), "--net", str(net / "net.txt")])
    assert code == 2
    assert main(["compare", "--config", str(small), "--out", str(tmp_path / "c2")]) == 2


def test_thread_env(tmp_path, monkeypatch):
    cfg = write(tmp_path, SMALL)
    monkeypatch.setenv("HJRL_THREADS", "1")
    assert main(["solve-pde", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("HJRL_THREADS", "lots")
    assert main(["solve-pde", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 2
