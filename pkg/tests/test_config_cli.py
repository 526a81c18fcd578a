import csv
import json

import numpy as np
import pytest

from emtdamp import checkpoint, runner
from emtdamp.cli import main
from emtdamp.config import PRESETS, ConfigError, build
from emtdamp.metrics import read_metrics
from emtdamp.network import NetHyper, init_hyper
from emtdamp.prior import BGGroups


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_presets_match_paper_settings():
    b = build("boston")
    assert b.sizes == (13, 64, 64, 1) and b.batch_size == 101 and b.damping == 0.8 and b.pasp_lambda == 1.0
    m = build("mnist")
    assert m.sizes == (784, 128, 10) and m.batch_size == 100 and m.task == "classification"
    assert build("boston-fed").clients == 4
    mf = build("mnist-fed")
    assert (mf.clients, mf.inner) == (10, 10)
    assert set(PRESETS) == {"boston", "mnist", "boston-fed", "mnist-fed"}


def test_layering_and_validation(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"iterations": 7, "sizes": [13, 8, 1]}))
    cfg = build("boston", f, ["iterations=9", "learn_noise=false"], seed=3)
    assert (cfg.iterations, cfg.sizes, cfg.learn_noise, cfg.seed) == (9, (13, 8, 1), False, 3)
    with pytest.raises(ConfigError, match="unknown config key"):
        build(None, None, ["learning_rate=0.1"])
    f.write_text(json.dumps({"momentum": 0.9}))
    with pytest.raises(ConfigError):
        build(None, f)
    for bad in ("damping=0", "pasp_lambda=0.5", "iterations=1.5", "rho0=0.995", "task=ranking"):
        with pytest.raises(ConfigError):
            build(None, None, [bad])


def test_cli_rejects_bad_config(tmp_path, capsys):
    assert main(["train", "--set", "nope=1", "--out", str(tmp_path)]) == 2
    assert "unknown config key" in capsys.readouterr().err
    assert main(["train", "--preset", "cifar", "--out", str(tmp_path)]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_zero_iterations_writes_initialization(tmp_path):
    assert main(["train", "--preset", "boston", "--iterations", "0", "--out", str(tmp_path)]) == 0
    doc = checkpoint.load(tmp_path / "checkpoint.json")
    init = runner.initial_hyper(build("boston"))
    assert checkpoint.hyper_to_dict(doc["hyper"]) == checkpoint.hyper_to_dict(init)
    assert doc["iteration"] == 0


def test_train_artifacts_and_k1_federated(tmp_path):
    a, b = tmp_path / "train", tmp_path / "fed"
    assert main(["train", "--preset", "boston", "--iterations", "2", "--out", str(a)]) == 0
    fed = ["federated", "--preset", "boston", "--rounds", "2", "--set", "clients=1", "--set", "inner=1", "--out", str(b)]
    assert main(fed) == 0
    ta, tb = checkpoint.load(a / "checkpoint.json"), checkpoint.load(b / "checkpoint.json")
    assert checkpoint.hyper_to_dict(ta["hyper"]) == checkpoint.hyper_to_dict(tb["hyper"])
    for f in ("config.json", "metrics.jsonl", "history.csv", "history.png"):
        assert (a / f).stat().st_size > 0
    assert [r["iteration"] for r in rows(a / "history.csv")] == ["1", "2"]
    recs = read_metrics(a / "metrics.jsonl")
    assert {"iteration", "phase", "name", "value"} <= set(recs[0])
    # the echoed config reproduces the run
    cfg = json.loads((a / "config.json").read_text())
    assert cfg["iterations"] == 2 and cfg["sizes"] == [13, 64, 64, 1]


def linear_checkpoint(path, w, b):
    h = NetHyper((2, 1), "regression", [BGGroups(np.ones(2), np.array([w]), np.ones((1, 2)))], [BGGroups(np.ones(1), np.array([[b]]), np.ones((1, 1)))], 1.0)
    checkpoint.save(path, h)
    return path


def eval_metric(tmp_path, ckpt, data_dir, *extra):
    out = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(ckpt), "--out", str(out), "--set", f"data_dir={data_dir}", *extra]) == 0
    (r,) = rows(out / "eval.csv")
    return r


def test_eval_perfect_predictions(tmp_path, fixtures):
    ck = linear_checkpoint(tmp_path / "p.json", [1.0, 0.0], 0.0)
    r = eval_metric(tmp_path, ck, fixtures / "reg_perfect", "--set", "sizes=2,1")
    assert float(r["test_nmse"]) == pytest.approx(0.0, abs=1e-20)


def test_eval_nmse_scale_invariant(tmp_path, fixtures):
    ck = linear_checkpoint(tmp_path / "p.json", [0.8, 0.3], 0.1)
    a = float(eval_metric(tmp_path, ck, fixtures / "reg_noisy", "--set", "sizes=2,1")["test_nmse"])
    b = float(eval_metric(tmp_path, ck, fixtures / "reg_noisy_x1000", "--set", "sizes=2,1")["test_nmse"])
    assert a > 0.01 and b == pytest.approx(a, rel=1e-9)


def test_eval_random_classifier_at_chance(tmp_path, fixtures):
    h = init_hyper((16, 10), "classification", seed=0)
    ck = checkpoint.save(tmp_path / "c.json", h)
    r = eval_metric(
        tmp_path, ck, fixtures / "cls_random", "--set", "sizes=16,10", "--set", "task=classification", "--set", "dataset=idx"
    )
    assert float(r["test_error"]) == pytest.approx(0.9, abs=0.04)


def test_sweep_rows_sorted_and_within_budget(tmp_path):
    out = tmp_path / "sweep"
    args = ["sweep", "--preset", "boston", "--set", "iterations=3", "--set", "sparsities=1.0,0.25,0.5", "--out", str(out)]
    assert main(args) == 0
    table = rows(out / "sweep.csv")
    assert [float(r["sparsity"]) for r in table] == [0.25, 0.5, 1.0]
    for r in table:
        assert float(r["active_ratio"]) <= float(r["sparsity"])
        ck = checkpoint.load(out / f"checkpoint_s{float(r['sparsity']):g}_seed0.json")
        h = ck["hyper"]
        assert np.count_nonzero(h.weight_rho() > 0) / h.n_weight_groups <= float(r["sparsity"])
    assert (out / "sweep.png").stat().st_size > 0


def test_sweep_single_dense_level(tmp_path):
    out = tmp_path / "one"
    assert main(["sweep", "--preset", "boston", "--set", "iterations=2", "--set", "sparsities=1.0", "--out", str(out)]) == 0
    (r,) = rows(out / "sweep.csv")
    assert float(r["sparsity"]) == 1.0 and float(r["active_ratio"]) == 1.0
