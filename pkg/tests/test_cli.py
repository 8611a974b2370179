import csv
import json
import sys

import numpy as np
import pytest

from vipspp.cli import main
from vipspp.gaussian import make_gaussian
from vipspp.io import load_model, load_samples, model_from_dict, model_to_dict, save_model, save_samples
from vipspp.mixture import MixtureModel


def sample_model():
    return MixtureModel(
        np.array([0.25, 0.75]),
        [make_gaussian(np.array([1.0, 2.0]), np.array([[2.0, 0.3], [0.3, 1.0]])), make_gaussian(np.zeros(2), np.eye(2))],
    )


def test_model_round_trip(tmp_path):
    m = sample_model()
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.weights, m.weights)
    for a, b in zip(back.components, m.components):
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.cov, b.cov)
    data = json.loads((tmp_path / "m.json").read_text())
    assert set(data) == {"version", "dimension", "weights", "components"}
    assert set(data["components"][0]) == {"mean", "covariance"}


def test_model_validation():
    d = model_to_dict(sample_model())
    with pytest.raises(ValueError):
        model_from_dict(dict(d, version=7))
    bad = json.loads(json.dumps(d))
    bad["components"][0]["mean"] = [1.0]
    with pytest.raises(ValueError):
        model_from_dict(bad)


def test_samples_round_trip(tmp_path, rng):
    X = rng.standard_normal((5, 3)) * 1e5
    save_samples(X, tmp_path / "s.csv")
    np.testing.assert_array_equal(load_samples(tmp_path / "s.csv"), X)


def run_cli(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["run", "--target", "gmm", "--dim", "2", "--seed", "1", "--max-iterations", "15",
                 "--gmm-components", "3", "--out", str(out), *extra])
    return code, out


def test_run_writes_outputs(tmp_path):
    code, out = run_cli(tmp_path, "a", "--no-timing")
    assert code == 0
    m = load_model(out / "model.json")
    assert m.dim == 2
    rows = list(csv.reader(open(out / "log.csv")))
    assert rows[0] == ["iter", "fevals", "elbo", "num_components", "seconds"]
    assert len(rows) == 16 and all(r[4] == "0.0" for r in rows[1:])
    assert load_samples(out / "samples.csv").shape == (2000, 2)


def test_run_deterministic_logs(tmp_path):
    _, a = run_cli(tmp_path, "a", "--no-timing")
    _, b = run_cli(tmp_path, "b", "--no-timing")
    assert (a / "log.csv").read_bytes() == (b / "log.csv").read_bytes()


def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max_iterations": 3, "n_des_per_dim": 5}))
    out = tmp_path / "o"
    assert main(["run", "--target", "gmm", "--dim", "2", "--config", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "log.csv")))
    assert len(rows) == 4 and rows[1][1] == "10"
    assert main(["run", "--target", "gmm", "--dim", "2", "--config", str(cfg), "--max-iterations", "1",
                 "--out", str(out)]) == 0
    assert len(list(csv.reader(open(out / "log.csv")))) == 2


def test_run_errors(tmp_path, capsys):
    assert main(["run", "--target", "gmm", "--out", str(tmp_path)]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["run", "--target", "gmm", "--dim", "2", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_eval_mmd_and_sample(tmp_path, capsys):
    m = sample_model()
    save_model(m, tmp_path / "m.json")
    gt = m.sample(500, np.random.default_rng(0))
    save_samples(gt, tmp_path / "gt.csv")
    assert main(["eval-mmd", "--model", str(tmp_path / "m.json"), "--ground-truth", str(tmp_path / "gt.csv"),
                 "--alpha", "2"]) == 0
    value = float(capsys.readouterr().out.strip())
    assert 0 <= value < 0.01
    assert main(["sample", "--model", str(tmp_path / "m.json"), "-n", "7", "--seed", "3",
                 "--out", str(tmp_path / "x.csv")]) == 0
    X = load_samples(tmp_path / "x.csv")
    np.testing.assert_array_equal(X, m.sample(7, np.random.default_rng(3)))
    assert main(["sample", "--model", str(tmp_path / "m.json"), "-n", "2"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 2


def test_external_target_failure_saves_state(tmp_path):
    child = tmp_path / "child.py"
    child.write_text(
        "import sys\n"
        "for i, line in enumerate(sys.stdin):\n"
        "    if i >= 45: sys.exit(1)\n"
        "    p = line.split()\n"
        "    print(p[0], -0.5 * sum(float(v) ** 2 for v in p[1:]), flush=True)\n"
    )
    out = tmp_path / "o"
    code = main(["run", "--target", "external", "--dim", "2", "--max-iterations", "10", "--no-reuse",
                 "--command", f"{sys.executable} {child}", "--out", str(out)])
    assert code == 3
    assert (out / "model.json").exists() and (out / "failed_batch.csv").exists()
    assert len(list(csv.reader(open(out / "log.csv")))) == 2
