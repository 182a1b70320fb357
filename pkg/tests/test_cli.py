import csv
import json
from pathlib import Path

import numpy as np
import pytest

from ewer.cli import DEFAULT_CONFIG, config_hash, load_config, main, parse_overrides
from ewer.errors import InvalidConfig
from ewer.features import load_cache

GOLDEN = Path(__file__).parent / "data" / "golden_pairs.jsonl"
FAST = ["--model.epochs=2", "--model.hidden=[16]", "--model.proj_dim=8"]


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def json_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--synth.n_utterances=300", "--synth.seed=3"]) == 0
    cfg = {"data": {k: str(root / "data" / f"{k}.jsonl") for k in ("train", "dev", "test")}}
    (root / "cfg.json").write_text(json.dumps(cfg))
    return root


def run(workspace, out, *args):
    return main([args[0], "--config", str(workspace / "cfg.json"), "--out", str(out), *args[1:]])


def test_score_reference_table(tmp_path):
    assert main(["score", str(GOLDEN), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "score.csv")
    assert list(rows[0]) == ["id", "err", "n", "i", "d", "s", "wer"]
    expected = [16.7, 21.9, 42.8, 14.3, 100.0, 100.0, 50.0]
    assert [float(r["wer"]) for r in rows] == pytest.approx(expected, abs=0.1)
    for r in rows:
        assert int(r["err"]) == int(r["i"]) + int(r["d"]) + int(r["s"])
    first = (tmp_path / "score.csv").read_bytes()
    assert main(["score", str(GOLDEN), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "score.csv").read_bytes() == first


def test_score_errors(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["score", str(empty), "--out", str(tmp_path / "o"), "--json"]) == 2
    err = json_error(capsys)
    assert err["error"] == "EmptyCorpus" and err["exit_code"] == 2
    assert not (tmp_path / "o" / "score.csv").exists()
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "reference": "x", "hypothesis": "x"}\n{broken\n')
    assert main(["score", str(bad), "--out", str(tmp_path / "o"), "--json"]) == 2
    assert json_error(capsys)["line"] == 2
    assert main(["score", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")]) == 2


def test_bin_fixed_map(workspace, tmp_path):
    assert run(workspace, tmp_path, "bin", "--binning.kind=fixed") == 0
    cmap = json.loads((tmp_path / "classmap.json").read_text())
    assert cmap["wer_fixed"] == [0, 25, 50, 75, 100, 150]
    rows = read_csv(tmp_path / "labels.csv")
    assert {r["split"] for r in rows} == {"train", "dev"}


def test_bin_never_looks_at_dev_or_test(workspace, tmp_path):
    assert run(workspace, tmp_path / "a", "bin", "--binning.k=7") == 0
    dev = (workspace / "data" / "dev.jsonl").read_text().splitlines()
    short = tmp_path / "dev_short.jsonl"
    short.write_text("\n".join(dev[:5]) + "\n")
    cfg = json.loads((workspace / "cfg.json").read_text())
    cfg["data"]["dev"] = str(short)
    cfg["data"]["test"] = str(tmp_path / "absent.jsonl")
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["bin", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "b"),
                 "--binning.k=7"]) == 0
    assert (tmp_path / "a" / "classmap.json").read_bytes() == (tmp_path / "b" / "classmap.json").read_bytes()
    # training also runs with the test split absent
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "b"), *FAST]) == 0


def test_quickstart_end_to_end(workspace, tmp_path):
    out = tmp_path / "run"
    assert run(workspace, out, "score", str(workspace / "data" / "corpus.jsonl")) == 0
    assert run(workspace, out, "bin") == 0
    assert run(workspace, out, "featurize") == 0
    assert load_cache(out / "features" / "train.ewf").layout[0] == ("numerical", 3)
    assert run(workspace, out, "train", *FAST) == 0
    assert (out / "model.ewer").read_bytes()[:8] == b"EWERMODL"
    assert list(read_csv(out / "history.csv")[0]) == ["epoch", "train_loss", "dev_mae", "dev_rmse"]
    assert run(workspace, out, "predict") == 0
    preds = read_csv(out / "predictions.csv")
    assert list(preds[0]) == ["id", "expected_wer", "argmax_class"] + [f"p{j}" for j in range(15)]
    assert all(abs(sum(float(r[f"p{j}"]) for j in range(15)) - 1) < 1e-9 for r in preds)
    assert run(workspace, out, "eval") == 0
    report = {(r["metric"], r["name"]): float(r["value"]) for r in read_csv(out / "report.csv")}
    assert report[("n", "test")] == len(preds) and report[("mae", "test")] >= 0
    assert len(read_csv(out / "confusion.csv")) == 15
    manifest = json.loads((out / "run-manifest.json").read_text())
    assert set(manifest["commands"]) == {"score", "bin", "featurize", "train", "predict", "eval"}
    assert all(len(c["config_hash"]) == 64 for c in manifest["commands"].values())


def test_commands_are_idempotent(workspace, tmp_path):
    names = ["model.ewer", "history.csv", "classmap.json", "vocab.json", "run-manifest.json"]
    snapshots = []
    for _ in range(2):
        assert run(workspace, tmp_path, "train", *FAST) == 0
        snapshots.append([(tmp_path / n).read_bytes() for n in names])
    assert snapshots[0] == snapshots[1]


def test_eval_perfect_predictions(workspace, tmp_path):
    test = workspace / "data" / "test.jsonl"
    assert run(workspace, tmp_path, "score", str(test)) == 0
    assert run(workspace, tmp_path, "bin") == 0
    scores = read_csv(tmp_path / "score.csv")
    with open(tmp_path / "perfect.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "expected_wer"])
        w.writerows([r["id"], r["wer"]] for r in scores)
    assert run(workspace, tmp_path, "eval", "--predictions", str(tmp_path / "perfect.csv")) == 0
    report = {(r["metric"], r["name"]): float(r["value"]) for r in read_csv(tmp_path / "report.csv")}
    assert report[("mae", "test")] == 0.0 and report[("rmse", "test")] == 0.0
    m = np.array([[int(v) for v in r.values()] for r in read_csv(tmp_path / "confusion.csv")])
    assert m.sum() == len(scores) and np.trace(m) == m.sum()


def test_double_task_and_sweep(workspace, tmp_path):
    assert run(workspace, tmp_path, "train", "--model.task=double", *FAST) == 0
    assert (tmp_path / "model.err.ewer").exists() and (tmp_path / "history.n.csv").exists()
    assert run(workspace, tmp_path, "predict") == 0
    assert list(read_csv(tmp_path / "predictions.csv")[0]) == ["id", "expected_wer"]
    assert run(workspace, tmp_path, "sweep", "--param", "k", "--eval.ks=[3]", "--eval.seeds=[0]", *FAST) == 0
    assert [r["param"] for r in read_csv(tmp_path / "sweep.csv")] == ["3", "fixed"]


def test_featurize_numerical_only(workspace, tmp_path):
    assert run(workspace, tmp_path, "featurize", "--features.text=false") == 0
    assert load_cache(tmp_path / "features" / "dev.ewf").layout == [("numerical", 3)]
    assert not (tmp_path / "vocab.json").exists()


def test_config_errors(workspace, tmp_path, capsys):
    assert run(workspace, tmp_path, "bin", "--binning.colour=red", "--json") == 2
    assert json_error(capsys)["error"] == "InvalidConfig"
    (tmp_path / "broken.json").write_text("{\n  \"out\": \n")
    assert main(["bin", "--config", str(tmp_path / "broken.json")]) == 2
    assert main(["bin", "--out", str(tmp_path)]) == 2  # no data.train


def test_overrides_and_hash():
    assert parse_overrides(["--model.loss.alpha=10", "--binning.kind", "fixed", "--features.signal=[\"mfcc\"]"]) \
        == {"model": {"loss": {"alpha": 10}}, "binning": {"kind": "fixed"}, "features": {"signal": ["mfcc"]}}
    cfg = load_config(None, ["--model.loss.alpha=10", "--model.proj_dims={\"mfcc\": 4}"])
    assert cfg["model"]["loss"]["alpha"] == 10 and cfg["model"]["proj_dims"] == {"mfcc": 4}
    assert cfg["binning"] == DEFAULT_CONFIG["binning"]
    assert config_hash(cfg) == config_hash(json.loads(json.dumps(cfg)))
    assert config_hash(cfg) != config_hash(DEFAULT_CONFIG)
    with pytest.raises(InvalidConfig):
        load_config(None, ["--model=3"])
