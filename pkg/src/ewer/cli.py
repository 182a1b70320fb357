"""Command-line entry point: ``ewer <command> [--config FILE] [--section.key=value ...]``.

Every command reads one JSON config (optional; defaults cover a desk-scale
run), applies dotted overrides, writes into ``out`` and records a
``run-manifest.json`` there.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import model as mdl
from .binning import DEFAULT_FIXED, ClassMap, assign, assign_many
from .errors import EwerError, InputError, InvalidConfig, IoFailure
from .evaluation import (BinningSpec, Dataset, Split, class_labels, evaluate, make_labels, predict_double, summarize,
                         sweep_alpha, sweep_k, train_double, write_confusion, write_curve, write_history,
                         write_report, write_sweep, fmt_num)
from .features import FeatureConfig, Vocab, build_vocab, featurize, load_cache, save_cache
from .features.table import FeatureTable
from .synth import GenConfig, describe, generate, write_synth
from .wer import Utterance, corpus_score, read_corpus, score

log = logging.getLogger("ewer")

DEFAULT_CONFIG = {
    "out": "run",
    "workers": 1,
    "data": {"train": None, "dev": None, "test": None, "audio_dir": None},
    "features": {"numerical": True, "text": True, "signal": [], "embedding": None, "vocab_min_count": 2},
    "binning": {"kind": "balanced", "k": 15, "values": list(DEFAULT_FIXED)},
    "model": mdl.ModelConfig.desk().to_dict(),
    "eval": {"seeds": [0, 1, 2, 3, 4], "bins": 10, "alphas": [0, 0.1, 1, 10, 50, 100],
             "ks": [3, 5, 10, 15, 20, 30]},
    "synth": {**GenConfig().to_dict(), "split": [0.6, 0.2, 0.2]},
}
# keys whose values are free-form mappings rather than fixed schemas
_OPEN_KEYS = {("model", "proj_dims"), ("synth", "shape_params")}


# config handling

def _merge(base: dict, extra: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        where = path + (key,)
        if key not in base:
            raise InvalidConfig(f"unknown config key {'.'.join(where)}")
        if isinstance(base[key], dict) and where not in _OPEN_KEYS:
            if not isinstance(value, dict):
                raise InvalidConfig(f"config key {'.'.join(where)} must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(args: Sequence[str]) -> dict:
    """``--a.b=1`` or ``--a.b 1`` into ``{"a": {"b": 1}}``; values are JSON when they parse."""
    out: dict = {}
    i = 0
    while i < len(args):
        arg = args[i]
        if not arg.startswith("--") or len(arg) <= 2:
            raise InvalidConfig(f"unexpected argument {arg!r}")
        key, eq, value = arg[2:].partition("=")
        if not eq:
            if i + 1 >= len(args):
                raise InvalidConfig(f"override {arg} needs a value")
            value = args[i + 1]
            i += 1
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(value)
        i += 1
    return out


def load_config(path: str | None, overrides: Sequence[str] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise IoFailure(f"cannot read config {path}: {e.strerror}") from e
        try:
            user = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"{path}: line {e.lineno}: {e.msg}") from None
        if not isinstance(user, dict):
            raise InvalidConfig(f"{path}: config must be a JSON object")
        cfg = _merge(cfg, user)
    return _merge(cfg, parse_overrides(overrides))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, seed: int | None) -> None:
    """Per-directory record of which config produced each command's outputs (no timestamps)."""
    path = out / "run-manifest.json"
    manifest = {"version": __version__, "commands": {}}
    if path.exists():
        try:
            old = json.loads(path.read_text(encoding="utf-8"))
            manifest["commands"] = dict(old.get("commands", {}))
        except (json.JSONDecodeError, AttributeError):
            log.warning("replacing unreadable %s", path)
    manifest["commands"][command] = {"config_hash": config_hash(cfg), "seed": seed}
    manifest["commands"] = dict(sorted(manifest["commands"].items()))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split_path(cfg: dict, name: str, required: bool = True) -> Path | None:
    p = cfg["data"].get(name)
    if p is None:
        if required:
            raise InvalidConfig(f"data.{name} is not set")
        return None
    p = Path(p)
    if not p.exists():
        if required:
            raise IoFailure(f"data.{name}: {p} does not exist")
        return None
    return p


def _feature_config(cfg: dict) -> FeatureConfig:
    return FeatureConfig(**cfg["features"])


def _model_config(cfg: dict) -> mdl.ModelConfig:
    try:
        return mdl.ModelConfig.from_dict(cfg["model"])
    except TypeError as e:
        raise InvalidConfig(f"model config: {e}") from None


def _binning_spec(cfg: dict) -> BinningSpec:
    b = cfg["binning"]
    return BinningSpec(b["kind"], int(b["k"]), tuple(float(v) for v in b["values"]))


# shared pipeline steps

def _vocab(cfg: dict, out: Path, train: list[Utterance] | None = None) -> Vocab | None:
    fc = _feature_config(cfg)
    if not fc.text:
        return None
    path = out / "vocab.json"
    if train is None:
        if not path.exists():
            raise IoFailure(f"{path} missing; run featurize or train first")
        return Vocab.from_json(path.read_text(encoding="utf-8"))
    v = build_vocab(train, fc.vocab_min_count)
    path.write_text(v.to_json() + "\n", encoding="utf-8")
    return v


def _table(cfg: dict, corpus: list[Utterance], vocab: Vocab | None, out: Path, name: str | None,
           allow_missing: bool) -> FeatureTable:
    """Cached features for a named split when they match the corpus, fresh ones otherwise."""
    cache = out / "features" / f"{name}.ewf" if name else None
    fc = _feature_config(cfg)
    if cache is not None and cache.exists():
        table = load_cache(cache)
        text_ok = vocab is None or table.blocks.get("text", np.zeros((0, vocab.dim))).shape[1] == vocab.dim
        if table.ids == [u.id for u in corpus] and list(table.blocks) == fc.block_names() and text_ok:
            return table
        log.info("ignoring stale feature cache %s", cache)
    return featurize(corpus, fc, vocab, cfg["data"].get("audio_dir"), int(cfg["workers"]), allow_missing)


def _dataset(cfg: dict, out: Path, with_test: bool, allow_missing: bool = False) -> Dataset:
    train = read_corpus(_split_path(cfg, "train"))
    dev = read_corpus(_split_path(cfg, "dev"))
    vocab = _vocab(cfg, out, train)
    splits = [("train", train), ("dev", dev)]
    if with_test:
        splits.append(("test", read_corpus(_split_path(cfg, "test"))))
    built = [Split.from_corpus(c, _table(cfg, c, vocab, out, n, allow_missing)) for n, c in splits]
    return Dataset(*built)


def _write_classmap(out: Path, cmap: ClassMap) -> None:
    (out / "classmap.json").write_text(cmap.to_json() + "\n", encoding="utf-8")


def _read_classmap(out: Path) -> ClassMap:
    path = out / "classmap.json"
    if not path.exists():
        raise IoFailure(f"{path} missing; run bin or train first")
    return ClassMap.from_json(path.read_text(encoding="utf-8"))


# commands

def cmd_score(args, cfg: dict) -> int:
    utts = read_corpus(args.corpus)
    out = _out_dir(cfg)
    alignments = [score(u) for u in utts]
    total = corpus_score(alignments)
    with open(out / "score.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "err", "n", "i", "d", "s", "wer"])
        for u, a in zip(utts, alignments):
            value = "" if a.degenerate else fmt_num(100.0 * a.err / a.n_ref)
            w.writerow([u.id, a.err, a.n_ref, a.insertions, a.deletions, a.substitutions, value])
    write_manifest(out, "score", {"corpus": str(args.corpus)}, None)
    print(f"corpus WER {total.wer:.4f} ({total.errors} errors / {total.words} words, "
          f"{total.excluded} excluded)")
    return 0


def cmd_synth(args, cfg: dict) -> int:
    params = dict(cfg["synth"])
    split = params.pop("split")
    try:
        gen = GenConfig(**params)
    except TypeError as e:
        raise InvalidConfig(f"synth config: {e}") from None
    corpus = generate(gen)
    out = _out_dir(cfg)
    write_synth(out, corpus, split)
    write_manifest(out, "synth", cfg["synth"], gen.seed)
    st = describe(corpus)
    print(f"{st.n} utterances: corpus WER {st.corpus_wer:.2f}, mean ERR {st.mean_err:.2f}, "
          f"mean length {st.mean_length:.2f}, mean duration {st.mean_duration:.2f}s")
    return 0


def cmd_bin(args, cfg: dict) -> int:
    out = _out_dir(cfg)
    spec = _binning_spec(cfg)
    train_utts = read_corpus(_split_path(cfg, "train"))
    dev_path = _split_path(cfg, "dev", required=False)
    rows = [(u.id, "train", score(u)) for u in train_utts]
    if dev_path is not None:
        rows += [(u.id, "dev", score(u)) for u in read_corpus(dev_path)]
    if any(a.degenerate for _, _, a in rows):
        raise InputError("cannot bin utterances with empty references")
    train_ids = [uid for uid, s, _ in rows if s == "train"]
    train_wer = [100.0 * a.err / a.n_ref for _, s, a in rows if s == "train"]
    cmap, labels = class_labels(spec, train_ids, train_wer)
    _write_classmap(out, cmap)
    train_label = dict(zip(train_ids, labels))
    with open(out / "labels.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "split", "wer", "class"])
        for uid, split, a in rows:
            wer = 100.0 * a.err / a.n_ref
            label = train_label[uid] if split == "train" else assign(cmap, wer)
            w.writerow([uid, split, fmt_num(wer), int(label)])
    write_manifest(out, "bin", {"data": cfg["data"], "binning": cfg["binning"]}, None)
    print(f"{cmap.kind} map with k={cmap.k}: " + ", ".join(f"{v:.2f}" for v in cmap.wer_fixed))
    return 0


def cmd_featurize(args, cfg: dict) -> int:
    out = _out_dir(cfg)
    (out / "features").mkdir(exist_ok=True)
    train = read_corpus(_split_path(cfg, "train"))
    vocab = _vocab(cfg, out, train)
    fc = _feature_config(cfg)
    for name in ("train", "dev", "test"):
        path = train if name == "train" else _split_path(cfg, name, required=False)
        if path is None:
            continue
        corpus = path if name == "train" else read_corpus(path)
        table = featurize(corpus, fc, vocab, cfg["data"].get("audio_dir"), int(cfg["workers"]),
                          args.allow_missing)
        save_cache(out / "features" / f"{name}.ewf", table)
        print(f"{name}: {len(table)} rows, blocks " + ", ".join(f"{b}({d})" for b, d in table.layout))
    write_manifest(out, "featurize", {"data": cfg["data"], "features": cfg["features"]}, None)
    return 0


def cmd_train(args, cfg: dict) -> int:
    out = _out_dir(cfg)
    config = _model_config(cfg)
    data = _dataset(cfg, out, with_test=False, allow_missing=args.allow_missing)
    cmap, labels = make_labels(_binning_spec(cfg), data.train)
    _write_classmap(out, cmap)
    if config.task == "double":
        for (params, history), head in zip(train_double(data, config), ("err", "n")):
            mdl.save(params, out / f"model.{head}.ewer")
            write_history(out / f"history.{head}.csv", history)
    else:
        config = dataclasses.replace(config, k=cmap.k)
        params, history = mdl.train(data.train.table, labels, data.dev.table, data.dev.wer, config, cmap)
        mdl.save(params, out / "model.ewer")
        write_history(out / "history.csv", history)
        if history.best_epoch is not None:
            print(f"best epoch {history.best_epoch + 1}: dev MAE {history.dev_mae[history.best_epoch]:.4f}")
    write_manifest(out, "train", cfg, config.seed)
    return 0


def _load_models(out: Path, model_path: str | None):
    if model_path:
        return "single", [mdl.load(model_path)]
    if (out / "model.ewer").exists():
        return "single", [mdl.load(out / "model.ewer")]
    if (out / "model.err.ewer").exists() and (out / "model.n.ewer").exists():
        return "double", [mdl.load(out / "model.err.ewer"), mdl.load(out / "model.n.ewer")]
    raise IoFailure(f"no checkpoint in {out}; run train first")


def cmd_predict(args, cfg: dict) -> int:
    out = _out_dir(cfg)
    task, models = _load_models(out, args.model)
    corpus_path = Path(args.corpus) if args.corpus else _split_path(cfg, "test")
    corpus = read_corpus(corpus_path)
    vocab = _vocab(cfg, out)
    table = featurize(corpus, _feature_config(cfg), vocab, cfg["data"].get("audio_dir"),
                      int(cfg["workers"]), args.allow_missing)
    dest = Path(args.output) if args.output else out / "predictions.csv"
    with open(dest, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if task == "single":
            params = models[0]
            probs, ev, am = mdl.decode(params, table)
            w.writerow(["id", "expected_wer", "argmax_class"] + [f"p{j}" for j in range(params.k)])
            for uid, p, e, a in zip(table.ids, probs, ev, am):
                w.writerow([uid, fmt_num(e), int(a)] + [fmt_num(x) for x in p])
        else:
            pred = predict_double(models[0], models[1], table)
            w.writerow(["id", "expected_wer"])
            for uid, e in zip(table.ids, pred):
                w.writerow([uid, fmt_num(e)])
    write_manifest(out, "predict", {**cfg, "corpus": str(corpus_path)}, None)
    print(f"wrote {len(table)} predictions to {dest}")
    return 0


def _read_predictions(path: Path) -> tuple[list[str], np.ndarray, np.ndarray | None]:
    try:
        f = open(path, encoding="utf-8", newline="")
    except OSError as e:
        raise IoFailure(f"cannot read predictions {path}: {e.strerror}") from e
    with f:
        rows = list(csv.DictReader(f))
    if not rows or "id" not in rows[0] or "expected_wer" not in rows[0]:
        raise InputError(f"{path}: expected columns id, expected_wer")
    ids = [r["id"] for r in rows]
    pred = np.array([float(r["expected_wer"]) for r in rows])
    cls = np.array([int(r["argmax_class"]) for r in rows]) if "argmax_class" in rows[0] else None
    return ids, pred, cls


def cmd_eval(args, cfg: dict) -> int:
    out = _out_dir(cfg)
    cmap = _read_classmap(out)
    ids, pred, pred_cls = _read_predictions(Path(args.predictions) if args.predictions
                                            else out / "predictions.csv")
    corpus_path = Path(args.corpus) if args.corpus else _split_path(cfg, "test")
    truth = {}
    for u in read_corpus(corpus_path):
        a = score(u)
        if not a.degenerate:
            truth[u.id] = 100.0 * a.err / a.n_ref
    missing = [i for i in ids if i not in truth]
    if missing:
        raise InputError(f"{len(missing)} predicted ids have no scorable reference, e.g. {missing[0]!r}")
    true = np.array([truth[i] for i in ids])
    if pred_cls is None or (len(pred_cls) and pred_cls.max() >= cmap.k):
        pred_cls = assign_many(cmap, pred)
    report = evaluate(pred, true, pred_cls, assign_many(cmap, true), cmap.k, int(cfg["eval"]["bins"]))
    write_report(out / "report.csv", report)
    write_confusion(out / "confusion.csv", report.confusion)
    write_curve(out / "curve.csv", report.binned_curve)
    write_manifest(out, "eval", {**cfg, "corpus": str(corpus_path)}, None)
    print(f"MAE {report.mae:.4f}  RMSE {report.rmse:.4f}  n={report.n}")
    return 0


def cmd_sweep(args, cfg: dict) -> int:
    out = _out_dir(cfg)
    config = _model_config(cfg)
    data = _dataset(cfg, out, with_test=True, allow_missing=args.allow_missing)
    seeds = [int(s) for s in cfg["eval"]["seeds"]]
    workers = int(cfg["workers"])
    if args.param == "alpha":
        rows = sweep_alpha(data, config, [float(a) for a in cfg["eval"]["alphas"]], seeds,
                           _binning_spec(cfg), workers)
    else:
        rows = sweep_k(data, config, [int(k) for k in cfg["eval"]["ks"]], seeds,
                       tuple(float(v) for v in cfg["binning"]["values"]), workers)
    write_sweep(out / "sweep.csv", rows)
    write_manifest(out, f"sweep-{args.param}", cfg, None)
    for s in summarize(rows):
        print(f"{args.param}={s.param}: mean MAE {s.mae:.4f}, mean RMSE {s.rmse:.4f}")
    return 0


COMMANDS = {
    "score": cmd_score, "synth": cmd_synth, "bin": cmd_bin, "featurize": cmd_featurize,
    "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval, "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--out", help="output directory (overrides the config's out)")
    common.add_argument("--workers", type=int, help="worker processes for featurize/sweep")
    common.add_argument("--json", action="store_true", help="machine-readable errors on stderr")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ewer", description="Estimate word error rate without references.")
    parser.add_argument("--version", action="version", version=f"ewer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("score", parents=[common], help="per-utterance and corpus WER of a JSONL corpus")
    p.add_argument("corpus")
    sub.add_parser("synth", parents=[common], help="generate a synthetic corpus with known errors")
    sub.add_parser("bin", parents=[common], help="build the WER class map from the training split")
    for name, text in (("featurize", "write feature caches"), ("train", "train a model"),
                       ("predict", "predict WER for a corpus"), ("eval", "score predictions"),
                       ("sweep", "alpha or k sweep over seeds")):
        p = sub.add_parser(name, parents=[common], help=text)
        if name in ("featurize", "train", "predict", "sweep"):
            p.add_argument("--allow-missing", action="store_true",
                           help="zero signal features for utterances without usable audio")
        if name in ("predict", "eval"):
            p.add_argument("--corpus", help="JSONL corpus (default: data.test)")
        if name == "predict":
            p.add_argument("--model", help="checkpoint path (default: out/model.ewer)")
            p.add_argument("--output", help="predictions CSV (default: out/predictions.csv)")
        if name == "eval":
            p.add_argument("--predictions", help="predictions CSV (default: out/predictions.csv)")
        if name == "sweep":
            p.add_argument("--param", choices=["alpha", "k"], required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, rest)
        if args.out is not None:
            cfg["out"] = args.out
        if args.workers is not None:
            cfg["workers"] = args.workers
        return COMMANDS[args.command](args, cfg)
    except EwerError as e:
        return _fail(args, e, e.exit_code)
    except OSError as e:
        return _fail(args, e, 2)
    except Exception as e:  # noqa: BLE001 - last-resort handler maps to exit 1
        log.debug("internal error", exc_info=True)
        return _fail(args, e, 1)


def _fail(args, err: BaseException, code: int) -> int:
    if args.json:
        payload = {"error": type(err).__name__, "message": str(err), "exit_code": code}
        if getattr(err, "line", None) is not None:
            payload["line"] = err.line
        print(json.dumps(payload), file=sys.stderr)
    else:
        print(f"ewer: error: {type(err).__name__}: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
