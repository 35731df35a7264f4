"""Command-line pipeline: data generation through evaluation.

Each subcommand writes ``<output>.run.json`` recording its flags, the sha256
of every input file, the package version and the start time.  Errors print a
single JSON line on stderr; invalid flags exit 1, missing or mismatched
inputs exit 2.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .errors import (ContractViolation, InputMismatchError, ModelFormatError, SchemaMismatchError,
                     SelectivityError)

EXIT_FLAGS = 1
EXIT_INPUT = 2


class FlagError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise FlagError(message)


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


# name -> (type, default, help); a default of None marks the flag as required
_OPTS = {
    "gen-data": {
        "n": (int, 51000, "total rows generated, queries included"),
        "d": (int, 32, "dimension"),
        "clusters": (int, 50, "mixture components"),
        "sigma": (float, 0.02, "per-cluster standard deviation"),
        "scheme": (str, "independent-range", "attribute scheme"),
        "anti_fraction": (float, 1.0, "share of clusters with anti-correlated bands"),
        "filter_kind": (str, "range", "range | contain | equal"),
        "center": (str, "self", "range window centering: self | cluster | uniform"),
        "buckets": (str, "0.01,0.05,0.1,0.2", "target selectivities"),
        "k": (int, 10, "neighbours per query"),
        "n_train": (int, 0, "training queries"),
        "n_eval": (int, 1000, "evaluation queries"),
        "seed": (int, 0, "random seed"),
        "out": (str, None, "output directory"),
    },
    "build-index": {
        "data": (str, None, "dataset prefix (.fvecs + .attrs.jsonl)"),
        "M": (int, 16, "upper-layer degree; the base layer allows 2M"),
        "ef_construction": (int, 200, "construction beam width"),
        "threads": (int, 1, "accepted; construction is sequential"),
        "seed": (int, 0, "level sampling seed"),
        "out": (str, None, "index file"),
    },
    "ground-truth": {
        "data": (str, None, "dataset prefix"),
        "queries": (str, None, "query prefix (.fvecs + .filters.jsonl)"),
        "k": (int, 0, "override per-query k (0 keeps the file's k)"),
        "threads": (int, 1, "worker threads"),
        "out": (str, None, "output prefix (.ivecs + .manifest.json)"),
    },
    "harvest": {
        "index": (str, None, "index file"),
        "data": (str, None, "dataset prefix"),
        "queries": (str, None, "query prefix"),
        "truth": (str, None, "ground-truth prefix"),
        "probe_f": (int, 500, "probe budget in distance computations"),
        "mode": (str, "post", "post | pre"),
        "threads": (int, 1, "worker threads"),
        "out": (str, None, "training-set CSV"),
    },
    "train": {
        "training_set": (str, None, "training-set CSV"),
        "trees": (int, 200, "boosting rounds"),
        "depth": (int, 8, "maximum tree depth"),
        "eta": (float, 0.1, "learning rate"),
        "subsample": (float, 0.8, "row subsample per tree"),
        "min_leaf": (int, 20, "minimum rows per leaf"),
        "bins": (int, 0, "histogram bins (0: exact splits)"),
        "drop_flags": (int, 0, "drop rows with any of these flag bits"),
        "mask": (str, "none", "feature mask: filter | none"),
        "seed": (int, 0, "subsample seed"),
        "out": (str, None, "model JSON"),
    },
    "evaluate": {
        "index": (str, None, "index file"),
        "data": (str, None, "dataset prefix"),
        "queries": (str, None, "query prefix"),
        "truth": (str, None, "ground-truth prefix"),
        "policy": (str, "fixed-beam", "fixed-beam | fixed-budget | predicted"),
        "model": (str, "", "model JSON (predicted policy)"),
        "alpha_list": (str, "0.5,1,1.5,2,3", "alpha values (predicted)"),
        "beam_list": (str, "10,20,40,80,160", "efsearch values (fixed-beam)"),
        "budget_list": (str, "500,1000,2000,4000", "NDC budgets (fixed-budget)"),
        "probe_f": (int, 500, "probe budget (predicted)"),
        "mode": (str, "post", "post | pre"),
        "holdout": (str, "", "harvested CSV for the same queries; adds a regression report"),
        "runs": (int, 3, "timing repetitions"),
        "out": (str, None, "curve CSV"),
    },
    "importance": {
        "model": (str, None, "model JSON"),
        "out": (str, None, "importance CSV"),
    },
    "misalignment": {
        "data": (str, None, "dataset prefix"),
        "queries": (str, None, "query prefix"),
        "m": (int, 100, "neighbourhood size for the local ratio"),
        "out": (str, None, "scatter CSV"),
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="probeann", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", parser_class=_Parser)
    for cmd, opts in _OPTS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config (flags take precedence)")
        for name, (typ, default, text) in opts.items():
            label = "required" if default is None else f"default {default}"
            p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ,
                           default=argparse.SUPPRESS, help=f"{text} ({label})")
    return parser


def resolve_flags(cmd: str, given: dict) -> dict:
    """Defaults, then the JSON config (flat or keyed by subcommand), then flags."""
    opts = _OPTS[cmd]
    flags = {name: default for name, (_, default, _) in opts.items()}
    if "config" in given:
        with open(given["config"]) as fh:
            cfg = json.load(fh)
        if isinstance(cfg.get(cmd), dict):
            cfg = cfg[cmd]
        for key, val in cfg.items():
            name = key.replace("-", "_")
            if name not in opts:
                if key in _OPTS:
                    continue
                raise FlagError(f"unknown config key {key!r} for {cmd}")
            flags[name] = opts[name][0](val)
    flags.update({k: v for k, v in given.items() if k != "config"})
    missing = [n for n, v in flags.items() if v is None]
    if missing:
        raise FlagError(f"missing required flag(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return flags


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _need(*paths) -> None:
    for p in paths:
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing input {p}")


def _data_files(prefix: str) -> list[str]:
    return [prefix + ".fvecs", prefix + ".attrs.jsonl"]


def _query_files(prefix: str) -> list[str]:
    return [prefix + ".fvecs", prefix + ".filters.jsonl"]


def _truth_files(prefix: str) -> list[str]:
    return [prefix + ".ivecs", prefix + ".manifest.json"]


def _load_data(prefix: str):
    from .formats import load_dataset

    _need(*_data_files(prefix))
    return load_dataset(*_data_files(prefix))


def _load_queries(prefix: str, k: int | None = None):
    from .formats import read_queries

    _need(*_query_files(prefix))
    return read_queries(prefix, k or None)


def _load_index(path: str, data_files: list[str]):
    from .graph import ProximityGraph

    _need(path)
    run = path + ".run.json"
    if os.path.exists(run):
        with open(run) as fh:
            recorded = json.load(fh).get("input_hashes", {})
        for f in data_files:
            if f in recorded and recorded[f] != file_hash(f):
                raise InputMismatchError(f"index {path} was built from a different {f}")
    return ProximityGraph.load(path)


def _check_pair(graph, dataset) -> None:
    if graph.n != dataset.n or graph.dim != dataset.dim:
        raise InputMismatchError(f"index covers {graph.n}x{graph.dim}, dataset is {dataset.n}x{dataset.dim}")


def write_manifest(out_base: str, cmd: str, flags: dict, inputs: list[str], started: str,
                   outputs: list[str]) -> None:
    doc = {"cmd": cmd, "version": __version__, "flags": flags,
           "input_hashes": {p: file_hash(p) for p in inputs}, "started_at": started,
           "outputs": outputs}
    with open(out_base + ".run.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


_PATH_FLAGS = {"data", "queries", "truth", "index", "model", "holdout", "training_set", "out", "config"}


def _content_hash(flags: dict, inputs: list[str]) -> str:
    """Config hash over non-path flags and input contents, so relocated reruns agree."""
    from .evaluate import config_hash

    return config_hash({"flags": {k: v for k, v in flags.items() if k not in _PATH_FLAGS},
                        "inputs": [file_hash(p) for p in inputs]})


def cmd_gen_data(fl: dict):
    from .formats import save_dataset, write_queries
    from .workload import FilterSpec, make_workload

    spec = FilterSpec(fl["filter_kind"], tuple(_floats(fl["buckets"])), fl["center"], fl["k"])
    wl = make_workload(fl["n"], fl["d"], fl["clusters"], fl["scheme"], fl["n_train"], fl["n_eval"], spec,
                       fl["seed"], sigma=fl["sigma"], anti_fraction=fl["anti_fraction"])
    out = Path(fl["out"])
    out.mkdir(parents=True, exist_ok=True)
    base = str(out / "base")
    save_dataset(*_data_files(base), wl.base)
    outputs = _data_files(base)
    for name, qs in (("train", wl.train), ("eval", wl.eval)):
        if qs:
            write_queries(str(out / name), qs)
            outputs += _query_files(str(out / name))
    with open(out / "split.json", "w") as fh:
        json.dump(wl.manifest(), fh, sort_keys=True)
        fh.write("\n")
    outputs.append(str(out / "split.json"))
    return str(out / "gen-data"), [], outputs


def cmd_build_index(fl: dict):
    from .graph import build_graph

    ds = _load_data(fl["data"])
    graph = build_graph(ds, fl["M"], fl["ef_construction"], fl["seed"])
    graph.save(fl["out"])
    return fl["out"], _data_files(fl["data"]), [fl["out"]]


def cmd_ground_truth(fl: dict):
    from .training import generate_ground_truth

    ds = _load_data(fl["data"])
    queries = _load_queries(fl["queries"], fl["k"])
    gt = generate_ground_truth(ds, queries, fl["threads"])
    gt.manifest["dataset_files"] = {os.path.basename(p): file_hash(p) for p in _data_files(fl["data"])}
    gt.save(fl["out"])
    return fl["out"], _data_files(fl["data"]) + _query_files(fl["queries"]), _truth_files(fl["out"])


def _load_truth(prefix: str, ds, queries):
    from .training import GroundTruth

    _need(*_truth_files(prefix))
    return GroundTruth.load(prefix, ds, queries)


def cmd_harvest(fl: dict):
    from .training import harvest

    ds = _load_data(fl["data"])
    graph = _load_index(fl["index"], _data_files(fl["data"]))
    _check_pair(graph, ds)
    queries = _load_queries(fl["queries"])
    gt = _load_truth(fl["truth"], ds, queries)
    ts = harvest(graph, ds, queries, gt, fl["probe_f"], fl["mode"], threads=fl["threads"])
    ts.write_csv(fl["out"])
    inputs = [fl["index"], *_data_files(fl["data"]), *_query_files(fl["queries"]), *_truth_files(fl["truth"])]
    return fl["out"], inputs, [fl["out"]]


def cmd_train(fl: dict):
    from .gbdt import HyperParams, TrainingSet, train
    from .training import mask_training_set

    _need(fl["training_set"])
    ts = TrainingSet.read_csv(fl["training_set"])
    if fl["drop_flags"]:
        ts = ts.without_flags(fl["drop_flags"])
    if fl["mask"] not in ("none", ""):
        ts = mask_training_set(ts, fl["mask"])
    hp = HyperParams(fl["trees"], fl["depth"], fl["eta"], fl["subsample"], fl["min_leaf"], fl["bins"] or None)
    model = train(ts, hp, fl["seed"])
    model.save(fl["out"])
    return fl["out"], [fl["training_set"]], [fl["out"]]


def cmd_evaluate(fl: dict):
    from .evaluate import regression_report, sweep, write_curve_csv
    from .gbdt import BoostedTreesModel, TrainingSet

    ds = _load_data(fl["data"])
    graph = _load_index(fl["index"], _data_files(fl["data"]))
    _check_pair(graph, ds)
    queries = _load_queries(fl["queries"])
    gt = _load_truth(fl["truth"], ds, queries)
    inputs = [fl["index"], *_data_files(fl["data"]), *_query_files(fl["queries"]), *_truth_files(fl["truth"])]
    family = fl["policy"]
    model = None
    if family == "predicted":
        if not fl["model"]:
            raise FlagError("--policy predicted needs --model")
        _need(fl["model"])
        model = BoostedTreesModel.load(fl["model"])
        inputs.append(fl["model"])
        knobs = _floats(fl["alpha_list"])
    elif family == "fixed-beam":
        knobs = [int(x) for x in _floats(fl["beam_list"])]
    elif family == "fixed-budget":
        knobs = _floats(fl["budget_list"])
    else:
        raise FlagError(f"unknown policy {family!r}")
    curve = sweep(graph, ds, queries, gt.ids, family, knobs, model=model, probe_budget=fl["probe_f"],
                  mode=fl["mode"], runs=fl["runs"])
    cfg = _content_hash(fl, inputs)
    write_curve_csv(fl["out"], curve, cfg)
    outputs = [fl["out"]]
    if fl["holdout"] and model is not None:
        _need(fl["holdout"])
        ts = TrainingSet.read_csv(fl["holdout"])
        if model.schema_id != ts.schema_id:
            from .training import mask_training_set

            ts = mask_training_set(ts, model.schema_id.rpartition("mask=")[2])
        report = regression_report(model.predict_batch(ts.rows), ts.targets)
        report["config_hash"] = cfg
        with open(fl["out"] + ".regression.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        inputs.append(fl["holdout"])
        outputs.append(fl["out"] + ".regression.json")
    return fl["out"], inputs, outputs


def cmd_importance(fl: dict):
    from .evaluate import config_hash
    from .gbdt import BoostedTreesModel

    _need(fl["model"])
    model = BoostedTreesModel.load(fl["model"])
    imp = model.feature_importance()
    total = sum(imp.values())
    with open(fl["out"], "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash({'model': file_hash(fl['model'])})}\n")
        w = csv.writer(fh)
        w.writerow(["feature", "gain", "share"])
        for name, gain in sorted(imp.items(), key=lambda kv: -kv[1]):
            w.writerow([name, repr(gain), repr(gain / total if total > 0 else 0.0)])
    return fl["out"], [fl["model"]], [fl["out"]]


def cmd_misalignment(fl: dict):
    from .evaluate import misalignment_report, write_misalignment_csv

    ds = _load_data(fl["data"])
    queries = _load_queries(fl["queries"])
    inputs = _data_files(fl["data"]) + _query_files(fl["queries"])
    report = misalignment_report(ds, queries, fl["m"])
    cfg = _content_hash(fl, inputs)
    write_misalignment_csv(fl["out"], report, cfg)
    summary = {k: v for k, v in report.items() if k != "rows"}
    summary["config_hash"] = cfg
    with open(fl["out"] + ".summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return fl["out"], inputs, [fl["out"], fl["out"] + ".summary.json"]


COMMANDS = {"gen-data": cmd_gen_data, "build-index": cmd_build_index, "ground-truth": cmd_ground_truth,
            "harvest": cmd_harvest, "train": cmd_train, "evaluate": cmd_evaluate,
            "importance": cmd_importance, "misalignment": cmd_misalignment}


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
        cmd = ns.pop("cmd")
        if cmd is None:
            raise FlagError("a subcommand is required")
        flags = resolve_flags(cmd, ns)
        started = _dt.datetime.now(_dt.timezone.utc).isoformat()
        out_base, inputs, outputs = COMMANDS[cmd](flags)
        write_manifest(out_base, cmd, flags, inputs, started, outputs)
    except FlagError as exc:
        return _fail(EXIT_FLAGS, exc)
    except (FileNotFoundError, InputMismatchError, ModelFormatError, SchemaMismatchError, json.JSONDecodeError) as exc:
        return _fail(EXIT_INPUT, exc)
    except (ContractViolation, SelectivityError, ValueError) as exc:
        return _fail(EXIT_FLAGS, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
