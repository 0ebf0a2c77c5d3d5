"""Batch command-line entry point.

Subcommands: train, predict, simulate, report. Every output file embeds the
run seed and a digest of the effective configuration, so one seed reproduces
any run byte for byte. Exit codes: 0 ok, 1 internal error, 2 missing or
unreadable input, 3 schema mismatch, 4 cluster capacity shortfall.
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
from pathlib import Path

from . import cluster_sim, figures
from .dataset import DatasetError, Schema, load_csv, load_schema
from .forest import (
    Forest,
    ForestError,
    load_forest,
    oob_error,
    predict_classification,
    predict_regression,
    save_forest,
    train,
)
from .tree import Hyperparams, TreeError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_INPUT = 2
EXIT_SCHEMA_MISMATCH = 3
EXIT_CAPACITY = 4

log = logging.getLogger("prf")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


def _config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise CliError(f"missing required {what} path", EXIT_MISSING_INPUT)
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} file not found: {p}", EXIT_MISSING_INPUT)
    return p


def _write_json(path: Path, payload: dict, seed: int, digest: str) -> None:
    doc = {"meta": {"seed": seed, "config_digest": digest}, **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _open_csv(path: Path, seed: int, digest: str):
    fh = open(path, "w", newline="")
    fh.write(f"# seed={seed} config_digest={digest}\n")
    return fh


def _hyperparams(args) -> Hyperparams:
    return Hyperparams(
        k_trees=args.trees, m_selected=args.m, k_top=args.k_top,
        max_depth=args.max_depth, min_samples_split=args.min_split,
        min_leaf_size=args.min_leaf, seed=args.seed)


# ------------------------------------------------------------------ train

def cmd_train(args) -> int:
    schema = load_schema(_require(args.schema, "schema"))
    data = load_csv(_require(args.data, "data"), schema)
    h = _hyperparams(args).resolve(schema.m - 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = _config_digest({"command": "train", "hyperparams": h.to_dict(),
                             "schema": schema.to_dict()})
    t0 = time.perf_counter()
    forest, dsi = train(data, h)
    wall = time.perf_counter() - t0
    save_forest(forest, out / "model.json",
                meta={"seed": h.seed, "config_digest": digest})
    metrics = {
        "oob_error": None if schema.is_regression else oob_error(forest, data, dsi),
        "per_tree_accuracy": forest.weights,
        "variable_importance": forest.mean_variable_importance(),
        "feature_names": [f.name for f in schema.inputs],
        "wall_time_s": wall,
        "n_rows": data.n,
        "k_trees": forest.k,
    }
    _write_json(out / "metrics.json", metrics, h.seed, digest)
    log.info("trained %d trees in %.2fs", forest.k, wall)
    print(out / "model.json")
    return EXIT_OK


# ---------------------------------------------------------------- predict

def _read_samples(path: Path, schema: Schema) -> list[tuple]:
    input_names = [f.name for f in schema.inputs]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        with_target = input_names + [schema.target.name]
        if header == input_names:
            drop_target = False
        elif header == with_target:
            drop_target = True
        else:
            raise CliError(
                f"sample header {header} does not match model schema {input_names}",
                EXIT_SCHEMA_MISMATCH)
        samples = []
        for row_no, raw in enumerate(reader, start=1):
            vals = raw[:-1] if drop_target else raw
            if len(vals) != len(input_names):
                raise CliError(f"sample row {row_no}: wrong arity",
                               EXIT_SCHEMA_MISMATCH)
            parsed = []
            for v, descr in zip(vals, schema.inputs):
                if descr.kind == "continuous":
                    try:
                        parsed.append(float(v))
                    except ValueError:
                        raise CliError(
                            f"sample row {row_no}: {v!r} is not a number",
                            EXIT_SCHEMA_MISMATCH) from None
                else:
                    parsed.append(v)
            samples.append(tuple(parsed))
    return samples


def cmd_predict(args) -> int:
    forest = load_forest(_require(args.model, "model"))
    samples = _read_samples(_require(args.data, "data"), forest.schema)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = forest.hyperparams.seed
    digest = _config_digest({"command": "predict",
                             "model_digest": forest.dsi_digest})
    path = out / "predictions.csv"
    with _open_csv(path, seed, digest) as fh:
        writer = csv.writer(fh)
        if forest.schema.is_regression:
            report = predict_regression(forest, samples, mode=args.regression_mode)
            writer.writerow(["row_id", "prediction"])
            for i, p in enumerate(report.predictions):
                writer.writerow([i, repr(p)])
        else:
            report = predict_classification(forest, samples)
            classes = list(forest.schema.class_labels)
            writer.writerow(["row_id", "prediction"] + [f"tally_{c}" for c in classes])
            for i, (p, tally) in enumerate(zip(report.predictions, report.tallies)):
                writer.writerow([i, p] + [repr(tally[c]) for c in classes])
    print(path)
    return EXIT_OK


# --------------------------------------------------------------- simulate

def _load_cluster(path: Path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if "nodes" not in cfg or not cfg["nodes"]:
        raise CliError(f"{path}: cluster file declares no nodes", EXIT_MISSING_INPUT)
    return cfg


def _simulate_once(forest: Forest, node_descrs: list[dict],
                   cost_model: cluster_sim.CostModel):
    nodes = cluster_sim.make_nodes(node_descrs)
    specs = cluster_sim.specs_from_schema(forest.schema, forest.n_rows)
    plan = cluster_sim.allocate(specs, nodes)
    traces = [cluster_sim.trace_from_tree(t) for t in forest.trees]
    dags = [cluster_sim.build_dag(tr, plan) for tr in traces]
    dsi_bytes = 24 + 8 * forest.k * forest.n_rows
    volume = cluster_sim.data_volume(forest.n_rows, forest.schema.m, forest.k,
                                     "prf-multiplex")
    events, ledger = cluster_sim.schedule(
        dags, plan, nodes, cost_model, dsi_bytes=dsi_bytes,
        data_volume_cells=volume.total_cells)
    return plan, events, ledger


def cmd_simulate(args) -> int:
    forest = load_forest(_require(args.model, "model"))
    cluster = _load_cluster(_require(args.cluster, "cluster"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cost_model = cluster_sim.CostModel.from_dict(cluster.get("cost_model", {}))
    node_descrs = cluster["nodes"]
    seed = forest.hyperparams.seed
    digest = _config_digest({"command": "simulate", "cluster": cluster,
                             "model_digest": forest.dsi_digest})

    try:
        plan, events, ledger = _simulate_once(forest, node_descrs, cost_model)
    except cluster_sim.SimulationError as exc:
        raise CliError(str(exc), EXIT_CAPACITY) from exc

    with open(out / "trace.jsonl", "w") as fh:
        fh.write(json.dumps({"meta": {"seed": seed, "config_digest": digest}}) + "\n")
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
    _write_json(out / "ledger.json",
                {"ledger": ledger.to_dict(),
                 "scenarios": {str(k): v for k, v in sorted(plan.scenario.items())}},
                seed, digest)

    # volume table across tree counts, both strategies
    k_values = sorted({1, 2, 10, 100, forest.k})
    with _open_csv(out / "volume.csv", seed, digest) as fh:
        writer = csv.writer(fh)
        writer.writerow(["k_trees", "strategy", "data_cells", "index_cells",
                         "total_cells"])
        for k in k_values:
            for strategy in ("horizontal-copy", "prf-multiplex"):
                v = cluster_sim.data_volume(forest.n_rows, forest.schema.m, k,
                                            strategy)
                writer.writerow([k, strategy, v.data_cells, v.index_cells,
                                 v.total_cells])

    # speedup sweep over the node counts listed in the cluster file
    counts = cluster.get("node_counts", list(range(1, len(node_descrs) + 1)))
    if max(counts) > len(node_descrs):
        raise CliError("node_counts exceeds the number of declared nodes",
                       EXIT_MISSING_INPUT)
    total_capacity = sum(d["capacity_bytes"] for d in node_descrs)
    standalone_descr = [dict(node_descrs[0], capacity_bytes=total_capacity)]
    try:
        _, _, standalone = _simulate_once(forest, standalone_descr, cost_model)
        times = {}
        for n in counts:
            _, _, led = _simulate_once(forest, node_descrs[:n], cost_model)
            times[n] = led.makespan
    except cluster_sim.SimulationError as exc:
        raise CliError(str(exc), EXIT_CAPACITY) from exc
    report = cluster_sim.speedup_report(times, standalone.makespan)
    with _open_csv(out / "speedup.csv", seed, digest) as fh:
        writer = csv.writer(fh)
        writer.writerow(["nodes", "makespan_s", "normalized_time", "speedup"])
        for n in counts:
            writer.writerow([n, repr(times[n]),
                             repr(report[n]["normalized_time"]),
                             repr(report[n]["speedup"])])
    print(out / "ledger.json")
    return EXIT_OK


# ----------------------------------------------------------------- report

def _read_table(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def cmd_report(args) -> int:
    src = Path(args.out)
    if not src.exists():
        raise CliError(f"artifact directory not found: {src}", EXIT_MISSING_INPUT)
    produced = []

    metrics_path = src / "metrics.json"
    if metrics_path.exists():
        metrics = json.loads(metrics_path.read_text())
        figures.plot_variable_importance(
            metrics["feature_names"], metrics["variable_importance"],
            src / "variable_importance.png")
        produced.append("variable_importance.png")

    ledger_path = src / "ledger.json"
    if ledger_path.exists():
        ledger = json.loads(ledger_path.read_text())
        figures.plot_node_busy(ledger["ledger"]["per_node_busy"],
                               src / "node_busy.png")
        produced.append("node_busy.png")

    speedup_path = src / "speedup.csv"
    if speedup_path.exists():
        rows = _read_table(speedup_path)
        figures.plot_speedup([int(r["nodes"]) for r in rows],
                             [float(r["speedup"]) for r in rows],
                             src / "speedup.png")
        produced.append("speedup.png")

    volume_path = src / "volume.csv"
    if volume_path.exists():
        rows = _read_table(volume_path)
        ks = sorted({int(r["k_trees"]) for r in rows})
        by = {(int(r["k_trees"]), r["strategy"]): int(r["total_cells"]) for r in rows}
        figures.plot_volume(ks, [by[(k, "prf-multiplex")] for k in ks],
                            [by[(k, "horizontal-copy")] for k in ks],
                            src / "volume.png")
        produced.append("volume.png")

    if not produced:
        raise CliError(f"nothing to report in {src}", EXIT_MISSING_INPUT)
    with open(src / "report_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["figure"])
        for name in produced:
            writer.writerow([name])
    print(src / "report_summary.csv")
    return EXIT_OK


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prf",
        description="Random forest training, prediction, and cluster simulation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a forest from a CSV dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--trees", type=int, default=10)
    p.add_argument("--m", type=int, default=None,
                   help="features selected per tree")
    p.add_argument("--k-top", type=int, default=None,
                   help="top features kept by importance")
    p.add_argument("--max-depth", type=int, default=32)
    p.add_argument("--min-split", type=int, default=2)
    p.add_argument("--min-leaf", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict samples with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--regression-mode", choices=["normalized", "paper-literal"],
                   default="normalized")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="replay training on a modeled cluster")
    p.add_argument("--model", required=True)
    p.add_argument("--cluster", required=True)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="render figures from run artifacts")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("PRF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"prf {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"prf {args.command}: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (DatasetError, TreeError, ForestError) as exc:
        print(f"prf {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
