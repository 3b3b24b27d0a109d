"""Command-line surface: ingest, sample, train, eval, answer, export-viz.

Exit codes: 0 success, 2 usage, 3 I/O, 4 format/input, 5 numeric failure.
Relative paths resolve against $GAUSSKG_DATA_DIR when it is set.  Every
command that writes outputs also writes a ``<out>.run.json`` receipt with
the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .compiler import compile_query
from .errors import FormatError, GaussKGError, NumericError
from .evaluation import evaluate, rank_candidates
from .gaussian import mixture_distance_many, precision
from .kg import SPLITS, ingest_tsv, load_snapshot, save_snapshot
from .queries import (
    CANONICAL_TAGS,
    load_workloads,
    normalize_tag,
    parse_query,
    sample_queries,
    save_workloads,
    serialize_query,
)
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("gausskg")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_NUMERIC = 5

SPLIT_MASKS = {
    "train": ("train",),
    "valid": ("train", "valid"),
    "test": ("train", "valid", "test"),
}


def _resolve(path):
    base = os.environ.get("GAUSSKG_DATA_DIR")
    if path and base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _write_receipt(out_path: str, command: str, resolved: dict):
    receipt = {"command": command, "version": __version__, "config": resolved}
    with open(out_path + ".run.json", "w", encoding="utf-8") as fh:
        json.dump(receipt, fh, ensure_ascii=False, indent=2)
    logger.info("resolved config: %s", json.dumps(resolved, ensure_ascii=False))


def _parse_types(spec: str) -> tuple[str, ...]:
    return tuple(normalize_tag(t.strip()) for t in spec.split(",") if t.strip())


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    paths = {}
    for split in SPLITS:
        p = getattr(args, split)
        if p:
            paths[split] = _resolve(p)
    kg = ingest_tsv(paths)
    out = _resolve(args.out)
    save_snapshot(kg, out)
    print(f"entities={kg.num_entities} relations={kg.num_relations} "
          f"edges={kg.total_triples}")
    for split in SPLITS:
        print(f"{split}={kg.num_triples(split)}")
    _write_receipt(out, "ingest", {"paths": paths, "out": out})
    return EXIT_OK


def cmd_sample(args) -> int:
    kg = load_snapshot(_resolve(args.snapshot))
    types = _parse_types(args.types)
    mask = SPLIT_MASKS[args.split]
    samples = {tag: sample_queries(kg, tag, args.count, args.seed, mask=mask)
               for tag in types}
    out = _resolve(args.out)
    save_workloads(out, samples, kg)
    for tag in types:
        print(f"{tag}: {len(samples[tag])} queries")
    _write_receipt(out, "sample", {
        "snapshot": _resolve(args.snapshot), "types": list(types),
        "count": args.count, "seed": args.seed, "split": args.split, "out": out,
    })
    return EXIT_OK


def _build_train_config(args) -> TrainConfig:
    settings = {}
    if args.config:
        with open(_resolve(args.config), "r", encoding="utf-8") as fh:
            try:
                settings.update(json.load(fh))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{args.config}: invalid config file: {exc}") from exc
    flag_map = {
        "dim": args.dim, "rank": args.rank, "jitter": args.jitter,
        "learning_rate": args.lr, "margin": args.margin,
        "negatives": args.negatives, "batch_size": args.batch,
        "epochs": args.epochs, "aggregator": args.aggregator,
        "seed": args.seed, "threads": args.threads, "optimizer": args.optimizer,
    }
    for key, value in flag_map.items():
        if value is not None:
            settings[key] = value
    if args.types is not None:
        settings["query_types"] = _parse_types(args.types)
    elif "query_types" in settings:
        settings["query_types"] = tuple(settings["query_types"])
    return TrainConfig(**settings)


def cmd_train(args) -> int:
    kg = load_snapshot(_resolve(args.snapshot))
    config = _build_train_config(args)
    workloads = {"train": load_workloads(_resolve(args.workloads), kg)}
    if args.valid_workloads:
        workloads["valid"] = load_workloads(_resolve(args.valid_workloads), kg)
    table, metrics = train(config, kg, workloads)
    out = _resolve(args.out)
    save_checkpoint(table, out, kg, config)
    metrics_path = _resolve(args.metrics) if args.metrics else out + ".metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        for record in metrics:
            fh.write(json.dumps(record) + "\n")
    print(f"checkpoint={out} epochs={len(metrics)} "
          f"final_loss={metrics[-1]['mean_loss']:.4f}" if metrics
          else f"checkpoint={out} epochs=0")
    _write_receipt(out, "train", {
        "snapshot": _resolve(args.snapshot), "workloads": _resolve(args.workloads),
        "valid_workloads": _resolve(args.valid_workloads) if args.valid_workloads else None,
        "out": out, "metrics": metrics_path, "train_config": asdict(config),
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    kg = load_snapshot(_resolve(args.snapshot))
    table, _ = load_checkpoint(_resolve(args.checkpoint), kg)
    workloads = load_workloads(_resolve(args.workloads), kg)
    report = evaluate(table, kg, workloads, filtered=args.filtered_metrics)
    print(report.to_text())
    out = _resolve(args.report)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json_dict(), fh, ensure_ascii=False, indent=2)
        _write_receipt(out, "eval", {
            "snapshot": _resolve(args.snapshot),
            "checkpoint": _resolve(args.checkpoint),
            "workloads": _resolve(args.workloads),
            "filtered_metrics": args.filtered_metrics, "report": out,
        })
    return EXIT_OK


def cmd_answer(args) -> int:
    kg = load_snapshot(_resolve(args.snapshot))
    table, _ = load_checkpoint(_resolve(args.checkpoint), kg)
    dag = parse_query(args.query, kg)
    top_k = args.top_k
    if top_k > kg.num_entities:
        logger.warning("top-k %d exceeds entity count; clamping to %d",
                       top_k, kg.num_entities)
        top_k = kg.num_entities
    ranked = rank_candidates(dag, table, kg)
    mixture = compile_query(dag, table)
    distances = mixture_distance_many(table.entity_means[ranked[:top_k]], mixture)
    logger.info("resolved config: %s", json.dumps({
        "query": args.query, "canonical": serialize_query(dag, kg), "top_k": top_k}))
    for ent, dist in zip(ranked[:top_k], distances):
        print(f"{kg.entity_names[int(ent)]}\t{dist:.6f}")
    return EXIT_OK


def cmd_export_viz(args) -> int:
    kg = load_snapshot(_resolve(args.snapshot))
    table, _ = load_checkpoint(_resolve(args.checkpoint), kg)
    items = []
    for name in args.entity or ():
        if name not in kg.entity_ids:
            raise FormatError(f"unknown entity name {name!r}")
        density = table.entity_density(kg.entity_ids[name])
        items.append(("entity", name, [(1.0, density)]))
    for text in args.query or ():
        mixture = compile_query(parse_query(text, kg), table)
        items.append(("query", text,
                      list(zip(mixture.weights.tolist(), mixture.components))))
    if len(items) < 2:
        raise FormatError("export-viz needs at least 2 items (entities and/or queries)")

    means = np.array([g.mean for _, _, comps in items for _, g in comps])
    center = means.mean(axis=0)
    # top-2 principal axes of the selected means
    _, _, vt = np.linalg.svd(means - center, full_matrices=False)
    axes = vt[:2].T if vt.shape[0] >= 2 else np.eye(means.shape[1])[:, :2]

    rows = []
    for kind, label, comps in items:
        for idx, (weight, g) in enumerate(comps):
            xy = (g.mean - center) @ axes
            projected_precision = axes.T @ precision(g) @ axes
            cov = np.linalg.pinv(projected_precision)
            rows.append({
                "item": label, "kind": kind, "component": idx, "weight": weight,
                "x": float(xy[0]), "y": float(xy[1]),
                "cov_xx": float(cov[0, 0]), "cov_xy": float(cov[0, 1]),
                "cov_yy": float(cov[1, 1]),
            })
    out = _resolve(args.out)
    fieldnames = ["item", "kind", "component", "weight", "x", "y",
                  "cov_xx", "cov_xy", "cov_yy"]
    with open(out + ".csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    with open(out + ".json", "w", encoding="utf-8") as fh:
        json.dump({"center": center.tolist(), "axes": axes.tolist(), "rows": rows},
                  fh, ensure_ascii=False, indent=2)
    print(f"wrote {out}.csv and {out}.json ({len(rows)} rows)")
    _write_receipt(out, "export-viz", {
        "snapshot": _resolve(args.snapshot), "checkpoint": _resolve(args.checkpoint),
        "entities": list(args.entity or ()), "queries": list(args.query or ()),
        "out": out,
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gausskg",
        description="Gaussian-density knowledge-graph embeddings with "
                    "closed-form logical query operators.")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read TSV triples into a graph snapshot")
    p.add_argument("--train", required=True)
    p.add_argument("--valid")
    p.add_argument("--test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sample", help="sample query workloads from a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--types", default=",".join(CANONICAL_TAGS),
                   help="comma list; ASCII aliases 2i 3i 2u it ti ut accepted")
    p.add_argument("--count", type=int, default=100, help="queries per type")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=sorted(SPLIT_MASKS), default="train",
                   help="edge mask: train / valid(+train) / test(full graph)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train embeddings on sampled workloads")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--workloads", required=True)
    p.add_argument("--valid-workloads")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="metrics log path (default <out>.metrics.jsonl)")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--dim", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--jitter", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--negatives", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--types")
    p.add_argument("--aggregator", choices=["attention", "average", "mlp"])
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank and score workloads with a checkpoint")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--workloads", required=True)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--filtered-metrics", action="store_true",
                   help="conventional per-answer filtered HITS/MRR")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("answer", help="rank entities for an ad-hoc query")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("export-viz", help="export 2-D projections for plotting")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--entity", action="append", help="entity name (repeatable)")
    p.add_argument("--query", action="append", help="query text (repeatable)")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_export_viz)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        logger.error("file not found: %s", exc)
        return EXIT_IO
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    except GaussKGError as exc:
        logger.error("%s", exc)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
