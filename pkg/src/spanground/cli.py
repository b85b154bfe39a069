"""Command-line interface: prepare, weaksup, train, eval, predict, render."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import List, Optional

from .config import RunConfig, load_config
from .dataset import Dataset, load_dataset
from .evaluation import evaluate_model, run_predictions, write_predictions
from .metrics import format_report, report_records
from .querybank import QueryBank, load_query_overrides
from .render import render_records
from .training import load_checkpoint, thresholds_from_config, train
from .weaksup import (
    PhraseSample,
    build_corpus,
    hashed_embedder,
    read_phrase_corpus,
    write_phrase_corpus,
)


def _add_common(parser: argparse.ArgumentParser, *names: str) -> None:
    if "dataset" in names:
        parser.add_argument("--dataset", required=True, help="dataset directory")
    if "split" in names:
        parser.add_argument("--split", default="test", choices=("train", "dev", "test"))
    if "seed" in names:
        parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    if "encoder" in names:
        parser.add_argument("--encoder", choices=("reference", "pretrained"), default=None)
    if "query-strategy" in names:
        parser.add_argument(
            "--query-strategy",
            dest="query_strategy",
            choices=("keyword", "template", "wikipedia", "keyword_annotation"),
            default=None,
        )
    if "out" in names:
        parser.add_argument("--out", default=None, help="output file or directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spanground",
        description="Joint entity-span extraction and query grounding over sentence-image pairs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate a dataset directory and report statistics")
    _add_common(p, "dataset", "out")

    p = sub.add_parser("weaksup", help="build the weak-supervision grounding corpus")
    p.add_argument("--corpus", required=True, help="external phrase corpus file")
    p.add_argument("--dataset", default=None, help="dataset directory for in-domain samples")
    p.add_argument("--tau", type=float, default=0.7, help="cosine similarity threshold")
    p.add_argument("--embed-dim", type=int, default=64, help="hashed embedder width")
    _add_common(p, "seed", "query-strategy", "out")
    p.set_defaults(seed=0)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--max-steps", type=int, default=None, help="override the config step cap")
    p.add_argument("--progress", action="store_true", help="print periodic step summaries")
    _add_common(p, "dataset", "seed", "encoder", "query-strategy", "out")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grounding-subset", choices=("all", "present"), default=None)
    _add_common(p, "dataset", "split", "encoder", "out")

    p = sub.add_parser("predict", help="write per-instance prediction records")
    p.add_argument("--checkpoint", required=True)
    _add_common(p, "dataset", "split", "encoder", "out")

    p = sub.add_parser("render", help="draw gold and predicted boxes into images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--types", choices=("present", "all"), default="present")
    _add_common(p, "dataset", "split", "out")
    return parser


def _load_dataset(path: str) -> Dataset:
    return load_dataset(path)


def _cmd_prepare(args: argparse.Namespace) -> int:
    dataset = _load_dataset(args.dataset)
    stats = dataset.stats()
    lines = []
    for split_name, counts in stats.items():
        parts = ", ".join(f"{k}={v}" for k, v in counts.items())
        lines.append(f"{split_name}: {parts}")
    print("\n".join(lines))
    if args.out:
        records = [
            f"{split_name}.{key} = {value}"
            for split_name, counts in stats.items()
            for key, value in counts.items()
        ]
        Path(args.out).write_text("\n".join(records) + "\n", encoding="utf-8")
    return 0


def _in_domain_samples(dataset: Dataset, bank: QueryBank) -> List[PhraseSample]:
    train_refs = {ex.image_ref for ex in dataset.split("train")}
    samples = []
    for (image_id, etype), raw in sorted(dataset.boxes_raw.items()):
        if image_id not in train_refs:
            continue
        x1, y1, x2, y2, width, height = raw
        samples.append(
            PhraseSample(
                uid=f"indomain:{image_id}:{etype}",
                image_ref=image_id,
                phrase=bank.query_text(etype),
                x1=x1, y1=y1, x2=x2, y2=y2,
                width=width, height=height,
                origin="in_domain",
                matched_type=etype,
            )
        )
    return samples


def _cmd_weaksup(args: argparse.Namespace) -> int:
    if not args.out:
        print("weaksup requires --out (output directory)", file=sys.stderr)
        return 2
    bank = QueryBank(args.query_strategy or "keyword_annotation")
    external = read_phrase_corpus(args.corpus)
    in_domain = _in_domain_samples(_load_dataset(args.dataset), bank) if args.dataset else []
    embedder = hashed_embedder(args.embed_dim)
    splits, result = build_corpus(
        external, in_domain, bank, embedder, tau=args.tau, seed=args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, samples in splits.items():
        write_phrase_corpus(out / f"{name}.tsv", samples)
    total = sum(len(s) for s in splits.values())
    print(
        f"kept {len(result.kept)} of {len(external)} external samples "
        f"(skipped {result.skipped_zero_norm} zero-norm); "
        f"corpus size {total}: "
        + ", ".join(f"{name}={len(samples)}" for name, samples in splits.items())
    )
    return 0


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "encoder", None) is not None:
        updates["encoder"] = args.encoder
    if getattr(args, "query_strategy", None) is not None:
        updates["query_strategy"] = args.query_strategy
    if getattr(args, "max_steps", None) is not None:
        updates["max_steps"] = args.max_steps
    return dataclasses.replace(config, **updates) if updates else config


def _cmd_train(args: argparse.Namespace) -> int:
    if not args.out:
        print("train requires --out (run directory)", file=sys.stderr)
        return 2
    config = _apply_overrides(load_config(args.config), args)
    dataset = _load_dataset(args.dataset)
    result = train(config, dataset, args.out, progress=args.progress)
    print(
        f"trained {result.steps} steps over {result.epochs_run} epochs; "
        f"log: {result.log_path}; last: {result.last_checkpoint}"
        + (
            f"; best dev F1 {result.best_dev_f1:.4f} at {result.best_checkpoint}"
            if result.best_checkpoint
            else ""
        )
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    loaded = load_checkpoint(args.checkpoint, expected_encoder=args.encoder)
    dataset = _load_dataset(args.dataset)
    bank = QueryBank(loaded.config.query_strategy)
    subset = args.grounding_subset or loaded.config.grounding_subset
    report, _ = evaluate_model(
        loaded.model,
        bank,
        dataset,
        args.split,
        thresholds_from_config(loaded.config),
        grounding_subset=subset,
    )
    print(format_report(report))
    if args.out:
        records = report_records(report)
        Path(args.out).write_text(
            "\n".join(f"{k} = {v}" for k, v in records.items()) + "\n", encoding="utf-8"
        )
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    if not args.out:
        print("predict requires --out (predictions file)", file=sys.stderr)
        return 2
    loaded = load_checkpoint(args.checkpoint, expected_encoder=args.encoder)
    dataset = _load_dataset(args.dataset)
    bank = QueryBank(loaded.config.query_strategy)
    records = run_predictions(
        loaded.model, bank, dataset, args.split, thresholds_from_config(loaded.config)
    )
    write_predictions(args.out, records)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _cmd_render(args: argparse.Namespace) -> int:
    if not args.out:
        print("render requires --out (image directory)", file=sys.stderr)
        return 2
    loaded = load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.dataset)
    bank = QueryBank(loaded.config.query_strategy)
    records = run_predictions(
        loaded.model, bank, dataset, args.split, thresholds_from_config(loaded.config)
    )
    count = render_records(records, dataset, args.split, args.out, args.limit, args.types)
    print(f"rendered {count} images into {args.out}")
    return 0


_COMMANDS = {
    "prepare": _cmd_prepare,
    "weaksup": _cmd_weaksup,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "render": _cmd_render,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
