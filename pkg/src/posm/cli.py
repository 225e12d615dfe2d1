"""Command-line entry point: ``posm <subcommand> ...``.

Logs go to stderr as JSON lines; each subcommand prints one JSON summary on
stdout. Failures print ``{"error": ..., "message": ...}`` to stderr and exit 1.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import config as cfgmod
from . import finetune as ft
from . import pretrain as pt
from .evaluation import ComparisonSetup, compare_pretrained_vs_scratch, reconstruction_suite, render_svg
from .ink import (Corpus, default_splits, merge_strokesets, paragraph_key, parse_iam_xml, parse_interchange,
                  write_iam_xml, write_interchange)
from .nn import parallel, serialize
from .synth import synth_corpus
from .tasks import build_task
from .training import JsonLog, stderr_log

DATA_DIR_ENV = "POSM_DATA_DIR"


def data_path(p: str) -> Path:
    """Relative paths that do not exist here are looked up under $POSM_DATA_DIR."""
    path = Path(p)
    base = os.environ.get(DATA_DIR_ENV)
    if not path.is_absolute() and not path.exists() and base:
        return Path(base) / path
    return path


def load_corpus(p: str) -> Corpus:
    if not p:
        raise cfgmod.ConfigError("no corpus given (set data.corpus or --data-corpus)")
    return parse_interchange(data_path(p).read_bytes())


def emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def write_text(path, text: str) -> None:
    serialize.atomic_write(path, text.encode("utf-8"))


# subcommands ------------------------------------------------------------------------


def cmd_convert(args) -> dict:
    inputs = [Path(p) for p in args.inputs]
    if args.format == "jsonl":
        corpus = parse_interchange(b"".join(p.read_bytes() for p in inputs))
    else:
        files = []
        for p in inputs:
            files += sorted(p.rglob("*.xml")) if p.is_dir() else [p]
        if not files:
            raise ValueError("no XML files found")
        meta = json.loads(Path(args.meta).read_text()) if args.meta else {}
        groups: dict[str, list] = {}
        for f in sorted(files):
            try:
                ss = parse_iam_xml(f.read_bytes(), f.stem, args.writer, args.time_scale)
            except ValueError as exc:
                raise ValueError(f"{f}: {exc}") from None
            groups.setdefault(paragraph_key(f.stem), []).append(ss)
        strokesets = [merge_strokesets(parts, key, metadata=meta.get(parts[0].writer_id, {}))
                      for key, parts in groups.items()]
        corpus = Corpus(tuple(strokesets), default_splits(strokesets))
    if args.to == "xml":
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        for ss in corpus.strokesets:
            serialize.atomic_write(out / f"{ss.id}.xml", write_iam_xml(ss))
    else:
        serialize.atomic_write(args.output, write_interchange(corpus))
    return {"output": str(args.output), "strokesets": len(corpus), "writers": len(corpus.writers())}


def cmd_synth(args) -> dict:
    corpus = synth_corpus(args.writers, args.paragraphs, args.seed, args.words, args.speed_gap)
    data = write_interchange(corpus)
    serialize.atomic_write(args.output, data)
    return {"output": str(args.output), "strokesets": len(corpus), "sha256": pt.digest(data)}


def cmd_pretrain(args, cfg: cfgmod.RunConfig) -> dict:
    corpus = load_corpus(cfg.data.corpus)
    log = stderr_log()
    ckpt = pt.pretrain(corpus, cfg.encoder_spec(), cfg.pretrain_config(), cfg.pretrain.val_fraction, log)
    data = pt.checkpoint_bytes(ckpt)
    serialize.atomic_write(args.output, data)
    return {"output": str(args.output), "sha256": pt.digest(data), "record": ckpt.record.to_dict(),
            "config_digest": cfg.digest()}


def _task_data(cfg: cfgmod.RunConfig):
    return build_task(cfg.finetune.task, load_corpus(cfg.data.corpus), cfg.seed, cfg.finetune.val_fraction)


def _train_data(task, spec, cspec, cfg):
    if cspec.pipeline == "exclusive":
        return ft.exclusive_train_data(task.train, spec, cfg.windowing.s_train)
    return ft.inclusive_train_data(task.train, spec, cspec.n_windows, cfg.windowing.s_train)


def cmd_finetune(args, cfg: cfgmod.RunConfig) -> dict:
    raw = data_path(args.checkpoint).read_bytes()
    ckpt = pt.checkpoint_from_bytes(raw)
    task = _task_data(cfg)
    cspec = cfg.classifier_spec()
    model = ft.assemble(ckpt, cspec, cfg.freeze_plan(), task.labels, seed=cfg.seed,
                        pretrained=not args.from_scratch)
    model.encoder_ref.update({"path": str(args.checkpoint), "sha256": pt.digest(raw)})
    data = _train_data(task, ckpt.spec, cspec, cfg)
    if len(data) == 0:
        raise ValueError("no training windows: sequences are shorter than the input span")
    val = ft.test_arrays(task.validation, ckpt.spec, cspec, cfg.windowing.s_test)
    ft.train_classifier(model, data, cfg.finetune_config(), val, stderr_log())
    out = ft.model_bytes(model)
    serialize.atomic_write(args.output, out)
    return {"output": str(args.output), "sha256": pt.digest(out), "task": task.summary(),
            "train_examples": len(data), "best_epoch": model.encoder_ref.get("best_epoch"),
            "best_val_accuracy": model.encoder_ref.get("best_val_accuracy"), "config_digest": cfg.digest()}


def cmd_evaluate(args, cfg: cfgmod.RunConfig) -> dict:
    model = ft.load_model(data_path(args.model))
    task = _task_data(cfg)
    if task.labels != model.labels:
        raise ValueError(f"model labels {model.labels} do not match task labels {task.labels}")
    arrays = ft.test_arrays(task.test, model.classifier.encoder_spec, model.spec, cfg.windowing.s_test)
    report = ft.evaluate_classifier(model, arrays, task.name, cfg.seed, cfg.digest())
    report.extra = {"n_test_sequences": len(task.test), "n_scored": len(arrays)}
    write_text(args.output, report.to_json() + "\n")
    m = report.metrics
    return {"output": str(args.output), "accuracy": m["accuracy"], "macro_f1": m["macro_f1"], "n": m["n"]}


def cmd_reconstruct(args, cfg: cfgmod.RunConfig) -> dict:
    ckpt = pt.load_checkpoint(data_path(args.checkpoint))
    corpus = load_corpus(cfg.data.corpus)
    held_out = corpus.split("test")
    if not held_out:
        raise ValueError("corpus has no test split to reconstruct")
    cases, summary = reconstruction_suite(ckpt, held_out, cfg.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for i, case in enumerate(cases[:cfg.reconstruct.limit]):
        write_text(out / f"case_{i:04d}.svg", render_svg(case))
    write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {"output": str(out), **summary}


def cmd_compare(args, cfg: cfgmod.RunConfig) -> dict:
    ckpt = pt.load_checkpoint(data_path(args.checkpoint))
    task = _task_data(cfg)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    setup = ComparisonSetup(cfg.classifier_spec(), cfg.freeze_plan(), cfg.finetune_config(),
                            cfg.windowing.s_train, cfg.windowing.s_test)
    log = stderr_log()
    report = compare_pretrained_vs_scratch(ckpt, task, setup, seeds, args.control, JsonLog(),
                                           progress=lambda row: log(event="pair", **row))
    report["config_digest"] = cfg.digest()
    write_text(args.output, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return {"output": str(args.output), "mean_margin": report["mean_margin"], "wins": report["wins"],
            "n_pairs": report["n_pairs"]}


def cmd_config(args) -> dict | None:
    if args.action == "print-defaults":
        sys.stdout.write(cfgmod.defaults_json())
        return None
    cfg = cfgmod.resolve(args)
    if args.action == "show":
        sys.stdout.write(cfg.to_json())
        return None
    return {"valid": True, "config_digest": cfg.digest()}


# parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posm", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker threads (results do not depend on it)")
    common.add_argument("--seed", type=int, default=None)

    def with_config(p):
        p.add_argument("-c", "--config", help="JSON run configuration")
        cfgmod.add_config_flags(p)
        return p

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", parents=[common], help="IAM-style XML or JSON lines -> interchange file")
    p.add_argument("inputs", nargs="+", help="files or directories")
    p.add_argument("--format", choices=("jsonl", "xml"), default="xml", help="input format")
    p.add_argument("--to", choices=("jsonl", "xml"), default="jsonl", help="output format")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--writer", default=None, help="writer id when the XML has none")
    p.add_argument("--meta", default=None, help="JSON map writer -> {gender, handedness}")
    p.add_argument("--time-scale", type=float, default=1000.0, help="file time unit to milliseconds")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    p.add_argument("--writers", type=int, default=16)
    p.add_argument("--paragraphs", type=int, default=8)
    p.add_argument("--words", type=int, default=6)
    p.add_argument("--speed-gap", type=float, default=0.02)
    p.add_argument("-o", "--output", required=True)

    p = with_config(sub.add_parser("pretrain", parents=[common], help="masked-reconstruction pretraining"))
    p.add_argument("-o", "--output", required=True, help="checkpoint path")

    p = with_config(sub.add_parser("finetune", parents=[common], help="train a classifier on a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--from-scratch", action="store_true", help="same structure, random encoder weights")
    p.add_argument("-o", "--output", required=True, help="model path")

    p = with_config(sub.add_parser("evaluate", parents=[common], help="soft-vote evaluation on the test split"))
    p.add_argument("--model", required=True)
    p.add_argument("-o", "--output", required=True, help="JSON report path")

    p = with_config(sub.add_parser("reconstruct", parents=[common], help="reconstruct unseen paragraphs"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-o", "--output", required=True, help="directory for SVGs and summary.json")

    p = with_config(sub.add_parser("compare", parents=[common], help="pretrained vs from-scratch, paired by seed"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--control", action="store_true", help="both arms pretrained (margins must be 0)")
    p.add_argument("-o", "--output", required=True)

    p = with_config(sub.add_parser("config", parents=[common], help="print, show or validate configuration"))
    p.add_argument("action", choices=("print-defaults", "show", "validate"))
    return parser


HANDLERS = {"pretrain": cmd_pretrain, "finetune": cmd_finetune, "evaluate": cmd_evaluate,
            "reconstruct": cmd_reconstruct, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in HANDLERS:
            cfg = cfgmod.resolve(args)
            parallel.set_threads(cfg.threads)
            result = HANDLERS[args.command](args, cfg)
        else:
            if args.threads is not None:
                parallel.set_threads(args.threads)
            if args.command == "synth":
                args.seed = 0 if args.seed is None else args.seed
                result = cmd_synth(args)
            elif args.command == "convert":
                result = cmd_convert(args)
            else:
                result = cmd_config(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error object
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    if result is not None:
        emit(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
