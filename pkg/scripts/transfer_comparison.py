"""Paired pretrained-vs-scratch writer identification on a synthetic corpus.

Needs an encoder checkpoint (see pretrain_efficacy.py -o)."""
import argparse
import json
import sys

from posm.evaluation import ComparisonSetup, compare_pretrained_vs_scratch
from posm.finetune import ClassifierSpec, FreezePlan
from posm.nn.spec import parse_layers
from posm.pretrain import load_checkpoint
from posm.synth import synth_corpus
from posm.tasks import build_task
from posm.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("checkpoint")
    ap.add_argument("--task", default="writer_id")
    ap.add_argument("--writers", type=int, default=16)
    ap.add_argument("--paragraphs", type=int, default=8)
    ap.add_argument("--corpus-seed", type=int, default=2024)
    ap.add_argument("--seeds", default="1,2,3,4,5")
    ap.add_argument("--head", default="BN + 64*relu + 16*softmax")
    ap.add_argument("--kept", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=80)
    ap.add_argument("--patience", type=int, default=15)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--s-train", type=int, default=32)
    ap.add_argument("--control", action="store_true")
    args = ap.parse_args()

    ckpt = load_checkpoint(args.checkpoint)
    task = build_task(args.task, synth_corpus(args.writers, args.paragraphs, args.corpus_seed))
    cspec = ClassifierSpec("exclusive", head_layers=tuple(parse_layers(args.head)))
    setup = ComparisonSetup(cspec, FreezePlan(args.kept, "none"),
                            TrainConfig(args.epochs, 64, args.lr, args.patience), s_train=args.s_train)
    rep = compare_pretrained_vs_scratch(
        ckpt, task, setup, [int(s) for s in args.seeds.split(",")], args.control,
        progress=lambda row: print(json.dumps(row), file=sys.stderr, flush=True))
    print(json.dumps(rep, indent=2))


if __name__ == "__main__":
    main()
