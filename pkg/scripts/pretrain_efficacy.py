"""Pretrain a full-state encoder on a synthetic corpus and compare held-out
whole-window MSE against the untrained initialization."""
import argparse
import json
import sys

from posm.pretrain import Encoder, EncoderSpec, evaluate_mse, masked_views_for, pretrain, save_checkpoint
from posm.synth import synth_corpus
from posm.training import JsonLog, TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--writers", type=int, default=16)
    ap.add_argument("--paragraphs", type=int, default=8)
    ap.add_argument("--corpus-seed", type=int, default=2024)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--batch-size", type=int, default=128)
    ap.add_argument("--block-type", default="full_state", choices=("full_state", "aggregate_state"))
    ap.add_argument("-o", "--output", help="optional checkpoint path")
    args = ap.parse_args()

    corpus = synth_corpus(args.writers, args.paragraphs, args.corpus_seed)
    spec = EncoderSpec(block_type=args.block_type)
    ckpt = pretrain(corpus, spec, TrainConfig(args.epochs, args.batch_size, seed=args.seed),
                    log=JsonLog(sys.stderr))
    held_out = masked_views_for(corpus.split("test"), spec, seed=99)
    before = evaluate_mse(Encoder(spec, seed=args.seed), held_out)
    after = evaluate_mse(ckpt.encoder, held_out)
    if args.output:
        save_checkpoint(args.output, ckpt)
    print(json.dumps({"untrained": before, "trained": after, "ratio": after["mse"] / before["mse"],
                      "record": ckpt.record.to_dict()}, indent=2))


if __name__ == "__main__":
    main()
