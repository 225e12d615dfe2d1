"""Reconstruct unseen synthetic paragraphs with a checkpoint and write SVG overlays."""
import argparse
import json
from pathlib import Path

from posm.evaluation import reconstruction_suite, render_svg
from posm.pretrain import load_checkpoint
from posm.synth import synth_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("checkpoint")
    ap.add_argument("-o", "--output", default="figures")
    ap.add_argument("--writers", type=int, default=4)
    ap.add_argument("--paragraphs", type=int, default=1)
    ap.add_argument("--corpus-seed", type=int, default=7)
    ap.add_argument("--limit", type=int, default=8)
    args = ap.parse_args()

    ckpt = load_checkpoint(args.checkpoint)
    unseen = synth_corpus(args.writers, args.paragraphs, args.corpus_seed).strokesets
    cases, summary = reconstruction_suite(ckpt, unseen)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    # spread the figures over the whole set rather than the first paragraph
    step = max(1, len(cases) // args.limit)
    for i, case in enumerate(cases[::step][:args.limit]):
        (out / f"reconstruction_{i:02d}.svg").write_text(render_svg(case))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
