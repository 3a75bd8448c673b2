"""Loss or warm-up ablation table on the smoke corpus (held-out eval set from seed 1)."""
import argparse
import dataclasses
import logging

from glyphattn.config import ModelConfig, TrainConfig
from glyphattn.glyphdata import CorpusConfig, generate_sample
from glyphattn.trainer import ablation_matrix, format_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", choices=("losses", "warmup"), default="losses")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    train_set = [generate_sample(CorpusConfig(count=200, seed=0), i) for i in range(200)]
    eval_set = [generate_sample(CorpusConfig(count=50, seed=1), i) for i in range(50)]
    cfg = TrainConfig(total_steps=args.steps, warmup_steps=args.steps // 4, seed=args.seed,
                      model=ModelConfig(hidden=args.hidden), out_dir=f"{args.out}/{args.preset}")
    rows = ablation_matrix(cfg, args.preset, samples=train_set, eval_samples=eval_set)
    print(format_table(rows))


if __name__ == "__main__":
    main()
