"""Smoke experiment: warm-up vs no-warm-up (and optionally the Base configuration)
on the 200-sample 32x32 corpus. Prints per-eval mIoU and the final comparison."""
import argparse
import dataclasses
import logging
import time
from pathlib import Path

from glyphattn.config import ModelConfig, TrainConfig
from glyphattn.glyphdata import CorpusConfig, generate_sample
from glyphattn.losses import LossWeights
from glyphattn.trainer import eval_diffusion_mse, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--warmup", type=int, default=500)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--out", default="runs/smoke")
    ap.add_argument("--base", action="store_true", help="also run the Base configuration")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    train_set = [generate_sample(CorpusConfig(count=200, seed=0), i) for i in range(200)]
    eval_set = [generate_sample(CorpusConfig(count=50, seed=1), i) for i in range(50)]
    base_cfg = TrainConfig(total_steps=args.steps, warmup_steps=args.warmup, seed=args.seed,
                           model=ModelConfig(hidden=args.hidden))
    runs = {"warmup": base_cfg, "no_warmup": dataclasses.replace(base_cfg, warmup_steps=0)}
    if args.base:
        runs["base"] = dataclasses.replace(
            base_cfg, warmup_steps=0,
            weights=LossWeights(alpha=0.0, beta=0.0, gamma=0.0, use_align=False, use_id=False))
    for name, cfg in runs.items():
        cfg = dataclasses.replace(cfg, out_dir=str(Path(args.out) / name))
        t0 = time.time()
        res = train(cfg, samples=train_set, eval_samples=eval_set)
        mse = eval_diffusion_mse(res.state, eval_set, cfg)
        curve = " ".join(f"{s}:{r.median:.3f}/{r.mean:.3f}" for s, r in sorted(res.evals.items()))
        print(f"{name}: {time.time() - t0:.0f}s diff_mse={mse:.5f} median/mean mIoU {curve}", flush=True)


if __name__ == "__main__":
    main()
