"""Command-line entry point: gen-data, train, eval, viz, ablate.

Log verbosity comes from the GLYPHATTN_LOG environment variable
(DEBUG, INFO, WARNING; default WARNING).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import TrainConfig, load_config
from .denoiser import NoiseSchedule
from .evaluation import eval_model, model_attention_fn, render_attention_overlay
from .glyphdata import CorpusConfig, generate_sample, load_corpus, make_corpus
from .trainer import ablation_matrix, check_corpus, format_table, train

log = logging.getLogger("glyphattn")


def _model_for(cfg: TrainConfig, man, explicit: bool) -> TrainConfig:
    """Match image dims and alphabet to the corpus unless a config file fixed them."""
    if explicit:
        check_corpus(cfg.model, man)
        return cfg
    model = dataclasses.replace(
        cfg.model, height=man.height, width=man.width, channels=man.channels,
        n_max=man.n_max, num_classes=len(man.alphabet),
    )
    return dataclasses.replace(cfg, model=model)


def _train_config(args) -> tuple[TrainConfig, bool]:
    explicit = args.config is not None
    cfg = load_config(args.config) if explicit else TrainConfig()
    over = {}
    if args.steps is not None:
        over["total_steps"] = args.steps
        if args.warmup is None and cfg.warmup_steps > args.steps:
            over["warmup_steps"] = args.steps // 4
    if args.warmup is not None:
        over["warmup_steps"] = args.warmup
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out_dir"] = args.out
    if getattr(args, "corpus", None):
        over["corpus"] = args.corpus
    if getattr(args, "eval_corpus", None):
        over["eval_corpus"] = args.eval_corpus
    cfg = dataclasses.replace(cfg, **over)
    if args.hidden is not None:
        cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, hidden=args.hidden))
    return cfg, explicit


def cmd_gen_data(args) -> int:
    cfg = CorpusConfig(
        count=args.count, height=args.height, width=args.width, channels=args.channels,
        n_max=args.n_max, alphabet=args.alphabet, min_len=args.min_len, max_len=args.max_len, seed=args.seed,
    )
    make_corpus(cfg, args.out)
    print(f"wrote {cfg.count} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg, explicit = _train_config(args)
    man, samples = load_corpus(cfg.corpus)
    cfg = _model_for(cfg, man, explicit)
    res = train(cfg, resume=args.resume, samples=samples)
    final = res.evals.get(res.state.step)
    tail = f" mIoU={final.mean:.4f}" if final else ""
    print(f"trained to step {res.state.step}; checkpoint {res.final_checkpoint}{tail}")
    return 0


def cmd_eval(args) -> int:
    state, cfg = load_checkpoint(args.checkpoint)
    man, samples = load_corpus(args.corpus)
    check_corpus(cfg.model, man)
    if args.count is not None:
        samples = samples[: args.count]
    rep = eval_model(model_attention_fn(state.params, cfg.model), samples,
                     NoiseSchedule.from_config(cfg.model), cfg.sigma)
    print(f"mIoU={rep.mean!r} median={rep.median!r} n={len(rep.per_sample)}")
    return 0


def cmd_viz(args) -> int:
    from .maskops import latent_char_masks

    state, cfg = load_checkpoint(args.checkpoint)
    man, samples = load_corpus(args.corpus)
    check_corpus(cfg.model, man)
    if not 0 <= args.index < len(samples):
        raise IndexError(f"sample index {args.index} out of range [0, {len(samples)})")
    s = samples[args.index]
    sched = NoiseSchedule.from_config(cfg.model)
    t = max(1, sched.T // 2)
    import numpy as np

    from .denoiser import forward_diffuse

    eps = np.random.default_rng([args.seed, args.index]).standard_normal(s.image.shape)
    z_t = forward_diffuse(s.image[None], t, eps[None], sched)
    stack = model_attention_fn(state.params, cfg.model)(z_t, np.array([t]), s.region_mask[None], [s.text])
    n = s.n_chars
    if args.masks:
        maps = latent_char_masks(stack, s.active(), cfg.sigma).masks[0, :n]
    else:
        maps = np.mean([a[0] for a in stack], axis=0)[:n]
    render_attention_overlay(s, maps, args.out)
    print(f"wrote {n}-token overlay to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg, explicit = _train_config(args)
    if cfg.corpus:
        man, samples = load_corpus(cfg.corpus)
        cfg = _model_for(cfg, man, explicit)
        eval_samples = None
    else:
        # default smoke corpus, held-out eval set from a second seed
        samples = [generate_sample(CorpusConfig(seed=0), i) for i in range(200)]
        eval_samples = [generate_sample(CorpusConfig(count=cfg.eval_count, seed=1), i) for i in range(cfg.eval_count)]
    if cfg.out_dir == "run":
        cfg = dataclasses.replace(cfg, out_dir=f"runs/ablate_{args.preset}")
    rows = ablation_matrix(cfg, args.preset, samples=samples, eval_samples=eval_samples)
    print(format_table(rows))
    return 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="line-record config file mirroring TrainConfig fields")
    p.add_argument("--steps", type=int, help="override total_steps")
    p.add_argument("--warmup", type=int, help="override warmup_steps")
    p.add_argument("--hidden", type=int, help="override model.hidden")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory for checkpoints and metrics")
    p.add_argument("--eval-corpus", dest="eval_corpus", help="held-out corpus for mIoU evaluation")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glyphattn", description="Cross-attention localization experiments on glyph data.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic glyph corpus")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--n-max", dest="n_max", type=int, default=8)
    p.add_argument("--alphabet", default=CorpusConfig.alphabet)
    p.add_argument("--min-len", dest="min_len", type=int, default=2)
    p.add_argument("--max-len", dest="max_len", type=int, default=4)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="mIoU of a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--count", type=int, help="evaluate only the first COUNT samples")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("viz", help="render attention over one sample as a PPM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--masks", action="store_true", help="draw binary latent masks instead of attention")
    p.set_defaults(fn=cmd_viz)

    p = sub.add_parser("ablate", help="loss or warm-up ablation table")
    p.add_argument("--preset", choices=("losses", "warmup"), required=True)
    p.add_argument("--corpus", help="training corpus (default: the 200-sample smoke corpus)")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_ablate)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("GLYPHATTN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, IndexError, RuntimeError) as e:
        print(f"glyphattn {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
