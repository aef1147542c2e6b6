"""Command-line driver for the staged pipeline.

One subcommand per phase, mirroring the training order: generate data,
train the autoencoder, extract codes, train the two priors, sample, then
evaluate. `verify` runs the property suite and exits nonzero on any failure.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 missing
prerequisite (absent checkpoint/data or wrong phase).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evalkit, sampler, shapeworld, trainer, verify
from .checkpoint import Checkpoint
from .config import ModelConfig, desk_config, format_config, parse_config_file
from .errors import ConfigError, PrerequisiteError

CONFIG_ENV_VAR = "SEMAGEN_CONFIG"


def _load_config(args) -> ModelConfig:
    path = args.config or os.environ.get(CONFIG_ENV_VAR)
    cfg = parse_config_file(path) if path else desk_config()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise PrerequisiteError(f"checkpoint not found: {path}")
    return Checkpoint.load(path)


def _require_dir(path: str, what: str) -> str:
    if not path or not os.path.isdir(path):
        raise PrerequisiteError(f"{what} directory not found: {path}")
    return path


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"config file path (default: ${CONFIG_ENV_VAR} "
                                    "or built-in desk config)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--threads", type=int, default=None,
                   help="cap torch worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semagen",
        description="annotated multi-object image generation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic scene dataset")
    _add_common(p)
    p.add_argument("--n", type=int, default=None, help="number of scenes")
    p.add_argument("--constraint", action="store_true",
                   help="force constraint mode (centered object, empty corners)")

    p = sub.add_parser("train-vqvae", help="train the twin-codebook autoencoder")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--log-every", type=int, default=200)

    p = sub.add_parser("extract-codes",
                       help="encode a dataset into code grids + latent layouts")
    _add_common(p)
    p.add_argument("--vqvae", required=True, help="autoencoder checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")

    p = sub.add_parser("train-prior", help="train the conditional code prior")
    _add_common(p)
    p.add_argument("--codes", required=True, help="extracted code corpus (.npz)")
    p.add_argument("--log-every", type=int, default=200)

    p = sub.add_parser("train-layout-prior",
                       help="train the unconditional layout prior")
    _add_common(p)
    p.add_argument("--codes", required=True, help="extracted code corpus (.npz)")
    p.add_argument("--log-every", type=int, default=200)

    p = sub.add_parser("sample", help="generate annotated images")
    _add_common(p)
    p.add_argument("--vqvae", required=True, help="autoencoder checkpoint")
    p.add_argument("--prior", required=True, help="latent prior checkpoint")
    p.add_argument("--layout-prior", default=None,
                   help="layout prior checkpoint (required for full mode)")
    p.add_argument("--mode", choices=["full", "layout-given", "unconditional"],
                   default="full")
    p.add_argument("--layouts", default=None,
                   help="dataset directory providing layouts (layout-given mode)")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--temperature", type=float, default=1.0)

    p = sub.add_parser("eval", help="run the F1/diversity evaluation protocol")
    _add_common(p)
    p.add_argument("--data", required=True,
                   help="real dataset directory (train/val splits)")
    p.add_argument("--generated", required=True,
                   help="generated dataset directory")
    p.add_argument("--seg-steps", type=int, default=400)
    p.add_argument("--protocol-seeds", type=int, default=3,
                   help="number of segmenter seeds")

    p = sub.add_parser("verify", help="run the property suite")
    _add_common(p)

    return parser


def _cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    if args.n is not None:
        cfg.data.num_scenes = args.n
    if args.constraint:
        cfg.data.constraint_mode = True
    if not args.out:
        raise ConfigError("gen-data requires --out")
    dataset = shapeworld.build_dataset(cfg.data, seed=cfg.seed)
    shapeworld.save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} scenes to {args.out}")
    return 0


def _cmd_train_vqvae(args) -> int:
    cfg = _load_config(args)
    dataset = shapeworld.load_dataset(_require_dir(args.data, "dataset"))
    result = trainer.train_vqvae(cfg, dataset, log_every=args.log_every)
    out_dir = args.out or "."
    path = trainer.save_checkpoint(result, out_dir, "vqvae.msgf")
    print(f"saved {path}")
    return 0


def _cmd_extract_codes(args) -> int:
    ckpt = _load_checkpoint(args.vqvae)
    dataset = shapeworld.load_dataset(_require_dir(args.data, "dataset"))
    corpus = trainer.extract_codes(ckpt, dataset)
    out = args.out or "codes.npz"
    corpus.save(out)
    print(f"saved {len(corpus)} code grids to {out}")
    return 0


def _cmd_train_prior(args) -> int:
    cfg = _load_config(args)
    if not os.path.exists(args.codes):
        raise PrerequisiteError(f"code corpus not found: {args.codes}")
    corpus = trainer.CodeCorpus.load(args.codes)
    result = trainer.train_latent_prior(cfg, corpus, log_every=args.log_every)
    path = trainer.save_checkpoint(result, args.out or ".", "latent_prior.msgf")
    print(f"saved {path}")
    return 0


def _cmd_train_layout_prior(args) -> int:
    cfg = _load_config(args)
    if not os.path.exists(args.codes):
        raise PrerequisiteError(f"code corpus not found: {args.codes}")
    corpus = trainer.CodeCorpus.load(args.codes)
    result = trainer.train_layout_prior(cfg, corpus.layouts,
                                        log_every=args.log_every)
    path = trainer.save_checkpoint(result, args.out or ".", "layout_prior.msgf")
    print(f"saved {path}")
    return 0


def _cmd_sample(args) -> int:
    vq = _load_checkpoint(args.vqvae)
    prior = _load_checkpoint(args.prior)
    layout_prior = _load_checkpoint(args.layout_prior) if args.layout_prior else None
    pipeline = sampler.GenerationPipeline(vq, prior, layout_prior)
    mode = args.mode.replace("-", "_")
    layouts = None
    if mode == "layout_given":
        source = shapeworld.load_dataset(_require_dir(args.layouts, "layouts"))
        if len(source) < args.n:
            raise PrerequisiteError(
                f"need {args.n} layouts, directory holds {len(source)}")
        layouts = source.layouts[: args.n]
    pairs = pipeline.generate(args.n, seed=args.seed or 0, mode=mode,
                              layouts=layouts, temperature=args.temperature)
    if not args.out:
        raise ConfigError("sample requires --out")
    sampler.save_generated(pairs, args.out)
    print(f"wrote {len(pairs)} generated pairs to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    real = shapeworld.load_dataset(_require_dir(args.data, "dataset"))
    generated = shapeworld.load_dataset(_require_dir(args.generated, "generated"))
    train_idx, val_idx = real.indices("train"), real.indices("val")
    if len(val_idx) == 0:
        raise PrerequisiteError("real dataset has no val split")
    seg_cfg = evalkit.SegConfig(steps=args.seg_steps)
    seeds = tuple(range(args.protocol_seeds))
    result = evalkit.f1_protocol(real.subset(train_idx), generated,
                                 real.subset(val_idx), seg_cfg, seeds=seeds)
    divergence = evalkit.layout_divergence(generated.layouts, real.layouts)
    vrate = evalkit.violation_rate(generated.layouts)
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    extra = {"violation_rate": vrate, "class_js": divergence.class_js,
             "count_js": divergence.count_js}
    evalkit.write_report(result, os.path.join(out_dir, "report.csv"),
                         os.path.join(out_dir, "report.txt"), extra)
    with open(os.path.join(out_dir, "report.txt"), encoding="utf-8") as fh:
        print(fh.read(), end="")
    return 0


def _cmd_verify(args) -> int:
    results = verify.run_all(seed=args.seed or 0)
    lines = []
    for check in results:
        status = "PASS" if check.passed else "FAIL"
        line = f"{status}  {check.name}: {check.detail}"
        lines.append(line)
        print(line)
    if args.out:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0 if all(c.passed for c in results) else 1


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-vqvae": _cmd_train_vqvae,
    "extract-codes": _cmd_extract_codes,
    "train-prior": _cmd_train_prior,
    "train-layout-prior": _cmd_train_layout_prior,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        import torch
        torch.set_num_threads(args.threads)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PrerequisiteError as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
