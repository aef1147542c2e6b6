"""Three-phase training: autoencoder first, then the two priors over its codes.

All randomness inside a phase (batch selection, dropout, init, code revival)
flows through the global torch RNG, whose state is captured in every
checkpoint; resuming therefore continues the exact RNG stream, and a split
run reproduces an unsplit one bit for bit. Prior phases checkpoint at epoch
boundaries, the autoencoder at any step.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from torch.nn import functional as F

from .backbone import TwinVQVAE
from .checkpoint import (Checkpoint, capture_rng, pack_adam, pack_module,
                         restore_rng, unpack_adam, unpack_module)
from .config import ModelConfig, OptimizerConfig, format_config, parse_config_text
from .errors import PrerequisiteError
from .priors import AutoregressivePrior
from .quantizer import straight_through
from .sampler import concat_codes
from .shapeworld import SceneDataset, downsample_layout

PHASE_VQVAE = "vqvae"
PHASE_LATENT_PRIOR = "latent_prior"
PHASE_LAYOUT_PRIOR = "layout_prior"

# Dead-entry revival: entries with zero assignments across a whole revival
# window are re-seeded from live encoder outputs. Revivals stop near the end
# of the run so the final codebooks train undisturbed.
_REVIVAL_CUTOFF = 0.85


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: dict[str, list[float]] = field(default_factory=dict)


def schedule_lr(opt: OptimizerConfig, step: int, total_steps: int) -> float:
    """Learning rate for one step: linear decay to 0, or a triangular cycle
    between learning_rate/10 and learning_rate with period `cycle_steps`."""
    if opt.scheduler == "linear":
        return opt.learning_rate * max(0.0, 1.0 - step / max(total_steps, 1))
    period = opt.cycle_steps
    half = period / 2.0
    pos = step % period
    frac = pos / half if pos <= half else (period - pos) / half
    low = opt.learning_rate / 10.0
    return low + (opt.learning_rate - low) * frac


def compose_vq_loss(reconstruction: torch.Tensor, codebook: torch.Tensor,
                    commitment: torch.Tensor, beta: float) -> torch.Tensor:
    """Three-part objective: L_rec + L_cb + beta * L_c."""
    return reconstruction + codebook + beta * commitment


def build_vqvae(cfg: ModelConfig) -> TwinVQVAE:
    return TwinVQVAE(cfg.backbone, cfg.quantizer.codebook_num,
                     cfg.quantizer.codebook_size)


def build_latent_prior(cfg: ModelConfig) -> AutoregressivePrior:
    return AutoregressivePrior(cfg.latent_prior)


def build_layout_prior(cfg: ModelConfig) -> AutoregressivePrior:
    return AutoregressivePrior(cfg.layout_prior)


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _guard_finite(loss: torch.Tensor, step: int, phase: str) -> None:
    if not torch.isfinite(loss):
        raise RuntimeError(f"{phase} diverged at step {step}: loss={loss.item()}")


def _check_resume(resume: Checkpoint, cfg: ModelConfig, phase: str) -> None:
    if resume.phase != phase:
        raise PrerequisiteError(
            f"resume checkpoint is phase {resume.phase!r}, expected {phase!r}")
    if resume.config_text != format_config(cfg):
        raise PrerequisiteError("resume checkpoint was built from a different config")


def train_vqvae(cfg: ModelConfig, dataset: SceneDataset,
                resume: Checkpoint | None = None,
                stop_after: int | None = None,
                log_every: int = 0) -> TrainResult:
    """Train the twin-codebook autoencoder with the three-part loss.

    Logs every component per step. `stop_after` checkpoints mid-run at the
    given global step; pass the resulting checkpoint back via `resume` to
    continue the identical run.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    images = torch.from_numpy(dataset.images)
    n = images.shape[0]
    beta = cfg.quantizer.commitment
    total = cfg.vqvae_opt.iterations
    k = cfg.quantizer.codebook_num

    if resume is not None:
        _check_resume(resume, cfg, PHASE_VQVAE)
        model = build_vqvae(cfg)
        optimizer = torch.optim.Adam(model.parameters(),
                                     lr=cfg.vqvae_opt.learning_rate)
        named = list(model.named_parameters())
        unpack_module("model", model, resume.tensors)
        unpack_adam("optim", optimizer, named, resume.tensors)
        usage_window = [resume.tensors["trainstate.usage_window1"].clone(),
                        resume.tensors["trainstate.usage_window2"].clone()]
        restore_rng(resume.rng_state)
        start = resume.iteration
    else:
        torch.manual_seed(cfg.seed)
        model = build_vqvae(cfg)
        optimizer = torch.optim.Adam(model.parameters(),
                                     lr=cfg.vqvae_opt.learning_rate)
        named = list(model.named_parameters())
        usage_window = [torch.zeros(k, dtype=torch.int64),
                        torch.zeros(k, dtype=torch.int64)]
        start = 0

    end = total if stop_after is None else min(stop_after, total)
    history: dict[str, list[float]] = {key: [] for key in
                                       ("step", "lr", "reconstruction",
                                        "codebook", "commitment", "total")}
    model.train()
    for step in range(start, end):
        lr = schedule_lr(cfg.vqvae_opt, step, total)
        _set_lr(optimizer, lr)
        idx = torch.randint(0, n, (cfg.vqvae_opt.batch_size,))
        batch = images[idx]
        out = model(batch)
        rec = F.mse_loss(out.reconstruction, batch)
        cb = out.result1.codebook_loss + out.result2.codebook_loss
        commit = out.result1.commitment_loss + out.result2.commitment_loss
        loss = compose_vq_loss(rec, cb, commit, beta)
        _guard_finite(loss, step, PHASE_VQVAE)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        with torch.no_grad():
            pair = (out.result1.indices, out.result2.indices)
            for path, indices in enumerate(pair):
                usage_window[path] += torch.bincount(indices.reshape(-1),
                                                     minlength=k)
            interval = cfg.codebook_restart_interval
            if interval > 0 and (step + 1) % interval == 0 \
                    and step + 1 < _REVIVAL_CUTOFF * total:
                _revive_dead_codes(model, optimizer, usage_window, batch,
                                   cfg.codebook_restart_threshold)

        history["step"].append(float(step))
        history["lr"].append(lr)
        history["reconstruction"].append(rec.detach().item())
        history["codebook"].append(cb.detach().item())
        history["commitment"].append(commit.detach().item())
        history["total"].append(loss.detach().item())
        if log_every and (step + 1) % log_every == 0:
            print(f"[{PHASE_VQVAE}] step {step + 1}/{total} "
                  f"rec={history['reconstruction'][-1]:.5f} "
                  f"cb={history['codebook'][-1]:.4f} "
                  f"commit={history['commitment'][-1]:.4f}", flush=True)

    tensors: dict[str, torch.Tensor] = {}
    pack_module("model", model, tensors)
    pack_adam("optim", optimizer, named, tensors)
    tensors["trainstate.usage_window1"] = usage_window[0]
    tensors["trainstate.usage_window2"] = usage_window[1]
    ckpt = Checkpoint(phase=PHASE_VQVAE, iteration=end,
                      config_text=format_config(cfg),
                      rng_state=capture_rng(), tensors=tensors)
    return TrainResult(checkpoint=ckpt, history=history)


def _revive_dead_codes(model: TwinVQVAE, optimizer: torch.optim.Adam,
                       usage_window: list[torch.Tensor],
                       batch: torch.Tensor, threshold: float) -> None:
    """Re-seed codebook entries that fell below a share of uniform usage.

    Replacement vectors are current encoder outputs drawn at random plus a
    small jitter; random draws land in heavy clusters proportionally to
    their mass, so over-used codes get split and usage spreads out. Adam
    moments for revived rows reset to zero; window counters restart.
    """
    pair = model.encode(batch)
    for path, (encodings, codebook) in enumerate(
            [(pair.path1, model.codebook1), (pair.path2, model.codebook2)]):
        window = usage_window[path]
        floor = threshold * window.sum() / codebook.num_entries
        dead = ((window == 0) | (window.double() < floor)).nonzero(
            as_tuple=True)[0]
        window.zero_()
        if dead.numel() == 0:
            continue
        flat = encodings.movedim(1, -1).reshape(-1, codebook.dim)
        pick = torch.randint(0, flat.shape[0], (dead.numel(),))
        jitter = 0.01 * torch.randn(dead.numel(), codebook.dim)
        codebook.entries.data[dead] = flat[pick].detach() + jitter
        state = optimizer.state.get(codebook.entries)
        if state:
            state["exp_avg"][dead] = 0.0
            state["exp_avg_sq"][dead] = 0.0


@dataclass
class CodeCorpus:
    """Paired training corpus for the latent prior.

    codes:   (N, 2H, W) int64, path-1 grid stacked above path-2.
    layouts: (N, H, W) int64 class maps at latent resolution.
    """

    codes: np.ndarray
    layouts: np.ndarray

    def __len__(self) -> int:
        return self.codes.shape[0]

    def save(self, path: str) -> None:
        np.savez_compressed(path, codes=self.codes, layouts=self.layouts)

    @classmethod
    def load(cls, path: str) -> "CodeCorpus":
        data = np.load(path)
        return cls(codes=data["codes"].astype(np.int64),
                   layouts=data["layouts"].astype(np.int64))


def extract_codes(ckpt: Checkpoint, dataset: SceneDataset,
                  batch_size: int = 64) -> CodeCorpus:
    """Encode every scene to its concatenated code grid plus latent layout."""
    if ckpt.phase != PHASE_VQVAE:
        raise PrerequisiteError(
            f"extract_codes needs a {PHASE_VQVAE!r} checkpoint, got {ckpt.phase!r}")
    cfg = parse_config_text(ckpt.config_text)
    model = build_vqvae(cfg)
    unpack_module("model", model, ckpt.tensors)
    model.eval()

    images = torch.from_numpy(dataset.images)
    chunks = []
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            pair = model.encode(images[lo:lo + batch_size])
            r1, r2 = model.quantize_pair(pair)
            chunks.append(concat_codes(r1.indices, r2.indices).numpy())
    codes = np.concatenate(chunks, axis=0).astype(np.int64)
    layouts = downsample_layout(dataset.layouts,
                                cfg.backbone.downsample_factor)
    return CodeCorpus(codes=codes, layouts=layouts)


def _train_prior_phase(cfg: ModelConfig, phase: str,
                       tokens: np.ndarray, conditions: np.ndarray | None,
                       resume: Checkpoint | None,
                       stop_after_epochs: int | None,
                       log_every: int = 0) -> TrainResult:
    opt_cfg = cfg.prior_opt if phase == PHASE_LATENT_PRIOR else cfg.layout_opt
    build = build_latent_prior if phase == PHASE_LATENT_PRIOR else build_layout_prior
    n = tokens.shape[0]
    if n == 0:
        raise ValueError("empty training corpus")
    steps_per_epoch = math.ceil(n / opt_cfg.batch_size)
    total_steps = opt_cfg.epochs * steps_per_epoch

    tokens_t = torch.from_numpy(tokens).long()
    cond_t = None if conditions is None else torch.from_numpy(conditions).long()

    if resume is not None:
        _check_resume(resume, cfg, phase)
        model = build(cfg)
        optimizer = torch.optim.Adam(model.parameters(), lr=opt_cfg.learning_rate)
        named = list(model.named_parameters())
        unpack_module("model", model, resume.tensors)
        unpack_adam("optim", optimizer, named, resume.tensors)
        restore_rng(resume.rng_state)
        start_epoch = resume.iteration // steps_per_epoch
    else:
        torch.manual_seed(cfg.seed + (1 if phase == PHASE_LATENT_PRIOR else 2))
        model = build(cfg)
        optimizer = torch.optim.Adam(model.parameters(), lr=opt_cfg.learning_rate)
        named = list(model.named_parameters())
        start_epoch = 0

    end_epoch = opt_cfg.epochs if stop_after_epochs is None else min(
        stop_after_epochs, opt_cfg.epochs)
    history: dict[str, list[float]] = {"step": [], "lr": [], "nll": []}
    model.train()
    step = start_epoch * steps_per_epoch
    for _ in range(start_epoch, end_epoch):
        order = torch.randperm(n)
        for lo in range(0, n, opt_cfg.batch_size):
            idx = order[lo:lo + opt_cfg.batch_size]
            lr = schedule_lr(opt_cfg, step, total_steps)
            _set_lr(optimizer, lr)
            nll = model.nll(tokens_t[idx],
                            None if cond_t is None else cond_t[idx])
            _guard_finite(nll, step, phase)
            optimizer.zero_grad()
            nll.backward()
            optimizer.step()
            history["step"].append(float(step))
            history["lr"].append(lr)
            history["nll"].append(nll.detach().item())
            step += 1
            if log_every and step % log_every == 0:
                print(f"[{phase}] step {step}/{total_steps} "
                      f"nll={history['nll'][-1]:.4f}", flush=True)

    tensors: dict[str, torch.Tensor] = {}
    pack_module("model", model, tensors)
    pack_adam("optim", optimizer, named, tensors)
    ckpt = Checkpoint(phase=phase, iteration=step,
                      config_text=format_config(cfg),
                      rng_state=capture_rng(), tensors=tensors)
    return TrainResult(checkpoint=ckpt, history=history)


def train_latent_prior(cfg: ModelConfig, corpus: CodeCorpus,
                       resume: Checkpoint | None = None,
                       stop_after_epochs: int | None = None,
                       log_every: int = 0) -> TrainResult:
    """Fit the conditional prior over concatenated code grids."""
    cfg.validate()
    if corpus.codes.max() >= cfg.latent_prior.vocab_size:
        raise ValueError("code corpus exceeds the prior vocabulary")
    if corpus.codes.shape[1:] != (cfg.latent_prior.grid_height,
                                  cfg.latent_prior.grid_width):
        raise ValueError("code corpus grid does not match the prior config")
    return _train_prior_phase(cfg, PHASE_LATENT_PRIOR, corpus.codes,
                              corpus.layouts, resume, stop_after_epochs,
                              log_every)


def train_layout_prior(cfg: ModelConfig, layouts: np.ndarray,
                       resume: Checkpoint | None = None,
                       stop_after_epochs: int | None = None,
                       log_every: int = 0) -> TrainResult:
    """Fit the unconditional prior over latent-resolution layout grids."""
    cfg.validate()
    if layouts.max() >= cfg.layout_prior.vocab_size:
        raise ValueError("layout corpus exceeds the prior vocabulary")
    return _train_prior_phase(cfg, PHASE_LAYOUT_PRIOR, layouts, None,
                              resume, stop_after_epochs, log_every)


def write_history_csv(history: dict[str, list[float]], path: str) -> None:
    keys = list(history)
    rows = zip(*(history[key] for key in keys))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(f"{value:.8g}" for value in row) + "\n")


def save_checkpoint(result: TrainResult, out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    result.checkpoint.save(path)
    write_history_csv(result.history, path + ".history.csv")
    return path
