"""Self-contained property suite: the hard contracts, checked in minutes.

Covers nearest-prototype correctness against a brute-force scan, the
straight-through gradient identity, bitwise raster causality of the priors,
softmax normalization, and the concat/split and save/load round trips.
Exposed both as a library call and as the `verify` CLI command.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np
import torch

from . import trainer
from .backbone import SelfAttention2d
from .checkpoint import Checkpoint
from .config import PriorConfig, tiny_config
from .priors import AutoregressivePrior
from .quantizer import Codebook, quantize, straight_through
from .sampler import concat_codes, split_code


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _causality_prior(seed: int) -> AutoregressivePrior:
    torch.manual_seed(seed)
    cfg = PriorConfig(grid_height=8, grid_width=8, vocab_size=8,
                      hidden_dim=32, residual_dim=16, residual_blocks=2,
                      attention_dim=16, attention_heads=2, dropout=0.1)
    model = AutoregressivePrior(cfg)
    # Random head: a zero head would hide leaks behind constant logits.
    torch.nn.init.normal_(model.head_out.weight, std=0.1)
    torch.nn.init.normal_(model.head_out.bias, std=0.1)
    model.eval()
    return model


def check_quantizer_bruteforce(n_instances: int = 1000, seed: int = 0) -> CheckResult:
    """Indices must match an exhaustive float64 distance scan exactly."""
    rng = np.random.default_rng(seed)
    for trial in range(n_instances):
        k = int(rng.integers(2, 17))
        d = int(rng.integers(1, 9))
        h, w = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        entries = torch.from_numpy(rng.standard_normal((k, d)))
        encodings = torch.from_numpy(rng.standard_normal((h, w, d)))
        with torch.no_grad():
            result = quantize(encodings, Codebook.from_entries(entries))

        flat = encodings.reshape(-1, d).numpy()
        diffs = flat[:, None, :] - entries.numpy()[None, :, :]
        dist = (diffs ** 2).sum(axis=2)
        expected = dist.argmin(axis=1).reshape(h, w)
        if not np.array_equal(result.indices.numpy(), expected):
            return CheckResult("quantizer_bruteforce", False,
                               f"index mismatch at instance {trial}")
        exp_cb = dist.min(axis=1).mean()
        for name, got in (("codebook", result.codebook_loss),
                          ("commitment", result.commitment_loss)):
            if abs(float(got) - exp_cb) > 1e-9 * max(1.0, exp_cb):
                return CheckResult("quantizer_bruteforce", False,
                                   f"{name} loss mismatch at instance {trial}")
    return CheckResult("quantizer_bruteforce", True,
                       f"{n_instances} random instances, exact")


def check_straight_through(seed: int = 0) -> CheckResult:
    """d(loss)/d(encodings) must equal d(loss)/d(straight-through output)."""
    torch.manual_seed(seed)
    book = Codebook(8, 4).double()
    encodings = torch.randn(5, 5, 4, dtype=torch.float64, requires_grad=True)
    mix = torch.randn(4, 6, dtype=torch.float64)
    target = torch.randn(5, 5, 6, dtype=torch.float64)

    result = quantize(encodings, book)
    out = straight_through(encodings, result.quantized)
    if not torch.equal(out, result.quantized):
        return CheckResult("straight_through", False,
                           "forward output differs from quantized tensor")
    loss = ((out @ mix - target) ** 2).sum()
    (grad_enc,) = torch.autograd.grad(loss, encodings)

    leaf = result.quantized.detach().clone().requires_grad_(True)
    loss2 = ((leaf @ mix - target) ** 2).sum()
    (grad_out,) = torch.autograd.grad(loss2, leaf)
    if not torch.equal(grad_enc, grad_out):
        return CheckResult("straight_through", False, "gradient copy not exact")

    if torch.autograd.grad(
            ((straight_through(encodings.detach(), result.quantized)) ** 2).sum(),
            book.entries, allow_unused=True)[0] is not None:
        return CheckResult("straight_through", False,
                           "codebook received gradient through the estimator")
    return CheckResult("straight_through", True, "exact elementwise identity")


def check_causality(n_trials: int = 1000, seed: int = 0,
                    batch: int = 100) -> CheckResult:
    """Perturbing token p must leave logits at raster positions <= p bitwise
    unchanged (dropout disabled)."""
    model = _causality_prior(seed)
    rng = np.random.default_rng(seed)
    h, w, v = 8, 8, 8
    done = 0
    with torch.no_grad():
        while done < n_trials:
            b = min(batch, n_trials - done)
            tokens = torch.from_numpy(rng.integers(0, v, size=(b, h, w)))
            positions = rng.integers(0, h * w, size=b)
            perturbed = tokens.clone()
            for row in range(b):
                p = int(positions[row])
                old = int(perturbed[row, p // w, p % w])
                perturbed[row, p // w, p % w] = (old + 1 + int(rng.integers(0, v - 1))) % v
            base = model(tokens).reshape(b, h * w, v)
            other = model(perturbed).reshape(b, h * w, v)
            for row in range(b):
                p = int(positions[row])
                if not torch.equal(base[row, : p + 1], other[row, : p + 1]):
                    return CheckResult(
                        "prior_causality", False,
                        f"logit change at or before perturbed position {p}")
            done += b
    return CheckResult("prior_causality", True,
                       f"{n_trials} perturbation trials, zero violations")


def check_softmax_normalization(seed: int = 0, tol: float = 1e-6) -> CheckResult:
    """Attention weight rows and next-token distributions sum to 1."""
    model = _causality_prior(seed)
    torch.manual_seed(seed)
    tokens = torch.randint(0, 8, (3, 8, 8))
    with torch.no_grad():
        probs = torch.softmax(model(tokens), dim=-1)
        worst = float((probs.sum(dim=-1) - 1.0).abs().max())
        x = torch.randn(2, 32, 8, 8)
        for attention in model.attentions:
            rows = attention.attention_weights(x).sum(dim=-1)
            worst = max(worst, float((rows - 1.0).abs().max()))
        sa = SelfAttention2d(16, 8, heads=2)
        rows = sa.attention_weights(torch.randn(2, 16, 6, 6)).sum(dim=-1)
        worst = max(worst, float((rows - 1.0).abs().max()))
    passed = worst <= tol
    return CheckResult("softmax_normalization", passed,
                       f"max |row sum - 1| = {worst:.2e}")


def check_code_roundtrip(seed: int = 0, n_trials: int = 200) -> CheckResult:
    """split(concat(a, b)) == (a, b) exactly, random grids."""
    rng = np.random.default_rng(seed)
    for _ in range(n_trials):
        h, w = int(rng.integers(1, 12)), int(rng.integers(1, 12))
        a = torch.from_numpy(rng.integers(0, 256, size=(h, w)))
        b = torch.from_numpy(rng.integers(0, 256, size=(h, w)))
        ra, rb = split_code(concat_codes(a, b))
        if not (torch.equal(a, ra) and torch.equal(b, rb)):
            return CheckResult("concat_split_roundtrip", False, "mismatch")
    return CheckResult("concat_split_roundtrip", True,
                       f"{n_trials} random grids, exact")


def check_checkpoint_roundtrip(seed: int = 0) -> CheckResult:
    """Save + load must reproduce forward outputs bit for bit."""
    cfg = tiny_config(seed=seed)
    torch.manual_seed(seed)
    model = trainer.build_vqvae(cfg)
    probe = torch.randn(2, 3, cfg.backbone.image_size, cfg.backbone.image_size)
    model.eval()
    with torch.no_grad():
        before = model(probe).reconstruction

    tensors: dict[str, torch.Tensor] = {}
    from .checkpoint import capture_rng, pack_module, unpack_module
    pack_module("model", model, tensors)
    ckpt = Checkpoint(phase="vqvae", iteration=0, config_text="probe",
                      rng_state=capture_rng(), tensors=tensors)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "probe.msgf")
        ckpt.save(path)
        loaded = Checkpoint.load(path)
    clone = trainer.build_vqvae(cfg)
    unpack_module("model", clone, loaded.tensors)
    clone.eval()
    with torch.no_grad():
        after = clone(probe).reconstruction
    if not torch.equal(before, after):
        return CheckResult("checkpoint_roundtrip", False,
                           "probe forward differs after reload")
    if loaded.phase != ckpt.phase or loaded.rng_state != ckpt.rng_state:
        return CheckResult("checkpoint_roundtrip", False, "metadata mismatch")
    return CheckResult("checkpoint_roundtrip", True, "bitwise probe equality")


def run_all(seed: int = 0, causality_trials: int = 1000,
            quantizer_instances: int = 1000) -> list[CheckResult]:
    return [
        check_quantizer_bruteforce(quantizer_instances, seed),
        check_straight_through(seed),
        check_causality(causality_trials, seed),
        check_softmax_normalization(seed),
        check_code_roundtrip(seed),
        check_checkpoint_roundtrip(seed),
    ]
