"""Causal autoregressive priors over integer grids.

One model class serves both priors of the pipeline: the large one over
concatenated code grids (conditioned on a layout map) and the small
unconditional one over layout grids. The joint distribution factors into
raster-order conditionals; masked convolutions supply local context and
causally masked attention supplies the full past. Position (i, j) must never
see the token at or after itself -- the tests enforce this bitwise.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .config import PriorConfig


class CausalConv2d(nn.Conv2d):
    """Convolution masked to the strict raster-order past.

    With ``include_center`` the kernel center stays live; that is only safe
    on features that are already causal (everything after the input layer).
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 include_center: bool):
        super().__init__(in_channels, out_channels, kernel_size,
                         padding=kernel_size // 2)
        kh, kw = self.kernel_size
        mask = torch.zeros(1, 1, kh, kw)
        mask[:, :, : kh // 2, :] = 1.0
        mask[:, :, kh // 2, : kw // 2] = 1.0
        if include_center:
            mask[:, :, kh // 2, kw // 2] = 1.0
        self.register_buffer("mask", mask, persistent=False)

    def forward(self, x):
        return self._conv_forward(x, self.weight * self.mask, self.bias)


class CausalAttention(nn.Module):
    """Multi-head attention where position i attends to positions j <= i.

    Inclusive masking is sound here because the attended features are causal
    (they carry no information about their own token). Masked weights are
    exactly zero, which the bitwise causality contract relies on.
    """

    def __init__(self, channels: int, attention_dim: int, heads: int,
                 dropout: float, positions: int):
        super().__init__()
        self.heads = heads
        self.head_dim = attention_dim // heads
        self.query = nn.Conv2d(channels, attention_dim, 1)
        self.key = nn.Conv2d(channels, attention_dim, 1)
        self.value = nn.Conv2d(channels, attention_dim, 1)
        self.proj = nn.Conv2d(attention_dim, channels, 1)
        self.drop = nn.Dropout(dropout)
        bias = torch.full((positions, positions), float("-inf"))
        bias = torch.triu(bias, diagonal=1)
        self.register_buffer("causal_bias", bias, persistent=False)

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        b, _, h, w = x.shape
        scale = self.head_dim ** -0.5
        q = self.query(x).reshape(b, self.heads, self.head_dim, h * w) * scale
        k = self.key(x).reshape(b, self.heads, self.head_dim, h * w)
        scores = torch.einsum("bhdi,bhdj->bhij", q, k)
        scores = scores + self.causal_bias[: h * w, : h * w]
        return torch.softmax(scores, dim=-1)

    def forward(self, x):
        b, _, h, w = x.shape
        weights = self.attention_weights(x)
        v = self.value(x).reshape(b, self.heads, self.head_dim, h * w)
        mixed = torch.einsum("bhij,bhdj->bhdi", weights, v)
        mixed = mixed.reshape(b, self.heads * self.head_dim, h, w)
        return x + self.drop(self.proj(mixed))


class CausalResidualBlock(nn.Module):
    def __init__(self, channels: int, residual_dim: int, dropout: float):
        super().__init__()
        self.conv1 = CausalConv2d(channels, residual_dim, 3, include_center=True)
        self.conv2 = CausalConv2d(residual_dim, channels, 3, include_center=True)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        out = self.conv1(F.elu(x))
        out = self.conv2(self.drop(F.elu(out)))
        return x + out


class _PlainResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        return x + self.conv2(F.elu(self.conv1(F.elu(x))))


class ConditionEncoder(nn.Module):
    """Embeds a class-index map and lifts it to the trunk width.

    The map is fully known before generation starts, so this path is free of
    causal masking. Index ``num_classes`` is a learned null class used when
    a conditional model is run unconditionally.
    """

    def __init__(self, num_classes: int, embedding_dim: int, residual_dim: int,
                 residual_blocks: int, out_channels: int):
        super().__init__()
        self.num_classes = num_classes
        self.embed = nn.Embedding(num_classes + 1, embedding_dim)
        width = residual_dim if residual_blocks > 0 else embedding_dim
        self.inp = nn.Conv2d(embedding_dim, width, 1)
        self.blocks = nn.Sequential(
            *[_PlainResidualBlock(width) for _ in range(residual_blocks)])
        self.out = nn.Conv2d(width, out_channels, 1)

    @property
    def null_index(self) -> int:
        return self.num_classes

    def forward(self, condition: torch.Tensor) -> torch.Tensor:
        emb = self.embed(condition).movedim(-1, 1)
        return self.out(self.blocks(self.inp(emb)))


class AutoregressivePrior(nn.Module):
    """Raster-order categorical model over a fixed-size integer grid."""

    def __init__(self, cfg: PriorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        h, w, v = cfg.grid_height, cfg.grid_width, cfg.vocab_size
        # Per-position token embedding, then a center-masked conv: position p
        # never sees its own embedding, so causality is preserved while the
        # expensive first conv runs on far fewer channels than one-hot.
        self.token_embed = nn.Embedding(v, min(64, v))
        self.input_conv = CausalConv2d(min(64, v), cfg.hidden_dim, 5,
                                       include_center=False)
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.hidden_dim, h, w))
        self.blocks = nn.ModuleList(
            CausalResidualBlock(cfg.hidden_dim, cfg.residual_dim, cfg.dropout)
            for _ in range(cfg.residual_blocks))
        self.attentions = nn.ModuleList(
            CausalAttention(cfg.hidden_dim, cfg.attention_dim,
                            cfg.attention_heads, cfg.dropout, positions=h * w)
            for _ in range(cfg.residual_blocks))
        if cfg.condition_classes > 0:
            self.condition_net = ConditionEncoder(
                cfg.condition_classes, cfg.condition_embedding_dim,
                cfg.conditional_residual_dim, cfg.conditional_residual_blocks,
                cfg.hidden_dim)
        else:
            self.condition_net = None
        self.head_conv = nn.Conv2d(cfg.hidden_dim, cfg.hidden_dim, 1)
        self.head_out = nn.Conv2d(cfg.hidden_dim, v, 1)
        # Zero head: a fresh model is exactly uniform over the vocabulary.
        nn.init.zeros_(self.head_out.weight)
        nn.init.zeros_(self.head_out.bias)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.cfg.grid_height, self.cfg.grid_width

    def _check_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.dim() == 2:
            tokens = tokens.unsqueeze(0)
        if tokens.shape[-2:] != self.grid_shape:
            raise ValueError(
                f"token grid {tuple(tokens.shape[-2:])} != {self.grid_shape}")
        if tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size:
            raise ValueError("token outside vocabulary range")
        return tokens.long()

    def _prepare_condition(self, condition, batch: int) -> torch.Tensor | None:
        if self.condition_net is None:
            if condition is not None:
                raise ValueError("this prior is unconditional")
            return None
        h, w = self.grid_shape
        if condition is None:
            return torch.full((batch, h, w), self.condition_net.null_index,
                              dtype=torch.long)
        if not torch.is_tensor(condition):
            condition = torch.as_tensor(condition)
        condition = condition.long()
        if condition.dim() == 2:
            condition = condition.unsqueeze(0)
        if condition.shape[0] == 1 and batch > 1:
            condition = condition.expand(batch, -1, -1)
        if condition.shape[0] != batch:
            raise ValueError("condition batch size mismatch")
        ch, cw = condition.shape[-2:]
        if (ch, cw) == (h, w):
            pass
        elif (2 * ch, cw) == (h, w):
            condition = torch.cat([condition, condition], dim=1)
        else:
            raise ValueError(
                f"condition grid {ch}x{cw} incompatible with tokens {h}x{w}")
        if condition.min() < 0 or condition.max() >= self.condition_net.num_classes:
            raise ValueError("condition class outside range")
        return condition

    def forward(self, tokens: torch.Tensor, condition=None) -> torch.Tensor:
        """Per-position logits over the vocab, causal in raster order.

        Accepts (B, H, W) or a single (H, W) grid; the result has the same
        leading shape with a trailing vocab axis.
        """
        unbatched = tokens.dim() == 2
        tokens = self._check_tokens(tokens)
        condition = self._prepare_condition(condition, tokens.shape[0])
        x = self.token_embed(tokens).movedim(-1, 1)
        h = self.input_conv(x) + self.pos_embed
        if condition is not None:
            h = h + self.condition_net(condition)
        for block, attention in zip(self.blocks, self.attentions):
            h = attention(block(h))
        h = self.head_out(F.elu(self.head_conv(F.elu(h))))
        logits = h.movedim(1, -1)
        return logits.squeeze(0) if unbatched else logits

    def logits(self, tokens, condition=None) -> torch.Tensor:
        return self.forward(tokens, condition)

    def nll(self, tokens: torch.Tensor, condition=None) -> torch.Tensor:
        """Mean cross-entropy per position (nats)."""
        tokens = self._check_tokens(tokens)
        logits = self.forward(tokens, condition)
        return F.cross_entropy(logits.reshape(-1, self.cfg.vocab_size),
                               tokens.reshape(-1))

    @torch.no_grad()
    def sample(self, n: int, condition=None, temperature: float = 1.0,
               seed: int = 0) -> torch.Tensor:
        """Ancestral raster-order sampling of n grids, deterministic per seed.

        Each position is drawn from softmax(logits / temperature). Dropout is
        always disabled while sampling.
        """
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        was_training = self.training
        self.eval()
        try:
            height, width = self.grid_shape
            generator = torch.Generator().manual_seed(seed)
            tokens = torch.zeros(n, height, width, dtype=torch.long)
            for i in range(height):
                for j in range(width):
                    logits = self.forward(tokens, condition)[:, i, j, :]
                    probs = torch.softmax(logits / temperature, dim=-1)
                    tokens[:, i, j] = torch.multinomial(
                        probs, 1, generator=generator).squeeze(1)
            return tokens
        finally:
            self.train(was_training)
