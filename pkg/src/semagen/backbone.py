"""Double-path convolutional autoencoder around two codebooks.

The encoder runs two parallel stacks over the same image: one augmented with
a self-attention block for long-range structure, one purely convolutional
for local texture. Each path feeds its own codebook, and the decoder fuses
the two quantized grids (channel concatenation, then transposed strided
convolutions) back into an image in [-1, 1].
"""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn
from torch.nn import functional as F

from .config import BackboneConfig
from .quantizer import Codebook, QuantizationResult, quantize, straight_through

# Self-attention is only worth its quadratic cost on small feature maps; the
# encoder inserts it at the first resolution below this bound.
MAX_ATTENTION_SIZE = 64


class SelfAttention2d(nn.Module):
    """Residual softmax attention over all spatial positions.

    The output is ``x + gamma * proj(attention(x))`` with ``gamma`` learned
    and initialized to zero, so a fresh block is the identity.
    """

    def __init__(self, channels: int, attention_dim: int, heads: int = 1):
        super().__init__()
        if attention_dim % heads != 0:
            raise ValueError("attention_dim must be divisible by heads")
        self.heads = heads
        self.head_dim = attention_dim // heads
        self.query = nn.Conv2d(channels, attention_dim, 1)
        self.key = nn.Conv2d(channels, attention_dim, 1)
        self.value = nn.Conv2d(channels, attention_dim, 1)
        self.proj = nn.Conv2d(attention_dim, channels, 1)
        self.gamma = nn.Parameter(torch.zeros(()))

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        """(B, heads, HW, HW) softmax weights; each row sums to 1."""
        b, _, h, w = x.shape
        if h >= MAX_ATTENTION_SIZE or w >= MAX_ATTENTION_SIZE:
            raise ValueError(
                f"attention restricted to feature grids below "
                f"{MAX_ATTENTION_SIZE}x{MAX_ATTENTION_SIZE}, got {h}x{w}"
            )
        scale = self.head_dim ** -0.5
        q = self.query(x).reshape(b, self.heads, self.head_dim, h * w) * scale
        k = self.key(x).reshape(b, self.heads, self.head_dim, h * w)
        scores = torch.einsum("bhdi,bhdj->bhij", q, k)
        return torch.softmax(scores, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, _, h, w = x.shape
        weights = self.attention_weights(x)
        v = self.value(x).reshape(b, self.heads, self.head_dim, h * w)
        mixed = torch.einsum("bhij,bhdj->bhdi", weights, v)
        mixed = mixed.reshape(b, self.heads * self.head_dim, h, w)
        return x + self.gamma * self.proj(mixed)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, residual_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, residual_dim, 3, padding=1)
        self.conv2 = nn.Conv2d(residual_dim, channels, 1)

    def forward(self, x):
        out = self.conv1(F.relu(x))
        out = self.conv2(F.relu(out))
        return x + out


class EncoderPath(nn.Module):
    """One encoder stack: strided convs to latent resolution, then residuals.

    When ``use_attention`` is set, a self-attention block is inserted right
    after the first strided convolution whose output grid is smaller than
    the attention size bound.
    """

    def __init__(self, cfg: BackboneConfig, code_dim: int, use_attention: bool):
        super().__init__()
        n_down = cfg.downsample_factor.bit_length() - 1
        widths = [cfg.hidden_dim >> (n_down - 1 - i) for i in range(n_down)]
        layers: list[nn.Module] = []
        in_ch = cfg.channels
        size = cfg.image_size
        attention_placed = False
        for width in widths:
            layers.append(nn.Conv2d(in_ch, width, 4, stride=2, padding=1))
            layers.append(nn.ReLU(inplace=True))
            size //= 2
            if use_attention and not attention_placed and size < MAX_ATTENTION_SIZE:
                layers.append(SelfAttention2d(width, cfg.attention_dim,
                                              cfg.attention_heads))
                attention_placed = True
            in_ch = width
        layers.append(nn.Conv2d(in_ch, cfg.hidden_dim, 3, padding=1))
        layers.extend(ResidualBlock(cfg.hidden_dim, cfg.residual_dim)
                      for _ in range(cfg.residual_blocks))
        layers.append(nn.ReLU(inplace=True))
        layers.append(nn.Conv2d(cfg.hidden_dim, code_dim, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    """Fuses both quantized grids and upsamples back to image resolution."""

    def __init__(self, cfg: BackboneConfig, code_dim: int):
        super().__init__()
        n_up = cfg.downsample_factor.bit_length() - 1
        layers: list[nn.Module] = [
            nn.Conv2d(2 * code_dim, cfg.hidden_dim, 3, padding=1),
        ]
        layers.extend(ResidualBlock(cfg.hidden_dim, cfg.residual_dim)
                      for _ in range(cfg.residual_blocks))
        in_ch = cfg.hidden_dim
        for i in range(n_up):
            out_ch = max(cfg.hidden_dim >> (i + 1), 4)
            layers.append(nn.ReLU(inplace=True))
            layers.append(nn.ConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1))
            in_ch = out_ch
        layers.append(nn.ReLU(inplace=True))
        layers.append(nn.Conv2d(in_ch, cfg.channels, 3, padding=1))
        layers.append(nn.Tanh())
        self.net = nn.Sequential(*layers)

    def forward(self, quantized_1: torch.Tensor, quantized_2: torch.Tensor):
        if quantized_1.shape != quantized_2.shape:
            raise ValueError(
                f"quantized pair shapes differ: {tuple(quantized_1.shape)} vs "
                f"{tuple(quantized_2.shape)}"
            )
        return self.net(torch.cat([quantized_1, quantized_2], dim=1))


class EncodedPair(NamedTuple):
    path1: torch.Tensor  # attention path, (B, D, H, W)
    path2: torch.Tensor  # plain path, (B, D, H, W)


class VQVAEOutput(NamedTuple):
    reconstruction: torch.Tensor
    result1: QuantizationResult
    result2: QuantizationResult


class TwinVQVAE(nn.Module):
    """The full autoencoder: two encoder paths, two codebooks, one decoder."""

    def __init__(self, cfg: BackboneConfig, num_codes: int, code_dim: int):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.code_dim = code_dim
        self.encoder1 = EncoderPath(cfg, code_dim, use_attention=True)
        self.encoder2 = EncoderPath(cfg, code_dim, use_attention=False)
        self.codebook1 = Codebook(num_codes, code_dim)
        self.codebook2 = Codebook(num_codes, code_dim)
        self.decoder = Decoder(cfg, code_dim)

    def encode(self, images: torch.Tensor) -> EncodedPair:
        if images.shape[-1] != self.cfg.image_size or \
                images.shape[-2] != self.cfg.image_size:
            raise ValueError(
                f"expected {self.cfg.image_size}x{self.cfg.image_size} input, "
                f"got {tuple(images.shape)}"
            )
        return EncodedPair(self.encoder1(images), self.encoder2(images))

    def quantize_pair(self, pair: EncodedPair
                      ) -> tuple[QuantizationResult, QuantizationResult]:
        r1 = quantize(pair.path1.movedim(1, -1), self.codebook1)
        r2 = quantize(pair.path2.movedim(1, -1), self.codebook2)
        return r1, r2

    def decode(self, quantized_1: torch.Tensor, quantized_2: torch.Tensor):
        return self.decoder(quantized_1, quantized_2)

    def decode_indices(self, indices_1: torch.Tensor, indices_2: torch.Tensor):
        """Decode integer code grids (B, H, W) straight to images."""
        q1 = self.codebook1.lookup(indices_1).movedim(-1, 1)
        q2 = self.codebook2.lookup(indices_2).movedim(-1, 1)
        return self.decode(q1, q2)

    def forward(self, images: torch.Tensor) -> VQVAEOutput:
        pair = self.encode(images)
        r1, r2 = self.quantize_pair(pair)
        st1 = straight_through(pair.path1.movedim(1, -1), r1.quantized)
        st2 = straight_through(pair.path2.movedim(1, -1), r2.quantized)
        recon = self.decode(st1.movedim(-1, 1), st2.movedim(-1, 1))
        return VQVAEOutput(recon, r1, r2)
