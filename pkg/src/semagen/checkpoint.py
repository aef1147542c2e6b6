"""Single-file checkpoint container.

Layout (all integers little-endian):

    magic           4 bytes, b"MSGF"
    version         u32
    phase           u32 length + utf-8 bytes
    iteration       u64
    config snapshot u32 length + utf-8 bytes (flat key=value format)
    rng state       u32 length + raw bytes
    blob count      u32
    per blob:
        name        u32 length + utf-8 bytes
        dtype code  u8   (0 = float32, 1 = int64, 2 = uint8)
        ndim        u8, then ndim x u32 dims
        payload     u64 byte length + raw little-endian data

Parameter and optimizer tensors are stored as 32-bit floats, so a save/load
round trip reproduces forward passes bit for bit at training precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import torch

MAGIC = b"MSGF"
FORMAT_VERSION = 1

_DTYPE_CODES = {torch.float32: 0, torch.int64: 1, torch.uint8: 2}
_NUMPY_DTYPES = {0: "<f4", 1: "<i8", 2: "u1"}
_TORCH_DTYPES = {0: torch.float32, 1: torch.int64, 2: torch.uint8}


@dataclass
class Checkpoint:
    """Versioned container for one training phase's full state."""

    phase: str
    iteration: int
    config_text: str
    rng_state: bytes
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)

    def save(self, path: str) -> None:
        parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
        parts.append(_packed_str(self.phase))
        parts.append(struct.pack("<Q", self.iteration))
        parts.append(_packed_str(self.config_text))
        parts.append(struct.pack("<I", len(self.rng_state)))
        parts.append(self.rng_state)
        parts.append(struct.pack("<I", len(self.tensors)))
        for name in sorted(self.tensors):
            tensor = self.tensors[name].detach().contiguous()
            if tensor.dtype not in _DTYPE_CODES:
                raise ValueError(f"unsupported dtype {tensor.dtype} for {name!r}")
            code = _DTYPE_CODES[tensor.dtype]
            payload = tensor.numpy().astype(_NUMPY_DTYPES[code]).tobytes()
            parts.append(_packed_str(name))
            parts.append(struct.pack("<BB", code, tensor.dim()))
            parts.append(struct.pack(f"<{tensor.dim()}I", *tensor.shape))
            parts.append(struct.pack("<Q", len(payload)))
            parts.append(payload)
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        with open(path, "rb") as fh:
            data = fh.read()
        reader = _Reader(data)
        if reader.take(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        version = reader.u32()
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        phase = reader.string()
        iteration = reader.u64()
        config_text = reader.string()
        rng_state = reader.take(reader.u32())
        tensors: dict[str, torch.Tensor] = {}
        for _ in range(reader.u32()):
            name = reader.string()
            code, ndim = struct.unpack("<BB", reader.take(2))
            shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
            payload = reader.take(reader.u64())
            array = np.frombuffer(payload, dtype=_NUMPY_DTYPES[code]).copy()
            tensors[name] = torch.from_numpy(array).reshape(shape).to(
                _TORCH_DTYPES[code])
        if not reader.done:
            raise ValueError(f"{path}: trailing bytes after last blob")
        return cls(phase=phase, iteration=iteration, config_text=config_text,
                   rng_state=rng_state, tensors=tensors)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated checkpoint file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    @property
    def done(self) -> bool:
        return self.pos == len(self.data)


def _packed_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


# --- torch glue --------------------------------------------------------------

def pack_module(prefix: str, module: torch.nn.Module,
                out: dict[str, torch.Tensor]) -> None:
    for name, value in module.state_dict().items():
        out[f"{prefix}.{name}"] = value.detach().clone()


def unpack_module(prefix: str, module: torch.nn.Module,
                  tensors: dict[str, torch.Tensor]) -> None:
    state = {}
    skip = len(prefix) + 1
    for key, value in tensors.items():
        if key.startswith(prefix + "."):
            state[key[skip:]] = value
    module.load_state_dict(state)


def pack_adam(prefix: str, optimizer: torch.optim.Adam,
              named_params: list[tuple[str, torch.nn.Parameter]],
              out: dict[str, torch.Tensor]) -> None:
    for name, param in named_params:
        state = optimizer.state.get(param)
        if not state:
            continue
        out[f"{prefix}.{name}.step"] = state["step"].reshape(1)
        out[f"{prefix}.{name}.exp_avg"] = state["exp_avg"].detach().clone()
        out[f"{prefix}.{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().clone()


def unpack_adam(prefix: str, optimizer: torch.optim.Adam,
                named_params: list[tuple[str, torch.nn.Parameter]],
                tensors: dict[str, torch.Tensor]) -> None:
    for name, param in named_params:
        key = f"{prefix}.{name}.step"
        if key not in tensors:
            continue
        optimizer.state[param] = {
            "step": tensors[key].reshape(()).clone(),
            "exp_avg": tensors[f"{prefix}.{name}.exp_avg"].clone(),
            "exp_avg_sq": tensors[f"{prefix}.{name}.exp_avg_sq"].clone(),
        }


def capture_rng() -> bytes:
    return torch.get_rng_state().numpy().tobytes()


def restore_rng(raw: bytes) -> None:
    state = torch.from_numpy(np.frombuffer(raw, dtype=np.uint8).copy())
    torch.set_rng_state(state)
