"""Shared network building blocks, seeded initialization, and tensor helpers."""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
import torch.nn as nn

from .data import FaceImage


def derive_seed(master: int, label: str) -> int:
    """Stable 63-bit sub-seed for a named random stream."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def make_generator(seed: int) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(seed)
    return gen


def init_network(module: nn.Module, generator: torch.Generator) -> None:
    """Variance-scaled fan-based (Xavier uniform) init for conv/linear weights."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            fan_in, fan_out = nn.init._calculate_fan_in_and_fan_out(m.weight)
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (nn.BatchNorm2d, nn.InstanceNorm2d)):
            if m.weight is not None:
                with torch.no_grad():
                    m.weight.fill_(1.0)
                    m.bias.zero_()


class PixelNorm(nn.Module):
    """Per-location feature normalization across channels."""

    def forward(self, x):
        return x * torch.rsqrt(torch.mean(x**2, dim=1, keepdim=True) + 1e-8)


def channel_plan(n_levels: int, resolution: int) -> list[int]:
    """Widths per downsampling level; lean at desk resolutions."""
    base = 16 if resolution <= 32 else 32
    cap = base * 8
    return [min(cap, base * 2**i) for i in range(n_levels)]


def images_to_tensor(faces) -> torch.Tensor:
    """Stack FaceImages (or HxWx3 arrays) into an NCHW float32 tensor."""
    arrays = []
    for face in faces:
        px = face.pixels if isinstance(face, FaceImage) else np.asarray(face, dtype=np.float32)
        arrays.append(np.transpose(px, (2, 0, 1)))
    return torch.from_numpy(np.stack(arrays).astype(np.float32))


def tensor_to_images(t: torch.Tensor) -> list[FaceImage]:
    arr = t.detach().cpu().clamp(-1.0, 1.0).numpy()
    return [FaceImage(np.transpose(a, (1, 2, 0)).astype(np.float32)) for a in arr]


def factor_values(x):
    """Unwrap a factor dataclass to its array; pass tensors/arrays through."""
    if isinstance(x, (torch.Tensor, np.ndarray)):
        return x
    inner = getattr(x, "values", None)
    return inner if isinstance(inner, np.ndarray) else x


def as_2d_batch(values, length: int, name: str) -> torch.Tensor:
    """Coerce a factor/vector (object, array, 1-D or 2-D tensor) to (N, length)."""
    values = factor_values(values)
    if isinstance(values, torch.Tensor):
        t = values.float()
    else:
        t = torch.as_tensor(np.asarray(values, dtype=np.float32))
    if t.dim() == 1:
        t = t.unsqueeze(0)
    if t.dim() != 2 or t.shape[1] != length:
        from .exceptions import ShapeError

        raise ShapeError(f"{name} must have length {length}, got shape {tuple(t.shape)}")
    return t
