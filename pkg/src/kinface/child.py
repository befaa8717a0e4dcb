"""Children-domain networks and losses.

The generator grows progressively from 4x4 and is conditioned on the
concatenation of genetic, external, and variety factors. A discriminator with
critic + classifier heads and a mode-seeking regularizer train it; a separate
inverse encoder learns, entirely in latent space, to recover the genetic
factor a frozen generator consumed.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import FaceImage
from .exceptions import FrozenContractError, ShapeError
from .factors import EXTERNAL_DIM, GeneticFactor
from .layers import (
    PixelNorm,
    as_2d_batch,
    channel_plan,
    factor_values,
    images_to_tensor,
    tensor_to_images,
)
from .losses import (
    DEFAULT_GP_WEIGHT,
    attribute_bce,
    mean_abs_error,
    wasserstein_pair,
    weighted_sum,
)

CHILD_LOSS_WEIGHTS = (1.0, 1.0, 5.0)

MODE_SEEK_EPS = 1e-5

_BASE_RES = 4


def _stage_channels(resolution: int) -> list[int]:
    n_up = int(math.log2(resolution // _BASE_RES))
    base = 16 if resolution <= 32 else 32
    cap = base * 8
    return [min(cap, base * 2 ** (n_up - s)) for s in range(n_up + 1)]


class ChildGenerator(nn.Module):
    """Progressive generator over concatenated (genetic, external, variety) input."""

    def __init__(self, resolution: int = 128, d_g: int = 480, d_v: int = 32):
        super().__init__()
        if resolution < 2 * _BASE_RES:
            raise ShapeError(f"child generator needs resolution >= {2 * _BASE_RES}")
        self.resolution = resolution
        self.d_g = d_g
        self.d_v = d_v
        self.latent_dim = d_g + EXTERNAL_DIM + d_v
        chs = _stage_channels(resolution)
        self.n_stages = len(chs) - 1  # stage s renders at 4 * 2**s
        self.input_norm = PixelNorm()
        self.initial = nn.Sequential(
            nn.ConvTranspose2d(self.latent_dim, chs[0], _BASE_RES, 1, 0),
            nn.PReLU(),
            PixelNorm(),
            nn.Conv2d(chs[0], chs[0], 3, 1, 1),
            nn.PReLU(),
            PixelNorm(),
        )
        self.stages = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(chs[s - 1], chs[s], 3, 1, 1),
                nn.PReLU(),
                PixelNorm(),
                nn.Conv2d(chs[s], chs[s], 3, 1, 1),
                nn.PReLU(),
                PixelNorm(),
            )
            for s in range(1, self.n_stages + 1)
        )
        self.to_rgb = nn.ModuleList(nn.Conv2d(chs[s], 3, 1, 1, 0) for s in range(self.n_stages + 1))

    def stage_resolution(self, stage: int) -> int:
        return _BASE_RES * 2**stage

    def forward(self, g, e, v, stage: int | None = None, alpha: float = 1.0) -> torch.Tensor:
        if stage is None:
            stage = self.n_stages
        if not 0 <= stage <= self.n_stages:
            raise ShapeError(f"stage must lie in [0, {self.n_stages}], got {stage}")
        if g.shape[-1] != self.d_g:
            raise ShapeError(f"genetic factor length {g.shape[-1]} != configured {self.d_g}")
        if e.shape[-1] != EXTERNAL_DIM:
            raise ShapeError(f"external factor length {e.shape[-1]} != {EXTERNAL_DIM}")
        if v.shape[-1] != self.d_v:
            raise ShapeError(f"variety factor length {v.shape[-1]} != configured {self.d_v}")
        z = torch.cat([g, e, v], dim=1).reshape(g.shape[0], self.latent_dim, 1, 1)
        x = self.initial(self.input_norm(z))
        prev = None
        for s in range(1, stage + 1):
            prev = x
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = self.stages[s - 1](x)
        rgb = self.to_rgb[stage](x)
        if alpha < 1.0 and stage >= 1:
            shortcut = F.interpolate(self.to_rgb[stage - 1](prev), scale_factor=2, mode="nearest")
            rgb = alpha * rgb + (1.0 - alpha) * shortcut
        return torch.tanh(rgb)


class ChildDiscriminator(nn.Module):
    """Shared trunk with a scalar critic head and a sigmoid attribute head."""

    def __init__(self, resolution: int = 128):
        super().__init__()
        self.resolution = resolution
        chs = _stage_channels(resolution)
        self.n_stages = len(chs) - 1
        self.from_rgb = nn.ModuleList(
            nn.Sequential(nn.Conv2d(3, chs[s], 1, 1, 0), nn.LeakyReLU(0.2, inplace=True))
            for s in range(self.n_stages + 1)
        )
        self.stages = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(chs[s], chs[s], 3, 1, 1),
                nn.LeakyReLU(0.2, inplace=True),
                nn.Conv2d(chs[s], chs[s - 1], 3, 1, 1),
                nn.LeakyReLU(0.2, inplace=True),
                nn.AvgPool2d(2),
            )
            for s in range(1, self.n_stages + 1)
        )
        self.final = nn.Sequential(
            nn.Conv2d(chs[0], chs[0], 3, 1, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(chs[0], chs[0], _BASE_RES, 1, 0),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.critic_head = nn.Linear(chs[0], 1)
        self.cls_head = nn.Linear(chs[0], EXTERNAL_DIM)

    def forward(self, y: torch.Tensor, stage: int | None = None, alpha: float = 1.0):
        if stage is None:
            stage = self.n_stages
        x = self.from_rgb[stage](y)
        for s in range(stage, 0, -1):
            x = self.stages[s - 1](x)
            if s == stage and alpha < 1.0:
                shortcut = self.from_rgb[stage - 1](F.avg_pool2d(y, 2))
                x = alpha * x + (1.0 - alpha) * shortcut
        h = self.final(x).flatten(1)
        return self.critic_head(h).squeeze(1), torch.sigmoid(self.cls_head(h))

    def critic(self, y: torch.Tensor) -> torch.Tensor:
        return self.forward(y)[0]

    def classify(self, y: torch.Tensor) -> torch.Tensor:
        return self.forward(y)[1]


class ChildInverseEncoder(nn.Module):
    """Deep conv feature stack plus a linear head projecting to the genetic dimension."""

    def __init__(self, resolution: int = 128, d_g: int = 480):
        super().__init__()
        self.resolution = resolution
        self.d_g = d_g
        chs = channel_plan(5, resolution)
        n_pool = min(5, int(math.log2(resolution)))
        layers: list[nn.Module] = []
        in_ch = 3
        spatial = resolution
        for i, ch in enumerate(chs):
            layers += [
                nn.Conv2d(in_ch, ch, 3, 1, 1),
                nn.LeakyReLU(0.2, inplace=True),
                nn.Conv2d(ch, ch, 3, 1, 1),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            if i < n_pool:
                layers.append(nn.AvgPool2d(2))
                spatial //= 2
            in_ch = ch
        self.features = nn.Sequential(*layers)
        self.head = nn.Sequential(
            nn.Linear(chs[-1] * spatial * spatial, 256),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(256, d_g),
        )

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if y.shape[-1] != self.resolution or y.shape[-2] != self.resolution:
            raise ShapeError(
                f"inverse encoder configured for {self.resolution}x{self.resolution}, got {tuple(y.shape[-2:])}"
            )
        return self.head(self.features(y).flatten(1))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def generate_child(generator: ChildGenerator, g, e, v) -> FaceImage:
    """Render one child face from (genetic, external, variety) factors."""
    generator.eval()
    g_t = as_2d_batch(g, generator.d_g, "genetic factor")
    e_t = as_2d_batch(e, EXTERNAL_DIM, "external factor")
    v_t = as_2d_batch(v, generator.d_v, "variety factor")
    with torch.no_grad():
        out = generator(g_t, e_t, v_t)
    return tensor_to_images(out)[0]


def encode_child(encoder: ChildInverseEncoder, y) -> GeneticFactor:
    encoder.eval()
    t = images_to_tensor([y]) if isinstance(y, FaceImage) else y
    with torch.no_grad():
        g = encoder(t)
    return GeneticFactor(g[0].numpy(), "child")


def _img_tensor(x) -> torch.Tensor:
    if isinstance(x, FaceImage):
        return images_to_tensor([x])
    return x


def loss_child_adv(
    disc: ChildDiscriminator,
    y,
    y_hat,
    gp_weight: float = DEFAULT_GP_WEIGHT,
    rng: torch.Generator | None = None,
):
    """Wasserstein terms on child images: (generator term, critic term + penalty)."""
    return wasserstein_pair(disc.critic, _img_tensor(y), _img_tensor(y_hat), gp_weight, rng)


def loss_child_cls(disc: ChildDiscriminator, y, y_hat, e) -> torch.Tensor:
    y, y_hat = _img_tensor(y), _img_tensor(y_hat)
    e_t = as_2d_batch(e, EXTERNAL_DIM, "external factor").expand(y.shape[0], -1)
    return attribute_bce(disc.classify(y), e_t) + attribute_bce(disc.classify(y_hat), e_t)


def loss_mode_seeking(y1_hat, y2_hat, v1, v2, eps: float = MODE_SEEK_EPS) -> torch.Tensor:
    """Variety-to-image distance ratio, minimized to push sibling variation apart.

    Uses the reciprocal of the maximized image/latent ratio so the optimizer
    can uniformly minimize; eps guards the coincident-image denominator.
    """
    y1, y2 = _img_tensor(y1_hat), _img_tensor(y2_hat)
    if y1.shape != y2.shape:
        raise ShapeError(f"image pair shape mismatch: {tuple(y1.shape)} vs {tuple(y2.shape)}")
    v1 = torch.as_tensor(factor_values(v1), dtype=torch.float32)
    v2 = torch.as_tensor(factor_values(v2), dtype=torch.float32)
    if v1.shape != v2.shape:
        raise ShapeError(f"variety pair shape mismatch: {tuple(v1.shape)} vs {tuple(v2.shape)}")
    d_image = (y2 - y1).abs().mean()
    d_variety = (v2 - v1).abs().mean()
    return d_variety / (d_image + eps)


def loss_child_total(terms, lambdas=CHILD_LOSS_WEIGHTS) -> torch.Tensor:
    """Weighted sum of (adv, cls, mode-seeking) terms."""
    return weighted_sum(terms, lambdas)


def _require_frozen(generator: ChildGenerator) -> None:
    if any(p.requires_grad for p in generator.parameters()):
        raise FrozenContractError("child generator must be frozen while training the inverse encoder")


def loss_inverse(encoder: ChildInverseEncoder, generator: ChildGenerator, g, e, v) -> torch.Tensor:
    """Mean absolute error between a genetic factor and its recovery from a frozen generator."""
    _require_frozen(generator)
    y = generator(g, e, v)
    return mean_abs_error(encoder(y), g)


def loss_inverse_image_space(encoder: ChildInverseEncoder, generator: ChildGenerator, g, e, v) -> torch.Tensor:
    """Ablation variant: reconstruction error measured on images instead of factors."""
    _require_frozen(generator)
    y = generator(g, e, v)
    y_back = generator(encoder(y), e, v)
    return mean_abs_error(y_back, y)
