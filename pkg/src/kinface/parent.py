"""Parent-domain networks and losses.

An encoder/generator pair linked U-Net style reconstructs a parent face from
its genetic factor and a given external factor; an image discriminator with
critic + attribute-classifier heads and a vector critic on genetic factors
supply the adversarial terms.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .data import FaceImage
from .exceptions import ShapeError
from .factors import EXTERNAL_DIM, ExternalFactor, GeneticFactor
from .layers import as_2d_batch, channel_plan, images_to_tensor, tensor_to_images
from .losses import (
    DEFAULT_GP_WEIGHT,
    attribute_bce,
    mean_abs_error,
    wasserstein_pair,
    weighted_sum,
)

N_LEVELS = 5

PARENT_LOSS_WEIGHTS = (100.0, 10.0, 1.0, 0.1)


def _stride_plan(resolution: int) -> list[int]:
    # keep exactly N_LEVELS blocks; stop halving once spatial size hits 1
    n_down = min(N_LEVELS, int(math.log2(resolution)))
    return [2 if i < n_down else 1 for i in range(N_LEVELS)]


class ParentEncoder(nn.Module):
    """Five downsampling conv blocks, global pooling, and a genetic-factor head."""

    def __init__(self, resolution: int = 128, d_g: int = 480):
        super().__init__()
        self.resolution = resolution
        self.d_g = d_g
        chs = channel_plan(N_LEVELS, resolution)
        strides = _stride_plan(resolution)
        blocks = []
        in_ch = 3
        for ch, stride in zip(chs, strides):
            k, p = (4, 1) if stride == 2 else (3, 1)
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, ch, k, stride, p),
                    nn.BatchNorm2d(ch),
                    nn.LeakyReLU(0.2, inplace=True),
                )
            )
            in_ch = ch
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(chs[-1], d_g)

    def forward(self, x: torch.Tensor):
        if x.shape[-1] != self.resolution or x.shape[-2] != self.resolution:
            raise ShapeError(
                f"encoder configured for {self.resolution}x{self.resolution}, got {tuple(x.shape[-2:])}"
            )
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        g = self.head(self.pool(x).flatten(1))
        return g, feats


class ParentGenerator(nn.Module):
    """Mirror of the encoder; consumes (genetic, external, skip stack).

    The external factor is tiled over the bottleneck and concatenated
    channel-wise; skip features refine each upsampling stage.
    """

    def __init__(self, resolution: int = 128, d_g: int = 480):
        super().__init__()
        self.resolution = resolution
        self.d_g = d_g
        chs = channel_plan(N_LEVELS, resolution)
        strides = _stride_plan(resolution)
        self.bottleneck = resolution // int(torch.tensor(strides).prod())
        self.project = nn.Linear(d_g, chs[-1] * self.bottleneck**2)
        ups = []
        in_ch = chs[-1] + EXTERNAL_DIM
        for i in range(N_LEVELS):
            stride = strides[N_LEVELS - 1 - i]
            out_ch = chs[N_LEVELS - 2 - i] if i < N_LEVELS - 1 else chs[0]
            if stride == 2:
                conv = nn.ConvTranspose2d(in_ch, out_ch, 4, 2, 1)
            else:
                conv = nn.Conv2d(in_ch, out_ch, 3, 1, 1)
            ups.append(nn.Sequential(conv, nn.BatchNorm2d(out_ch), nn.LeakyReLU(0.2, inplace=True)))
            # next block sees the skip from the matching encoder level
            in_ch = out_ch + (chs[N_LEVELS - 2 - i] if i < N_LEVELS - 1 else 0)
        self.ups = nn.ModuleList(ups)
        self.to_rgb = nn.Conv2d(chs[0], 3, 3, 1, 1)

    def forward(self, g: torch.Tensor, e: torch.Tensor, skips) -> torch.Tensor:
        if g.shape[-1] != self.d_g:
            raise ShapeError(f"genetic factor length {g.shape[-1]} != configured {self.d_g}")
        if e.shape[-1] != EXTERNAL_DIM:
            raise ShapeError(f"external factor length {e.shape[-1]} != {EXTERNAL_DIM}")
        if len(skips) != N_LEVELS:
            raise ShapeError(f"expected {N_LEVELS} skip levels, got {len(skips)}")
        n = g.shape[0]
        x = self.project(g).reshape(n, -1, self.bottleneck, self.bottleneck)
        e_map = e.reshape(n, EXTERNAL_DIM, 1, 1).expand(-1, -1, self.bottleneck, self.bottleneck)
        x = torch.cat([x, e_map], dim=1)
        for i, block in enumerate(self.ups):
            x = block(x)
            if i < N_LEVELS - 1:
                x = torch.cat([x, skips[N_LEVELS - 2 - i]], dim=1)
        return torch.tanh(self.to_rgb(x))


class ParentImageDiscriminator(nn.Module):
    """Conv trunk with parallel critic and sigmoid attribute-classifier heads."""

    def __init__(self, resolution: int = 128):
        super().__init__()
        self.resolution = resolution
        chs = channel_plan(N_LEVELS, resolution)
        strides = _stride_plan(resolution)
        blocks = []
        in_ch = 3
        spatial = resolution
        for ch, stride in zip(chs, strides):
            k, p = (4, 1) if stride == 2 else (3, 1)
            spatial = spatial // stride
            layers = [nn.Conv2d(in_ch, ch, k, stride, p)]
            if spatial > 1:
                # instance statistics are undefined on a single location
                layers.append(nn.InstanceNorm2d(ch, affine=True))
            layers.append(nn.ReLU(inplace=True))
            blocks.append(nn.Sequential(*layers))
            in_ch = ch
        self.trunk = nn.Sequential(*blocks)
        flat = chs[-1] * spatial * spatial
        self.critic_head = nn.Linear(flat, 1)
        self.cls_head = nn.Linear(flat, EXTERNAL_DIM)

    def forward(self, x: torch.Tensor):
        h = self.trunk(x).flatten(1)
        return self.critic_head(h).squeeze(1), torch.sigmoid(self.cls_head(h))

    def critic(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward(x)[0]

    def classify(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward(x)[1]


class GeneticDiscriminator(nn.Module):
    """Small critic on genetic-factor vectors (two dense transform blocks + scalar head)."""

    def __init__(self, d_g: int = 480):
        super().__init__()
        self.d_g = d_g
        hidden = min(512, max(64, 2 * d_g))
        self.net = nn.Sequential(
            nn.Linear(d_g, hidden),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, 1),
        )

    def forward(self, g: torch.Tensor) -> torch.Tensor:
        if g.shape[-1] != self.d_g:
            raise ShapeError(f"genetic factor length {g.shape[-1]} != configured {self.d_g}")
        return self.net(g).squeeze(1)


# ---------------------------------------------------------------------------
# Operations on single faces (inference-mode convenience API)
# ---------------------------------------------------------------------------


def encode_parent(encoder: ParentEncoder, image: FaceImage):
    """Encode one face to its genetic factor plus the skip feature stack."""
    encoder.eval()
    with torch.no_grad():
        g, feats = encoder(images_to_tensor([image]))
    return GeneticFactor(g[0].numpy(), "parent"), feats


def generate_parent(
    generator: ParentGenerator,
    g: GeneticFactor | torch.Tensor,
    e: ExternalFactor | torch.Tensor,
    skips,
) -> FaceImage:
    generator.eval()
    g_t = as_2d_batch(g, generator.d_g, "genetic factor")
    e_t = as_2d_batch(e, EXTERNAL_DIM, "external factor")
    with torch.no_grad():
        out = generator(g_t, e_t, skips)
    return tensor_to_images(out)[0]


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _img_tensor(x) -> torch.Tensor:
    if isinstance(x, FaceImage):
        return images_to_tensor([x])
    return x


def loss_parent_recon(x, x_hat) -> torch.Tensor:
    """Mean absolute reconstruction error over all pixels."""
    return mean_abs_error(_img_tensor(x), _img_tensor(x_hat))


def loss_parent_cls(disc: ParentImageDiscriminator, x, x_hat, e) -> torch.Tensor:
    """Attribute BCE summed over the real-image and generated-image terms."""
    x, x_hat = _img_tensor(x), _img_tensor(x_hat)
    e_t = as_2d_batch(e, EXTERNAL_DIM, "external factor").expand(x.shape[0], -1)
    return attribute_bce(disc.classify(x), e_t) + attribute_bce(disc.classify(x_hat), e_t)


def loss_parent_adv(
    disc: ParentImageDiscriminator,
    x,
    x_hat,
    gp_weight: float = DEFAULT_GP_WEIGHT,
    rng: torch.Generator | None = None,
):
    """Wasserstein terms on images: (generator term, critic term + penalty)."""
    return wasserstein_pair(disc.critic, _img_tensor(x), _img_tensor(x_hat), gp_weight, rng)


def loss_genetic_adv(
    disc: GeneticDiscriminator,
    g_hat,
    reference,
    gp_weight: float = DEFAULT_GP_WEIGHT,
    rng: torch.Generator | None = None,
):
    """Wasserstein terms pulling encoded genetic factors toward the normal prior."""
    g_t = as_2d_batch(g_hat, disc.d_g, "genetic factor")
    u_t = as_2d_batch(reference, disc.d_g, "gaussian reference")
    if g_t.shape != u_t.shape:
        raise ShapeError(f"factor batch {tuple(g_t.shape)} vs reference {tuple(u_t.shape)}")
    return wasserstein_pair(disc, u_t, g_t, gp_weight, rng)


def loss_parent_total(terms, lambdas=PARENT_LOSS_WEIGHTS) -> torch.Tensor:
    """Weighted sum of (recon, cls, adv, gene-adv) terms."""
    return weighted_sum(terms, lambdas)
