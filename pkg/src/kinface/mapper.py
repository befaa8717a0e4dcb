"""Mapping from the two parent genetic factors to candidate child genetic factors.

The mapper emits k=4 branches so one parent pair can yield several distinct
children; each branch output is normalized to zero mean and unit variance.
Ground-truth targets follow the first-child padding rule for small families.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .exceptions import ShapeError, ValidationError
from .factors import GeneticFactor
from .layers import as_2d_batch, factor_values
from .losses import weighted_sum

N_BRANCHES = 4

MAPPING_LOSS_WEIGHTS = (0.8, 0.6, 0.4)

_NORM_EPS = 1e-8


class _ResidualDense(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.fc = nn.Linear(width, width)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x):
        return x + self.act(self.fc(x))


def branch_normalize(x: torch.Tensor) -> torch.Tensor:
    """Per-sample zero-mean unit-variance rescaling (population convention)."""
    mean = x.mean(dim=-1, keepdim=True)
    std = x.std(dim=-1, keepdim=True, unbiased=False)
    return (x - mean) / (std + _NORM_EPS)


class GeneMapper(nn.Module):
    """Head (two dense transforms), body (5 residual layers), and parallel branch tails."""

    def __init__(self, d_g: int = 480, n_branches: int = N_BRANCHES):
        super().__init__()
        if n_branches < 1:
            raise ValidationError("mapper needs at least one branch")
        self.d_g = d_g
        self.n_branches = n_branches
        width = min(1024, max(128, 4 * d_g))
        self.head = nn.Sequential(
            nn.Linear(2 * d_g, width),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(width, width),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.body = nn.Sequential(*[_ResidualDense(width) for _ in range(5)])
        self.tails = nn.ModuleList(nn.Linear(width, d_g) for _ in range(n_branches))

    def forward(self, g_father: torch.Tensor, g_mother: torch.Tensor) -> torch.Tensor:
        if g_father.shape[-1] != self.d_g or g_mother.shape[-1] != self.d_g:
            raise ShapeError(
                f"parent factors must have length {self.d_g}, got "
                f"{g_father.shape[-1]} and {g_mother.shape[-1]}"
            )
        h = self.body(self.head(torch.cat([g_father, g_mother], dim=-1)))
        return torch.stack([branch_normalize(tail(h)) for tail in self.tails], dim=1)


@dataclass
class BranchTargets:
    """Exactly four ground-truth genetic factors, one per mapper branch."""

    targets: list

    def __post_init__(self):
        if len(self.targets) != N_BRANCHES:
            raise ValidationError(f"branch targets must have length {N_BRANCHES}")


def map_genes(mapper: GeneMapper, g_father, g_mother) -> list[GeneticFactor]:
    """Predict the candidate child genetic factors for one parent pair."""
    mapper.eval()
    gf = as_2d_batch(g_father, mapper.d_g, "father genetic factor")
    gm = as_2d_batch(g_mother, mapper.d_g, "mother genetic factor")
    with torch.no_grad():
        out = mapper(gf, gm)[0]
    return [GeneticFactor(branch.numpy(), "child") for branch in out]


def assign_ground_truth(children_genes) -> BranchTargets:
    """First four children in order; short families pad the tail with child 1."""
    genes = list(children_genes)
    if not genes:
        raise ValidationError("family has no children; skip it when training the mapper")
    targets = genes[:N_BRANCHES]
    while len(targets) < N_BRANCHES:
        targets.append(genes[0])
    return BranchTargets(targets)


def _branch_tensor(entry, name: str) -> torch.Tensor:
    entry = factor_values(entry)
    t = entry if isinstance(entry, torch.Tensor) else torch.as_tensor(np.asarray(entry, dtype=np.float32))
    if t.dim() == 1:
        t = t.unsqueeze(0)
    if t.dim() != 2:
        raise ShapeError(f"{name} must be a vector or batch, got shape {tuple(t.shape)}")
    return t


def loss_mapping(predictions, targets, lambdas=MAPPING_LOSS_WEIGHTS) -> torch.Tensor:
    """Branch-wise mean absolute error; branch 1 weighted 1, branches 2-4 by lambdas."""
    preds = list(predictions)
    tgts = targets.targets if isinstance(targets, BranchTargets) else list(targets)
    if len(preds) != len(tgts):
        raise ValidationError(f"{len(preds)} predictions but {len(tgts)} targets")
    terms = []
    for i, (p, t) in enumerate(zip(preds, tgts)):
        p_t = _branch_tensor(p, f"prediction {i + 1}")
        t_t = _branch_tensor(t, f"target {i + 1}")
        if p_t.shape != t_t.shape:
            raise ShapeError(
                f"branch {i + 1} shape mismatch: {tuple(p_t.shape)} vs {tuple(t_t.shape)}"
            )
        terms.append((p_t - t_t).abs().mean())
    return weighted_sum(terms, (1.0, *lambdas)[: len(terms)])
