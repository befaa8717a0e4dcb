"""Quantitative evaluation: grouped cosine similarity, group-wise Fréchet
distance, pairwise diversity with per-channel histogram equalization, and the
shuffled-pair baseline.

Embeddings and perceptual backbones are pluggable. The desk-scale default is
an identity classifier trained on procedurally generated faces; adapters for
pre-trained face-recognition or perceptual networks can be dropped in through
the same interface when such weights are available.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .data import ATTRIBUTE_NAMES, AttributeSet, FaceImage, SynthGenome, render_synth_face
from .exceptions import NumericalError, ProtocolError, ValidationError
from .layers import derive_seed, init_network, make_generator

DEFAULT_GROUPS = 40

CACHE_ENV_VAR = "KINFACE_CACHE"


def cache_dir() -> Path:
    """Directory for optional backbone downloads (override with KINFACE_CACHE)."""
    return Path(os.environ.get(CACHE_ENV_VAR, Path.home() / ".cache" / "kinface"))


def _image_array(image) -> np.ndarray:
    if isinstance(image, FaceImage):
        return image.pixels
    return np.asarray(image, dtype=np.float32)


def _image_batch(images) -> np.ndarray:
    return np.stack([_image_array(im) for im in images])


class EmbeddingExtractor:
    """Interface: a named, deterministic image -> fixed-length feature map."""

    name: str = "abstract"
    dim: int = 0

    def embed(self, images) -> np.ndarray:
        raise NotImplementedError


class _IdentityNet(nn.Module):
    def __init__(self, emb_dim: int, n_classes: int):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(16, 32, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(32, 64, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.AdaptiveAvgPool2d(1),
        )
        self.embed = nn.Linear(64, emb_dim)
        self.classify = nn.Linear(emb_dim, n_classes)

    def forward(self, x):
        h = self.embed(self.features(x).flatten(1))
        return h, self.classify(torch.relu(h))


class SyntheticIdentityEmbedding(EmbeddingExtractor):
    """Identity-classifier embedding trained on procedural faces with known genomes."""

    def __init__(self, net: _IdentityNet, resolution: int, dim: int):
        self.net = net.eval()
        self.resolution = resolution
        self.dim = dim
        self.name = f"synthetic-identity-{dim}d"

    @classmethod
    def train(
        cls,
        resolution: int,
        n_identities: int = 32,
        samples_per_identity: int = 8,
        dim: int = 32,
        iters: int = 400,
        batch_size: int = 64,
        seed: int = 0,
    ) -> "SyntheticIdentityEmbedding":
        rng = np.random.default_rng(seed)
        images, labels = [], []
        for ident in range(n_identities):
            genome = SynthGenome(rng.uniform(0.0, 1.0, size=8))
            for _ in range(samples_per_identity):
                attrs = {name: int(rng.integers(0, 2)) for name in ATTRIBUTE_NAMES}
                face = render_synth_face(
                    genome, AttributeSet(attrs, "child"), int(rng.integers(0, 2**31)), resolution
                )
                images.append(np.transpose(face.pixels, (2, 0, 1)))
                labels.append(ident)
        x = torch.from_numpy(np.stack(images))
        y = torch.from_numpy(np.asarray(labels, dtype=np.int64))

        net = _IdentityNet(dim, n_identities)
        gen = make_generator(derive_seed(seed, "identity-embedding"))
        init_network(net, gen)
        opt = torch.optim.Adam(net.parameters(), lr=2e-3)
        ce = nn.CrossEntropyLoss()
        net.train()
        for _ in range(iters):
            idx = torch.randint(0, x.shape[0], (batch_size,), generator=gen)
            _, logits = net(x[idx])
            loss = ce(logits, y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        return cls(net, resolution, dim)

    def embed(self, images) -> np.ndarray:
        batch = _image_batch(images)
        if batch.shape[1] != self.resolution:
            raise ProtocolError(
                f"embedding expects {self.resolution}px images, got {batch.shape[1]}px"
            )
        t = torch.from_numpy(np.transpose(batch, (0, 3, 1, 2)).astype(np.float32))
        with torch.no_grad():
            h, _ = self.net(t)
        return h.numpy()


class ModuleEmbedding(EmbeddingExtractor):
    """Adapter wrapping any torch module as an embedding (e.g. a pre-trained backbone)."""

    def __init__(self, name: str, module: nn.Module, dim: int, preprocess=None):
        self.name = name
        self.net = module.eval()
        self.dim = dim
        self.preprocess = preprocess

    def embed(self, images) -> np.ndarray:
        batch = _image_batch(images)
        t = torch.from_numpy(np.transpose(batch, (0, 3, 1, 2)).astype(np.float32))
        if self.preprocess is not None:
            t = self.preprocess(t)
        with torch.no_grad():
            out = self.net(t)
        return out.reshape(out.shape[0], -1).numpy()


# ---------------------------------------------------------------------------
# Cosine protocol
# ---------------------------------------------------------------------------


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ProtocolError(f"embedding length mismatch: {a.shape} vs {b.shape}")
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0.0:
        raise NumericalError("cosine of a zero embedding is undefined")
    return float(np.dot(a, b) / denom)


def cosine_protocol(extractor: EmbeddingExtractor, predicted_groups, ground_truth_children) -> float:
    """Mean over groups of the per-family mean pairwise predicted-vs-real cosine.

    ``predicted_groups[g][f]`` is group g's prediction for family f;
    ``ground_truth_children[f]`` lists family f's real child images.
    """
    if not predicted_groups:
        raise ProtocolError("no prediction groups supplied")
    n_families = len(ground_truth_children)
    gt_embeddings = []
    for children in ground_truth_children:
        if not children:
            raise ProtocolError("every family needs at least one ground-truth child")
        gt_embeddings.append(extractor.embed(children))
    group_means = []
    for group in predicted_groups:
        if len(group) != n_families:
            raise ProtocolError(f"group holds {len(group)} families, expected {n_families}")
        pred_emb = extractor.embed(group)
        family_means = []
        for f in range(n_families):
            pairs = [cosine_similarity(pred_emb[f], gt) for gt in gt_embeddings[f]]
            family_means.append(float(np.mean(pairs)))
        group_means.append(float(np.mean(family_means)))
    return float(np.mean(group_means))


def shuffled_baseline(extractor: EmbeddingExtractor, parent_child_pairs, rng=None, n_shuffles: int | None = None) -> float:
    """Mean cosine across mismatched parent-child pairs.

    Default is the full cross-pairing (every parent against every other
    family's child); ``n_shuffles`` instead averages that many random
    re-pairings drawn from ``rng``.
    """
    pairs = list(parent_child_pairs)
    if len(pairs) < 2:
        raise ValidationError("need at least two parent-child pairs")
    parents = extractor.embed([p for p, _ in pairs])
    children = extractor.embed([c for _, c in pairs])
    n = len(pairs)
    if n_shuffles is None:
        values = [
            cosine_similarity(parents[i], children[j])
            for i in range(n)
            for j in range(n)
            if i != j
        ]
        return float(np.mean(values))
    if rng is None:
        raise ValidationError("rng is required when sampling shuffles")
    values = []
    for _ in range(n_shuffles):
        perm = rng.permutation(n)
        values.extend(cosine_similarity(parents[i], children[perm[i]]) for i in range(n))
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# Fréchet distance
# ---------------------------------------------------------------------------


def _sqrt_eigh(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _moments(features: np.ndarray, shrinkage: float | None):
    n, d = features.shape
    mu = features.mean(axis=0)
    cov = np.cov(features, rowvar=False)
    cov = np.atleast_2d(cov)
    needs_shrink = n < d + 1
    if shrinkage is None:
        gamma = d / (d + n) if needs_shrink else 0.0
    else:
        gamma = float(shrinkage)
        if gamma == 0.0 and needs_shrink:
            raise NumericalError(
                f"covariance of {n} samples in {d} dimensions is degenerate; enable shrinkage"
            )
    if gamma > 0.0:
        cov = (1.0 - gamma) * cov + gamma * (np.trace(cov) / d) * np.eye(d)
    return mu, cov


def fid(set_a, set_b, feature_fn, shrinkage: float | None = None) -> float:
    """Fréchet distance between Gaussian fits of two feature clouds.

    The matrix square root uses eigendecomposition of the symmetrized product
    with negative eigenvalues clipped at zero. Covariance shrinkage toward the
    scaled identity is applied automatically for sample-starved sets.
    """
    fa = np.asarray(feature_fn(set_a), dtype=np.float64)
    fb = np.asarray(feature_fn(set_b), dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise ProtocolError(f"feature shapes incompatible: {fa.shape} vs {fb.shape}")
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise ValidationError("each set needs at least two samples")
    mu_a, cov_a = _moments(fa, shrinkage)
    mu_b, cov_b = _moments(fb, shrinkage)
    diff = float(np.sum((mu_a - mu_b) ** 2))
    sqrt_a = _sqrt_eigh(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    inner = (inner + inner.T) / 2.0
    tr_sqrt = float(np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None))))
    value = diff + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * tr_sqrt
    if not np.isfinite(value):
        raise NumericalError("Fréchet distance is non-finite")
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# Diversity protocol
# ---------------------------------------------------------------------------


def equalize_histogram(image: np.ndarray) -> np.ndarray:
    """Per-channel cumulative-distribution remapping of an 8-bit image.

    A single-level channel is left unchanged; extreme two-level images keep
    their endpoints.
    """
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ValidationError(f"equalization expects uint8 input, got {img.dtype}")
    if img.ndim == 2:
        img = img[:, :, None]
    out = np.empty_like(img)
    total = img.shape[0] * img.shape[1]
    for c in range(img.shape[2]):
        channel = img[:, :, c]
        hist = np.bincount(channel.ravel(), minlength=256)
        cdf = np.cumsum(hist)
        cdf_min = cdf[np.nonzero(hist)[0][0]]
        if cdf_min == total:
            out[:, :, c] = channel
            continue
        lut = np.rint((cdf - cdf_min) / (total - cdf_min) * 255.0).astype(np.uint8)
        out[:, :, c] = lut[channel]
    return out.squeeze() if image.ndim == 2 else out


def equalize_face(image) -> np.ndarray:
    """Equalize a [-1, 1] face on its 8-bit rendering, back to [-1, 1] floats."""
    face = image if isinstance(image, FaceImage) else FaceImage(np.asarray(image, dtype=np.float32))
    return FaceImage.from_uint8(equalize_histogram(face.to_uint8())).pixels


def pixel_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute pixel distance; desk-scale stand-in for a perceptual metric."""
    return float(np.abs(a - b).mean())


def diversity_protocol(groups_per_family, distance_fn=None) -> float:
    """Mean pairwise distance over each family's generated set, then over families.

    Every image is histogram-equalized per channel on its 8-bit rendering
    before distancing, which discounts pure color-shift diversity. A family
    with n images contributes all C(n, 2) pairs.
    """
    distance_fn = distance_fn or pixel_distance
    families = list(groups_per_family)
    if not families:
        raise ValidationError("no families supplied")
    n = len(families[0])
    if n < 2:
        raise ValidationError("need at least two images per family")
    family_means = []
    for images in families:
        if len(images) != n:
            raise ProtocolError(f"expected {n} images per family, got {len(images)}")
        equalized = [equalize_face(im) for im in images]
        dists = [distance_fn(a, b) for a, b in itertools.combinations(equalized, 2)]
        family_means.append(float(np.mean(dists)))
    return float(np.mean(family_means))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    cosine_mean: float | None = None
    fid_mean: float | None = None
    lpips_mean: float | None = None
    group_count: int = 0
    per_family: list = field(default_factory=list)
    protocol: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "cosine_mean": self.cosine_mean,
            "fid_mean": self.fid_mean,
            "lpips_mean": self.lpips_mean,
            "group_count": self.group_count,
            "per_family": self.per_family,
            "protocol": self.protocol,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    def table(self) -> str:
        rows = [
            ("metric", "value"),
            ("cosine", "-" if self.cosine_mean is None else f"{self.cosine_mean:.4f}"),
            ("fid", "-" if self.fid_mean is None else f"{self.fid_mean:.4f}"),
            ("lpips", "-" if self.lpips_mean is None else f"{self.lpips_mean:.4f}"),
            ("groups", str(self.group_count)),
            ("families", str(len(self.per_family))),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


VALID_METRICS = ("cos", "fid", "lpips")


def evaluate_pipeline(
    bundle,
    manifest,
    groups: int = DEFAULT_GROUPS,
    metrics=VALID_METRICS,
    seed: int = 0,
    extractor: EmbeddingExtractor | None = None,
    reference_children=None,
) -> EvalReport:
    """Run the grouped protocol on a trained bundle over a manifest's families."""
    from .training import predict_children  # local import to avoid a cycle

    for metric in metrics:
        if metric not in VALID_METRICS:
            raise ValidationError(f"unknown metric {metric!r}; valid: {', '.join(VALID_METRICS)}")
    families = [fam for fam in manifest.families if fam.children]
    if not families:
        raise ValidationError("manifest has no families with children to evaluate")
    if extractor is None:
        extractor = SyntheticIdentityEmbedding.train(
            bundle.config.resolution, seed=derive_seed(seed, "embedding")
        )
    predictions = {}
    for fam in families:
        rng = np.random.default_rng(derive_seed(seed, f"predict/{fam.family_id}"))
        predictions[fam.family_id] = predict_children(
            bundle,
            fam.father.image,
            fam.mother.image,
            n=groups,
            external_mode="ground_truth",
            rng=rng,
            child_attrs=[c.attrs for c in fam.children],
        )

    report = EvalReport(
        group_count=groups,
        protocol={
            "groups": groups,
            "metrics": list(metrics),
            "seed": seed,
            "embedding": extractor.name,
            "external_mode": "ground_truth",
            "distance": "equalized-pixel-l1",
        },
    )
    per_family = {fam.family_id: {"id": fam.family_id} for fam in families}

    if "cos" in metrics:
        predicted_groups = [
            [predictions[fam.family_id][g] for fam in families] for g in range(groups)
        ]
        gt_children = [[c.image for c in fam.children] for fam in families]
        report.cosine_mean = cosine_protocol(extractor, predicted_groups, gt_children)
        for fam in families:
            gt_emb = extractor.embed([c.image for c in fam.children])
            pred_emb = extractor.embed(predictions[fam.family_id])
            values = [
                cosine_similarity(pe, ge) for pe in pred_emb for ge in gt_emb
            ]
            per_family[fam.family_id]["cosine"] = float(np.mean(values))

    if "fid" in metrics:
        if reference_children is None:
            reference_children = [c.image for fam in manifest.families for c in fam.children]
            reference_children += [f.image for f in manifest.unpaired_children]
        if len(reference_children) < 2:
            raise ValidationError("need at least two reference child images for the Fréchet metric")
        group_values = []
        for g in range(groups):
            group_set = [predictions[fam.family_id][g] for fam in families]
            if len(group_set) < 2:
                raise ValidationError("need at least two families per group for the Fréchet metric")
            group_values.append(fid(group_set, reference_children, extractor.embed))
        report.fid_mean = float(np.mean(group_values))

    if "lpips" in metrics:
        report.lpips_mean = diversity_protocol(
            [predictions[fam.family_id] for fam in families]
        )
        for fam in families:
            per_family[fam.family_id]["lpips"] = diversity_protocol([predictions[fam.family_id]])

    report.per_family = [per_family[fam.family_id] for fam in families]
    return report
