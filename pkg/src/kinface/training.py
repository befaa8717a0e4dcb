"""Four-step training schedule, network bundle, checkpointing, and prediction.

Step 1 trains the parent encoder/generator pair and the child generator in
parallel; step 2 adds the genetic-factor critic and trains the inverse
encoder purely from latent samples; step 3 fits the gene mapper on encoded
parent/child pairs; step 4 fine-tunes everything at a small rate with frozen
normalization statistics. All randomness flows through named seeded streams,
so identical (config, seed, data) reproduce identical parameters.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import Checkpoint
from .child import (
    ChildDiscriminator,
    ChildGenerator,
    ChildInverseEncoder,
    loss_inverse,
    loss_inverse_image_space,
    loss_mode_seeking,
)
from .config import TrainConfig
from .data import DatasetManifest, FaceImage
from .exceptions import DependencyError, DivergenceError, ValidationError
from .factors import EXTERNAL_DIM, external_from_attrs
from .layers import derive_seed, images_to_tensor, init_network, make_generator, tensor_to_images
from .losses import attribute_bce, gradient_penalty
from .mapper import GeneMapper, assign_ground_truth
from .parent import GeneticDiscriminator, ParentEncoder, ParentGenerator, ParentImageDiscriminator

NETWORK_NAMES = (
    "parent_encoder",
    "parent_generator",
    "parent_disc",
    "gene_disc",
    "child_generator",
    "child_disc",
    "inverse_encoder",
    "mapper",
)


class LossLog:
    """Per-iteration loss curves: (step, epoch, iter, loss-name, value) rows."""

    def __init__(self):
        self.rows: list[tuple[int, int, int, str, float]] = []

    def add(self, step: int, epoch: int, iteration: int, name: str, value) -> None:
        v = float(value.item() if isinstance(value, torch.Tensor) else value)
        self.rows.append((step, epoch, iteration, name, v))
        if not np.isfinite(v):
            raise DivergenceError(f"non-finite loss {name!r} at step {step} epoch {epoch} iter {iteration}")

    def names(self) -> set[str]:
        return {row[3] for row in self.rows}

    def write_csv(self, path: str | Path, append: bool = False) -> Path:
        path = Path(path)
        mode = "a" if append and path.exists() else "w"
        with open(path, mode, newline="") as fh:
            writer = csv.writer(fh)
            if mode == "w":
                writer.writerow(("step", "epoch", "iter", "loss", "value"))
            writer.writerows(self.rows)
        return path


@dataclass
class NetworkBundle:
    """All trainable networks plus their config."""

    config: TrainConfig
    parent_encoder: ParentEncoder
    parent_generator: ParentGenerator
    parent_disc: ParentImageDiscriminator
    gene_disc: GeneticDiscriminator
    child_generator: ChildGenerator
    child_disc: ChildDiscriminator
    inverse_encoder: ChildInverseEncoder
    mapper: GeneMapper

    @classmethod
    def fresh(cls, config: TrainConfig) -> "NetworkBundle":
        r, d_g, d_v = config.resolution, config.d_g, config.d_v
        nets = {
            "parent_encoder": ParentEncoder(r, d_g),
            "parent_generator": ParentGenerator(r, d_g),
            "parent_disc": ParentImageDiscriminator(r),
            "gene_disc": GeneticDiscriminator(d_g),
            "child_generator": ChildGenerator(r, d_g, d_v),
            "child_disc": ChildDiscriminator(r),
            "inverse_encoder": ChildInverseEncoder(r, d_g),
            "mapper": GeneMapper(d_g, config.mapper_branches()),
        }
        for name, net in nets.items():
            init_network(net, make_generator(derive_seed(config.seed, f"init/{name}")))
        return cls(config=config, **nets)

    def modules(self) -> dict[str, torch.nn.Module]:
        return {name: getattr(self, name) for name in NETWORK_NAMES}

    def eval_mode(self) -> "NetworkBundle":
        for net in self.modules().values():
            net.eval()
        return self

    def net_state(self) -> dict:
        return {
            name: {k: v.detach().cpu().numpy().copy() for k, v in net.state_dict().items()}
            for name, net in self.modules().items()
        }

    def load_net_state(self, state: dict) -> None:
        for name, net in self.modules().items():
            if name not in state:
                continue
            net.load_state_dict({k: torch.from_numpy(np.asarray(v)) for k, v in state[name].items()})

    def to_checkpoint(self, step: int, epoch: int, extra: dict | None = None) -> Checkpoint:
        state = {"nets": self.net_state(), "config_text": self.config.to_text()}
        if extra:
            state.update(extra)
        return Checkpoint(step=step, epoch=epoch, config_hash=self.config.config_hash(), state=state)


def bundle_from_checkpoint(ckpt: Checkpoint) -> NetworkBundle:
    config = TrainConfig.from_text(ckpt.state["config_text"])
    if config.config_hash() != ckpt.config_hash:
        raise ValidationError("checkpoint config hash does not match its embedded config")
    bundle = NetworkBundle.fresh(config)
    bundle.load_net_state(ckpt.state["nets"])
    return bundle.eval_mode()


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


@dataclass
class _DomainData:
    images: torch.Tensor
    externals: torch.Tensor

    def __len__(self) -> int:
        return self.images.shape[0]


def _check_resolution(faces, config: TrainConfig) -> None:
    for face in faces:
        if face.image.resolution != config.resolution:
            raise ValidationError(
                f"face at {face.path!r} has resolution {face.image.resolution}, "
                f"config expects {config.resolution}"
            )


def _domain_data(faces, config: TrainConfig) -> _DomainData:
    _check_resolution(faces, config)
    images = images_to_tensor([f.image for f in faces])
    externals = torch.from_numpy(np.stack([external_from_attrs(f.attrs).values for f in faces]))
    return _DomainData(images, externals)


def _batches(n: int, batch_size: int, gen: torch.Generator):
    order = torch.randperm(n, generator=gen)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if idx.shape[0] > 1:  # batch statistics need at least two samples
            yield idx


# ---------------------------------------------------------------------------
# Stage trainers
# ---------------------------------------------------------------------------


def _adam(params, lr: float, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(config.beta1, config.beta2))


def _clip_weights(net: torch.nn.Module, value: float) -> None:
    with torch.no_grad():
        for p in net.parameters():
            p.clamp_(-value, value)


def _train_parent_stage(
    bundle: NetworkBundle,
    data: _DomainData,
    config: TrainConfig,
    log: LossLog,
    step_id: int,
    epochs: int,
    lr: float,
    gene_adv: bool,
    label: str,
) -> dict:
    enc, gen_x = bundle.parent_encoder, bundle.parent_generator
    disc, gene_disc = bundle.parent_disc, bundle.gene_disc
    rng = make_generator(derive_seed(config.seed, label))
    opt_g = _adam(itertools.chain(enc.parameters(), gen_x.parameters()), lr, config)
    opt_d = _adam(disc.parameters(), lr, config)
    opt_gd = _adam(gene_disc.parameters(), lr, config) if gene_adv else None
    gp = config.gp_weight if config.lipschitz == "gp" else 0.0

    for epoch in range(epochs):
        for it, idx in enumerate(_batches(len(data), config.batch_size, rng)):
            x, e = data.images[idx], data.externals[idx]
            for _ in range(config.critic_steps):
                with torch.no_grad():
                    g_enc, skips = enc(x)
                    x_hat = gen_x(g_enc, e, skips)
                d_adv = disc.critic(x_hat).mean() - disc.critic(x).mean()
                if gp:
                    d_adv = d_adv + gradient_penalty(disc.critic, x, x_hat, rng, gp)
                d_loss = d_adv
                if not config.no_parent_cls:
                    d_cls = attribute_bce(disc.classify(x), e) + attribute_bce(disc.classify(x_hat), e)
                    d_loss = d_loss + config.lambda_parent_cls * d_cls
                log.add(step_id, epoch, it, "parent/adv_d", d_adv)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                if config.lipschitz == "clip":
                    _clip_weights(disc, config.clip_value)
                if gene_adv:
                    u = torch.randn(g_enc.shape, generator=rng)
                    dg = gene_disc(g_enc).mean() - gene_disc(u).mean()
                    if gp:
                        dg = dg + gradient_penalty(gene_disc, u, g_enc, rng, gp)
                    log.add(step_id, epoch, it, "gene/adv_d", dg)
                    opt_gd.zero_grad()
                    dg.backward()
                    opt_gd.step()
                    if config.lipschitz == "clip":
                        _clip_weights(gene_disc, config.clip_value)

            g_enc, skips = enc(x)
            x_hat = gen_x(g_enc, e, skips)
            recon = (x - x_hat).abs().mean()
            adv = -disc.critic(x_hat).mean()
            total = config.lambda_parent_recon * recon + config.lambda_parent_adv * adv
            log.add(step_id, epoch, it, "parent/recon", recon)
            log.add(step_id, epoch, it, "parent/adv_g", adv)
            if not config.no_parent_cls:
                cls = attribute_bce(disc.classify(x_hat), e)
                total = total + config.lambda_parent_cls * cls
                log.add(step_id, epoch, it, "parent/cls", cls)
            if gene_adv:
                gene_term = -gene_disc(g_enc).mean()
                total = total + config.lambda_gene_adv * gene_term
                log.add(step_id, epoch, it, "gene/adv_g", gene_term)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()
    return {f"{label}/rng": rng.get_state().numpy(), f"{label}/optim_g": opt_g.state_dict()}


def _progressive_phase(config: TrainConfig, generator: ChildGenerator, epoch: int, epochs: int):
    """Map an epoch to (stage, alpha) for the fade-in doubling schedule."""
    if not config.progressive:
        return None, 1.0
    first = min(generator.n_stages, max(0, int(np.log2(16 // 4))))  # start at 16px
    stages = list(range(first, generator.n_stages + 1))
    per_phase = max(1, epochs // len(stages))
    phase = min(len(stages) - 1, epoch // per_phase)
    stage = stages[phase]
    if phase == 0:
        return stage, 1.0
    progress = (epoch - phase * per_phase) / per_phase
    return stage, float(min(1.0, 2.0 * progress))


def _train_child_stage(
    bundle: NetworkBundle,
    data: _DomainData,
    config: TrainConfig,
    log: LossLog,
    step_id: int,
    epochs: int,
    lr: float,
    label: str,
) -> dict:
    gen_y, disc = bundle.child_generator, bundle.child_disc
    rng = make_generator(derive_seed(config.seed, label))
    opt_g = _adam(gen_y.parameters(), lr, config)
    opt_d = _adam(disc.parameters(), lr, config)
    gp = config.gp_weight if config.lipschitz == "gp" else 0.0

    for epoch in range(epochs):
        stage, alpha = _progressive_phase(config, gen_y, epoch, epochs)
        for it, idx in enumerate(_batches(len(data), config.batch_size, rng)):
            y, e = data.images[idx], data.externals[idx]
            if stage is not None:
                y = F.adaptive_avg_pool2d(y, gen_y.stage_resolution(stage))
            n = y.shape[0]

            def sample_latents():
                g = torch.randn((n, config.d_g), generator=rng)
                v = torch.rand((n, config.d_v), generator=rng) * 2.0 - 1.0
                return g, v

            for _ in range(config.critic_steps):
                g, v = sample_latents()
                with torch.no_grad():
                    y_hat = gen_y(g, e, v, stage=stage, alpha=alpha)
                critic = lambda t: disc(t, stage=stage, alpha=alpha)[0]  # noqa: E731
                d_adv = critic(y_hat).mean() - critic(y).mean()
                if gp:
                    d_adv = d_adv + gradient_penalty(critic, y, y_hat, rng, gp)
                d_loss = d_adv
                if not config.no_child_cls:
                    classify = lambda t: disc(t, stage=stage, alpha=alpha)[1]  # noqa: E731
                    d_cls = attribute_bce(classify(y), e) + attribute_bce(classify(y_hat), e)
                    d_loss = d_loss + config.lambda_child_cls * d_cls
                log.add(step_id, epoch, it, "child/adv_d", d_adv)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                if config.lipschitz == "clip":
                    _clip_weights(disc, config.clip_value)

            g, v1 = sample_latents()
            y1 = gen_y(g, e, v1, stage=stage, alpha=alpha)
            adv = -disc(y1, stage=stage, alpha=alpha)[0].mean()
            total = config.lambda_child_adv * adv
            log.add(step_id, epoch, it, "child/adv_g", adv)
            if not config.no_child_cls:
                cls = attribute_bce(disc(y1, stage=stage, alpha=alpha)[1], e)
                total = total + config.lambda_child_cls * cls
                log.add(step_id, epoch, it, "child/cls", cls)
            if not config.no_mode_seek:
                v2 = torch.rand((n, config.d_v), generator=rng) * 2.0 - 1.0
                y2 = gen_y(g, e, v2, stage=stage, alpha=alpha)
                ms = loss_mode_seeking(y1, y2, v1, v2)
                total = total + config.lambda_mode_seek * ms
                log.add(step_id, epoch, it, "child/mode_seek", ms)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()
    return {f"{label}/rng": rng.get_state().numpy(), f"{label}/optim_g": opt_g.state_dict()}


def _train_inverse_stage(
    bundle: NetworkBundle,
    config: TrainConfig,
    log: LossLog,
    step_id: int,
    epochs: int,
    lr: float,
    label: str,
) -> dict:
    gen_y, enc_y = bundle.child_generator, bundle.inverse_encoder
    rng = make_generator(derive_seed(config.seed, label))
    opt = _adam(enc_y.parameters(), lr, config)
    gen_y.requires_grad_(False)
    loss_fn = loss_inverse_image_space if config.inverse_in_image_space else loss_inverse
    loss_name = "child/inverse_img" if config.inverse_in_image_space else "child/inverse"
    try:
        for epoch in range(epochs):
            for it in range(config.inverse_steps_per_epoch):
                g = torch.randn((config.batch_size, config.d_g), generator=rng)
                e = (torch.rand((config.batch_size, EXTERNAL_DIM), generator=rng) < 0.5).float()
                v = torch.rand((config.batch_size, config.d_v), generator=rng) * 2.0 - 1.0
                loss = loss_fn(enc_y, gen_y, g, e, v)
                log.add(step_id, epoch, it, loss_name, loss)
                opt.zero_grad()
                loss.backward()
                opt.step()
    finally:
        gen_y.requires_grad_(True)
    return {f"{label}/rng": rng.get_state().numpy(), f"{label}/optim": opt.state_dict()}


def _encode_family_latents(bundle: NetworkBundle, manifest: DatasetManifest, config: TrainConfig):
    """Frozen encoders produce (father, mother, branch-target) gene tensors per family."""
    enc_x, enc_y = bundle.parent_encoder, bundle.inverse_encoder
    enc_x.eval()
    enc_y.eval()
    fathers, mothers, targets = [], [], []
    with torch.no_grad():
        for fam in manifest.families:
            if not fam.children:
                continue  # no branch targets; skip the family
            gf, _ = enc_x(images_to_tensor([fam.father.image]))
            gm, _ = enc_x(images_to_tensor([fam.mother.image]))
            child_genes = enc_y(images_to_tensor([c.image for c in fam.children]))
            padded = assign_ground_truth(list(child_genes))
            fathers.append(gf[0])
            mothers.append(gm[0])
            targets.append(torch.stack(padded.targets))
    if not fathers:
        raise ValidationError("no family in the manifest has children; cannot train the mapper")
    return torch.stack(fathers), torch.stack(mothers), torch.stack(targets)


def _train_mapper_stage(
    bundle: NetworkBundle,
    manifest: DatasetManifest,
    config: TrainConfig,
    log: LossLog,
    step_id: int,
    epochs: int,
    lr: float,
    label: str,
) -> dict:
    mapper = bundle.mapper
    mapper.train()
    gf, gm, targets = _encode_family_latents(bundle, manifest, config)
    rng = make_generator(derive_seed(config.seed, label))
    opt = _adam(mapper.parameters(), lr, config)
    branch_weights = (1.0, config.lambda_map2, config.lambda_map3, config.lambda_map4)
    n_branches = mapper.n_branches
    for epoch in range(epochs):
        order = torch.randperm(gf.shape[0], generator=rng)
        for it, start in enumerate(range(0, gf.shape[0], config.batch_size)):
            idx = order[start : start + config.batch_size]
            preds = mapper(gf[idx], gm[idx])
            loss = torch.zeros(())
            for j in range(n_branches):
                term = (preds[:, j, :] - targets[idx][:, j, :]).abs().mean()
                loss = loss + branch_weights[j] * term
            log.add(step_id, epoch, it, "map/l1", loss)
            opt.zero_grad()
            loss.backward()
            opt.step()
    return {f"{label}/rng": rng.get_state().numpy(), f"{label}/optim": opt.state_dict()}


def _freeze_batchnorm(bundle: NetworkBundle):
    frozen = []
    for net in bundle.modules().values():
        for m in net.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.eval()
                frozen.append(m)
    return frozen


# ---------------------------------------------------------------------------
# Step orchestration
# ---------------------------------------------------------------------------


def run_step(
    step: int,
    config: TrainConfig,
    manifest: DatasetManifest,
    resume: Checkpoint | None = None,
    log: LossLog | None = None,
) -> Checkpoint:
    """Run one schedule step and return its checkpoint.

    Steps 2-4 require the previous step's checkpoint via ``resume``.
    """
    if step not in (1, 2, 3, 4):
        raise ValidationError(f"step must be 1..4, got {step}")
    log = log if log is not None else LossLog()

    if step == 1:
        bundle = NetworkBundle.fresh(config)
    else:
        if resume is None:
            raise DependencyError(f"step {step} requires the step {step - 1} checkpoint")
        if resume.step != step - 1:
            raise DependencyError(f"step {step} requires a step {step - 1} checkpoint, got step {resume.step}")
        if resume.config_hash != config.config_hash():
            raise DependencyError("resume checkpoint was produced with a different config")
        bundle = NetworkBundle.fresh(config)
        bundle.load_net_state(resume.state["nets"])

    extra: dict = {}
    try:
        if step == 1:
            parents = _domain_data(manifest.parent_faces(), config)
            children = _domain_data(manifest.child_faces(), config)
            extra.update(
                _train_parent_stage(
                    bundle, parents, config, log, 1, config.epochs_step1, config.lr_parent, False, "step1/parent"
                )
            )
            extra.update(
                _train_child_stage(
                    bundle, children, config, log, 1, config.epochs_step1, config.lr_child, "step1/child"
                )
            )
            epochs = config.epochs_step1
        elif step == 2:
            parents = _domain_data(manifest.parent_faces(), config)
            extra.update(
                _train_parent_stage(
                    bundle,
                    parents,
                    config,
                    log,
                    2,
                    config.epochs_step2,
                    config.lr_parent,
                    not config.no_gene_adv,
                    "step2/parent",
                )
            )
            extra.update(
                _train_inverse_stage(
                    bundle, config, log, 2, config.epochs_step2, config.lr_inverse, "step2/inverse"
                )
            )
            epochs = config.epochs_step2
        elif step == 3:
            extra.update(
                _train_mapper_stage(
                    bundle, manifest, config, log, 3, config.epochs_step3, config.lr_mapper, "step3/mapper"
                )
            )
            epochs = config.epochs_step3
        else:
            _freeze_batchnorm(bundle)
            parents = _domain_data(manifest.parent_faces(), config)
            children = _domain_data(manifest.child_faces(), config)
            lr = config.lr_finetune
            epochs = config.epochs_step4
            extra.update(
                _train_parent_stage(
                    bundle, parents, config, log, 4, epochs, lr, not config.no_gene_adv, "step4/parent"
                )
            )
            extra.update(_train_child_stage(bundle, children, config, log, 4, epochs, lr, "step4/child"))
            extra.update(_train_inverse_stage(bundle, config, log, 4, epochs, lr, "step4/inverse"))
            extra.update(_train_mapper_stage(bundle, manifest, config, log, 4, epochs, lr, "step4/mapper"))
    except DivergenceError as exc:
        if exc.checkpoint is None:
            exc.checkpoint = bundle.to_checkpoint(step, epoch=-1)
        raise
    bundle.eval_mode()
    return bundle.to_checkpoint(step, epoch=epochs, extra={"stage_state": extra})


def run_all(
    config: TrainConfig,
    manifest: DatasetManifest,
    out_dir: str | Path | None = None,
    log: LossLog | None = None,
) -> list[Checkpoint]:
    """Run steps 1-4 in order, optionally saving each checkpoint."""
    log = log if log is not None else LossLog()
    checkpoints: list[Checkpoint] = []
    previous = None
    for step in (1, 2, 3, 4):
        ckpt = run_step(step, config, manifest, resume=previous, log=log)
        if out_dir is not None:
            ckpt.save(Path(out_dir) / f"checkpoint_step{step}.kfc")
        checkpoints.append(ckpt)
        previous = ckpt
    return checkpoints


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValidationError("an rng (seed or numpy Generator) is required")
    return np.random.default_rng(int(rng))


def predict_children(
    bundle: NetworkBundle,
    father: FaceImage,
    mother: FaceImage,
    n: int,
    external_mode: str = "random",
    rng=None,
    child_attrs=None,
) -> list[FaceImage]:
    """Predict n child faces for one parent pair.

    Branch choice is round-robin over the mapper outputs; each sample draws a
    fresh variety factor. ``external_mode='ground_truth'`` cycles through the
    supplied child attribute sets, ``'random'`` samples attribute bits.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if external_mode not in ("ground_truth", "random"):
        raise ValidationError(f"external_mode must be ground_truth|random, got {external_mode!r}")
    if external_mode == "ground_truth" and not child_attrs:
        raise ValidationError("ground_truth external mode needs child attribute sets")
    rng = _as_rng(rng)
    config = bundle.config
    bundle.eval_mode()
    with torch.no_grad():
        gf, _ = bundle.parent_encoder(images_to_tensor([father]))
        gm, _ = bundle.parent_encoder(images_to_tensor([mother]))
        branches = bundle.mapper(gf, gm)[0]
        images = []
        for i in range(n):
            g = branches[i % branches.shape[0]].unsqueeze(0)
            v = torch.from_numpy(rng.uniform(-1.0, 1.0, size=(1, config.d_v)).astype(np.float32))
            if external_mode == "ground_truth":
                e_np = external_from_attrs(child_attrs[i % len(child_attrs)]).values
            else:
                e_np = rng.integers(0, 2, size=EXTERNAL_DIM).astype(np.float32)
            e = torch.from_numpy(np.asarray(e_np, dtype=np.float32)).unsqueeze(0)
            images.append(tensor_to_images(bundle.child_generator(g, e, v))[0])
    return images


def validation_forward(bundle: NetworkBundle, manifest: DatasetManifest, seed: int = 0) -> dict[str, np.ndarray]:
    """Fixed forward pass used for reproducibility and reload checks."""
    if not manifest.families:
        raise ValidationError("manifest has no families")
    fam = manifest.families[0]
    rng = np.random.default_rng(seed)
    bundle.eval_mode()
    with torch.no_grad():
        gf, _ = bundle.parent_encoder(images_to_tensor([fam.father.image]))
        gm, _ = bundle.parent_encoder(images_to_tensor([fam.mother.image]))
        branches = bundle.mapper(gf, gm)[0]
        v = torch.from_numpy(rng.uniform(-1.0, 1.0, size=(2, bundle.config.d_v)).astype(np.float32))
        e = torch.from_numpy(rng.integers(0, 2, size=(2, EXTERNAL_DIM)).astype(np.float32))
        g = branches[:2] if branches.shape[0] >= 2 else branches.expand(2, -1)
        images = bundle.child_generator(g, e, v)
    return {
        "father_gene": gf[0].numpy(),
        "mother_gene": gm[0].numpy(),
        "branches": branches.numpy(),
        "images": images.numpy(),
    }
