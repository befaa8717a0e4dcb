"""Training configuration, its plain-text file format, and presets."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .exceptions import ValidationError


@dataclass
class TrainConfig:
    """Hyperparameters for the 4-step schedule.

    Loss coefficients default to the shared vector
    (100, 10, 1, 0.1, 1, 1, 5, 0.8, 0.6, 0.4) and are identical across steps.
    """

    resolution: int = 128
    d_g: int = 480
    d_v: int = 32
    batch_size: int = 16
    # learning rates: parent pair (steps 1-2), child generator (step 1),
    # inverse encoder (step 2), mapper (step 3), global fine-tune (step 4)
    lr_parent: float = 2e-4
    lr_child: float = 1.5e-3
    lr_inverse: float = 1e-4
    lr_mapper: float = 1e-3
    lr_finetune: float = 1e-5
    epochs_step1: int = 200
    epochs_step2: int = 200
    epochs_step3: int = 200
    epochs_step4: int = 10
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_parent_recon: float = 100.0
    lambda_parent_cls: float = 10.0
    lambda_parent_adv: float = 1.0
    lambda_gene_adv: float = 0.1
    lambda_child_adv: float = 1.0
    lambda_child_cls: float = 1.0
    lambda_mode_seek: float = 5.0
    lambda_map2: float = 0.8
    lambda_map3: float = 0.6
    lambda_map4: float = 0.4
    # ablation switches; each removes one loss term or collapses the mapper
    no_parent_cls: bool = False
    no_child_cls: bool = False
    no_mode_seek: bool = False
    no_gene_adv: bool = False
    single_gene_map: bool = False
    inverse_in_image_space: bool = False
    # mechanics
    critic_steps: int = 1
    lipschitz: str = "gp"  # "gp" (gradient penalty) | "clip" (weight clipping)
    gp_weight: float = 10.0
    clip_value: float = 0.01
    progressive: bool = False
    inverse_steps_per_epoch: int = 20
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("lr_parent", "lr_child", "lr_inverse", "lr_mapper", "lr_finetune"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.resolution not in (16, 32, 64, 128):
            raise ValidationError("resolution must be a power of two between 16 and 128")
        if self.d_g < 1 or self.d_v < 1:
            raise ValidationError("d_g and d_v must be >= 1")
        for name in ("epochs_step1", "epochs_step2", "epochs_step3", "epochs_step4"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.lipschitz not in ("gp", "clip"):
            raise ValidationError("lipschitz must be 'gp' or 'clip'")
        if self.critic_steps < 1:
            raise ValidationError("critic_steps must be >= 1")
        if self.inverse_steps_per_epoch < 1:
            raise ValidationError("inverse_steps_per_epoch must be >= 1")

    @classmethod
    def toy(cls, seed: int = 0, **overrides) -> "TrainConfig":
        """Minutes-scale CPU preset: 32px faces, 32-d genes, 8-d variety."""
        values = dict(
            resolution=32,
            d_g=32,
            d_v=8,
            batch_size=16,
            # the paper-scale child rate assumes equalized-LR progressive training;
            # plain small-net training needs the parent-domain rate to stay finite
            lr_child=2e-4,
            epochs_step1=60,
            epochs_step2=100,
            epochs_step3=200,
            epochs_step4=4,
            inverse_steps_per_epoch=20,
            progressive=False,
            seed=seed,
        )
        values.update(overrides)
        return cls(**values)

    def mapper_branches(self) -> int:
        return 1 if self.single_gene_map else 4

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = int(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values: dict = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"config line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in fields:
                raise ValidationError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(fields[key].type, key, value)
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        return cls.from_text(path.read_text())

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _parse_value(annotation, key: str, value: str):
    kind = str(annotation)
    if "bool" in kind:
        lowered = value.lower()
        if lowered in ("1", "true", "yes"):
            return True
        if lowered in ("0", "false", "no"):
            return False
        raise ValidationError(f"config key {key!r}: expected boolean, got {value!r}")
    if "int" in kind:
        try:
            return int(value)
        except ValueError as exc:
            raise ValidationError(f"config key {key!r}: expected integer, got {value!r}") from exc
    if "float" in kind:
        try:
            return float(value)
        except ValueError as exc:
            raise ValidationError(f"config key {key!r}: expected number, got {value!r}") from exc
    return value
