"""Latent factor types, their sampling distributions, and gene normalization.

Three factor families drive generation: genetic vectors (standard normal),
binary external attribute vectors, and uniform variety vectors in [-1, 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import CHILD_TRAINED_ATTRS, PARENT_TRAINED_ATTRS, AttributeSet
from .exceptions import DegenerateInputError, ValidationError

DEFAULT_GENETIC_DIM = 480
DEFAULT_VARIETY_DIM = 32
EXTERNAL_DIM = 4

_FACTOR_MAGIC = b"LFV1"


def _as_float32_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


@dataclass
class GeneticFactor:
    values: np.ndarray
    domain_tag: str = "parent"

    def __post_init__(self):
        self.values = _as_float32_vector(self.values, "genetic factor")
        if self.domain_tag not in ("parent", "child"):
            raise ValidationError(f"domain_tag must be parent|child, got {self.domain_tag!r}")

    def __len__(self) -> int:
        return self.values.shape[0]

    def to_bytes(self) -> bytes:
        return factor_to_bytes(self.values)

    @classmethod
    def from_bytes(cls, buf: bytes, domain_tag: str = "parent") -> "GeneticFactor":
        return cls(factor_from_bytes(buf), domain_tag)


@dataclass
class ExternalFactor:
    values: np.ndarray
    domain_tag: str = "parent"

    def __post_init__(self):
        arr = _as_float32_vector(self.values, "external factor")
        if arr.shape[0] != EXTERNAL_DIM:
            raise ValidationError(f"external factor must have {EXTERNAL_DIM} entries, got {arr.shape[0]}")
        if not np.all(np.isin(arr, (0.0, 1.0))):
            raise ValidationError("external factor entries must be 0 or 1")
        if self.domain_tag not in ("parent", "child"):
            raise ValidationError(f"domain_tag must be parent|child, got {self.domain_tag!r}")
        self.values = arr

    def __len__(self) -> int:
        return EXTERNAL_DIM

    def to_bytes(self) -> bytes:
        return factor_to_bytes(self.values)


@dataclass
class VarietyFactor:
    values: np.ndarray

    def __post_init__(self):
        arr = _as_float32_vector(self.values, "variety factor")
        if arr.size and (arr.min() < -1.0 or arr.max() > 1.0):
            raise ValidationError("variety factor entries must lie in [-1, 1]")
        self.values = arr

    def __len__(self) -> int:
        return self.values.shape[0]

    def to_bytes(self) -> bytes:
        return factor_to_bytes(self.values)


@dataclass
class GaussianReference:
    """Standard-normal reference sample matched to the genetic dimension."""

    values: np.ndarray

    def __post_init__(self):
        self.values = _as_float32_vector(self.values, "gaussian reference")

    def __len__(self) -> int:
        return self.values.shape[0]


def sample_genetic(d_g: int, rng: np.random.Generator, domain_tag: str = "parent") -> GeneticFactor:
    """Draw i.i.d. standard-normal entries; deterministic per rng state."""
    if d_g < 1:
        raise ValidationError("d_g must be >= 1")
    return GeneticFactor(rng.standard_normal(d_g).astype(np.float32), domain_tag)


def sample_variety(d_v: int, rng: np.random.Generator) -> VarietyFactor:
    """Draw i.i.d. U(-1, 1) entries; deterministic per rng state."""
    if d_v < 1:
        raise ValidationError("d_v must be >= 1")
    return VarietyFactor(rng.uniform(-1.0, 1.0, size=d_v).astype(np.float32))


def sample_reference(d_g: int, rng: np.random.Generator) -> GaussianReference:
    if d_g < 1:
        raise ValidationError("d_g must be >= 1")
    return GaussianReference(rng.standard_normal(d_g).astype(np.float32))


def external_from_attrs(attrs: AttributeSet) -> ExternalFactor:
    """Project the trained attribute subset into a fixed-order 4-bit vector.

    Parent order: gender, moustache, glasses, expression.
    Child order: age, gender, glasses, expression.
    """
    order = PARENT_TRAINED_ATTRS if attrs.domain_tag == "parent" else CHILD_TRAINED_ATTRS
    values = np.array([attrs[name] for name in order], dtype=np.float32)
    return ExternalFactor(values, attrs.domain_tag)


def normalize_genetic(g: GeneticFactor) -> GeneticFactor:
    """Shift to mean 0 and scale to unit population standard deviation.

    Idempotent within 1e-6. Rejects (near-)constant vectors.
    """
    values = g.values.astype(np.float64)
    mean = values.mean()
    std = values.std()  # population convention: divide by n
    if std < 1e-12:
        raise DegenerateInputError("cannot normalize a zero-variance genetic factor")
    return GeneticFactor(((values - mean) / std).astype(np.float32), g.domain_tag)


def factor_to_bytes(values: np.ndarray) -> bytes:
    """Serialize: 4-byte magic + uint32 LE length + little-endian float32 data."""
    arr = np.asarray(values, dtype="<f4")
    return _FACTOR_MAGIC + struct.pack("<I", arr.shape[0]) + arr.tobytes()


def factor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != _FACTOR_MAGIC:
        raise ValidationError("bad factor header")
    (d,) = struct.unpack("<I", buf[4:8])
    expected = 8 + 4 * d
    if len(buf) != expected:
        raise ValidationError(f"factor payload length mismatch: expected {expected} bytes, got {len(buf)}")
    return np.frombuffer(buf, dtype="<f4", offset=8).copy()
