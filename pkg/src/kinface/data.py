"""Face images, attribute labels, family records, manifests, and the synthetic-family oracle.

The oracle draws procedural faces whose geometry and hue are a deterministic
function of an 8-entry genome, so tests can check factor recovery against
known ground truth. External attribute toggles only add discrete overlays,
and a variety seed only jitters pose and overlay placement by at most
``JITTER_PIXELS`` pixels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import ManifestError, ValidationError

ATTRIBUTE_NAMES = ("gender", "age", "expression", "glasses", "moustache", "skin_color")
PARENT_TRAINED_ATTRS = ("gender", "moustache", "glasses", "expression")
CHILD_TRAINED_ATTRS = ("age", "gender", "glasses", "expression")

GENOME_PARAM_NAMES = (
    "face_oval",
    "eye_spacing",
    "eye_size",
    "nose_size",
    "mouth_width",
    "hue_r",
    "hue_g",
    "hue_b",
)

VALID_RESOLUTIONS = (16, 32, 64, 128)

#: Maximum pose / overlay placement jitter, in pixels.
JITTER_PIXELS = 2


@dataclass
class FaceImage:
    """Square RGB image with float32 pixels in [-1, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValidationError(f"face image must be HxWx3, got shape {px.shape}")
        h, w, _ = px.shape
        if h != w:
            raise ValidationError(f"face image must be square, got {h}x{w}")
        if h not in VALID_RESOLUTIONS:
            raise ValidationError(
                f"resolution must be a power of two in {VALID_RESOLUTIONS}, got {h}"
            )
        if not np.all(np.isfinite(px)):
            raise ValidationError("face image contains non-finite pixels")
        if px.min() < -1.0 or px.max() > 1.0:
            raise ValidationError(
                f"pixels outside [-1, 1]: min={px.min():.4f} max={px.max():.4f}"
            )
        self.pixels = px

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "FaceImage":
        """Map 8-bit pixels to [-1, 1] via 2*p/255 - 1 (0 -> -1.0, 255 -> 1.0)."""
        arr = np.asarray(arr, dtype=np.float64)
        return cls((2.0 * arr / 255.0 - 1.0).astype(np.float32))

    def to_uint8(self) -> np.ndarray:
        """Inverse of :meth:`from_uint8`; round-trips 8-bit sources exactly."""
        return np.clip(np.rint((self.pixels.astype(np.float64) + 1.0) * 255.0 / 2.0), 0, 255).astype(np.uint8)

    @classmethod
    def load_png(cls, path: str | Path, resolution: int | None = None) -> "FaceImage":
        path = Path(path)
        if not path.is_file():
            raise ManifestError(f"image file not found: {path}")
        with Image.open(path) as im:
            im = im.convert("RGB")
            if resolution is not None and im.size != (resolution, resolution):
                im = im.resize((resolution, resolution), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.uint8)
        return cls.from_uint8(arr)

    def save_png(self, path: str | Path) -> None:
        Image.fromarray(self.to_uint8(), mode="RGB").save(Path(path), format="PNG")


@dataclass
class AttributeSet:
    """Binary labels for one face; carries all six dataset attributes."""

    labels: dict[str, int]
    domain_tag: str  # "parent" | "child"

    def __post_init__(self):
        if self.domain_tag not in ("parent", "child"):
            raise ValidationError(f"domain_tag must be parent|child, got {self.domain_tag!r}")
        if set(self.labels) != set(ATTRIBUTE_NAMES):
            raise ValidationError(
                f"attribute labels must cover exactly {sorted(ATTRIBUTE_NAMES)}, "
                f"got {sorted(self.labels)}"
            )
        for name in ATTRIBUTE_NAMES:
            if self.labels[name] not in (0, 1):
                raise ValidationError(
                    f"attribute {name!r} must be 0 or 1, got {self.labels[name]!r}"
                )
        # canonical key order for serialization
        self.labels = {name: int(self.labels[name]) for name in ATTRIBUTE_NAMES}

    def trained_names(self) -> tuple[str, ...]:
        return PARENT_TRAINED_ATTRS if self.domain_tag == "parent" else CHILD_TRAINED_ATTRS

    def __getitem__(self, name: str) -> int:
        return self.labels[name]

    def with_flipped(self, name: str) -> "AttributeSet":
        labels = dict(self.labels)
        labels[name] = 1 - labels[name]
        return AttributeSet(labels, self.domain_tag)


@dataclass
class LabeledFace:
    """A face image together with its attribute labels.

    ``path`` is the image location relative to the manifest (set when the
    face came from / goes to disk). ``genome`` is kept for oracle-generated
    faces so tests can compare against ground truth; it is never serialized.
    """

    image: FaceImage
    attrs: AttributeSet
    path: str | None = None
    genome: "SynthGenome | None" = None


@dataclass
class FamilyRecord:
    father: LabeledFace
    mother: LabeledFace
    children: list[LabeledFace]
    family_id: str

    def __post_init__(self):
        if self.father.attrs["gender"] != 1:
            raise ValidationError(f"family {self.family_id}: father must have gender=1")
        if self.mother.attrs["gender"] != 0:
            raise ValidationError(f"family {self.family_id}: mother must have gender=0")
        for face in (self.father, self.mother):
            if face.attrs.domain_tag != "parent":
                raise ValidationError(f"family {self.family_id}: parent face tagged {face.attrs.domain_tag!r}")
        for child in self.children:
            if child.attrs.domain_tag != "child":
                raise ValidationError(f"family {self.family_id}: child face tagged {child.attrs.domain_tag!r}")


@dataclass
class DatasetManifest:
    families: list[FamilyRecord]
    unpaired_children: list[LabeledFace] = field(default_factory=list)
    split_tag: str = "train"

    def __post_init__(self):
        if self.split_tag not in ("train", "val"):
            raise ValidationError(f"split_tag must be train|val, got {self.split_tag!r}")

    def all_faces(self) -> list[LabeledFace]:
        faces = []
        for fam in self.families:
            faces.extend([fam.father, fam.mother, *fam.children])
        faces.extend(self.unpaired_children)
        return faces

    def parent_faces(self) -> list[LabeledFace]:
        faces = []
        for fam in self.families:
            faces.extend([fam.father, fam.mother])
        return faces

    def child_faces(self) -> list[LabeledFace]:
        faces = []
        for fam in self.families:
            faces.extend(fam.children)
        faces.extend(self.unpaired_children)
        return faces


@dataclass
class SynthGenome:
    """Procedural face parameters, each in [0, 1]."""

    params: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64)
        if p.shape != (len(GENOME_PARAM_NAMES),):
            raise ValidationError(f"genome must have {len(GENOME_PARAM_NAMES)} entries, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise ValidationError("genome entries must be finite and within [0, 1]")
        self.params = p

    def serialized(self) -> bytes:
        return self.params.astype("<f8").tobytes()


# ---------------------------------------------------------------------------
# Procedural face renderer
# ---------------------------------------------------------------------------


def _geometry(genome: SynthGenome, scale: float) -> dict:
    """Normalized-coordinate layout of the face parts at a given face scale."""
    p = genome.params
    ry = 0.38 * scale
    rx = ry * (0.72 + 0.33 * p[0])
    eye_r = (0.030 + 0.035 * p[2]) * scale
    mouth_w = (0.055 + 0.085 * p[4]) * scale
    glasses_in = eye_r + 0.012 * scale
    return {
        "rx": rx,
        "ry": ry,
        "eye_dx": (0.10 + 0.08 * p[1]) * scale,
        "eye_dy": -0.14 * scale,
        "eye_r": eye_r,
        "nose_rx": (0.020 + 0.022 * p[3]) * scale,
        "nose_ry": (0.045 + 0.045 * p[3]) * scale,
        "nose_dy": 0.035 * scale,
        "mouth_w": mouth_w,
        "mouth_dy": 0.20 * scale,
        "mouth_t": 0.024 * scale,
        "mouth_arc": 0.045 * scale,
        "mst_w": (0.055 + 0.045 * p[4]) * scale,
        "mst_dy": 0.135 * scale,
        "mst_h": 0.016 * scale,
        "glasses_in": glasses_in,
        "glasses_out": glasses_in + 0.014 * scale,
        "bridge_h": 0.007 * scale,
        "face_color": 0.2 + 0.6 * p[5:8],
    }


def _grids(resolution: int):
    c = (np.arange(resolution, dtype=np.float64) + 0.5) / resolution
    return np.meshgrid(c, c)  # xx varies along columns, yy along rows


def _ellipse(xx, yy, cx, cy, rx, ry):
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def _paint(img, mask, color):
    img[mask] = color


_BG_GRAY = 0.88
_AGE_SCALE = 0.85  # face-scale shrink applied when age (young) is set


def render_synth_face(
    genome: SynthGenome,
    external: AttributeSet,
    variety_seed: int,
    resolution: int = 128,
) -> FaceImage:
    """Rasterize a procedural face.

    Deterministic in (genome, external, variety_seed). The genome alone fixes
    geometry and hue; external toggles add overlays (glasses rings, moustache
    bar, mouth arc direction, age face shrink); the variety seed jitters pose
    and overlay placement within +-JITTER_PIXELS pixels.
    """
    if resolution not in VALID_RESOLUTIONS:
        raise ValidationError(f"resolution must be one of {VALID_RESOLUTIONS}")
    rng = np.random.default_rng(int(variety_seed) & 0xFFFFFFFF)
    # draw all jitters unconditionally so streams stay aligned across toggles
    face_j = rng.integers(-JITTER_PIXELS, JITTER_PIXELS + 1, size=2)
    glasses_j = rng.integers(-JITTER_PIXELS, JITTER_PIXELS + 1, size=2)
    mst_j = rng.integers(-JITTER_PIXELS, JITTER_PIXELS + 1, size=2)

    scale = _AGE_SCALE if external["age"] else 1.0
    geo = _geometry(genome, scale)
    xx, yy = _grids(resolution)
    cx = 0.5 + face_j[0] / resolution
    cy = 0.5 + face_j[1] / resolution

    img = np.full((resolution, resolution, 3), _BG_GRAY, dtype=np.float64)
    _paint(img, _ellipse(xx, yy, cx, cy, geo["rx"], geo["ry"]), geo["face_color"])

    nose_color = geo["face_color"] * 0.72
    _paint(
        img,
        _ellipse(xx, yy, cx, cy + geo["nose_dy"], geo["nose_rx"], geo["nose_ry"]),
        nose_color,
    )

    for side in (-1.0, 1.0):
        _paint(
            img,
            _ellipse(xx, yy, cx + side * geo["eye_dx"], cy + geo["eye_dy"], geo["eye_r"], geo["eye_r"]),
            np.array([0.08, 0.08, 0.08]),
        )

    # mouth: arc bends up for expression=1 (smile), down otherwise
    arc = geo["mouth_arc"] if external["expression"] else -geo["mouth_arc"]
    xi = (xx - cx) / geo["mouth_w"]
    mouth_y = cy + geo["mouth_dy"] + arc * (xi**2 - 0.5)
    mouth_mask = (np.abs(xi) <= 1.0) & (np.abs(yy - mouth_y) <= geo["mouth_t"])
    _paint(img, mouth_mask, np.array([0.55, 0.18, 0.18]))

    if external["moustache"]:
        mx = cx + mst_j[0] / resolution
        my = cy + geo["mst_dy"] + mst_j[1] / resolution
        mst_mask = (np.abs(xx - mx) <= geo["mst_w"]) & (np.abs(yy - my) <= geo["mst_h"])
        _paint(img, mst_mask, np.array([0.10, 0.10, 0.10]))

    if external["glasses"]:
        gx = cx + glasses_j[0] / resolution
        gy = cy + geo["eye_dy"] + glasses_j[1] / resolution
        dark = np.array([0.05, 0.05, 0.05])
        for side in (-1.0, 1.0):
            ex = gx + side * geo["eye_dx"]
            outer = _ellipse(xx, yy, ex, gy, geo["glasses_out"], geo["glasses_out"])
            inner = _ellipse(xx, yy, ex, gy, geo["glasses_in"], geo["glasses_in"])
            _paint(img, outer & ~inner, dark)
        bridge = (
            (np.abs(yy - gy) <= geo["bridge_h"])
            & (xx >= gx - geo["eye_dx"])
            & (xx <= gx + geo["eye_dx"])
        )
        _paint(img, bridge, dark)

    return FaceImage((2.0 * np.clip(img, 0.0, 1.0) - 1.0).astype(np.float32))


def _pixel_box(resolution, x0, x1, y0, y1, pad_px) -> np.ndarray:
    mask = np.zeros((resolution, resolution), dtype=bool)
    i0 = max(0, int(np.floor(y0 * resolution)) - pad_px)
    i1 = min(resolution, int(np.ceil(y1 * resolution)) + pad_px)
    j0 = max(0, int(np.floor(x0 * resolution)) - pad_px)
    j1 = min(resolution, int(np.ceil(x1 * resolution)) + pad_px)
    mask[i0:i1, j0:j1] = True
    return mask


def attribute_masks(genome: SynthGenome, resolution: int) -> dict[str, np.ndarray]:
    """Conservative per-attribute regions: a toggle can only change pixels inside its mask.

    Boxes are taken over both age scales and dilated to cover pose and overlay
    jitter, so they hold for every variety seed.
    """
    pose_pad = JITTER_PIXELS
    overlay_pad = 2 * JITTER_PIXELS + 1  # pose + overlay jitter + rounding margin
    masks: dict[str, np.ndarray] = {}

    boxes = {"glasses": [], "moustache": [], "expression": []}
    for scale in (_AGE_SCALE, 1.0):
        g = _geometry(genome, scale)
        r = g["glasses_out"]
        boxes["glasses"].append(
            (0.5 - g["eye_dx"] - r, 0.5 + g["eye_dx"] + r, 0.5 + g["eye_dy"] - r, 0.5 + g["eye_dy"] + r)
        )
        boxes["moustache"].append(
            (0.5 - g["mst_w"], 0.5 + g["mst_w"], 0.5 + g["mst_dy"] - g["mst_h"], 0.5 + g["mst_dy"] + g["mst_h"])
        )
        span = g["mouth_t"] + g["mouth_arc"]
        boxes["expression"].append(
            (0.5 - g["mouth_w"], 0.5 + g["mouth_w"], 0.5 + g["mouth_dy"] - span, 0.5 + g["mouth_dy"] + span)
        )
    for name, per_scale in boxes.items():
        pad = overlay_pad if name in ("glasses", "moustache") else pose_pad + 1
        mask = np.zeros((resolution, resolution), dtype=bool)
        for (x0, x1, y0, y1) in per_scale:
            mask |= _pixel_box(resolution, x0, x1, y0, y1, pad)
        masks[name] = mask

    # age rescales the whole face, so its region is the full (largest) face disk
    g = _geometry(genome, 1.0)
    xx, yy = _grids(resolution)
    pad = (pose_pad + 1) / resolution
    masks["age"] = _ellipse(xx, yy, 0.5, 0.5, g["rx"] + pad, g["ry"] + pad)
    return masks


def variation_mask(genome: SynthGenome, resolution: int) -> np.ndarray:
    """Union of every region that external toggles or variety jitter can touch."""
    masks = attribute_masks(genome, resolution)
    out = np.zeros((resolution, resolution), dtype=bool)
    for m in masks.values():
        out |= m
    return out


def face_core_mask(genome: SynthGenome, resolution: int) -> np.ndarray:
    """Region guaranteed to lie inside the face at every age scale and jitter."""
    g = _geometry(genome, _AGE_SCALE)
    xx, yy = _grids(resolution)
    pad = (JITTER_PIXELS + 1) / resolution
    return _ellipse(xx, yy, 0.5, 0.5, g["rx"] - pad, g["ry"] - pad)


# ---------------------------------------------------------------------------
# Synthetic families
# ---------------------------------------------------------------------------

#: Default Bernoulli marginals for sampled attributes (gender is structural).
DEFAULT_MARGINALS = {
    "parent": {"age": 0.10, "expression": 0.70, "glasses": 0.20, "skin_color": 0.5},
    "child": {"age": 0.85, "expression": 0.70, "glasses": 0.10, "skin_color": 0.5},
    "father_moustache": 0.40,
}

#: Per-entry bound on the child-genome mutation term.
MUTATION_BOUND = 0.05


def _sample_attrs(rng, role: str, marginals) -> AttributeSet:
    if role == "father":
        base = {"gender": 1, "moustache": int(rng.random() < marginals["father_moustache"])}
        tag, probs = "parent", marginals["parent"]
    elif role == "mother":
        base = {"gender": 0, "moustache": 0}
        tag, probs = "parent", marginals["parent"]
    else:
        base = {"gender": int(rng.random() < 0.5), "moustache": 0}
        tag, probs = "child", marginals["child"]
    for name in ("age", "expression", "glasses", "skin_color"):
        base[name] = int(rng.random() < probs[name])
    return AttributeSet(base, tag)


def _child_genome(rng, father: SynthGenome, mother: SynthGenome) -> SynthGenome:
    alpha = rng.uniform(0.3, 0.7)
    mutation = rng.uniform(-MUTATION_BOUND, MUTATION_BOUND, size=len(GENOME_PARAM_NAMES))
    blended = alpha * father.params + (1.0 - alpha) * mother.params + mutation
    return SynthGenome(np.clip(blended, 0.0, 1.0))


def _render_face(rng, genome, attrs, resolution) -> LabeledFace:
    seed = int(rng.integers(0, 2**31))
    img = render_synth_face(genome, attrs, seed, resolution)
    return LabeledFace(image=img, attrs=attrs, genome=genome)


def synth_family(
    seed: int,
    n_children: int,
    resolution: int = 128,
    family_id: str | None = None,
    marginals=None,
) -> FamilyRecord:
    """Deterministically generate one family from a seed.

    Child genomes are alpha-blends of the parent genomes (alpha ~ U(0.3, 0.7))
    plus a mutation bounded by +-MUTATION_BOUND per entry, clamped to [0, 1].
    """
    if n_children < 0:
        raise ValidationError("n_children must be >= 0")
    marginals = marginals or DEFAULT_MARGINALS
    rng = np.random.default_rng(seed)
    father_g = SynthGenome(rng.uniform(0.0, 1.0, size=len(GENOME_PARAM_NAMES)))
    mother_g = SynthGenome(rng.uniform(0.0, 1.0, size=len(GENOME_PARAM_NAMES)))
    father = _render_face(rng, father_g, _sample_attrs(rng, "father", marginals), resolution)
    mother = _render_face(rng, mother_g, _sample_attrs(rng, "mother", marginals), resolution)
    children = []
    for _ in range(n_children):
        genome = _child_genome(rng, father_g, mother_g)
        children.append(_render_face(rng, genome, _sample_attrs(rng, "child", marginals), resolution))
    return FamilyRecord(
        father=father,
        mother=mother,
        children=children,
        family_id=family_id if family_id is not None else f"fam-{seed:08d}",
    )


def parse_child_count_law(spec) -> "callable":
    """Parse a child-count distribution spec into rng -> int.

    Accepted forms: an int (constant), ``constant:K``, ``uniform:LO:HI``
    (inclusive), ``poisson:MEAN``.
    """
    if isinstance(spec, int):
        return lambda rng: spec
    if callable(spec):
        return spec
    parts = str(spec).split(":")
    kind = parts[0]
    if kind == "constant" and len(parts) == 2:
        k = int(parts[1])
        return lambda rng: k
    if kind == "uniform" and len(parts) == 3:
        lo, hi = int(parts[1]), int(parts[2])
        if hi < lo:
            raise ValidationError(f"bad child count law {spec!r}: hi < lo")
        return lambda rng: int(rng.integers(lo, hi + 1))
    if kind == "poisson" and len(parts) == 2:
        mean = float(parts[1])
        return lambda rng: int(rng.poisson(mean))
    raise ValidationError(f"unrecognized child count law: {spec!r}")


def synth_dataset(
    n_families: int,
    seed: int,
    child_count_law="uniform:1:4",
    split: str = "train",
    n_unpaired: int = 0,
    resolution: int = 128,
) -> DatasetManifest:
    """Generate a manifest of independent synthetic families, reproducible per seed."""
    if n_families < 1:
        raise ValidationError("n_families must be >= 1")
    law = parse_child_count_law(child_count_law)
    rng = np.random.default_rng(seed)
    families = []
    for idx in range(n_families):
        fam_seed = int(rng.integers(0, 2**63))
        n_children = law(rng)
        families.append(
            synth_family(fam_seed, n_children, resolution=resolution, family_id=f"{split}-{idx:04d}")
        )
    unpaired = []
    for _ in range(n_unpaired):
        genome = SynthGenome(rng.uniform(0.0, 1.0, size=len(GENOME_PARAM_NAMES)))
        unpaired.append(_render_face(rng, genome, _sample_attrs(rng, "child", DEFAULT_MARGINALS), resolution))
    return DatasetManifest(families=families, unpaired_children=unpaired, split_tag=split)


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------


def _face_to_json(face: LabeledFace) -> dict:
    if face.path is None:
        raise ValidationError("face has no image path; save the dataset images first")
    return {"image": face.path, "attrs": dict(face.attrs.labels)}


def _face_from_json(obj, root: Path, domain_tag: str, owner: str, resolution) -> LabeledFace:
    attrs_obj = obj.get("attrs")
    if not isinstance(attrs_obj, dict):
        raise ValidationError(f"{owner}: missing attrs object")
    try:
        attrs = AttributeSet({k: v for k, v in attrs_obj.items()}, domain_tag)
    except ValidationError as exc:
        raise ValidationError(f"{owner}: {exc}") from exc
    rel = obj.get("image")
    if not isinstance(rel, str):
        raise ValidationError(f"{owner}: missing image path")
    image = FaceImage.load_png(root / rel, resolution=resolution)
    return LabeledFace(image=image, attrs=attrs, path=rel)


def load_manifest(path: str | Path, resolution: int | None = None) -> DatasetManifest:
    """Load a manifest JSON document and decode every referenced image.

    Pixel values are mapped to [-1, 1]; images are rescaled to ``resolution``
    when given. Validation failures name the offending family.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    root = path.parent
    split = doc.get("split")
    families = []
    seen_paths: set[str] = set()

    def _claim(rel: str, owner: str):
        if rel in seen_paths:
            raise ValidationError(f"{owner}: duplicate face image {rel!r}")
        seen_paths.add(rel)

    for fam_obj in doc.get("families", []):
        fam_id = str(fam_obj.get("id", "<missing id>"))
        father = _face_from_json(fam_obj.get("father", {}), root, "parent", f"family {fam_id} (father)", resolution)
        mother = _face_from_json(fam_obj.get("mother", {}), root, "parent", f"family {fam_id} (mother)", resolution)
        children = [
            _face_from_json(c, root, "child", f"family {fam_id} (child {i})", resolution)
            for i, c in enumerate(fam_obj.get("children", []))
        ]
        for face in (father, mother, *children):
            _claim(face.path, f"family {fam_id}")
        families.append(FamilyRecord(father=father, mother=mother, children=children, family_id=fam_id))
    unpaired = []
    for i, obj in enumerate(doc.get("unpaired_children", [])):
        face = _face_from_json(obj, root, "child", f"unpaired child {i}", resolution)
        _claim(face.path, f"unpaired child {i}")
        unpaired.append(face)
    return DatasetManifest(families=families, unpaired_children=unpaired, split_tag=split)


def manifest_to_json(manifest: DatasetManifest) -> str:
    doc = {
        "split": manifest.split_tag,
        "families": [
            {
                "id": fam.family_id,
                "father": _face_to_json(fam.father),
                "mother": _face_to_json(fam.mother),
                "children": [_face_to_json(c) for c in fam.children],
            }
            for fam in manifest.families
        ],
        "unpaired_children": [_face_to_json(f) for f in manifest.unpaired_children],
    }
    return json.dumps(doc, indent=2) + "\n"


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write the manifest JSON document (images must already be on disk)."""
    path = Path(path)
    path.write_text(manifest_to_json(manifest))
    return path


def save_dataset(manifest: DatasetManifest, out_dir: str | Path) -> Path:
    """Write PNGs under ``out_dir/images`` plus ``out_dir/manifest.json``."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    for fam in manifest.families:
        for role, face in (("father", fam.father), ("mother", fam.mother)):
            if face.path is None:
                face.path = f"images/{fam.family_id}_{role}.png"
            face.image.save_png(out_dir / face.path)
        for i, child in enumerate(fam.children):
            if child.path is None:
                child.path = f"images/{fam.family_id}_child{i}.png"
            child.image.save_png(out_dir / child.path)
    for i, face in enumerate(manifest.unpaired_children):
        if face.path is None:
            face.path = f"images/unpaired_{i:04d}.png"
        face.image.save_png(out_dir / face.path)
    return write_manifest(manifest, out_dir / "manifest.json")


def check_split_disjoint(a: DatasetManifest, b: DatasetManifest) -> None:
    """Raise if any face image path appears in both manifests."""
    paths_a = {f.path for f in a.all_faces() if f.path is not None}
    paths_b = {f.path for f in b.all_faces() if f.path is not None}
    shared = paths_a & paths_b
    if shared:
        raise ValidationError(f"faces shared across splits: {sorted(shared)[:5]}")
