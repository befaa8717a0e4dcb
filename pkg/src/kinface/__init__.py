"""Kinship face synthesis toolkit.

Disentangles face images into genetic, external, and variety latent factors
per domain (parents vs. children), learns a multimodal mapping from parent
genetic factors to candidate child genetic factors, and evaluates predictions
with grouped cosine/Fréchet/diversity protocols. A deterministic procedural
face oracle stands in for real family data at desk scale.
"""

from .checkpoint import Checkpoint
from .config import TrainConfig
from .data import (
    AttributeSet,
    DatasetManifest,
    FaceImage,
    FamilyRecord,
    LabeledFace,
    SynthGenome,
    load_manifest,
    render_synth_face,
    save_dataset,
    synth_dataset,
    synth_family,
    write_manifest,
)
from .evaluation import (
    EvalReport,
    SyntheticIdentityEmbedding,
    cosine_protocol,
    diversity_protocol,
    equalize_histogram,
    evaluate_pipeline,
    fid,
    shuffled_baseline,
)
from .factors import (
    ExternalFactor,
    GaussianReference,
    GeneticFactor,
    VarietyFactor,
    external_from_attrs,
    normalize_genetic,
    sample_genetic,
    sample_variety,
)
from .mapper import BranchTargets, GeneMapper, assign_ground_truth, loss_mapping, map_genes
from .training import (
    LossLog,
    NetworkBundle,
    bundle_from_checkpoint,
    predict_children,
    run_all,
    run_step,
    validation_forward,
)

__version__ = "0.1.0"

__all__ = [
    "AttributeSet",
    "BranchTargets",
    "Checkpoint",
    "DatasetManifest",
    "EvalReport",
    "ExternalFactor",
    "FaceImage",
    "FamilyRecord",
    "GaussianReference",
    "GeneMapper",
    "GeneticFactor",
    "LabeledFace",
    "LossLog",
    "NetworkBundle",
    "SynthGenome",
    "SyntheticIdentityEmbedding",
    "TrainConfig",
    "VarietyFactor",
    "assign_ground_truth",
    "bundle_from_checkpoint",
    "cosine_protocol",
    "diversity_protocol",
    "equalize_histogram",
    "evaluate_pipeline",
    "external_from_attrs",
    "fid",
    "load_manifest",
    "loss_mapping",
    "map_genes",
    "normalize_genetic",
    "predict_children",
    "render_synth_face",
    "run_all",
    "run_step",
    "sample_genetic",
    "sample_variety",
    "save_dataset",
    "shuffled_baseline",
    "synth_dataset",
    "synth_family",
    "validation_forward",
    "write_manifest",
]
