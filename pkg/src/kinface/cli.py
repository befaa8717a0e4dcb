"""Command-line surface: dataset synthesis, staged training, prediction,
evaluation, and latent-walk grids.

Exit codes: 0 success, 2 usage/validation, 3 missing prerequisite checkpoint,
4 training divergence (the last good checkpoint path is printed).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import data as dm
from .checkpoint import Checkpoint
from .config import TrainConfig
from .evaluation import VALID_METRICS, evaluate_pipeline
from .exceptions import (
    DegenerateInputError,
    DependencyError,
    DivergenceError,
    KinfaceError,
    ManifestError,
    NumericalError,
    ProtocolError,
    ShapeError,
    ValidationError,
)
from .factors import external_from_attrs
from .layers import images_to_tensor, tensor_to_images
from .training import LossLog, bundle_from_checkpoint, predict_children, run_step

_USAGE_ERRORS = (
    ValidationError,
    ManifestError,
    ProtocolError,
    NumericalError,
    ShapeError,
    DegenerateInputError,
)


def _write_grid(images, path: Path, cols: int | None = None) -> None:
    n = len(images)
    cols = cols if cols is not None else math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    res = images[0].resolution
    canvas = np.full((rows * res, cols * res, 3), -1.0, dtype=np.float32)
    for i, image in enumerate(images):
        r, c = divmod(i, cols)
        canvas[r * res : (r + 1) * res, c * res : (c + 1) * res] = image.pixels
    from PIL import Image

    arr = np.clip(np.rint((canvas.astype(np.float64) + 1.0) * 255.0 / 2.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def cmd_synth(args) -> int:
    if args.families < 1:
        raise ValidationError("--families must be >= 1")
    out = Path(args.out)
    train_set = dm.synth_dataset(
        args.families,
        args.seed,
        child_count_law=args.children_law,
        split="train",
        n_unpaired=args.unpaired,
        resolution=args.resolution,
    )
    dm.save_dataset(train_set, out / "train")
    print(f"wrote {out / 'train' / 'manifest.json'} ({args.families} families)")
    if args.val_families > 0:
        val_set = dm.synth_dataset(
            args.val_families,
            args.seed + 1,
            child_count_law=args.children_law,
            split="val",
            resolution=args.resolution,
        )
        dm.save_dataset(val_set, out / "val")
        dm.check_split_disjoint(train_set, val_set)
        print(f"wrote {out / 'val' / 'manifest.json'} ({args.val_families} families)")
    return 0


def _resolve_resume(args, out: Path, step: int) -> Checkpoint | None:
    if step == 1:
        return None
    if args.resume:
        return Checkpoint.load(args.resume)
    candidate = out / f"checkpoint_step{step - 1}.kfc"
    if not candidate.is_file():
        raise DependencyError(
            f"step {step} needs the step {step - 1} checkpoint; pass --resume or place it at {candidate}"
        )
    return Checkpoint.load(candidate)


def cmd_train(args) -> int:
    config = TrainConfig.from_file(args.config)
    manifest = dm.load_manifest(args.manifest, resolution=config.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    steps = [1, 2, 3, 4] if args.step == "all" else [int(args.step)]
    log = LossLog()
    previous: Checkpoint | None = None
    try:
        for step in steps:
            resume = previous if previous is not None else _resolve_resume(args, out, step)
            ckpt = run_step(step, config, manifest, resume=resume, log=log)
            path = out / f"checkpoint_step{step}.kfc"
            ckpt.save(path)
            print(f"step {step} done -> {path}")
            previous = ckpt
    except DivergenceError as exc:
        if exc.checkpoint is not None:
            rescue = out / "checkpoint_diverged.kfc"
            exc.checkpoint.save(rescue)
            print(f"divergence: {exc}; last checkpoint at {rescue}", file=sys.stderr)
        else:
            print(f"divergence: {exc}", file=sys.stderr)
        log.write_csv(out / "losslog.csv", append=True)
        return 4
    log.write_csv(out / "losslog.csv", append=True)
    return 0


def _load_child_attrs(father_path: Path) -> list[dm.AttributeSet]:
    sidecar = father_path.parent / "child_attrs.json"
    if not sidecar.is_file():
        raise ValidationError(
            f"ground-truth external mode needs an attribute sidecar at {sidecar}"
        )
    doc = json.loads(sidecar.read_text())
    entries = doc["children"] if isinstance(doc, dict) and "children" in doc else [doc]
    return [dm.AttributeSet(dict(entry), "child") for entry in entries]


def cmd_predict(args) -> int:
    if args.n < 1:
        raise ValidationError("--n must be >= 1")
    bundle = bundle_from_checkpoint(Checkpoint.load(args.ckpt))
    res = bundle.config.resolution
    father = dm.FaceImage.load_png(args.father, resolution=res)
    mother = dm.FaceImage.load_png(args.mother, resolution=res)
    mode = "ground_truth" if args.external == "gt" else "random"
    child_attrs = _load_child_attrs(Path(args.father)) if mode == "ground_truth" else None
    images = predict_children(
        bundle,
        father,
        mother,
        n=args.n,
        external_mode=mode,
        rng=np.random.default_rng(args.seed),
        child_attrs=child_attrs,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, image in enumerate(images):
        image.save_png(out / f"child_{i:03d}.png")
    _write_grid(images, out / "grid.png")
    print(f"wrote {args.n} predictions and grid.png under {out}")
    return 0


def cmd_eval(args) -> int:
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    for metric in metrics:
        if metric not in VALID_METRICS:
            raise ValidationError(f"unknown metric {metric!r}; valid: {', '.join(VALID_METRICS)}")
    bundle = bundle_from_checkpoint(Checkpoint.load(args.ckpt))
    manifest = dm.load_manifest(args.manifest, resolution=bundle.config.resolution)
    report = evaluate_pipeline(bundle, manifest, groups=args.groups, metrics=metrics, seed=args.seed)
    report.save(args.out)
    print(report.table())
    print(f"report -> {args.out}")
    return 0


def cmd_latent_walk(args) -> int:
    if args.steps < 2:
        raise ValidationError("--steps must be >= 2")
    bundle = bundle_from_checkpoint(Checkpoint.load(args.ckpt))
    config = bundle.config
    rng = np.random.default_rng(args.seed)
    g0 = rng.standard_normal(config.d_g).astype(np.float32)
    g1 = rng.standard_normal(config.d_g).astype(np.float32)
    v0 = rng.uniform(-1.0, 1.0, config.d_v).astype(np.float32)
    v1 = rng.uniform(-1.0, 1.0, config.d_v).astype(np.float32)
    e0 = np.zeros(4, dtype=np.float32)

    frames = []
    if args.factor == "genetic":
        for t in np.linspace(0.0, 1.0, args.steps):
            frames.append(((1 - t) * g0 + t * g1, e0, v0))
    elif args.factor == "variety":
        for t in np.linspace(0.0, 1.0, args.steps):
            frames.append((g0, e0, (1 - t) * v0 + t * v1))
    else:  # external: base plus one toggle per attribute bit
        frames.append((g0, e0, v0))
        for bit in range(4):
            e = e0.copy()
            e[bit] = 1.0
            frames.append((g0, e, v0))

    import torch

    bundle.eval_mode()
    images = []
    with torch.no_grad():
        for g, e, v in frames:
            out = bundle.child_generator(
                torch.from_numpy(g).unsqueeze(0),
                torch.from_numpy(e).unsqueeze(0),
                torch.from_numpy(v).unsqueeze(0),
            )
            images.append(tensor_to_images(out)[0])
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_grid(images, out_path, cols=len(images))
    print(f"wrote {len(images)}-frame walk -> {out_path}")
    return 0


def cmd_config(args) -> int:
    config = TrainConfig.toy(seed=args.seed) if args.preset == "toy" else TrainConfig(seed=args.seed)
    text = config.to_text()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.preset} config -> {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kinface", description="Kinship face synthesis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--families", type=int, required=True)
    p.add_argument("--children-law", default="uniform:1:4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--val-families", type=int, default=0)
    p.add_argument("--unpaired", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run training steps")
    p.add_argument("--config", required=True)
    p.add_argument("--step", choices=("1", "2", "3", "4", "all"), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--resume")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict child faces for one parent pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--father", required=True)
    p.add_argument("--mother", required=True)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--external", choices=("gt", "random"), default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="run the grouped evaluation protocol")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--groups", type=int, default=40)
    p.add_argument("--metrics", default="cos,fid,lpips")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("latent-walk", help="render a single-factor walk grid")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--factor", choices=("genetic", "external", "variety"), required=True)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_latent_walk)

    p = sub.add_parser("config", help="write a preset config file")
    p.add_argument("--preset", choices=("toy", "full"), default="toy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4
    except KinfaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
