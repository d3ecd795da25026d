"""Command-line interface.

Subcommands: prepare-data, make-toy, train, edit, interpolate,
reconstruct, evaluate. Long flags only; config values are overridden
with repeated ``--set key=value``. Exit codes: 0 success, 1 usage error,
2 runtime failure. Every run writes a snapshot of its resolved
parameters next to its outputs so it can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from . import checkpoint as ckpt
from . import data as data_mod
from . import evaluation as eval_mod
from .config import (
    ConfigError,
    TrainingConfig,
    apply_overrides,
    config_hash,
    config_to_text,
    load_config,
)
from .data import (
    ATTRIBUTE_ALIASES,
    TOY_ATTRIBUTE_NAMES,
    AnnotationFormatError,
    AttributeLookupError,
    DimensionError,
    ToyConfig,
    load_dataset_dir,
    load_image_file,
    make_toy_dataset,
    save_dataset_dir,
)
from .trainer import Trainer, TrainingDivergedError, load_generator

SNAPSHOT_FILENAME = "snapshot.cfg"


class UsageError(Exception):
    """Bad flags, names, or argument combinations; exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers


def _resolve_attr(names: list[str], requested: str) -> str:
    if requested in names:
        return requested
    underscored = requested.replace(" ", "_")
    for candidate in (
        underscored,
        ATTRIBUTE_ALIASES.get(requested),
        ATTRIBUTE_ALIASES.get(underscored),
    ):
        if candidate and candidate in names:
            return candidate
    raise UsageError(
        f"unknown attribute {requested!r}; available: {', '.join(names)}"
    )


def _parse_assignments(pairs: list[str], names: list[str]) -> dict[int, float]:
    out: dict[int, float] = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"expected Name=value, got {pair!r}")
        name, _, raw = pair.partition("=")
        index = names.index(_resolve_attr(names, name.strip()))
        try:
            out[index] = float(raw)
        except ValueError:
            raise UsageError(f"bad attribute value {raw!r} for {name}") from None
    return out


def _write_snapshot(target: Path, command: str, fields: dict,
                    config: TrainingConfig | None = None) -> None:
    if target.is_dir() or target.suffix == "":
        target.mkdir(parents=True, exist_ok=True)
        path = target / SNAPSHOT_FILENAME
    else:
        path = target.with_suffix(target.suffix + ".cfg")
    lines = [f"# clsgan {command}"]
    lines += [f"# {key} = {value}" for key, value in sorted(fields.items())]
    if config is not None:
        lines.append("")
        lines.append(config_to_text(config).rstrip("\n"))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _require_file(path: str, kind: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{kind} not found: {p}")
    return p


def _load_split_tensors(data_dir: Path, config: TrainingConfig):
    split = load_dataset_dir(
        data_dir,
        resolution=config.resolution,
        attribute_names=config.attribute_names,
        test_count=config.test_count,
    )
    return split


# ---------------------------------------------------------------------------
# commands


def cmd_make_toy(args: argparse.Namespace) -> int:
    if not 1 <= args.attributes <= len(TOY_ATTRIBUTE_NAMES):
        raise UsageError(
            f"--attributes must be in 1..{len(TOY_ATTRIBUTE_NAMES)}"
        )
    names = TOY_ATTRIBUTE_NAMES[: args.attributes]
    toy = ToyConfig(
        image_size=args.image_size,
        train_count=args.train_count,
        test_count=args.test_count,
        attribute_count=args.attributes,
    )
    rng = torch.Generator()
    rng.manual_seed(args.seed)
    split = make_toy_dataset(toy, rng)
    out = Path(args.out)
    save_dataset_dir(split, out, names)

    # Small batches trade throughput for update count: with 200 training
    # images and 20 epochs this yields 2000 generator steps, enough for
    # reconstruction to converge at this scale.
    config = TrainingConfig(
        resolution=args.image_size,
        attribute_names=names,
        batch_size=2,
        n_critic=1,
        base_channels=32,
        test_count=args.test_count,
        seed=args.seed,
    )
    config.validate()
    (out / "toy.cfg").write_text(config_to_text(config), encoding="utf-8")
    _write_snapshot(out, "make-toy", {
        "attributes": args.attributes,
        "image_size": args.image_size,
        "seed": args.seed,
        "test_count": args.test_count,
        "train_count": args.train_count,
    })
    print(
        f"wrote {args.train_count}+{args.test_count} images to {out} "
        f"(attributes: {', '.join(names)}); training config: {out / 'toy.cfg'}"
    )
    return 0


def cmd_prepare_data(args: argparse.Namespace) -> int:
    images_dir = _require_file(args.images, "image directory")
    ann_path = _require_file(args.attributes, "annotation file")
    table = data_mod.load_annotations(ann_path)
    names = (
        [n.strip() for n in args.names.split(",")]
        if args.names
        else None
    )
    from .config import DEFAULT_CELEBA_ATTRIBUTES

    selected = data_mod.select_attributes(table, names)
    resolved = [
        data_mod.resolve_attribute_name(table, n)
        for n in (names if names else DEFAULT_CELEBA_ATTRIBUTES)
    ]
    if args.limit is not None:
        selected = selected[: args.limit]

    out = Path(args.out)
    out_images = out / data_mod.IMAGES_DIRNAME
    out_images.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    rows = []
    for i, (filename, label) in enumerate(selected):
        src = images_dir / filename
        if not src.exists():
            raise FileNotFoundError(f"annotated image missing: {src}")
        tensor = load_image_file(src, args.resolution)
        arr = data_mod.tensor_to_image_array(tensor)
        name = Path(filename).stem + ".png"
        Image.fromarray(arr).save(out_images / name)
        rows.append((name, label))
        if args.progress_every and (i + 1) % args.progress_every == 0:
            print(f"processed {i + 1}/{len(selected)} images")
    data_mod.save_annotation_file(
        out / data_mod.ANNOTATIONS_FILENAME, resolved, rows
    )
    _write_snapshot(out, "prepare-data", {
        "images": str(images_dir),
        "attributes": str(ann_path),
        "names": ",".join(resolved),
        "resolution": args.resolution,
        "limit": args.limit,
    })
    print(f"wrote {len(rows)} images to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    data_dir = _require_file(args.data, "dataset directory")
    out = Path(args.out)

    if args.resume:
        if args.set:
            raise UsageError("--set cannot be combined with --resume")
        resume_path = _require_file(args.resume, "checkpoint")
        from .config import parse_config_text

        config = parse_config_text(ckpt.load_checkpoint(resume_path).config_text)
        split = _load_split_tensors(data_dir, config)
        images, labels = split.stacked("train")
        trainer = Trainer.from_checkpoint(resume_path, images, labels, out)
    else:
        if not args.config:
            raise UsageError("train requires --config or --resume")
        config = load_config(_require_file(args.config, "config file"))
        if args.set:
            try:
                config = apply_overrides(config, args.set)
            except ConfigError as exc:
                raise UsageError(str(exc)) from exc
        config.validate()
        split = _load_split_tensors(data_dir, config)
        images, labels = split.stacked("train")
        trainer = Trainer(config, images, labels, out)

    _write_snapshot(out, "train", {
        "data": str(data_dir),
        "resume": args.resume or "",
    }, trainer.config)
    trainer.train()
    final = trainer.checkpoint_path(trainer.epoch)
    print(f"training complete: epoch {trainer.epoch}, checkpoint {final}")
    return 0


def cmd_edit(args: argparse.Namespace) -> int:
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    image_path = _require_file(args.image, "image")
    generator, config = load_generator(ckpt_path)
    assignments = _parse_assignments(args.set_attr, config.attribute_names)
    if not assignments:
        raise UsageError("edit requires at least one --set-attr Name=value")

    image = load_image_file(image_path, config.resolution)
    with torch.no_grad():
        target = generator.encode_attributes(image.unsqueeze(0))[0]
        for index, value in assignments.items():
            target[index] = value
        edited = generator.generate(image, target)
    out = Path(args.out)
    eval_mod.save_image_grid(out, edited)
    _write_snapshot(out, "edit", {
        "checkpoint": str(ckpt_path),
        "image": str(image_path),
        "assignments": ",".join(
            f"{config.attribute_names[i]}={v}" for i, v in sorted(assignments.items())
        ),
    }, config)
    shown = ", ".join(
        f"{config.attribute_names[i]}={v:g}" for i, v in sorted(assignments.items())
    )
    print(f"edited {image_path.name} ({shown}) -> {out}")
    return 0


def cmd_reconstruct(args: argparse.Namespace) -> int:
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    image_path = _require_file(args.image, "image")
    generator, config = load_generator(ckpt_path)
    image = load_image_file(image_path, config.resolution)
    with torch.no_grad():
        encoded = generator.encode_attributes(image.unsqueeze(0))[0]
        recon = generator.generate(image, encoded)
    out = Path(args.out)
    eval_mod.save_image_grid(out, recon)
    l1 = float((image - recon).abs().mean())
    score = eval_mod.ssim(image, recon)
    _write_snapshot(out, "reconstruct", {
        "checkpoint": str(ckpt_path),
        "image": str(image_path),
    }, config)
    print(f"reconstruction L1 {l1:.4f}, SSIM {score:.4f} -> {out}")
    return 0


def cmd_interpolate(args: argparse.Namespace) -> int:
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    image_path = _require_file(args.image, "image")
    generator, config = load_generator(ckpt_path)
    name = _resolve_attr(config.attribute_names, args.attr)
    index = config.attribute_names.index(name)
    values = (
        [float(v) for v in args.values.split(",")]
        if args.values
        else None
    )
    image = load_image_file(image_path, config.resolution)
    grid = eval_mod.interpolation_grid(generator, image, index, values)
    out = Path(args.out)
    eval_mod.save_image_grid(out, grid)
    used = values if values else list(eval_mod.DEFAULT_INTERPOLATION_VALUES)
    _write_snapshot(out, "interpolate", {
        "checkpoint": str(ckpt_path),
        "image": str(image_path),
        "attr": name,
        "values": ",".join(f"{v:g}" for v in used),
    }, config)
    print(f"wrote {len(used)}-column sweep of {name} to {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    data_dir = _require_file(args.data, "dataset directory")
    generator, config = load_generator(ckpt_path)
    split = _load_split_tensors(data_dir, config)
    train_images, train_labels = split.stacked("train")
    test_images, test_labels = split.stacked("test")

    classifier, cls_report = eval_mod.train_eval_classifier(
        train_images,
        train_labels,
        test_images,
        test_labels,
        epochs=args.classifier_epochs,
        seed=config.seed,
    )
    if args.inception_weights:
        extractor = eval_mod.InceptionFeatureExtractor(
            _require_file(args.inception_weights, "inception weights")
        )
    else:
        extractor = eval_mod.RandomProjectionExtractor(
            dim=args.feature_dim, seed=config.seed
        )

    report = eval_mod.evaluate_model(
        generator,
        test_images,
        test_labels,
        extractor=extractor,
        classifier=classifier,
        batch_size=config.batch_size,
    )
    report["eval_classifier"] = cls_report
    report["config_hash"] = config_hash(config)
    report["checkpoint"] = str(ckpt_path)
    report["checkpoint_sha256"] = ckpt.file_digest(ckpt_path)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_snapshot(out, "evaluate", {
        "checkpoint": str(ckpt_path),
        "data": str(data_dir),
    }, config)
    accuracies = " ".join(
        f"{name}={acc:.3f}"
        for name, acc in zip(
            config.attribute_names, report["per_attribute_accuracy"]
        )
    )
    print(
        f"fid {report['fid']:.4f}  ssim_mean {report['ssim_mean']:.4f}  "
        f"recon_l1 {report['recon_l1']:.4f}  "
        f"avg_accuracy {report['average_accuracy']:.4f}"
    )
    print(f"per-attribute: {accuracies}")
    print(f"report written to {report_path}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="clsgan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("make-toy", help="render the procedural toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train-count", type=int, default=200)
    p.add_argument("--test-count", type=int, default=50)
    p.add_argument("--attributes", type=int, default=3)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser(
        "prepare-data",
        help="crop, resize, and re-annotate a raw CelebA-style dataset",
    )
    p.add_argument("--images", required=True)
    p.add_argument("--attributes", required=True,
                   help="CelebA-format annotation file")
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--names", default=None,
                   help="comma-separated attribute subset (default: the 13 "
                        "editing attributes)")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--progress-every", type=int, default=0)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--set", action="append", default=[],
                   metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("edit", help="edit attributes of one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set-attr", action="append", default=[],
                   metavar="NAME=VALUE")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("reconstruct",
                       help="encode and decode one image unchanged")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("interpolate",
                       help="sweep one attribute across a value range")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--attr", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--values", default=None,
                   help="comma-separated values (default 0,0.2,...,1.6)")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("evaluate", help="compute FID, SSIM, and accuracy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--classifier-epochs", type=int, default=30)
    p.add_argument("--inception-weights", default=None,
                   help="torchvision inception_v3 state dict for "
                        "paper-comparable FID")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        code = args.func(args)
        return 0 if code is None else code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (
        ConfigError,
        AnnotationFormatError,
        AttributeLookupError,
        DimensionError,
        ckpt.CheckpointError,
        TrainingDivergedError,
        FileNotFoundError,
        NotADirectoryError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
