"""Dataset ingestion: CelebA-format annotations, preprocessing, toy data.

The on-disk dataset convention (shared by real ingests, prepared
directories, and the synthetic toy set) is a directory holding

* ``annotations.txt`` in the CelebA attribute-list format: line 1 is the
  entry count, line 2 the attribute names, then one ``filename v1 .. vn``
  row per image with values in {-1, +1};
* an ``images/`` directory with the files named by the rows.

The last ``test_count`` rows of the annotation order form the test split.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np
import torch
from PIL import Image

from .config import DEFAULT_CELEBA_ATTRIBUTES

ANNOTATIONS_FILENAME = "annotations.txt"
IMAGES_DIRNAME = "images"

# CelebA raw geometry: 178x218 frames center-cropped to 170 before resizing.
CELEBA_RAW_WIDTH = 178
CELEBA_RAW_HEIGHT = 218
DEFAULT_CROP = 170

# Common aliases for the attribute names as they appear in prose but not in
# the CelebA annotation header.
ATTRIBUTE_ALIASES = {
    "Gender": "Male",
    "Mouth_Open": "Mouth_Slightly_Open",
    "age": "Young",
    "Age": "Young",
}


class AnnotationFormatError(ValueError):
    """Raised when an annotation stream violates the CelebA text format."""


class AttributeLookupError(KeyError):
    """Raised when a requested attribute name is not in the table."""


class DimensionError(ValueError):
    """Raised when an image tensor has the wrong shape for an operation."""


@dataclass
class AnnotationTable:
    attribute_names: list[str]
    entries: list[tuple[str, dict[str, int]]]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class LabeledImage:
    image: torch.Tensor  # (3, H, W) in [-1, 1]
    label: torch.Tensor  # (n,) in {0, 1}
    name: str = ""


@dataclass
class DatasetSplit:
    train: list[LabeledImage]
    test: list[LabeledImage]

    @property
    def n_attributes(self) -> int:
        ref = self.train[0] if self.train else self.test[0]
        return int(ref.label.numel())

    def stacked(self, which: str) -> tuple[torch.Tensor, torch.Tensor]:
        items = getattr(self, which)
        images = torch.stack([it.image for it in items])
        labels = torch.stack([it.label for it in items])
        return images, labels


def parse_annotations(stream: TextIO | Iterable[str]) -> AnnotationTable:
    """Parse a CelebA-style attribute list into an annotation table."""
    lines = iter(stream)
    try:
        header = next(lines)
    except StopIteration:
        raise AnnotationFormatError("empty annotation stream") from None
    try:
        declared = int(header.strip())
    except ValueError:
        raise AnnotationFormatError(
            f"malformed header: expected an entry count, got {header.strip()!r}"
        ) from None
    if declared < 0:
        raise AnnotationFormatError(f"negative entry count {declared}")

    try:
        name_line = next(lines)
    except StopIteration:
        raise AnnotationFormatError("missing attribute-name line") from None
    names = name_line.split()
    if not names:
        raise AnnotationFormatError("attribute-name line is empty")
    if len(set(names)) != len(names):
        raise AnnotationFormatError("attribute names contain duplicates")

    entries: list[tuple[str, dict[str, int]]] = []
    for lineno, line in enumerate(lines, start=3):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != len(names) + 1:
            raise AnnotationFormatError(
                f"line {lineno}: expected {len(names) + 1} columns, "
                f"got {len(parts)}"
            )
        filename, values = parts[0], parts[1:]
        row: dict[str, int] = {}
        for name, value in zip(names, values):
            if value not in ("-1", "1", "+1"):
                raise AnnotationFormatError(
                    f"line {lineno}: value {value!r} for {name!r} is not +-1"
                )
            row[name] = 1 if value in ("1", "+1") else -1
        entries.append((filename, row))

    if len(entries) != declared:
        raise AnnotationFormatError(
            f"header declares {declared} entries but {len(entries)} rows found"
        )
    return AnnotationTable(attribute_names=names, entries=entries)


def load_annotations(path) -> AnnotationTable:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_annotations(fh)


def resolve_attribute_name(table: AnnotationTable, name: str) -> str:
    """Map a requested name to a table column, accepting prose aliases."""
    if name in table.attribute_names:
        return name
    for candidate in (name.replace(" ", "_"), ATTRIBUTE_ALIASES.get(name),
                      ATTRIBUTE_ALIASES.get(name.replace(" ", "_"))):
        if candidate and candidate in table.attribute_names:
            return candidate
    raise AttributeLookupError(name)


def select_attributes(
    table: AnnotationTable, names: Sequence[str] | None = None
) -> list[tuple[str, torch.Tensor]]:
    """Pick attribute columns and remap each {-1,+1} value to {0,1}.

    Returns (filename, label vector) pairs in table order, labels ordered
    as ``names``. The default selection is the 13 editing attributes.
    """
    if names is None:
        names = DEFAULT_CELEBA_ATTRIBUTES
    if len(set(names)) != len(names):
        raise AttributeLookupError(f"duplicate attribute names in {list(names)}")
    resolved = [resolve_attribute_name(table, n) for n in names]
    out = []
    for filename, row in table.entries:
        vec = torch.tensor(
            [1.0 if row[n] == 1 else 0.0 for n in resolved], dtype=torch.float32
        )
        out.append((filename, vec))
    return out


def _to_chw_array(raw) -> np.ndarray:
    """Normalize a raw image (HWC/CHW numpy or torch, uint8-ish) to CHW float64."""
    if isinstance(raw, torch.Tensor):
        raw = raw.detach().cpu().numpy()
    arr = np.asarray(raw)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=0)
    elif arr.ndim == 3 and arr.shape[-1] in (1, 3) and arr.shape[0] not in (1, 3):
        arr = np.transpose(arr, (2, 0, 1))
    elif arr.ndim != 3:
        raise DimensionError(f"expected a 2-D or 3-D image, got shape {arr.shape}")
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    if arr.shape[0] != 3:
        raise DimensionError(f"expected 3 channels, got shape {arr.shape}")
    return arr.astype(np.float64)


def _bilinear_resize(chw: np.ndarray, out_size: int) -> np.ndarray:
    """Bilinear resample (align_corners=False, no antialias) in float64."""
    t = torch.from_numpy(chw).unsqueeze(0)
    resized = torch.nn.functional.interpolate(
        t, size=(out_size, out_size), mode="bilinear",
        align_corners=False, antialias=False,
    )
    return resized.squeeze(0).numpy()


def preprocess_image(
    raw,
    resolution: int = 128,
    crop_size: int = DEFAULT_CROP,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Center-crop to ``crop_size`` then bilinearly resize and scale to [-1, 1].

    The crop offset is floor((dim - crop)/2) on each axis. Input values are
    treated as [0, 255] integers; output is (3, resolution, resolution).
    """
    chw = _to_chw_array(raw)
    _, h, w = chw.shape
    if h < crop_size or w < crop_size:
        raise DimensionError(
            f"image {h}x{w} is smaller than the {crop_size}x{crop_size} crop"
        )
    top = (h - crop_size) // 2
    left = (w - crop_size) // 2
    cropped = chw[:, top : top + crop_size, left : left + crop_size]
    resized = _bilinear_resize(cropped, resolution)
    scaled = resized / 127.5 - 1.0
    return torch.from_numpy(scaled).to(dtype)


def image_to_unit_range(raw, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Scale an already model-sized [0,255] image to a [-1,1] tensor."""
    chw = _to_chw_array(raw)
    return torch.from_numpy(chw / 127.5 - 1.0).to(dtype)


def tensor_to_image_array(tensor: torch.Tensor) -> np.ndarray:
    """[-1,1] CHW tensor -> HWC uint8 array (for PNG output)."""
    arr = tensor.detach().cpu().to(torch.float64).numpy()
    arr = np.clip((arr + 1.0) * 127.5, 0.0, 255.0)
    return np.round(arr).astype(np.uint8).transpose(1, 2, 0)


def sample_target_labels(
    batch_labels: torch.Tensor | Sequence[torch.Tensor],
    generator: torch.Generator,
) -> torch.Tensor:
    """Return a random permutation of the batch's label vectors.

    Permutation sampling keeps every target on the data manifold and is
    deterministic given the generator state.
    """
    if isinstance(batch_labels, torch.Tensor):
        stacked = batch_labels
    else:
        stacked = torch.stack(list(batch_labels))
    if stacked.ndim != 2 or stacked.shape[0] == 0:
        raise ValueError("expected a nonempty (B, n) label batch")
    perm = torch.randperm(stacked.shape[0], generator=generator)
    return stacked[perm]


# --------------------------------------------------------------------------
# Toy dataset
# --------------------------------------------------------------------------

TOY_ATTRIBUTE_NAMES = [
    "Bright",      # background brightness high/low
    "Disc",        # centered disc present/absent
    "Red",         # accent colour red/blue (frame + disc)
    "BottomBar",   # bar along the bottom edge
    "LeftBar",     # bar along the left edge
    "TopSquare",   # square in the top-right corner
    "CornerDot",   # dot in the top-left corner
    "RightBar",    # bar along the right edge
]


@dataclass
class ToyConfig:
    image_size: int = 64
    train_count: int = 200
    test_count: int = 50
    attribute_count: int = 3
    # Keep the sensor noise well below the SSIM budget: at 0.02 a perfect
    # denoising reconstruction of a flat-region image already scores ~0.78.
    noise_std: float = 0.005

    @property
    def attribute_names(self) -> list[str]:
        return TOY_ATTRIBUTE_NAMES[: self.attribute_count]

    def validate(self) -> None:
        if not 1 <= self.attribute_count <= 8:
            raise ConfigErrorForToy(
                f"attribute_count must be in 1..8, got {self.attribute_count}"
            )
        if self.image_size < 16:
            raise ConfigErrorForToy("image_size must be at least 16")
        if self.train_count < 1 or self.test_count < 0:
            raise ConfigErrorForToy("counts must be positive")


class ConfigErrorForToy(ValueError):
    pass


def render_toy_image(
    label: torch.Tensor | Sequence[float],
    size: int = 64,
    noise_std: float = 0.005,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Render one toy image from up to 8 binary factors.

    Factor 1 sets background brightness, factor 2 draws a central disc,
    factor 3 picks the accent colour (red vs blue) used for the disc and
    for an always-present border frame, factors 4..8 toggle simple shapes
    in disjoint regions. Values in [0, 1] interpolate each factor so the
    renderer doubles as an oracle generator for continuous edits.
    """
    lab = torch.as_tensor(label, dtype=torch.float64).flatten()
    n = lab.numel()
    if not 1 <= n <= 8:
        raise ConfigErrorForToy(f"label length must be in 1..8, got {n}")
    v = torch.zeros(8, dtype=torch.float64)
    v[:n] = lab.clamp(0.0, 1.0)

    img = torch.empty(3, size, size, dtype=torch.float64)
    background = 0.25 + 0.5 * v[0]  # dark vs bright, in [0,1] space
    img[:] = background

    # Accent colour: blue (0) <-> red (1).
    accent = torch.tensor(
        [0.15 + 0.75 * v[2], 0.15, 0.90 - 0.75 * v[2]], dtype=torch.float64
    )

    frame = max(2, size // 16)
    img[:, :frame, :] = accent[:, None, None]
    img[:, -frame:, :] = accent[:, None, None]
    img[:, :, :frame] = accent[:, None, None]
    img[:, :, -frame:] = accent[:, None, None]

    if n >= 2 and v[1] > 0:
        yy, xx = torch.meshgrid(
            torch.arange(size, dtype=torch.float64),
            torch.arange(size, dtype=torch.float64),
            indexing="ij",
        )
        c = (size - 1) / 2.0
        radius = 0.28 * size
        mask = ((yy - c) ** 2 + (xx - c) ** 2) <= radius**2
        disc = background + v[1] * (accent - background)
        img[:, mask] = (
            img[:, mask] * (1 - v[1]) + disc[:, None] * v[1]
        )

    third = size // 3
    if n >= 4 and v[3] > 0:  # bottom bar
        img[:, size - frame - third // 2 : size - frame, frame:-frame] = 0.95 * v[3]
    if n >= 5 and v[4] > 0:  # left bar
        img[:, frame:-frame, frame : frame + third // 2] = 0.95 * v[4]
    if n >= 6 and v[5] > 0:  # top-right square
        img[:, frame : frame + third, size - frame - third : size - frame] = 0.05 + 0.90 * (1 - v[5])
    if n >= 7 and v[6] > 0:  # top-left dot
        img[:, frame : frame + third // 2, frame : frame + third // 2] = 0.95 * v[6]
    if n >= 8 and v[7] > 0:  # right bar
        img[:, frame:-frame, size - frame - third // 2 : size - frame] = 0.05 * v[7]

    if noise_std > 0 and generator is not None:
        noise = torch.empty_like(img).normal_(0.0, noise_std, generator=generator)
        img = img + noise
    img = img.clamp(0.0, 1.0)
    return (img * 2.0 - 1.0).to(torch.float32)


def make_toy_dataset(
    config: ToyConfig, generator: torch.Generator
) -> DatasetSplit:
    """Procedurally render a labeled toy dataset, deterministic per seed."""
    config.validate()
    n = config.attribute_count
    total = config.train_count + config.test_count
    labels = (
        torch.rand(total, n, generator=generator, dtype=torch.float64) < 0.5
    ).to(torch.float32)
    items = []
    for i in range(total):
        img = render_toy_image(
            labels[i], config.image_size, config.noise_std, generator
        )
        items.append(
            LabeledImage(image=img, label=labels[i].clone(), name=f"toy_{i:05d}.png")
        )
    return DatasetSplit(
        train=items[: config.train_count], test=items[config.train_count :]
    )


# --------------------------------------------------------------------------
# Dataset directory IO
# --------------------------------------------------------------------------


def save_dataset_dir(
    split: DatasetSplit, out_dir, attribute_names: Sequence[str] | None = None
) -> Path:
    """Persist a split as PNGs plus a CelebA-format annotation file.

    Rows are written train-then-test so the last ``len(test)`` rows are the
    test split, matching the ingest convention.
    """
    out = Path(out_dir)
    images_dir = out / IMAGES_DIRNAME
    images_dir.mkdir(parents=True, exist_ok=True)
    items = list(split.train) + list(split.test)
    lines = [str(len(items))]
    for item in items:
        arr = tensor_to_image_array(item.image)
        Image.fromarray(arr).save(images_dir / item.name)
    n = items[0].label.numel()
    names = list(attribute_names) if attribute_names else TOY_ATTRIBUTE_NAMES[:n]
    lines.append(" ".join(names))
    for item in items:
        vals = " ".join("1" if x > 0.5 else "-1" for x in item.label.tolist())
        lines.append(f"{item.name} {vals}")
    (out / ANNOTATIONS_FILENAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def save_annotation_file(
    path, attribute_names: Sequence[str], rows: Sequence[tuple[str, torch.Tensor]]
) -> None:
    """Write (filename, {0,1} label) rows in the CelebA +-1 text format."""
    lines = [str(len(rows)), " ".join(attribute_names)]
    for filename, label in rows:
        vals = " ".join("1" if x > 0.5 else "-1" for x in label.tolist())
        lines.append(f"{filename} {vals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_image_file(
    path, resolution: int, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """Load an image file as a (3, resolution, resolution) [-1,1] tensor.

    Images already at the target size are scaled directly; anything at
    least as large as the standard crop goes through crop-and-resize.
    """
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    h, w = arr.shape[:2]
    if (h, w) == (resolution, resolution):
        return image_to_unit_range(arr, dtype)
    if h >= DEFAULT_CROP and w >= DEFAULT_CROP:
        return preprocess_image(arr, resolution=resolution, dtype=dtype)
    if h >= resolution and w >= resolution:
        crop = min(h, w)
        return preprocess_image(arr, resolution=resolution, crop_size=crop, dtype=dtype)
    raise DimensionError(
        f"image {h}x{w} from {path} is too small for resolution {resolution}"
    )


def load_dataset_dir(
    root,
    resolution: int,
    attribute_names: Sequence[str] | None = None,
    test_count: int = 2000,
    limit: int | None = None,
) -> DatasetSplit:
    """Load a dataset directory into memory and split off the trailing rows."""
    root = Path(root)
    table = load_annotations(root / ANNOTATIONS_FILENAME)
    if attribute_names is None:
        attribute_names = table.attribute_names
    selected = select_attributes(table, attribute_names)
    if limit is not None:
        selected = selected[:limit]
    images_dir = root / IMAGES_DIRNAME
    items = []
    for filename, label in selected:
        img = load_image_file(images_dir / filename, resolution)
        items.append(LabeledImage(image=img, label=label, name=filename))
    if test_count > len(items):
        raise ValueError(
            f"test_count {test_count} exceeds dataset size {len(items)}"
        )
    split_at = len(items) - test_count
    return DatasetSplit(train=items[:split_at], test=items[split_at:])


def iterate_batches(
    images: torch.Tensor,
    labels: torch.Tensor,
    batch_size: int,
    order: torch.Tensor | None = None,
):
    """Yield (image, label) batches in a fixed order; keeps the tail batch."""
    count = images.shape[0]
    idx = order if order is not None else torch.arange(count)
    for start in range(0, count, batch_size):
        sel = idx[start : start + batch_size]
        yield images[sel], labels[sel]
