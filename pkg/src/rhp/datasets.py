"""Dataset ingestion, manifests, and the synthetic colored-shape generator.

Images are float64 N x 3 x H x W tensors in [0, 1].  A manifest is a CSV of
(path, label) rows preceded by comment lines declaring class count and the
split tag; split tags keep module-training, classifier-training, and
evaluation data disjoint.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

SPLIT_TAGS = ("train_module", "train_classifier", "eval")


class DatasetError(ValueError):
    """Malformed manifest, missing image, or invalid label."""


@dataclass
class Dataset:
    images: np.ndarray            # N x C x H x W in [0, 1]
    labels: np.ndarray            # N, ints in [0, class_count)
    class_count: int
    split_tag: str = "eval"
    paths: list[str] | None = None

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise DatasetError(f"unknown split tag {self.split_tag!r}")
        if len(self.images) != len(self.labels):
            raise DatasetError("images/labels length mismatch")
        if len(self.labels) and (
                (self.labels < 0).any() or (self.labels >= self.class_count).any()):
            raise DatasetError("label out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> "Dataset":
        paths = [self.paths[i] for i in indices] if self.paths else None
        return Dataset(self.images[indices], self.labels[indices],
                       self.class_count, self.split_tag, paths)


@dataclass
class DatasetManifest:
    root: str
    entries: list[tuple[str, int]]
    class_count: int
    split_tag: str

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise DatasetError(f"unknown split tag {self.split_tag!r}")
        seen = set()
        for path, label in self.entries:
            if path in seen:
                raise DatasetError(f"duplicate path {path!r} in manifest")
            seen.add(path)
            if not 0 <= label < self.class_count:
                raise DatasetError(f"label {label} out of range for {path!r}")


def save_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# class_count={manifest.class_count}\n")
        fh.write(f"# split={manifest.split_tag}\n")
        fh.write("path,label\n")
        for rel, label in manifest.entries:
            fh.write(f"{rel},{label}\n")


def read_manifest(path) -> DatasetManifest:
    root = os.path.dirname(os.path.abspath(path))
    class_count = None
    split_tag = None
    entries: list[tuple[str, int]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line.lstrip("# ").partition("=")
                if key == "class_count":
                    class_count = int(value)
                elif key == "split":
                    split_tag = value
                continue
            if line == "path,label":
                continue
            rel, _, label = line.rpartition(",")
            if not rel:
                raise DatasetError(f"malformed manifest row {line!r}")
            entries.append((rel, int(label)))
    if class_count is None or split_tag is None:
        raise DatasetError(f"manifest {path} lacks class_count/split headers")
    return DatasetManifest(root, entries, class_count, split_tag)


def load_dataset(manifest_path) -> Dataset:
    """Load the manifest's images as [0, 1] tensors in manifest order."""
    from PIL import Image

    manifest = read_manifest(manifest_path)
    images = []
    for rel, _ in manifest.entries:
        full = os.path.join(manifest.root, rel)
        if not os.path.exists(full):
            raise DatasetError(f"missing image file {full}")
        with Image.open(full) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        images.append(arr.transpose(2, 0, 1))
    labels = np.array([label for _, label in manifest.entries], dtype=np.int64)
    if images:
        stack = np.stack(images)
    else:
        stack = np.zeros((0, 3, 0, 0))
    return Dataset(stack, labels, manifest.class_count, manifest.split_tag,
                   paths=[rel for rel, _ in manifest.entries])


# --- synthetic colored-shape classes -------------------------------------

_SHAPES = ("circle", "square", "triangle", "cross", "diamond")
_COLORS = (
    np.array([0.95, 0.15, 0.10]),   # red
    np.array([0.15, 0.35, 0.95]),   # blue
)


def _shape_mask(shape: str, size: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    if shape == "circle":
        return dx ** 2 + dy ** 2 <= r ** 2
    if shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if shape == "triangle":
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)
    if shape == "cross":
        t = r / 2.5
        return ((np.abs(dx) <= t) & (np.abs(dy) <= r)) | ((np.abs(dy) <= t) & (np.abs(dx) <= r))
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= r
    raise ValueError(shape)


def render_shape_image(class_index: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """One 3 x size x size sample of the given class with jitter and noise."""
    shape = _SHAPES[class_index % len(_SHAPES)]
    color = _COLORS[class_index // len(_SHAPES)]
    r = rng.uniform(0.26, 0.40) * size
    cx = rng.uniform(r + 1, size - r - 1)
    cy = rng.uniform(r + 1, size - r - 1)
    mask = _shape_mask(shape, size, cx, cy, r)
    img = rng.uniform(0.0, 0.20, size=(3, size, size))
    jitter = rng.uniform(-0.05, 0.05, size=3)
    fill = np.clip(color + jitter, 0.0, 1.0)
    img[:, mask] = fill[:, None] + rng.uniform(-0.03, 0.03, size=(3, int(mask.sum())))
    return np.clip(img, 0.0, 1.0)


def generate_synthetic_dataset(class_count: int = 10, per_class: int = 100,
                               size: int = 32, seed: int = 0,
                               split_tag: str = "eval") -> Dataset:
    """Seeded renderer: exactly `per_class` samples of each class, shuffled."""
    if per_class < 1:
        raise DatasetError("per_class must be >= 1")
    if class_count > len(_SHAPES) * len(_COLORS):
        raise DatasetError(f"at most {len(_SHAPES) * len(_COLORS)} classes supported")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for cls in range(class_count):
        for _ in range(per_class):
            images.append(render_shape_image(cls, size, rng))
            labels.append(cls)
    order = rng.permutation(len(labels))
    return Dataset(np.stack(images)[order], np.array(labels, dtype=np.int64)[order],
                   class_count, split_tag)


def save_dataset(dataset: Dataset, out_dir, manifest_name: str = "manifest.csv") -> str:
    """Write images as PNGs plus a manifest; returns the manifest path."""
    from PIL import Image

    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(len(dataset)):
        rel = f"img_{i:05d}_c{int(dataset.labels[i])}.png"
        pixels = np.clip(np.floor(dataset.images[i] * 255.0 + 0.5), 0, 255).astype(np.uint8)
        Image.fromarray(pixels.transpose(1, 2, 0), mode="RGB").save(
            os.path.join(out_dir, rel), format="PNG")
        entries.append((rel, int(dataset.labels[i])))
    manifest = DatasetManifest(str(out_dir), entries, dataset.class_count, dataset.split_tag)
    manifest_path = os.path.join(out_dir, manifest_name)
    save_manifest(manifest, manifest_path)
    return manifest_path
