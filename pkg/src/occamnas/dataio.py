"""Dataset ingestion: IDX files, directories of PNGs, resizing and splitting."""
from __future__ import annotations

import gzip
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    BadMagic,
    ClassTooSmall,
    CountMismatch,
    DatasetError,
    EmptyClassDir,
    TruncatedFile,
)

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MANIFEST_NAME = "classes.json"


@dataclass
class Dataset:
    """Images in raw pixel units (0-255) with integer class labels.

    ``images`` is an (n, h, w, ch) float32 array when all images share a shape,
    otherwise a list of (h, w, ch) arrays (e.g. a directory of mixed-size PNGs
    before :func:`resize`).
    """

    images: np.ndarray | list
    labels: np.ndarray
    class_names: list = field(default_factory=list)
    skipped: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise CountMismatch(f"{len(self.images)} images vs {len(self.labels)} labels")
        if len(self.labels) and self.labels.max() >= len(self.class_names):
            raise DatasetError("label index beyond the class list")

    def __len__(self):
        return len(self.labels)

    @property
    def uniform(self) -> bool:
        return isinstance(self.images, np.ndarray)

    @property
    def image_shape(self) -> tuple:
        if self.uniform:
            return tuple(self.images.shape[1:])
        shapes = {img.shape for img in self.images}
        if len(shapes) != 1:
            raise DatasetError(f"images have mixed shapes {sorted(shapes)[:3]}...")
        return shapes.pop()

    def as_array(self) -> np.ndarray:
        if self.uniform:
            return self.images
        if not self.images:
            return np.zeros((0, 0, 0, 1), np.float32)
        self.image_shape  # raises on mixed shapes
        return np.stack(self.images).astype(np.float32)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.intp)
        if self.uniform:
            images = self.images[indices]
        else:
            images = [self.images[i] for i in indices]
        return Dataset(images, self.labels[indices], list(self.class_names))


def _open(path):
    path = Path(path)
    with open(path, "rb") as fh:
        gz = fh.read(2) == b"\x1f\x8b"
    return gzip.open(path, "rb") if gz else open(path, "rb")


def _read_idx(path, expected_magic: int):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise TruncatedFile(f"{path}: shorter than an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedFile(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = int(np.prod(dims, dtype=np.int64))
    body = raw[header_len:]
    if len(body) < count:
        raise TruncatedFile(f"{path}: header promises {count} bytes, file holds {len(body)}")
    return np.frombuffer(body, dtype=np.uint8, count=count).reshape(dims)


def load_idx(images_path, labels_path, class_names=None) -> Dataset:
    """Parse an IDX image file (magic 0x803) and label file (magic 0x801)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise CountMismatch(f"{len(images)} images but {len(labels)} labels")
    if class_names is None:
        n_classes = int(labels.max()) + 1 if len(labels) else 0
        class_names = [str(i) for i in range(n_classes)]
    return Dataset(images.astype(np.float32)[..., None], labels.astype(np.int64), list(class_names))


def save_idx(images_path, labels_path, images, labels, compress: bool | None = None) -> None:
    """Write uint8 images (n, h, w) or (n, h, w, 1) and labels as IDX files."""
    images = np.asarray(images)
    if images.ndim == 4:
        if images.shape[-1] != 1:
            raise ValueError("IDX images must be single-channel")
        images = images[..., 0]
    images = np.clip(np.rint(images), 0, 255).astype(np.uint8)
    labels = np.asarray(labels).astype(np.uint8)
    for path, magic, arr in ((images_path, IDX_IMAGES_MAGIC, images), (labels_path, IDX_LABELS_MAGIC, labels)):
        payload = struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()
        gz = str(path).endswith(".gz") if compress is None else compress
        opener = gzip.open if gz else open
        with opener(path, "wb") as fh:
            fh.write(payload)


def find_idx_pair(root, split: str = "train"):
    """Locate ``<split>-images*`` / ``<split>-labels*`` files (MNIST naming) in ``root``."""
    root = Path(root)
    prefixes = {"train": ("train",), "test": ("t10k", "test")}[split]
    for prefix in prefixes:
        imgs = sorted(root.glob(f"{prefix}-images*"))
        labs = sorted(root.glob(f"{prefix}-labels*"))
        if imgs and labs:
            return imgs[0], labs[0]
    return None


def _decode_png(path):
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("L", "1", "I", "I;16", "F"):
            arr = np.asarray(im.convert("L"), dtype=np.float32)[..., None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr


def load_image_dir(root_path) -> Dataset:
    """One subdirectory per class; class index is the lexicographic rank of its name.

    A ``classes.json`` manifest (``{"classes": [...]}``) in the root pins the
    class order instead. Undecodable files are skipped with a warning and
    counted in ``Dataset.skipped``.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    manifest = root / MANIFEST_NAME
    if manifest.exists():
        class_names = list(json.loads(manifest.read_text())["classes"])
    else:
        class_names = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not class_names:
        raise DatasetError(f"{root} has no class subdirectories")
    images, labels, skipped = [], [], 0
    for label, name in enumerate(class_names):
        files = sorted(p for p in (root / name).iterdir() if p.is_file() and p.suffix.lower() == ".png")
        if not files:
            raise EmptyClassDir(f"class directory {root / name} holds no PNG files")
        for path in files:
            try:
                images.append(_decode_png(path))
            except Exception as exc:  # PIL raises a zoo of error types
                logger.warning("skipping undecodable image %s: %s", path, exc)
                skipped += 1
                continue
            labels.append(label)
    shapes = {img.shape for img in images}
    if len(shapes) == 1:
        images = np.stack(images)
    ds = Dataset(images, np.asarray(labels, dtype=np.int64), class_names)
    ds.skipped = skipped
    return ds


def _resize_one(img, s: int):
    h, w = img.shape[:2]
    if h == s and w == s:
        return img
    # corner-aligned bilinear sampling
    ys = np.linspace(0, h - 1, s) if s > 1 else np.array([(h - 1) / 2])
    xs = np.linspace(0, w - 1, s) if s > 1 else np.array([(w - 1) / 2])
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    img = img.astype(np.float64)
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return (top * (1 - wy) + bottom * wy).astype(np.float32)


def resize(dataset: Dataset, s: int, replicate_channels: bool = False) -> Dataset:
    """Bilinear resize to ``s`` x ``s``; optionally lift 1-channel images to 3."""
    if s < 1:
        raise ValueError("target side must be >= 1")
    images = dataset.images
    if dataset.uniform and images.shape[1:3] == (s, s):
        out = images
    else:
        out = [_resize_one(img, s) for img in images]
        out = np.stack(out).astype(np.float32) if out else np.zeros((0, s, s, 1), np.float32)
    if replicate_channels and out.shape[-1] == 1:
        out = np.repeat(out, 3, axis=-1)
    return Dataset(out, dataset.labels.copy(), list(dataset.class_names))


def split(dataset: Dataset, ratio: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split; returns ``(train, holdout)`` with ``ratio`` of each class held out."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, hold_idx = [], []
    for label in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == label)
        if len(members) < 2:
            raise ClassTooSmall(f"class {label} has {len(members)} sample(s); need at least 2")
        members = rng.permutation(members)
        n_hold = int(np.floor(len(members) * ratio + 0.5))
        n_hold = min(max(n_hold, 1), len(members) - 1)
        hold_idx.append(members[:n_hold])
        train_idx.append(members[n_hold:])
    train_idx = np.sort(np.concatenate(train_idx))
    hold_idx = np.sort(np.concatenate(hold_idx))
    return dataset.subset(train_idx), dataset.subset(hold_idx)
