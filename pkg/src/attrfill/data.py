"""Dataset ingestion: annotation parsing, train/test split, crop/resize, batching.

Understands the CelebA ``list_attr_celeba.txt`` layout (count line, header
line, then ``filename ±1 ±1 ...`` rows) and a CSV fallback with a header row.
Images are center-cropped to the short side, resized, and normalized to
[-1, 1].
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError, DataError, StateError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass
class DatasetIndex:
    """Ordered list of (image path, attribute bits) plus the attribute names."""

    entries: list[tuple[str, tuple[int, ...]]]
    selected_attributes: list[str]
    split_seed: int | None = None
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def paths(self) -> list[str]:
        return [p for p, _ in self.entries]

    def codes(self) -> np.ndarray:
        return np.array([bits for _, bits in self.entries], dtype=np.float32).reshape(
            len(self.entries), len(self.selected_attributes)
        )


def _read_attr_rows(attr_file: str) -> tuple[list[str], list[tuple[str, list[str]]]]:
    """Return (header names, [(filename, raw flag strings)]) for either layout."""
    with open(attr_file, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if "," in first:
            fh.seek(0)
            reader = csv.reader(fh)
            header = next(reader)
            names = [h.strip() for h in header[1:]]
            rows = [(r[0].strip(), [v.strip() for v in r[1:]]) for r in reader if r]
            return names, rows
        # CelebA text layout: optional count line, then header, then rows
        second = fh.readline()
        if first.split() and all(tok.lstrip("-").isdigit() for tok in first.split()) and len(first.split()) == 1:
            names = second.split()
            body = fh.readlines()
        else:
            names = first.split()
            body = [second] + fh.readlines()
        rows = []
        for line in body:
            parts = line.split()
            if not parts:
                continue
            rows.append((parts[0], parts[1:]))
        return names, rows


def load_index(root_dir: str, attr_file: str, selected_attributes: list[str]) -> DatasetIndex:
    """Build a DatasetIndex from an image directory and an annotation file.

    Rows whose image file is missing are skipped with a warning record, as are
    duplicate or malformed rows. A selected attribute absent from the header is
    a configuration error.
    """
    names, rows = _read_attr_rows(attr_file)
    col = {}
    for attr in selected_attributes:
        if attr not in names:
            raise ConfigError(
                f"attribute column '{attr}' not found in {attr_file}; available: {names}"
            )
        col[attr] = names.index(attr)

    entries: list[tuple[str, tuple[int, ...]]] = []
    warnings: list[str] = []
    seen: set[str] = set()
    for filename, flags in rows:
        path = os.path.join(root_dir, filename)
        if filename in seen:
            warnings.append(f"duplicate row for {filename}; keeping first")
            continue
        seen.add(filename)
        if not os.path.isfile(path):
            warnings.append(f"missing image file: {path}")
            continue
        if len(flags) != len(names):
            warnings.append(f"malformed row for {filename}: {len(flags)} values, expected {len(names)}")
            continue
        bits = tuple(1 if float(flags[col[a]]) > 0 else 0 for a in selected_attributes)
        entries.append((path, bits))
    return DatasetIndex(entries=entries, selected_attributes=list(selected_attributes),
                        warnings=warnings)


def split(index: DatasetIndex, n_test: int, seed: int) -> tuple[DatasetIndex, DatasetIndex]:
    """Deterministic disjoint train/test partition with |test| == n_test."""
    if n_test < 0 or n_test > len(index):
        raise ValueError(f"n_test={n_test} out of range for index of {len(index)} entries")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(index))
    test_ids = set(perm[:n_test].tolist())
    train_entries = [e for i, e in enumerate(index.entries) if i not in test_ids]
    test_entries = [e for i, e in enumerate(index.entries) if i in test_ids]
    attrs = list(index.selected_attributes)
    return (
        DatasetIndex(train_entries, attrs, split_seed=seed),
        DatasetIndex(test_entries, attrs, split_seed=seed),
    )


def normalize(pixels: np.ndarray) -> np.ndarray:
    """Map 8-bit pixel values to [-1, 1] float32."""
    return pixels.astype(np.float32) / 127.5 - 1.0


def denormalize(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] values back to 8-bit; exact inverse of normalize for all 256 levels."""
    v = np.asarray(values, dtype=np.float64)
    return np.clip(np.round((v + 1.0) * 127.5), 0, 255).astype(np.uint8)


def crop_resize(raw_image: np.ndarray, target: int, path: str | None = None) -> np.ndarray:
    """Center-crop the short side, resize to target x target, normalize to [-1, 1].

    Returns an (target, target, C) float32 array.
    """
    if raw_image.ndim == 2:
        raw_image = raw_image[:, :, None]
    h, w = raw_image.shape[:2]
    side = min(h, w)
    if side < 1:
        raise DataError(f"image too small to crop{': ' + path if path else ''}")
    top = (h - side) // 2
    left = (w - side) // 2
    cropped = raw_image[top:top + side, left:left + side]
    img = Image.fromarray(cropped.squeeze() if cropped.shape[2] == 1 else cropped)
    resized = np.asarray(img.resize((target, target), Image.BILINEAR))
    if resized.ndim == 2:
        resized = resized[:, :, None]
    return normalize(resized)


def load_image(path: str, target: int) -> torch.Tensor:
    """Decode an image file to a (3, target, target) tensor in [-1, 1]."""
    try:
        with Image.open(path) as img:
            raw = np.asarray(img.convert("RGB"))
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    arr = crop_resize(raw, target, path=path)
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


class Batcher:
    """Deterministic shuffle-per-epoch batch iterator over a DatasetIndex.

    Batches always contain exactly ``batch_size`` samples; when an epoch ends
    mid-batch the order continues into the next shuffled epoch. Decoded images
    are cached at target resolution, so one pass over the data pays the decode
    cost once.
    """

    def __init__(self, index: DatasetIndex, batch_size: int, image_size: int,
                 seed: int = 0, cache: bool = True):
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.index = index
        self.batch_size = batch_size
        self.image_size = image_size
        self._rng = np.random.default_rng(seed)
        self._pending: list[int] = []
        self._cache: dict[str, torch.Tensor] | None = {} if cache else None
        self._codes = torch.from_numpy(index.codes())

    def _image(self, path: str) -> torch.Tensor:
        if self._cache is not None and path in self._cache:
            return self._cache[path]
        img = load_image(path, self.image_size)
        if self._cache is not None:
            self._cache[path] = img
        return img

    def next_batch(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (images (B, 3, S, S), codes (B, A)), row-aligned."""
        n = len(self.index)
        if n == 0:
            raise StateError("cannot draw a batch from an empty index")
        while len(self._pending) < self.batch_size:
            self._pending.extend(self._rng.permutation(n).tolist())
        ids = self._pending[:self.batch_size]
        self._pending = self._pending[self.batch_size:]
        images = torch.stack([self._image(self.index.entries[i][0]) for i in ids])
        codes = self._codes[ids].clone()
        return images, codes

    def state(self) -> dict:
        return {"rng": self._rng.bit_generator.state, "pending": list(self._pending)}

    def restore(self, state: dict):
        self._rng.bit_generator.state = state["rng"]
        self._pending = list(state["pending"])
