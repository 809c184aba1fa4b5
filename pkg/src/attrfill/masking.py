"""Square-hole geometry: masking, patch/contour extraction and recomposition.

All operations are pure functions on rank-4 image tensors (batch, channels,
height, width). The "patch" is the square hole; the "contour" is everything
outside it. A full-size contour image keeps the hole filled with
``fill_value`` so that shapes stay uniform downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class MaskSpec:
    """Geometry of the square hole inside a square image."""

    image_size: int
    patch_size: int
    top: int
    left: int
    fill_value: float = 0.0

    def __post_init__(self):
        if self.patch_size < 0 or self.image_size <= 0:
            raise ValueError(f"invalid sizes: image={self.image_size}, patch={self.patch_size}")
        if self.top < 0 or self.left < 0:
            raise ValueError(f"negative offsets: top={self.top}, left={self.left}")
        if self.top + self.patch_size > self.image_size or self.left + self.patch_size > self.image_size:
            raise ValueError(
                f"patch exceeds image: top={self.top}, left={self.left}, "
                f"patch={self.patch_size}, image={self.image_size}"
            )

    @property
    def rows(self) -> slice:
        return slice(self.top, self.top + self.patch_size)

    @property
    def cols(self) -> slice:
        return slice(self.left, self.left + self.patch_size)

    def region_map(self) -> torch.Tensor:
        """Boolean (H, W) map, True inside the patch."""
        m = torch.zeros(self.image_size, self.image_size, dtype=torch.bool)
        m[self.rows, self.cols] = True
        return m

    @property
    def n_patch_pixels(self) -> int:
        return self.patch_size * self.patch_size

    @property
    def n_contour_pixels(self) -> int:
        return self.image_size * self.image_size - self.n_patch_pixels


def centered_mask(image_size: int, patch_size: int, fill_value: float = 0.0) -> MaskSpec:
    """Square hole centered in the image; offsets floor((image - patch) / 2)."""
    if patch_size > image_size:
        raise ValueError(f"patch_size {patch_size} exceeds image_size {image_size}")
    off = (image_size - patch_size) // 2
    return MaskSpec(image_size=image_size, patch_size=patch_size, top=off, left=off,
                    fill_value=fill_value)


def _check_image(x: torch.Tensor, m: MaskSpec):
    if x.dim() != 4:
        raise ValueError(f"expected rank-4 image batch, got shape {tuple(x.shape)}")
    if x.shape[-2] != m.image_size or x.shape[-1] != m.image_size:
        raise ValueError(
            f"image shape {tuple(x.shape)} does not match mask image_size {m.image_size}"
        )


def apply_mask(x: torch.Tensor, m: MaskSpec) -> torch.Tensor:
    """Replace the patch region with the fill value; contour pixels untouched."""
    _check_image(x, m)
    out = x.clone()
    out[:, :, m.rows, m.cols] = m.fill_value
    return out


def extract_patch(x: torch.Tensor, m: MaskSpec) -> torch.Tensor:
    """Crop the patch region: (B, C, patch_size, patch_size)."""
    _check_image(x, m)
    return x[:, :, m.rows, m.cols].clone()


def extract_contour(x: torch.Tensor, m: MaskSpec) -> torch.Tensor:
    """Full-size view of the outside-hole region, hole filled with fill_value.

    By construction this equals ``apply_mask(x, m)`` elementwise; the separate
    name keeps call sites readable where the intent is region selection rather
    than hole punching.
    """
    return apply_mask(x, m)


def compose_modified(masked: torch.Tensor, patch: torch.Tensor, m: MaskSpec) -> torch.Tensor:
    """Paste a patch batch into the hole of a masked batch.

    The result is bit-identical to ``masked`` outside the hole and to ``patch``
    inside it.
    """
    _check_image(masked, m)
    expected = (masked.shape[0], masked.shape[1], m.patch_size, m.patch_size)
    if tuple(patch.shape) != expected:
        raise ValueError(f"patch shape {tuple(patch.shape)} does not match {expected}")
    out = masked.clone()
    out[:, :, m.rows, m.cols] = patch
    return out
