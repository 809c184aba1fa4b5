"""Procedural face fixture dataset: ellipse faces with togglable attribute strokes.

Generates CelebA-shaped inputs (178x218 PNGs plus a ``list_attr`` style
annotation file) so the full pipeline runs with zero downloads. The two
attributes, Eyeglasses and Mustache, are drawn as high-contrast strokes that
land inside the centered square hole after crop/resize, which is what makes
them reachable by hole-local editing.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

FIXTURE_ATTRIBUTES = ("Eyeglasses", "Mustache")
ATTR_FILE_NAME = "list_attr_fixture.txt"

_WIDTH, _HEIGHT = 178, 218
_SS = 2  # supersampling factor; shapes render at 2x and are box-downsampled

_SKIN_TONES = np.array([
    [236, 204, 176], [220, 182, 150], [198, 152, 118],
    [168, 118, 86], [130, 88, 62],
], dtype=np.float64)

_BACKGROUNDS = np.array([
    [168, 200, 224], [196, 176, 142], [150, 170, 150],
    [210, 194, 208], [140, 150, 170],
], dtype=np.float64)

_HAIR_COLORS = np.array([
    [40, 30, 24], [92, 60, 36], [150, 110, 60], [190, 170, 140], [70, 70, 74],
], dtype=np.float64)


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def render_face(rng: np.random.Generator, eyeglasses: int, mustache: int) -> np.ndarray:
    """Draw one synthetic face; returns (218, 178, 3) uint8, antialiased."""
    yy, xx = np.mgrid[0:_HEIGHT * _SS, 0:_WIDTH * _SS].astype(np.float64) / _SS
    canvas = np.empty((_HEIGHT * _SS, _WIDTH * _SS, 3), dtype=np.float64)

    bg = _BACKGROUNDS[rng.integers(len(_BACKGROUNDS))] + rng.uniform(-15, 15, 3)
    grad = (yy / _HEIGHT * 24.0)[:, :, None]
    canvas[:] = bg
    canvas -= grad

    cx = 89.0 + rng.uniform(-4, 4)
    cy = 109.0 + rng.uniform(-4, 4)
    face_rx = 52.0 + rng.uniform(-5, 5)
    face_ry = 70.0 + rng.uniform(-6, 6)
    skin = _SKIN_TONES[rng.integers(len(_SKIN_TONES))] + rng.uniform(-12, 12, 3)
    hair = _HAIR_COLORS[rng.integers(len(_HAIR_COLORS))] + rng.uniform(-10, 10, 3)

    hair_mask = _ellipse(yy, xx, cy - 14, cx, face_ry + 14, face_rx + 12)
    canvas[hair_mask] = hair
    face_mask = _ellipse(yy, xx, cy, cx, face_ry, face_rx)
    canvas[face_mask] = skin

    eye_dx = 21.0 + rng.uniform(-2, 2)
    eye_y = cy - 18.0 + rng.uniform(-2, 2)
    for side in (-1, 1):
        ex = cx + side * eye_dx
        white = _ellipse(yy, xx, eye_y, ex, 5.5, 7.5)
        canvas[white] = [248, 248, 248]
        pupil = _ellipse(yy, xx, eye_y, ex, 3.2, 3.2)
        canvas[pupil] = [30, 26, 24]

    nose = _ellipse(yy, xx, cy + 6, cx, 8.0, 4.0)
    canvas[nose] = skin * 0.86

    mouth_y = cy + 34.0 + rng.uniform(-2, 2)
    mouth = _ellipse(yy, xx, mouth_y, cx, 4.5, 14.0)
    canvas[mouth] = [160, 58, 58]

    if mustache:
        tone = np.array([52, 34, 22], dtype=np.float64) + rng.uniform(-8, 8, 3)
        bar = _ellipse(yy, xx, cy + 21.0, cx, 7.0, 21.0)
        canvas[bar] = tone

    if eyeglasses:
        frame = np.array([16, 16, 20], dtype=np.float64)
        for side in (-1, 1):
            ex = cx + side * eye_dx
            outer = _ellipse(yy, xx, eye_y, ex, 14.5, 16.5)
            inner = _ellipse(yy, xx, eye_y, ex, 7.5, 9.5)
            canvas[outer & ~inner] = frame
        bridge = (np.abs(yy - eye_y) <= 3.5) & (np.abs(xx - cx) <= eye_dx - 8.0)
        canvas[bridge] = frame

    hi = np.clip(canvas, 0, 255).astype(np.uint8)
    img = Image.fromarray(hi).resize((_WIDTH, _HEIGHT), Image.BOX)
    return np.asarray(img)


def generate_fixture(out_dir: str, n: int, seed: int) -> str:
    """Write n face PNGs and the annotation file; returns the annotation path.

    Byte-identical output for identical (n, seed).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        bits = (int(rng.integers(2)), int(rng.integers(2)))
        img = render_face(rng, eyeglasses=bits[0], mustache=bits[1])
        name = f"face_{i:05d}.png"
        Image.fromarray(img).save(os.path.join(out_dir, name))
        flags = " ".join("1" if b else "-1" for b in bits)
        rows.append(f"{name} {flags}")
    attr_path = os.path.join(out_dir, ATTR_FILE_NAME)
    with open(attr_path, "w", encoding="utf-8") as fh:
        fh.write(f"{n}\n")
        fh.write(" ".join(FIXTURE_ATTRIBUTES) + "\n")
        fh.write("\n".join(rows) + "\n")
    return attr_path
