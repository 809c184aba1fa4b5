"""Inpainting quality metrics and attribute-transfer success measurement.

PSNR uses MAX=1 on inputs in [0, 1]; identical pairs yield an infinite-PSNR
sentinel that is counted separately and never averaged. SSIM is the windowed
formulation: 11x11 Gaussian window with sigma 1.5, K1=0.01, K2=0.03, dynamic
range 1, mean over valid windows and channels.

Transfer success is measured by an independently trained probe classifier:
the flip rate is the fraction of transformed images for which the probe
predicts the requested target bit, reported per attribute and per direction
because the two directions of a transfer need not behave symmetrically.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import DatasetIndex, load_image
from .errors import StateError
from .masking import MaskSpec, apply_mask, centered_mask, compose_modified, extract_patch
from .networks import ModelBundle

PSNR_INF = float("inf")


def _as_tensor(a) -> torch.Tensor:
    t = torch.as_tensor(a, dtype=torch.float64)
    return t


def psnr(a, b) -> float:
    """10*log10(1/MSE) for images in [0, 1]; inf when the images are identical."""
    ta, tb = _as_tensor(a), _as_tensor(b)
    if ta.shape != tb.shape:
        raise ValueError(f"shape mismatch: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    mse = ((ta - tb) ** 2).mean().item()
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return g[:, None] @ g[None, :]


def ssim(a, b, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean windowed SSIM over valid positions; channel-mean for multichannel input.

    Accepts (H, W), (C, H, W) or (B, C, H, W); computed in float64.
    """
    ta, tb = _as_tensor(a), _as_tensor(b)
    if ta.shape != tb.shape:
        raise ValueError(f"shape mismatch: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    while ta.dim() < 4:
        ta, tb = ta.unsqueeze(0), tb.unsqueeze(0)
    if ta.shape[-1] < window_size or ta.shape[-2] < window_size:
        raise ValueError(
            f"image {tuple(ta.shape)} smaller than the {window_size}x{window_size} window"
        )
    c = ta.shape[1]
    win = gaussian_window(window_size, sigma).expand(c, 1, window_size, window_size)
    mu_a = F.conv2d(ta, win, groups=c)
    mu_b = F.conv2d(tb, win, groups=c)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = F.conv2d(ta * ta, win, groups=c) - mu_aa
    var_b = F.conv2d(tb * tb, win, groups=c) - mu_bb
    cov = F.conv2d(ta * tb, win, groups=c) - mu_ab
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    score = ((2 * mu_ab + c1) * (2 * cov + c2)) / ((mu_aa + mu_bb + c1) * (var_a + var_b + c2))
    return score.mean().item()


def to_unit_range(x: torch.Tensor) -> torch.Tensor:
    """Map [-1, 1] network space to [0, 1] metric space."""
    return ((x + 1.0) / 2.0).clamp(0.0, 1.0)


@dataclass
class EvalReport:
    """Aggregate inpainting scores plus per-attribute transfer rates."""

    n_images: int
    psnr_mean: float
    ssim_mean: float
    baseline_psnr_mean: float
    baseline_ssim_mean: float
    psnr_hole_mean: float
    baseline_psnr_hole_mean: float
    n_psnr_inf: int = 0
    per_attribute_flip_rate: dict = field(default_factory=dict)
    probe_accuracy: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_markdown(self) -> str:
        lines = [
            "| metric | reconstructed | masked baseline |",
            "|---|---|---|",
            f"| PSNR (dB, full image) | {self.psnr_mean:.2f} | {self.baseline_psnr_mean:.2f} |",
            f"| SSIM | {self.ssim_mean:.4f} | {self.baseline_ssim_mean:.4f} |",
            f"| PSNR (dB, hole only) | {self.psnr_hole_mean:.2f} | {self.baseline_psnr_hole_mean:.2f} |",
            "",
            f"{self.n_images} images; {self.n_psnr_inf} exact reconstructions "
            f"excluded from PSNR means.",
        ]
        if self.per_attribute_flip_rate:
            lines += ["", "| transfer | flip rate | n |", "|---|---|---|"]
            for name, directions in self.per_attribute_flip_rate.items():
                for direction, stats in directions.items():
                    lines.append(f"| {name} {direction} | {stats['rate']:.3f} | {stats['n']} |")
        if self.probe_accuracy is not None:
            lines += ["", f"Probe classifier held-out accuracy: {self.probe_accuracy:.3f}"]
        return "\n".join(lines)


def _finite_mean(values: list[float]) -> float:
    finite = [v for v in values if math.isfinite(v)]
    return sum(finite) / len(finite) if finite else PSNR_INF


def evaluate_inpainting(bundle: ModelBundle, test_index: DatasetIndex,
                        batch_size: int = 16) -> EvalReport:
    """Mask, reconstruct and compose each test image; score against the original.

    Full-image PSNR/SSIM of the composed output, the masked-input baseline,
    and hole-only PSNR for both are reported.
    """
    if len(test_index) == 0:
        raise ValueError("empty test set")
    cfg = bundle.cfg
    m = centered_mask(cfg.image_size, cfg.patch_size)
    bundle.eval()
    scores: dict[str, list[float]] = {k: [] for k in
                                      ("psnr", "ssim", "b_psnr", "b_ssim", "h_psnr", "bh_psnr")}
    n_inf = 0
    with torch.no_grad():
        for start in range(0, len(test_index), batch_size):
            paths = [p for p, _ in test_index.entries[start:start + batch_size]]
            x = torch.stack([load_image(p, cfg.image_size) for p in paths])
            x_bar = apply_mask(x, m)
            restored = bundle.reconstructor(x_bar)
            x_hat = compose_modified(x_bar, extract_patch(restored, m), m)
            for i in range(x.shape[0]):
                a, b, bl = to_unit_range(x[i]), to_unit_range(x_hat[i]), to_unit_range(x_bar[i])
                p_full = psnr(a, b)
                if not math.isfinite(p_full):
                    n_inf += 1
                scores["psnr"].append(p_full)
                scores["ssim"].append(ssim(a, b))
                scores["b_psnr"].append(psnr(a, bl))
                scores["b_ssim"].append(ssim(a, bl))
                ap = to_unit_range(extract_patch(x[i:i + 1], m)[0])
                bp = to_unit_range(extract_patch(x_hat[i:i + 1], m)[0])
                blp = to_unit_range(extract_patch(x_bar[i:i + 1], m)[0])
                scores["h_psnr"].append(psnr(ap, bp))
                scores["bh_psnr"].append(psnr(ap, blp))
    return EvalReport(
        n_images=len(test_index),
        psnr_mean=_finite_mean(scores["psnr"]),
        ssim_mean=_finite_mean(scores["ssim"]),
        baseline_psnr_mean=_finite_mean(scores["b_psnr"]),
        baseline_ssim_mean=_finite_mean(scores["b_ssim"]),
        psnr_hole_mean=_finite_mean(scores["h_psnr"]),
        baseline_psnr_hole_mean=_finite_mean(scores["bh_psnr"]),
        n_psnr_inf=n_inf,
    )


class ProbeClassifier(nn.Module):
    """Small supervised CNN used as an independent judge of attribute presence."""

    def __init__(self, n_attributes: int, base_channels: int = 16):
        super().__init__()
        c = base_channels
        self.features = nn.Sequential(
            nn.Conv2d(3, c, 4, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(4 * c, 4 * c, 4, stride=2, padding=1), nn.ReLU(inplace=True),
        )
        self.head = nn.Linear(4 * c, n_attributes)
        self.n_attributes = n_attributes
        self.trained = False

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.features(x).mean(dim=(2, 3))
        return self.head(f)

    def predict_bits(self, x: torch.Tensor) -> torch.Tensor:
        return (torch.sigmoid(self.forward(x)) > 0.5).to(torch.int64)


def train_probe(index: DatasetIndex, image_size: int, seed: int = 0,
                epochs: int = 5, batch_size: int = 32, holdout: int = 200,
                lr: float = 1e-3) -> tuple[ProbeClassifier, float]:
    """Train the probe on labelled images; returns (probe, held-out accuracy)."""
    from .data import Batcher, split as split_index

    torch.manual_seed(seed)
    n_holdout = min(holdout, max(1, len(index) // 5))
    train_idx, held_idx = split_index(index, n_holdout, seed)
    probe = ProbeClassifier(len(index.selected_attributes))
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    batcher = Batcher(train_idx, batch_size, image_size, seed=seed)
    steps_per_epoch = max(1, len(train_idx) // batch_size)
    probe.train()
    for _ in range(epochs * steps_per_epoch):
        x, c = batcher.next_batch()
        opt.zero_grad()
        loss = F.binary_cross_entropy_with_logits(probe(x), c)
        loss.backward()
        opt.step()
    probe.eval()
    correct = total = 0
    with torch.no_grad():
        for start in range(0, len(held_idx), batch_size):
            chunk = held_idx.entries[start:start + batch_size]
            x = torch.stack([load_image(p, image_size) for p, _ in chunk])
            bits = torch.tensor([b for _, b in chunk], dtype=torch.int64)
            pred = probe.predict_bits(x)
            correct += (pred == bits).sum().item()
            total += bits.numel()
    probe.trained = True
    return probe, correct / max(total, 1)


def attribute_flip_rate(bundle: ModelBundle, probe: ProbeClassifier,
                        test_index: DatasetIndex, attribute: str,
                        target_bit: int | None,
                        batch_size: int = 16, max_images: int | None = None
                        ) -> tuple[float, int]:
    """Fraction of transformed images whose probe prediction matches the target.

    With an integer ``target_bit``, only images whose current bit is
    ``1 - target_bit`` are transformed, so each call measures one direction
    of the transfer. With ``target_bit=None`` every image keeps its own code
    (no flip requested) and the rate reduces to the probe's plain accuracy on
    the transformed images.
    """
    if not probe.trained:
        raise StateError("probe classifier has not been trained")
    cfg = bundle.cfg
    attr_pos = test_index.selected_attributes.index(attribute)
    m = centered_mask(cfg.image_size, cfg.patch_size)
    if target_bit is None:
        chosen = list(test_index.entries)
    else:
        chosen = [(p, b) for p, b in test_index.entries if b[attr_pos] == 1 - target_bit]
    if max_images is not None:
        chosen = chosen[:max_images]
    if not chosen:
        return 0.0, 0
    bundle.eval()
    hits = 0
    with torch.no_grad():
        for start in range(0, len(chosen), batch_size):
            chunk = chosen[start:start + batch_size]
            x = torch.stack([load_image(p, cfg.image_size) for p, _ in chunk])
            codes = torch.tensor([b for _, b in chunk], dtype=torch.float32)
            if target_bit is not None:
                codes[:, attr_pos] = float(target_bit)
            x_bar = apply_mask(x, m)
            x_hat = compose_modified(x_bar, extract_patch(bundle.reconstructor(x_bar), m), m)
            transformed = bundle.generator(x_hat, codes)
            pred = probe.predict_bits(transformed)
            hits += (pred[:, attr_pos] == codes[:, attr_pos].to(torch.int64)).sum().item()
    return hits / len(chosen), len(chosen)


def flip_report(bundle: ModelBundle, probe: ProbeClassifier, test_index: DatasetIndex,
                batch_size: int = 16, max_images: int | None = None) -> dict:
    """Per-attribute, per-direction flip rates; directions are kept separate
    because transfers are generally asymmetric."""
    report: dict = {}
    for attr in test_index.selected_attributes:
        r01, n01 = attribute_flip_rate(bundle, probe, test_index, attr, 1,
                                       batch_size, max_images)
        r10, n10 = attribute_flip_rate(bundle, probe, test_index, attr, 0,
                                       batch_size, max_images)
        overall = ((r01 * n01 + r10 * n10) / (n01 + n10)) if (n01 + n10) else 0.0
        report[attr] = {
            "0->1": {"rate": r01, "n": n01},
            "1->0": {"rate": r10, "n": n10},
            "overall": {"rate": overall, "n": n01 + n10},
        }
    return report
