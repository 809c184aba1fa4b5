"""Network topologies and parameter plumbing for the three players.

Reconstructor: coarse inpainting trunk — 5x5 stem, stride-2 downsampling
(two stages at 128px and above, one below so the hole keeps enough latent
resolution), four dilated 3x3 blocks (dilations 2/4/8/16, capped so mirror
padding stays legal at small feature sizes), mirror padding throughout, ELU,
matching nearest-neighbor upsample stages. The output is tanh-bounded around
an identity anchor: tanh(atanh(input) + correction), so the net starts at
the identity and learns the hole fill as an additive correction.

Generator: 7x7 stem over image plus replicated conditioning channels, two
stride-2 downs, residual blocks whose two 3x3 convs use dilations 1 and 2,
two stride-2 transposed convs, instance norm; same identity-anchored
tanh-bounded output, which makes content preservation the default and leaves
attribute edits to the conditioning signal.

Discriminator: two critic towers of 4x4 stride-2 convs with LeakyReLU(0.01) —
one over the full image, one over the hole crop — each with its own unbounded
scalar head; one final 1x1 conv over the pooled concatenation of both towers
produces the attribute logits.

Initialization: fan-in-scaled normals for trunk convs (norm-free towers keep
unit signal variance), std 0.02 for every output head, instance-norm affines
at identity; deterministic under a seed.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .errors import CheckpointIntegrityError, CheckpointVersionError, ConfigError
from .masking import MaskSpec, extract_patch

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    image_size: int
    patch_size: int
    n_attributes: int
    base_channels: int = 64
    n_res_blocks: int = 6

    def __post_init__(self):
        if self.image_size % 4 != 0:
            raise ConfigError(f"image_size must be divisible by 4, got {self.image_size}")
        if self.patch_size < 8:
            raise ConfigError(f"patch_size must be >= 8, got {self.patch_size}")
        if self.patch_size > self.image_size:
            raise ConfigError(
                f"patch_size {self.patch_size} exceeds image_size {self.image_size}"
            )
        if self.n_attributes < 0 or self.base_channels < 1 or self.n_res_blocks < 0:
            raise ConfigError("n_attributes, base_channels, n_res_blocks out of range")


def _conv(in_ch, out_ch, kernel, stride=1, dilation=1):
    pad = dilation * (kernel - 1) // 2
    return nn.Sequential(
        nn.ReflectionPad2d(pad),
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, dilation=dilation),
    )


def _identity_anchor(x: torch.Tensor) -> torch.Tensor:
    # atanh is only finite strictly inside (-1, 1); saturated pixels lose < 1e-3
    return torch.atanh(x.clamp(-0.999, 0.999))


class Reconstructor(nn.Module):
    """Fills the square hole of a masked image; same-shape tanh-bounded output.

    Output is tanh(atanh(input) + trunk(input)): exactly the input where the
    trunk is silent, so all learning effort goes into the correction field.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        n_downs = 2 if cfg.image_size >= 128 else 1
        feat = cfg.image_size // (2 ** n_downs)
        layers = [_conv(3, c, 5), nn.ELU()]
        ch = c
        for _ in range(n_downs):
            layers += [_conv(ch, 2 * ch, 3, stride=2), nn.ELU(),
                       _conv(2 * ch, 2 * ch, 3), nn.ELU()]
            ch *= 2
        mid = 4 * c
        if ch != mid:
            layers += [_conv(ch, mid, 3), nn.ELU()]
            ch = mid
        for d in (2, 4, 8, 16):
            d_eff = min(d, max(1, feat // 2))  # reflection pad must stay below feature size
            layers += [_conv(ch, ch, 3, dilation=d_eff), nn.ELU()]
        for _ in range(n_downs):
            layers += [nn.Upsample(scale_factor=2, mode="nearest"),
                       _conv(ch, ch // 2, 3), nn.ELU()]
            ch //= 2
        layers += [_conv(ch, max(ch // 2, 8), 3), nn.ELU(),
                   _conv(max(ch // 2, 8), 3, 3)]
        self.trunk = nn.Sequential(*layers)

    def forward(self, masked: torch.Tensor) -> torch.Tensor:
        if masked.dim() != 4 or masked.shape[-1] != self.cfg.image_size \
                or masked.shape[-2] != self.cfg.image_size:
            raise ValueError(f"expected (B, 3, {self.cfg.image_size}, {self.cfg.image_size}), "
                             f"got {tuple(masked.shape)}")
        return torch.tanh(_identity_anchor(masked) + self.trunk(masked))


class ResidualBlock(nn.Module):
    """Two 3x3 convs at dilations 1 and 2 with instance norm and a skip add."""

    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            _conv(channels, channels, 3, dilation=1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            _conv(channels, channels, 3, dilation=2),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Attribute-conditioned translator; the code enters as constant input channels.

    Same identity-anchored output as the reconstructor: the trunk predicts an
    additive edit, so unedited content survives the translation by default.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        blocks = [ResidualBlock(4 * c) for _ in range(cfg.n_res_blocks)]
        self.trunk = nn.Sequential(
            _conv(3 + cfg.n_attributes, c, 7),
            nn.InstanceNorm2d(c, affine=True), nn.ReLU(inplace=True),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * c, affine=True), nn.ReLU(inplace=True),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(4 * c, affine=True), nn.ReLU(inplace=True),
            *blocks,
            nn.ConvTranspose2d(4 * c, 2 * c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * c, affine=True), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * c, c, 4, stride=2, padding=1),
            nn.InstanceNorm2d(c, affine=True), nn.ReLU(inplace=True),
            _conv(c, 3, 7),
        )

    def forward(self, x: torch.Tensor, code: torch.Tensor) -> torch.Tensor:
        if code.dim() != 2 or code.shape[1] != self.cfg.n_attributes:
            raise ValueError(
                f"code shape {tuple(code.shape)} does not match n_attributes="
                f"{self.cfg.n_attributes}"
            )
        if code.shape[0] != x.shape[0]:
            raise ValueError("code batch not row-aligned with images")
        maps = code.to(x.dtype).view(*code.shape, 1, 1).expand(-1, -1, x.shape[2], x.shape[3])
        return torch.tanh(_identity_anchor(x) + self.trunk(torch.cat([x, maps], dim=1)))


def _tower(in_size: int, base: int, depth: int) -> tuple[nn.Sequential, int]:
    layers = []
    prev = 3
    ch = base
    for i in range(depth):
        ch = base * min(2 ** i, 8)
        layers += [nn.Conv2d(prev, ch, 4, stride=2, padding=1), nn.LeakyReLU(0.01)]
        prev = ch
    return nn.Sequential(*layers), ch


class Discriminator(nn.Module):
    """Global and patch critic towers plus a shared attribute-classification head.

    Critic scores are unbounded reals (no sigmoid). The patch tower only ever
    sees the hole crop, so its score is invariant to contour pixels.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        depth_g = max(3, int(math.floor(math.log2(cfg.image_size))) - 1)
        depth_p = max(2, int(math.floor(math.log2(cfg.patch_size))) - 2)
        self.global_tower, ch_g = _tower(cfg.image_size, cfg.base_channels, depth_g)
        self.patch_tower, ch_p = _tower(cfg.patch_size, cfg.base_channels, depth_p)
        self.global_head = nn.Conv2d(ch_g, 1, 3, padding=1)
        self.patch_head = nn.Conv2d(ch_p, 1, 3, padding=1)
        self.class_head = nn.Conv2d(ch_g + ch_p, cfg.n_attributes, 1) if cfg.n_attributes else None

    def global_score(self, images: torch.Tensor) -> torch.Tensor:
        return self.global_head(self.global_tower(images)).mean(dim=(1, 2, 3))

    def patch_score(self, patches: torch.Tensor) -> torch.Tensor:
        return self.patch_head(self.patch_tower(patches)).mean(dim=(1, 2, 3))

    def forward(self, x: torch.Tensor, m: MaskSpec
                ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if x.shape[-1] != self.cfg.image_size or x.shape[-2] != self.cfg.image_size:
            raise ValueError(f"image shape {tuple(x.shape)} does not match config "
                             f"image_size {self.cfg.image_size}")
        if m.patch_size != self.cfg.patch_size:
            raise ValueError(f"mask patch_size {m.patch_size} does not match config "
                             f"patch_size {self.cfg.patch_size}")
        feat_g = self.global_tower(x)
        feat_p = self.patch_tower(extract_patch(x, m))
        adv_g = self.global_head(feat_g).mean(dim=(1, 2, 3))
        adv_p = self.patch_head(feat_p).mean(dim=(1, 2, 3))
        if self.class_head is None:
            logits = x.new_zeros(x.shape[0], 0)
        else:
            pooled = torch.cat([
                feat_g.mean(dim=(2, 3), keepdim=True),
                feat_p.mean(dim=(2, 3), keepdim=True),
            ], dim=1)
            logits = self.class_head(pooled).flatten(1)
        return adv_g, adv_p, logits


@dataclass
class ModelBundle:
    """The three independently updatable parameter sets plus their config."""

    reconstructor: Reconstructor
    generator: Generator
    discriminator: Discriminator
    cfg: NetConfig

    def networks(self) -> dict[str, nn.Module]:
        return {"R": self.reconstructor, "G": self.generator, "D": self.discriminator}

    def eval(self):
        for net in self.networks().values():
            net.eval()
        return self

    def train(self):
        for net in self.networks().values():
            net.train()
        return self


def _init_parameters(net: nn.Module, gen: torch.Generator, heads: set[int]):
    for module in net.modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = module.weight.shape[1] * module.weight.shape[2] * module.weight.shape[3]
            std = 0.02 if id(module) in heads else (2.0 / fan_in) ** 0.5
            with torch.no_grad():
                module.weight.copy_(
                    torch.randn(module.weight.shape, generator=gen) * std
                )
                if module.bias is not None:
                    module.bias.zero_()
        elif isinstance(module, nn.InstanceNorm2d) and module.affine:
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()


def _head_convs(net: nn.Module) -> set[int]:
    """Output-producing convs get the small init so the nets start quiet."""
    if isinstance(net, (Reconstructor, Generator)):
        last = [m for m in net.trunk.modules() if isinstance(m, nn.Conv2d)][-1]
        return {id(last)}
    if isinstance(net, Discriminator):
        heads = {id(net.global_head), id(net.patch_head)}
        if net.class_head is not None:
            heads.add(id(net.class_head))
        return heads
    return set()


def init_bundle(cfg: NetConfig, seed: int) -> ModelBundle:
    """Deterministic fresh parameters; see the module docstring for the scheme."""
    gen = torch.Generator().manual_seed(seed)
    r = Reconstructor(cfg)
    g = Generator(cfg)
    d = Discriminator(cfg)
    for net in (r, g, d):
        _init_parameters(net, gen, _head_convs(net))
    return ModelBundle(r, g, d, cfg)


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def save_checkpoint(path: str, bundle: ModelBundle, iteration: int, extra: dict | None = None):
    """Atomic single-archive checkpoint: R/G/D weights, config, iteration, extras."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "net_config": asdict(bundle.cfg),
        "iteration": int(iteration),
        "R": bundle.reconstructor.state_dict(),
        "G": bundle.generator.state_dict(),
        "D": bundle.discriminator.state_dict(),
        "extra": extra or {},
    }
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointIntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointIntegrityError(f"checkpoint {path} has no format marker")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint {path} has format_version {payload['format_version']}, "
            f"this build reads {CHECKPOINT_VERSION}"
        )
    return payload


def restore_bundle(payload: dict) -> tuple[ModelBundle, int]:
    cfg = NetConfig(**payload["net_config"])
    bundle = ModelBundle(Reconstructor(cfg), Generator(cfg), Discriminator(cfg), cfg)
    bundle.reconstructor.load_state_dict(payload["R"])
    bundle.generator.load_state_dict(payload["G"])
    bundle.discriminator.load_state_dict(payload["D"])
    return bundle, payload["iteration"]
