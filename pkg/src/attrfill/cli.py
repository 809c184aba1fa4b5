"""Operator entry points: train, eval, transfer, grid, fixture.

Exit codes: 0 success, 2 usage or configuration problem, 3 runtime abort
(non-finite loss; the message names the last good checkpoint), 4 checkpoint
incompatibility.

Config files are flat ``key = value`` text with ``#`` comments. Keys mirror
TrainConfig fields (``n_iter``, ``batch_size``, ``image_size``, ``patch_size``,
``seed``, ``lambda_ae`` ... ``lambda_c``, ...) plus dataset keys: ``data_dir``,
``attr_file``, ``attributes`` (comma-separated names), ``n_test``, ``out_dir``.
Command-line flags override file values.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import subprocess
import sys

import numpy as np
import torch
from PIL import Image

from . import __version__
from .data import DatasetIndex, denormalize, load_image, load_index, split
from .errors import (CheckpointIntegrityError, CheckpointVersionError, ConfigError,
                     DataError, TrainingAborted)
from .fixture import generate_fixture
from .losses import LossWeights
from .masking import apply_mask, centered_mask, compose_modified, extract_patch
from .metrics import evaluate_inpainting, flip_report, train_probe
from .networks import load_checkpoint, restore_bundle
from .trainer import TrainConfig, train

_INT_KEYS = {"n_iter", "th_disc", "batch_size", "n_gen", "constant_epochs", "decay_epochs",
             "seed", "checkpoint_every", "base_channels", "n_res_blocks", "image_size",
             "patch_size", "n_test"}
_FLOAT_KEYS = {"lr_rec", "lr_gen", "lr_disc", "adam_beta1", "adam_beta2", "lr_floor",
               "lambda_ae", "lambda_cycle", "lambda_gp", "lambda_p", "lambda_c"}
_BOOL_KEYS = {"ablation_bypass_reconstructor", "single_thread"}
_STR_KEYS = {"data_dir", "attr_file", "attributes", "out_dir"}


def parse_config_file(path: str) -> dict:
    values: dict = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                values[key] = _coerce(key, value, f"{path}:{lineno}")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    return values


def _coerce(key: str, value: str, where: str):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _BOOL_KEYS:
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise ValueError(value)
        if key in _STR_KEYS:
            return value
    except ValueError:
        raise ConfigError(f"{where}: bad value for '{key}': {value!r}")
    raise ConfigError(f"{where}: unknown config key '{key}'")


def build_train_config(values: dict) -> TrainConfig:
    weights = LossWeights(
        lambda_ae=values.pop("lambda_ae", 10.0),
        lambda_cycle=values.pop("lambda_cycle", 10.0),
        lambda_gp=values.pop("lambda_gp", 10.0),
        lambda_p=values.pop("lambda_p", 5.0),
        lambda_c=values.pop("lambda_c", 1.0),
    )
    cfg_keys = (_INT_KEYS | _FLOAT_KEYS | _BOOL_KEYS) - {"n_test"}
    kwargs = {k: v for k, v in values.items() if k in cfg_keys}
    return TrainConfig(weights=weights, **kwargs)


def default_out_dir(name: str) -> str:
    """Resolve an output directory under ATTRFILL_OUT_ROOT (default: cwd)."""
    return os.path.join(os.environ.get("ATTRFILL_OUT_ROOT", "."), name)


def _source_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, cwd=os.path.dirname(os.path.abspath(__file__)),
                             timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return f"attrfill-{__version__}"


def write_manifest(out_dir: str, config_snapshot: dict, started: str,
                   finished: str | None, outputs: dict):
    manifest = {
        "config": config_snapshot,
        "revision": _source_revision(),
        "started": started,
        "finished": finished,
        "outputs": outputs,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def save_image(tensor: torch.Tensor, path: str):
    """Write a (3, H, W) tensor in [-1, 1] as a PNG."""
    arr = denormalize(tensor.detach().cpu().numpy()).transpose(1, 2, 0)
    Image.fromarray(arr).save(path)


def _index_from_dir(data_dir: str) -> DatasetIndex:
    names = sorted(f for f in os.listdir(data_dir)
                   if f.lower().endswith((".png", ".jpg", ".jpeg")))
    entries = [(os.path.join(data_dir, f), ()) for f in names]
    return DatasetIndex(entries=entries, selected_attributes=[])


def _load_dataset(values: dict) -> DatasetIndex:
    data_dir = values.get("data_dir")
    if not data_dir or not os.path.isdir(data_dir):
        raise ConfigError(f"dataset directory not found: {data_dir!r}")
    attr_file = values.get("attr_file")
    if attr_file:
        attributes = [a.strip() for a in values.get("attributes", "").split(",") if a.strip()]
        return load_index(data_dir, attr_file, attributes)
    return _index_from_dir(data_dir)


def cmd_train(args) -> int:
    values = parse_config_file(args.config) if args.config else {}
    for key in ("data_dir", "attr_file", "attributes", "out_dir"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    for key in ("n_iter", "seed", "batch_size", "image_size", "patch_size", "n_test",
                "checkpoint_every", "base_channels", "n_res_blocks", "th_disc", "n_gen"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    if args.ablation_bypass_R:
        values["ablation_bypass_reconstructor"] = True
    if args.single_thread:
        values["single_thread"] = True

    out_dir = values.pop("out_dir", None) or args.out_dir or default_out_dir("run")
    n_test = values.pop("n_test", 0)
    index = _load_dataset(values)
    for w in index.warnings:
        print(f"warning: {w}", file=sys.stderr)
    data_snapshot = {k: values.get(k) for k in ("data_dir", "attr_file", "attributes")}
    for k in ("data_dir", "attr_file", "attributes"):
        values.pop(k, None)
    cfg = build_train_config(values)
    train_idx, _test_idx = split(index, n_test, cfg.seed) if n_test else (index, None)

    os.makedirs(out_dir, exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    snapshot = {**cfg.to_dict(), **data_snapshot, "n_test": n_test, "out_dir": out_dir}
    outputs = {"loss_log": "loss_log.jsonl", "final_checkpoint": "checkpoint_final.pt"}
    write_manifest(out_dir, snapshot, started, None, outputs)
    try:
        train(cfg, train_idx, out_dir=out_dir, resume_from=args.resume)
    except TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3
    finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
    write_manifest(out_dir, snapshot, started, finished, outputs)
    print(f"finished; outputs in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    bundle, _ = restore_bundle(payload)
    attributes = payload["extra"].get("attributes", [])
    if args.attr_file:
        index = load_index(args.data_dir, args.attr_file, attributes)
    else:
        index = _index_from_dir(args.data_dir)
    if args.max_images:
        index = DatasetIndex(index.entries[:args.max_images], index.selected_attributes)
    if len(index) == 0:
        raise ConfigError(f"no images found under {args.data_dir}")

    report = evaluate_inpainting(bundle, index, batch_size=args.batch_size)
    if args.with_flip_rates:
        if not attributes or not args.attr_file:
            raise ConfigError("flip rates need an annotated dataset (--attr-file) "
                              "and a checkpoint trained with attributes")
        probe, acc = train_probe(index, bundle.cfg.image_size, seed=args.seed)
        report.probe_accuracy = acc
        report.per_attribute_flip_rate = flip_report(
            bundle, probe, index, batch_size=args.batch_size,
            max_images=args.max_images)

    out_dir = args.out_dir or default_out_dir("eval_out")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "eval_report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out_dir, "eval_report.md"), "w", encoding="utf-8") as fh:
        fh.write(report.to_markdown() + "\n")
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    write_manifest(out_dir, {"command": "eval", "checkpoint": args.checkpoint,
                             "data_dir": args.data_dir, "attr_file": args.attr_file,
                             "max_images": args.max_images, "seed": args.seed},
                   stamp, stamp, {"report": "eval_report.json"})
    print(report.to_markdown())
    return 0


def _transfer_outputs(bundle, attributes, image_path, flips, source_bits, out_dir):
    cfg = bundle.cfg
    m = centered_mask(cfg.image_size, cfg.patch_size)
    x = load_image(image_path, cfg.image_size).unsqueeze(0)
    x_bar = apply_mask(x, m)
    with torch.no_grad():
        restored = bundle.reconstructor(x_bar)
        x_hat = compose_modified(x_bar, extract_patch(restored, m), m)
    stem = os.path.splitext(os.path.basename(image_path))[0]
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, img in (("masked", x_bar), ("inpainted", x_hat)):
        path = os.path.join(out_dir, f"{stem}_{name}.png")
        save_image(img[0], path)
        written.append(path)
    for flip in flips:
        code = list(source_bits)
        pos = attributes.index(flip)
        code[pos] = 1 - code[pos]
        with torch.no_grad():
            out = bundle.generator(x_hat, torch.tensor([code], dtype=torch.float32))
        tag = "".join(f"{a}{b}" for a, b in zip(attributes, code))
        path = os.path.join(out_dir, f"{stem}_transfer_{tag}.png")
        save_image(out[0], path)
        written.append(path)
    return written


def cmd_transfer(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    bundle, _ = restore_bundle(payload)
    attributes = payload["extra"].get("attributes", [])
    source_bits = [0] * len(attributes)
    for spec_str in args.source or []:
        name, _, bit = spec_str.partition("=")
        if name not in attributes or bit not in ("0", "1"):
            raise ConfigError(f"bad --source {spec_str!r}; attributes: {attributes}")
        source_bits[attributes.index(name)] = int(bit)
    for flip in args.flip or []:
        if flip not in attributes:
            raise ConfigError(f"unknown attribute {flip!r}; valid names: {attributes}")
    out_dir = args.out_dir or default_out_dir("transfer_out")
    written = _transfer_outputs(bundle, attributes, args.image, args.flip or [],
                                source_bits, out_dir)
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    write_manifest(out_dir, {"command": "transfer", "checkpoint": args.checkpoint,
                             "image": args.image, "flip": args.flip or [],
                             "source": args.source or []},
                   stamp, stamp, {"files": [os.path.basename(p) for p in written]})
    for path in written:
        print(path)
    return 0


def cmd_grid(args) -> int:
    manifest_path = os.path.join(args.run_dir, "manifest.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no manifest.json in {args.run_dir}")
    conf = manifest["config"]
    ckpt = os.path.join(args.run_dir, manifest["outputs"]["final_checkpoint"])
    payload = load_checkpoint(ckpt)
    bundle, _ = restore_bundle(payload)
    attributes = payload["extra"].get("attributes", [])

    index = _load_dataset({k: conf.get(k) for k in ("data_dir", "attr_file", "attributes")})
    n_test = conf.get("n_test") or 0
    if n_test:
        _, index = split(index, n_test, conf.get("seed", 0))
    rows = min(args.rows, len(index))
    if rows == 0:
        raise ConfigError("no images available for the grid")

    cfg = bundle.cfg
    m = centered_mask(cfg.image_size, cfg.patch_size)
    panels = []
    with torch.no_grad():
        for path, bits in index.entries[:rows]:
            x = load_image(path, cfg.image_size).unsqueeze(0)
            x_bar = apply_mask(x, m)
            x_hat = compose_modified(x_bar, extract_patch(bundle.reconstructor(x_bar), m), m)
            row = [x[0], x_bar[0], x_hat[0]]
            for pos in range(len(attributes)):
                code = list(bits) if bits else [0] * len(attributes)
                code[pos] = 1 - code[pos]
                out = bundle.generator(x_hat, torch.tensor([code], dtype=torch.float32))
                row.append(out[0])
            panels.append(torch.cat(row, dim=2))
    grid = torch.cat(panels, dim=1)
    out_path = args.out or os.path.join(args.run_dir, "grid.png")
    save_image(grid, out_path)
    print(out_path)
    return 0


def cmd_fixture(args) -> int:
    attr_path = generate_fixture(args.out_dir, args.n, args.seed)
    print(attr_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attrfill",
                                     description="Hole-based facial attribute editing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--attr-file", dest="attr_file")
    p.add_argument("--attributes", help="comma-separated attribute names")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--n-iter", dest="n_iter", type=int)
    p.add_argument("--th-disc", dest="th_disc", type=int)
    p.add_argument("--n-gen", dest="n_gen", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--n-res-blocks", dest="n_res_blocks", type=int)
    p.add_argument("--ablation-bypass-R", action="store_true",
                   help="generator consumes the masked image directly")
    p.add_argument("--single-thread", action="store_true")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score inpainting quality on a directory")
    p.add_argument("checkpoint")
    p.add_argument("data_dir")
    p.add_argument("--attr-file", dest="attr_file")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    p.add_argument("--max-images", dest="max_images", type=int)
    p.add_argument("--with-flip-rates", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="inpaint one image and flip attributes")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--flip", action="append", help="attribute to toggle (repeatable)")
    p.add_argument("--source", action="append", metavar="NAME=BIT",
                   help="known source attribute bit (default all 0)")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("grid", help="comparison grid from a finished run")
    p.add_argument("run_dir")
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("fixture", help="generate the synthetic face dataset")
    p.add_argument("out_dir")
    p.add_argument("n", type=int)
    p.add_argument("seed", type=int)
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3
    except (CheckpointVersionError, CheckpointIntegrityError) as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
