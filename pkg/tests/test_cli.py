import hashlib
import json
import os

import pytest
import torch
from PIL import Image

from attrfill.cli import main
from attrfill.fixture import ATTR_FILE_NAME


def file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """One tiny end-to-end training run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    out_dir = root / "run"
    assert main(["fixture", str(data_dir), "10", "3"]) == 0
    config = root / "toy.cfg"
    config.write_text(
        "# toy run\n"
        "image_size = 16\n"
        "patch_size = 8\n"
        "n_iter = 6\n"
        "th_disc = 2\n"
        "batch_size = 2\n"
        "base_channels = 4\n"
        "n_res_blocks = 1\n"
        "seed = 0\n"
        f"data_dir = {data_dir}\n"
        f"attr_file = {data_dir / ATTR_FILE_NAME}\n"
        "attributes = Eyeglasses,Mustache\n"
    )
    code = main(["train", "--config", str(config), "--out-dir", str(out_dir),
                 "--n-test", "2", "--single-thread"])
    assert code == 0
    return {"root": root, "data_dir": data_dir, "out_dir": out_dir, "config": config}


class TestFixtureCommand:
    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["fixture", str(a), "6", "1"]) == 0
        assert main(["fixture", str(b), "6", "1"]) == 0
        names = sorted(os.listdir(a))
        assert names == sorted(os.listdir(b))
        for n in names:
            assert file_digest(a / n) == file_digest(b / n)


class TestTrainCommand:
    def test_loss_log_has_one_record_per_iteration(self, cli_run):
        log = cli_run["out_dir"] / "loss_log.jsonl"
        records = [json.loads(l) for l in open(log)]
        assert len(records) == 6
        assert records[-1]["iteration"] == 5

    def test_manifest_written_and_reproducible(self, cli_run):
        manifest = json.loads((cli_run["out_dir"] / "manifest.json").read_text())
        assert manifest["config"]["n_iter"] == 6
        assert manifest["config"]["seed"] == 0
        assert manifest["finished"] is not None
        assert manifest["outputs"]["final_checkpoint"] == "checkpoint_final.pt"

    def test_missing_dataset_exits_2_naming_path(self, tmp_path, capsys):
        code = main(["train", "--data-dir", str(tmp_path / "nowhere"),
                     "--out-dir", str(tmp_path / "o")])
        assert code == 2
        assert "nowhere" in capsys.readouterr().err

    def test_ablation_flag_recorded(self, cli_run, tmp_path):
        out = tmp_path / "ablation_run"
        code = main(["train", "--config", str(cli_run["config"]),
                     "--out-dir", str(out), "--n-iter", "2", "--th-disc", "1",
                     "--ablation-bypass-R"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["ablation_bypass_reconstructor"] is True

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("not_a_key = 3\n")
        assert main(["train", "--config", str(bad)]) == 2
        assert "not_a_key" in capsys.readouterr().err


class TestTransferCommand:
    def test_flip_writes_three_files(self, cli_run, tmp_path):
        ckpt = cli_run["out_dir"] / "checkpoint_final.pt"
        image = next(p for p in sorted(os.listdir(cli_run["data_dir"]))
                     if p.endswith(".png"))
        out = tmp_path / "t1"
        code = main(["transfer", str(ckpt), str(cli_run["data_dir"] / image),
                     "--flip", "Eyeglasses", "--out-dir", str(out)])
        assert code == 0
        names = sorted(n for n in os.listdir(out) if n.endswith(".png"))
        assert len(names) == 3
        assert any("masked" in n for n in names)
        assert any("inpainted" in n for n in names)
        assert any("transfer" in n and "Eyeglasses1" in n for n in names)

    def test_two_flips_write_four_files(self, cli_run, tmp_path):
        ckpt = cli_run["out_dir"] / "checkpoint_final.pt"
        image = cli_run["data_dir"] / "face_00000.png"
        out = tmp_path / "t2"
        code = main(["transfer", str(ckpt), str(image), "--flip", "Eyeglasses",
                     "--flip", "Mustache", "--out-dir", str(out)])
        assert code == 0
        assert len([n for n in os.listdir(out) if n.endswith(".png")]) == 4

    def test_no_flips_writes_masked_and_inpainted_only(self, cli_run, tmp_path):
        ckpt = cli_run["out_dir"] / "checkpoint_final.pt"
        image = cli_run["data_dir"] / "face_00000.png"
        out = tmp_path / "t3"
        assert main(["transfer", str(ckpt), str(image), "--out-dir", str(out)]) == 0
        assert len([n for n in os.listdir(out) if n.endswith(".png")]) == 2
        assert "manifest.json" in os.listdir(out)

    def test_unknown_attribute_exits_2_listing_names(self, cli_run, tmp_path, capsys):
        ckpt = cli_run["out_dir"] / "checkpoint_final.pt"
        image = cli_run["data_dir"] / "face_00000.png"
        code = main(["transfer", str(ckpt), str(image), "--flip", "Smiling",
                     "--out-dir", str(tmp_path / "t4")])
        assert code == 2
        err = capsys.readouterr().err
        assert "Eyeglasses" in err and "Mustache" in err

    def test_outputs_idempotent(self, cli_run, tmp_path):
        ckpt = cli_run["out_dir"] / "checkpoint_final.pt"
        image = cli_run["data_dir"] / "face_00000.png"
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        for d in (d1, d2):
            assert main(["transfer", str(ckpt), str(image), "--flip", "Mustache",
                         "--out-dir", str(d)]) == 0
        for name in os.listdir(d1):
            if name.endswith(".png"):
                assert file_digest(d1 / name) == file_digest(d2 / name)


class TestEvalCommand:
    def test_report_schema(self, cli_run, tmp_path):
        ckpt = cli_run["out_dir"] / "checkpoint_final.pt"
        out = tmp_path / "eval"
        code = main(["eval", str(ckpt), str(cli_run["data_dir"]),
                     "--attr-file", str(cli_run["data_dir"] / ATTR_FILE_NAME),
                     "--out-dir", str(out), "--max-images", "4"])
        assert code == 0
        report = json.loads((out / "eval_report.json").read_text())
        for key in ("psnr_mean", "ssim_mean", "baseline_psnr_mean",
                    "baseline_ssim_mean", "n_images"):
            assert key in report
        assert (out / "eval_report.md").exists()


class TestGridCommand:
    def test_grid_has_fixed_plus_attribute_columns(self, cli_run, tmp_path):
        out_png = tmp_path / "grid.png"
        code = main(["grid", str(cli_run["out_dir"]), "--rows", "2",
                     "--out", str(out_png)])
        assert code == 0
        with Image.open(out_png) as img:
            width, height = img.size
        # columns: original, masked, inpainted + one per attribute
        assert width == (3 + 2) * 16
        assert height == 2 * 16


class TestExitCodes:
    def test_incompatible_checkpoint_exits_4(self, cli_run, tmp_path, capsys):
        bad = tmp_path / "bad.pt"
        torch.save({"format_version": 999, "net_config": {}, "iteration": 0}, bad)
        assert main(["eval", str(bad), str(cli_run["data_dir"])]) == 4

    def test_corrupt_checkpoint_exits_4(self, cli_run, tmp_path):
        bad = tmp_path / "corrupt.pt"
        bad.write_bytes(b"not a checkpoint")
        assert main(["eval", str(bad), str(cli_run["data_dir"])]) == 4
