import os

import numpy as np
import pytest
import torch
from PIL import Image

from attrfill.data import (Batcher, crop_resize, denormalize, load_index, normalize,
                           split)
from attrfill.errors import ConfigError, StateError


def write_celeba_layout(root, rows, attrs=("Smiling", "Eyeglasses")):
    """Tiny CelebA-format dataset: solid-color 24x24 images plus the attr file."""
    os.makedirs(root, exist_ok=True)
    lines = [str(len(rows)), " ".join(attrs)]
    for i, (name, flags, make_image) in enumerate(rows):
        if make_image:
            Image.fromarray(np.full((24, 24, 3), i * 10 % 255, dtype=np.uint8)).save(
                os.path.join(root, name))
        lines.append(name + " " + " ".join(str(f) for f in flags))
    attr_path = os.path.join(root, "attrs.txt")
    with open(attr_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return attr_path


class TestLoadIndex:
    def test_flag_mapping(self, tmp_path):
        attr = write_celeba_layout(tmp_path, [("img1.jpg", [1, -1], True)])
        idx = load_index(str(tmp_path), attr, ["Smiling", "Eyeglasses"])
        assert idx.entries[0][1] == (1, 0)

    def test_selection_reorders_columns(self, tmp_path):
        attr = write_celeba_layout(tmp_path, [("img1.jpg", [1, -1], True)])
        idx = load_index(str(tmp_path), attr, ["Eyeglasses", "Smiling"])
        assert idx.entries[0][1] == (0, 1)

    def test_empty_selection_gives_empty_codes(self, tmp_path):
        attr = write_celeba_layout(tmp_path, [("img1.jpg", [1, -1], True)])
        idx = load_index(str(tmp_path), attr, [])
        assert idx.entries[0][1] == ()
        assert idx.codes().shape == (1, 0)

    def test_missing_image_skipped_with_warning(self, tmp_path):
        rows = [(f"img{i}.jpg", [1, -1], i != 4) for i in range(10)]
        attr = write_celeba_layout(tmp_path, rows)
        idx = load_index(str(tmp_path), attr, ["Smiling"])
        assert len(idx) == 9
        assert len(idx.warnings) == 1
        assert "img4.jpg" in idx.warnings[0]

    def test_missing_column_is_config_error(self, tmp_path):
        attr = write_celeba_layout(tmp_path, [("img1.jpg", [1, -1], True)])
        with pytest.raises(ConfigError, match="Mustache"):
            load_index(str(tmp_path), attr, ["Mustache"])

    def test_unreadable_file_names_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.txt"):
            load_index(str(tmp_path), str(tmp_path / "nope.txt"), [])

    def test_csv_fallback(self, tmp_path):
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(tmp_path / "a.png")
        csv_path = tmp_path / "attrs.csv"
        csv_path.write_text("image_id,Smiling,Young\na.png,1,-1\n")
        idx = load_index(str(tmp_path), str(csv_path), ["Young", "Smiling"])
        assert idx.entries[0][1] == (0, 1)

    def test_duplicate_rows_deduplicated(self, tmp_path):
        rows = [("img1.jpg", [1, -1], True), ("img1.jpg", [-1, -1], False)]
        attr = write_celeba_layout(tmp_path, rows)
        idx = load_index(str(tmp_path), attr, ["Smiling"])
        assert len(idx) == 1
        assert idx.entries[0][1] == (1,)


class TestSplit:
    def _index(self, tmp_path, n=10):
        rows = [(f"img{i}.jpg", [1, -1], True) for i in range(n)]
        attr = write_celeba_layout(tmp_path, rows)
        return load_index(str(tmp_path), attr, ["Smiling"])

    def test_deterministic(self, tmp_path):
        idx = self._index(tmp_path)
        a_train, a_test = split(idx, 2, seed=7)
        b_train, b_test = split(idx, 2, seed=7)
        assert a_train.paths() == b_train.paths()
        assert a_test.paths() == b_test.paths()

    def test_partition_disjoint_and_complete(self, tmp_path):
        idx = self._index(tmp_path)
        train, test = split(idx, 3, seed=1)
        assert len(train) == 7 and len(test) == 3
        assert set(train.paths()).isdisjoint(test.paths())
        assert set(train.paths()) | set(test.paths()) == set(idx.paths())

    def test_zero_test(self, tmp_path):
        idx = self._index(tmp_path)
        train, test = split(idx, 0, seed=0)
        assert len(test) == 0 and train.paths() == idx.paths()

    def test_all_test(self, tmp_path):
        idx = self._index(tmp_path)
        train, test = split(idx, len(idx), seed=0)
        assert len(train) == 0 and len(test) == len(idx)

    def test_too_large_rejected(self, tmp_path):
        idx = self._index(tmp_path)
        with pytest.raises(ValueError):
            split(idx, 11, seed=0)


class TestCropResize:
    def test_uniform_gray_normalizes_to_formula_value(self):
        raw = np.full((218, 178, 3), 128, dtype=np.uint8)
        out = crop_resize(raw, 128)
        expected = 128 / 127.5 - 1.0
        assert np.allclose(out, expected, atol=1e-6)

    def test_celeba_geometry(self):
        raw = np.zeros((218, 178, 3), dtype=np.uint8)
        assert crop_resize(raw, 128).shape == (128, 128, 3)

    def test_parameterized_target(self):
        raw = np.zeros((218, 178, 3), dtype=np.uint8)
        assert crop_resize(raw, 64).shape == (64, 64, 3)

    def test_crop_is_centered(self):
        # left/right margins colored, center white: the crop keeps only white
        raw = np.zeros((100, 140, 3), dtype=np.uint8)
        raw[:, 20:120] = 255
        out = crop_resize(raw, 50)
        assert np.allclose(out, 1.0)

    def test_values_in_range(self):
        rng = np.random.default_rng(0)
        raw = rng.integers(0, 256, size=(60, 40, 3), dtype=np.uint8)
        out = crop_resize(raw, 32)
        assert out.min() >= -1.0 and out.max() <= 1.0


class TestNormalizeRoundTrip:
    def test_all_256_values_exact(self):
        levels = np.arange(256, dtype=np.uint8)
        assert (denormalize(normalize(levels)) == levels).all()

    def test_denormalize_clips(self):
        assert denormalize(np.array([-2.0, 2.0])).tolist() == [0, 255]


class TestBatcher:
    def _index(self, tmp_path, n=5):
        rows = [(f"img{i}.jpg", [1 if i % 2 else -1, -1], True) for i in range(n)]
        attr = write_celeba_layout(tmp_path, rows)
        return load_index(str(tmp_path), attr, ["Smiling", "Eyeglasses"])

    def test_batch_shapes(self, tmp_path):
        idx = self._index(tmp_path)
        images, codes = Batcher(idx, 3, 16, seed=0).next_batch()
        assert images.shape == (3, 3, 16, 16)
        assert codes.shape == (3, 2)

    def test_single_entry_resampled(self, tmp_path):
        idx = self._index(tmp_path, n=1)
        images, codes = Batcher(idx, 4, 16, seed=0).next_batch()
        assert images.shape == (4, 3, 16, 16)
        assert torch.equal(images[0], images[3])

    def test_same_seed_same_order(self, tmp_path):
        idx = self._index(tmp_path)
        a = Batcher(idx, 2, 16, seed=9)
        b = Batcher(idx, 2, 16, seed=9)
        for _ in range(6):  # crosses epoch boundaries
            xa, ca = a.next_batch()
            xb, cb = b.next_batch()
            assert torch.equal(xa, xb) and torch.equal(ca, cb)

    def test_rows_aligned_with_codes(self, tmp_path):
        # image fill encodes the entry number; the code row must agree with it
        rows = [(f"img{i}.jpg", [1 if i % 2 else -1, -1], True) for i in range(6)]
        attr = write_celeba_layout(tmp_path, rows)
        idx = load_index(str(tmp_path), attr, ["Smiling"])
        batcher = Batcher(idx, 4, 16, seed=3)
        for _ in range(4):
            images, codes = batcher.next_batch()
            for row in range(4):
                fill = round((images[row, 0, 0, 0].item() + 1) * 127.5)
                entry = fill // 10
                assert codes[row, 0].item() == (1.0 if entry % 2 else 0.0)

    def test_empty_index_is_state_error(self, tmp_path):
        idx = self._index(tmp_path)
        idx.entries = []
        with pytest.raises(StateError):
            Batcher(idx, 2, 16).next_batch()

    def test_state_roundtrip_resumes_stream(self, tmp_path):
        idx = self._index(tmp_path)
        a = Batcher(idx, 2, 16, seed=4)
        for _ in range(3):
            a.next_batch()
        saved = a.state()
        expected = [a.next_batch() for _ in range(3)]
        b = Batcher(idx, 2, 16, seed=999)
        b.restore(saved)
        for xa_ca in expected:
            xb, cb = b.next_batch()
            assert torch.equal(xa_ca[0], xb) and torch.equal(xa_ca[1], cb)
