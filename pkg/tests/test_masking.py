import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from attrfill.masking import (MaskSpec, apply_mask, centered_mask, compose_modified,
                              extract_contour, extract_patch)


def images(batch=2, channels=3, size=16, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(batch, channels, size, size, generator=g) * 2 - 1


class TestMaskSpec:
    def test_centered_offsets_128_52(self):
        m = centered_mask(128, 52)
        assert (m.top, m.left) == (38, 38)

    def test_centered_offsets_64_26(self):
        # (64 - 26) // 2 computed by hand
        m = centered_mask(64, 26)
        assert (m.top, m.left) == (19, 19)

    def test_full_image_hole(self):
        m = centered_mask(64, 64)
        assert (m.top, m.left) == (0, 0)

    def test_patch_larger_than_image_rejected(self):
        with pytest.raises(ValueError):
            centered_mask(32, 33)

    def test_out_of_bounds_spec_rejected(self):
        with pytest.raises(ValueError):
            MaskSpec(image_size=16, patch_size=8, top=10, left=0)

    def test_region_partition(self):
        m = centered_mask(16, 6)
        region = m.region_map()
        assert region.sum().item() == m.n_patch_pixels
        assert (~region).sum().item() == m.n_contour_pixels


class TestApplyMask:
    def test_zero_patch_is_identity(self):
        x = images()
        m = MaskSpec(image_size=16, patch_size=0, top=0, left=0)
        assert torch.equal(apply_mask(x, m), x)

    def test_full_mask_saturates(self):
        x = images()
        m = centered_mask(16, 16)
        assert (apply_mask(x, m) == 0.0).all()

    def test_masked_sum_drops_by_patch_elements(self):
        # all-ones image, fill 0: sum decreases by channels * patch^2
        x = torch.ones(1, 3, 128, 128)
        m = centered_mask(128, 52)
        assert apply_mask(x, m).sum().item() == pytest.approx(x.sum().item() - 3 * 52 * 52)

    def test_contour_bit_identical(self):
        x = images(seed=5)
        m = centered_mask(16, 6)
        masked = apply_mask(x, m)
        keep = ~m.region_map()
        assert torch.equal(masked[:, :, keep], x[:, :, keep])

    def test_idempotent(self):
        x = images(seed=9)
        m = centered_mask(16, 10)
        once = apply_mask(x, m)
        assert torch.equal(apply_mask(once, m), once)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            apply_mask(images(size=16), centered_mask(32, 8))


class TestExtract:
    def test_patch_of_masked_is_fill(self):
        x = images()
        m = centered_mask(16, 6)
        assert (extract_patch(apply_mask(x, m), m) == 0.0).all()

    def test_patch_shape(self):
        x = torch.zeros(2, 3, 128, 128)
        assert extract_patch(x, centered_mask(128, 52)).shape == (2, 3, 52, 52)

    def test_patch_equals_image_is_identity(self):
        x = images()
        assert torch.equal(extract_patch(x, centered_mask(16, 16)), x)

    def test_contour_equals_apply_mask(self):
        x = images(seed=2)
        m = centered_mask(16, 8)
        assert torch.equal(extract_contour(x, m), apply_mask(x, m))

    def test_contour_zero_patch_identity(self):
        x = images()
        m = MaskSpec(image_size=16, patch_size=0, top=3, left=3)
        assert torch.equal(extract_contour(x, m), x)

    def test_contour_full_mask_all_fill(self):
        x = images()
        assert (extract_contour(x, centered_mask(16, 16)) == 0.0).all()


class TestCompose:
    def test_reconstruction_identity(self):
        x = images(seed=13)
        m = centered_mask(16, 6)
        assert torch.equal(compose_modified(apply_mask(x, m), extract_patch(x, m), m), x)

    def test_fill_patch_keeps_masked(self):
        x = images()
        m = centered_mask(16, 6)
        masked = apply_mask(x, m)
        fill = torch.zeros(x.shape[0], 3, 6, 6)
        assert torch.equal(compose_modified(masked, fill, m), masked)

    def test_patch_element_count(self):
        # zeros outside, ones inside: total equals channels * patch^2
        m = centered_mask(128, 52)
        composed = compose_modified(torch.zeros(1, 3, 128, 128), torch.ones(1, 3, 52, 52), m)
        assert composed.sum().item() == pytest.approx(3 * 52 * 52)

    def test_wrong_patch_shape_rejected(self):
        m = centered_mask(16, 6)
        with pytest.raises(ValueError):
            compose_modified(torch.zeros(1, 3, 16, 16), torch.zeros(1, 3, 5, 5), m)


@settings(max_examples=60, deadline=None)
@given(image_size=st.integers(1, 48), data=st.data())
def test_reconstruction_identity_random_geometry(image_size, data):
    patch = data.draw(st.integers(0, image_size))
    top = data.draw(st.integers(0, image_size - patch))
    left = data.draw(st.integers(0, image_size - patch))
    seed = data.draw(st.integers(0, 2 ** 16))
    m = MaskSpec(image_size=image_size, patch_size=patch, top=top, left=left)
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(1, 3, image_size, image_size, generator=g) * 2 - 1
    assert torch.equal(compose_modified(apply_mask(x, m), extract_patch(x, m), m), x)


@settings(max_examples=40, deadline=None)
@given(image_size=st.integers(2, 32), data=st.data())
def test_partition_every_pixel_in_exactly_one_region(image_size, data):
    patch = data.draw(st.integers(0, image_size))
    top = data.draw(st.integers(0, image_size - patch))
    left = data.draw(st.integers(0, image_size - patch))
    m = MaskSpec(image_size=image_size, patch_size=patch, top=top, left=left)
    region = m.region_map()
    assert region.sum().item() + (~region).sum().item() == image_size * image_size
