from decimal import Decimal
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from augscout.augmentations import (
    DEFAULT_ALPHAS,
    AlphaGrid,
    AugmentationPolicy,
    CropSpec,
    FlipSpec,
    apply_random_crop,
    apply_random_flip,
    crop_and_resize,
    dedupe_grid,
    default_grid,
    effective_dim,
    format_alpha,
    parse_grid,
    resize_bilinear,
    step_grid,
    to_alpha,
)
from augscout.errors import DegenerateCrop, InvalidSpec


def oracle_dim(size, alpha):
    # independent route: exact rational arithmetic + builtin banker's rounding
    return round(Fraction(size) * (100 - Fraction(str(alpha))) / 100)


# -- alpha parsing ----------------------------------------------------------------


@pytest.mark.parametrize("value,text", [(36, "36"), ("36.50", "36.5"), (0.1, "0.1"), (Fraction(1, 4), "0.25"),
                                        (Decimal("1E+1"), "10"), ("0", "0")])
def test_format_alpha_plain_text(value, text):
    assert format_alpha(value) == text


@pytest.mark.parametrize("bad", [-1, 100, 150, "nan", "inf", "abc", True, None])
def test_to_alpha_rejects(bad):
    with pytest.raises(InvalidSpec):
        to_alpha(bad)


# -- effective_dim -------------------------------------------------------------------


@pytest.mark.parametrize("size,alpha,dim", [(32, 0, 32), (32, 25, 24), (32, 50, 16), (32, 90, 3), (28, 50, 14),
                                            (32, 30, 22), (32, 80, 6), (4, 87.5, 0.5)])
def test_effective_dim_examples(size, alpha, dim):
    if dim < 1:
        with pytest.raises(DegenerateCrop):
            effective_dim(size, alpha)
    else:
        assert effective_dim(size, alpha) == dim


def test_half_even_tie():
    # 10 * 0.75 = 7.5 rounds to 8, 10 * 0.65 = 6.5 rounds to 6
    assert effective_dim(10, 25) == 8
    assert effective_dim(10, 35) == 6


@given(st.integers(1, 512), st.decimals(0, "99.99", places=2))
def test_effective_dim_matches_rational_oracle(size, alpha):
    expected = oracle_dim(size, alpha)
    if expected < 1:
        with pytest.raises(DegenerateCrop):
            effective_dim(size, alpha)
    else:
        assert effective_dim(size, alpha) == expected


# -- crop / resize ---------------------------------------------------------------------


def test_resize_matches_torch_half_pixel():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(0)
    x = rng.random((2, 7, 5, 3))
    ours = resize_bilinear(x, 16, 11)
    ref = torch.nn.functional.interpolate(
        torch.from_numpy(x).permute(0, 3, 1, 2), size=(16, 11), mode="bilinear", align_corners=False
    ).permute(0, 2, 3, 1).numpy()
    np.testing.assert_allclose(ours, ref, atol=1e-12)


def test_crop_and_resize_window_content():
    img = np.arange(16, dtype=np.float64).reshape(1, 4, 4, 1)
    # a 2x2 window upscaled to 4x4 keeps its corner values at the corners
    out = crop_and_resize(img, [1], [1], 2, 2)
    assert out.shape == img.shape
    assert out[0, 0, 0, 0] == img[0, 1, 1, 0]
    assert out[0, 3, 3, 0] == img[0, 2, 2, 0]


def test_integer_dtype_preserved():
    img = np.random.default_rng(1).integers(0, 256, (1, 8, 8, 3)).astype(np.uint8)
    out = crop_and_resize(img, [0], [0], 6, 6)
    assert out.dtype == np.uint8 and out.shape == img.shape


@given(st.integers(2, 40), st.integers(1, 4), st.decimals(0, 90, places=1), st.integers(0, 2**32 - 1))
def test_random_crop_keeps_shape(size, channels, alpha, seed):
    if oracle_dim(size, alpha) < 1:
        return
    img = np.random.default_rng(seed).random((size, size, channels))
    out = apply_random_crop(img, CropSpec(alpha), np.random.default_rng(seed))
    assert out.shape == img.shape


def test_crop_rejects_batch_shape():
    with pytest.raises(InvalidSpec):
        apply_random_crop(np.zeros((1, 4, 4, 3)), CropSpec(10), np.random.default_rng(0))


def test_flip_probabilities():
    img = np.arange(12, dtype=float).reshape(2, 2, 3)
    rng = np.random.default_rng(0)
    assert np.array_equal(apply_random_flip(img, FlipSpec(1.0), rng), img[:, ::-1])
    assert np.array_equal(apply_random_flip(img, FlipSpec(0.0), rng), img)
    with pytest.raises(InvalidSpec):
        FlipSpec(1.5)


def test_policy_applies_per_image_randomness():
    batch = np.repeat(np.random.default_rng(0).random((1, 16, 16, 3)), 8, axis=0)
    out = AugmentationPolicy(CropSpec(40)).apply_train_batch(batch, np.random.default_rng(1))
    assert len({out[i].tobytes() for i in range(8)}) > 1


def test_policy_round_trip_and_label():
    pol = AugmentationPolicy(CropSpec("36.5"), FlipSpec(0.5))
    assert pol.label == "crop+flip"
    assert AugmentationPolicy.from_dict(pol.to_dict()) == pol
    assert AugmentationPolicy().label == "none"
    assert pol.to_dict()["applied_at"] == "train"
    assert not hasattr(pol, "apply_eval_batch")


# -- grids ---------------------------------------------------------------------------------


def test_default_alphas_formula():
    assert DEFAULT_ALPHAS[:6] == (0, 3, 6, 10, 13, 16)
    assert DEFAULT_ALPHAS[-1] == 90 and len(DEFAULT_ALPHAS) == 28


def test_step_grid_half_open():
    assert [int(a) for a in step_grid(36, 44, 1, 32)] == list(range(36, 44))
    assert [int(a) for a in dedupe_grid(step_grid(36, 44, 1, 32))] == [36, 40, 43]


@pytest.mark.parametrize("text,alphas", [("0,50", ["0", "50"]), ("10:31:10", ["10", "20", "30"]),
                                         ("3,0,3", ["0", "3"])])
def test_parse_grid(text, alphas):
    assert parse_grid(text, 32).to_dict()["alphas"] == alphas


def test_grid_rejects_unsorted():
    with pytest.raises(InvalidSpec):
        AlphaGrid((10, 5), 32)


def test_grid_round_trip():
    g = default_grid(32)
    assert AlphaGrid.from_dict(g.to_dict()) == g


def test_dedupe_drops_degenerate():
    g = dedupe_grid(AlphaGrid((0, 50, 99), 8))
    assert [int(a) for a in g] == [0, 50]
