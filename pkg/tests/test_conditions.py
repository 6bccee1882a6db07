"""Fill-fraction condition codec: bounds, arithmetic, round trips."""

import numpy as np
import pytest

from topogan.conditions import (ConditionRangeError, ConditionSpec, decode_image,
                                encode_conditions, encode_scalar)

UNIT = ConditionSpec("vf", 0.0, 1.0)
NU = ConditionSpec("nu", 0.2, 0.5)


def test_spec_rejects_empty_range():
    with pytest.raises(ValueError, match="min < max"):
        ConditionSpec("bad", 1.0, 1.0)


def test_min_encodes_all_white():
    img = encode_scalar(0.2, NU, 16, 16)
    assert np.all(img == 1.0)


def test_max_encodes_all_black():
    img = encode_scalar(0.5, NU, 16, 16)
    assert np.all(img == 0.0)


def test_quarter_fill_has_64_black_pixels():
    img = encode_scalar(0.25, UNIT, 16, 16)
    assert int((img == 0).sum()) == 64  # round(0.25 * 256)


def test_black_pixels_form_raster_prefix():
    img = encode_scalar(0.3, UNIT, 8, 8)
    flat = img.ravel()
    n_black = int((flat == 0).sum())
    assert np.all(flat[:n_black] == 0.0)
    assert np.all(flat[n_black:] == 1.0)


def test_images_are_exactly_binary(rng):
    for _ in range(50):
        v = rng.uniform(0.2, 0.5)
        img = encode_scalar(v, NU, 16, 16)
        assert set(np.unique(img)) <= {0.0, 1.0}


def test_rounding_is_half_up():
    # u = 0.5 over 3 pixels: 1.5 black rounds up to 2
    spec = ConditionSpec("s", 0.0, 1.0)
    img = encode_scalar(0.5, spec, 1, 3)
    assert int((img == 0).sum()) == 2


def test_out_of_range_names_condition():
    with pytest.raises(ConditionRangeError, match="nu"):
        encode_scalar(0.6, NU, 8, 8)


def test_decode_all_black_is_max():
    img = np.zeros((16, 16))
    assert decode_image(img, NU) == 0.5


def test_decode_arithmetic():
    spec = ConditionSpec("c", 0.2, 0.5)
    img = np.ones((16, 16))
    img.ravel()[:64] = 0.0
    assert abs(decode_image(img, spec) - 0.275) < 1e-12


def test_round_trip_quantization_bound(rng):
    # acceptance: 1000 random (spec, value) pairs
    for _ in range(1000):
        lo = rng.uniform(-5, 5)
        hi = lo + rng.uniform(0.1, 10)
        spec = ConditionSpec("x", lo, hi)
        h = int(rng.integers(4, 33))
        w = int(rng.integers(4, 33))
        v = rng.uniform(lo, hi)
        err = abs(decode_image(encode_scalar(v, spec, h, w), spec) - v)
        assert err <= (hi - lo) / (2 * h * w) + (hi - lo) / (h * w)


def test_monotonicity_exhaustive_16x16():
    # 257 evenly spaced values on a 16x16 image (256 pixels)
    values = np.linspace(0.0, 1.0, 257)
    counts = [int((encode_scalar(v, UNIT, 16, 16) == 0).sum()) for v in values]
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert counts[0] == 0 and counts[-1] == 256


def test_encode_conditions_stacks_channels():
    stack = encode_conditions([(UNIT, 0.25), (NU, 0.4)], 16, 16)
    assert stack.shape == (2, 16, 16)
    assert int((stack[0] == 0).sum()) == 64  # 25% black
    # (0.4 - 0.2) / 0.3 = 2/3 -> round(2/3 * 256) = 171 black pixels
    assert int((stack[1] == 0).sum()) == 171


def test_encode_conditions_empty_rejected():
    with pytest.raises(ValueError, match="at least one"):
        encode_conditions([], 8, 8)


def test_encode_conditions_channel_order_follows_declaration():
    a = encode_conditions([(UNIT, 0.25), (NU, 0.4)], 8, 8)
    b = encode_conditions([(NU, 0.4), (UNIT, 0.25)], 8, 8)
    np.testing.assert_array_equal(a[0], b[1])
    np.testing.assert_array_equal(a[1], b[0])
