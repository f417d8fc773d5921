import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dstnet.color import hsv_to_rgb, rgb_to_gray, rgb_to_hsv, srgb_to_lab

# frozen from the scalar colorimetry oracle in oracles.srgb_to_lab_pixel
LAB_05_025_01 = (34.52173750822039, 24.61158702430047, 34.58476947557605)


def px(*rgb, dtype=torch.float64):
    return torch.tensor(rgb, dtype=dtype).view(3, 1, 1)


def test_lab_white_and_black():
    white = srgb_to_lab(px(1.0, 1.0, 1.0)).flatten()
    assert white[0] == pytest.approx(100.0, abs=1e-9)
    assert abs(white[1]) < 1e-3 and abs(white[2]) < 1e-3
    black = srgb_to_lab(px(0.0, 0.0, 0.0)).flatten()
    assert black.abs().max() < 1e-9


def test_lab_golden_pixel():
    lab = srgb_to_lab(px(0.5, 0.25, 0.1)).flatten().tolist()
    assert lab == pytest.approx(LAB_05_025_01, abs=1e-9)


def test_lab_matches_scalar_oracle(rng):
    img = rng.random((3, 5, 4))
    lab = srgb_to_lab(torch.from_numpy(img)).numpy()
    for y in range(5):
        for x in range(4):
            assert lab[:, y, x] == pytest.approx(oracles.srgb_to_lab_pixel(*img[:, y, x]), abs=1e-9)


@given(st.floats(0.0, 1.0))
def test_lab_achromatic(g):
    lab = srgb_to_lab(px(g, g, g)).flatten()
    assert abs(lab[1]) < 1e-3 and abs(lab[2]) < 1e-3
    assert lab[0] >= -1e-9


def test_hsv_primaries():
    assert rgb_to_hsv(px(1.0, 0.0, 0.0)).flatten().tolist() == pytest.approx([0.0, 1.0, 1.0])
    assert rgb_to_hsv(px(0.0, 1.0, 0.0)).flatten().tolist() == pytest.approx([2 * math.pi / 3, 1.0, 1.0])
    assert rgb_to_hsv(px(0.3, 0.3, 0.3)).flatten().tolist() == pytest.approx([0.0, 0.0, 0.3])


def test_hsv_matches_colorsys(rng):
    img = rng.random((3, 6, 6))
    hsv = rgb_to_hsv(torch.from_numpy(img)).numpy()
    for y in range(6):
        for x in range(6):
            assert hsv[:, y, x] == pytest.approx(oracles.hsv_pixel(*img[:, y, x]), abs=1e-12)


@settings(max_examples=200)
@given(st.tuples(*[st.floats(0.0, 1.0)] * 3))
def test_hsv_round_trip(rgb):
    x = px(*rgb)
    hsv = rgb_to_hsv(x)
    if hsv[1].item() > 0:
        assert torch.allclose(hsv_to_rgb(hsv), x, atol=1e-6)
    assert 0.0 <= hsv[0].item() < 2 * math.pi


def test_gray_values():
    assert rgb_to_gray(px(1.0, 1.0, 1.0)).item() == pytest.approx(1.0)
    assert rgb_to_gray(px(0.0, 0.0, 0.0)).item() == 0.0
    assert rgb_to_gray(px(1.0, 0.0, 0.0)).item() == pytest.approx(0.299)


@pytest.mark.parametrize("fn", [srgb_to_lab, rgb_to_hsv, rgb_to_gray])
def test_pixelwise_commutes_with_permutation(fn, rng):
    img = torch.from_numpy(rng.random((3, 4, 5)))
    perm = torch.from_numpy(rng.permutation(20))
    shuffled = img.reshape(3, -1)[:, perm].reshape(3, 4, 5)
    direct = fn(img).reshape(fn(img).shape[0], -1)[:, perm]
    assert torch.allclose(fn(shuffled).reshape(direct.shape), direct, atol=1e-12)
