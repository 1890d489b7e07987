import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oled_ace.colorpower import (
    RGB_TO_YUV,
    ImageRGB,
    LumaPlane,
    PanelModel,
    VideoPolicy,
    ZeroPowerError,
    achieved_rate,
    apply_dim,
    dim_ratio,
    plan_dim,
    rgb_to_yuv,
    tdp_luma,
    tdp_rgb,
    video_rate,
    yuv_to_rgb,
)

unit_planes = arrays(
    np.float64,
    st.tuples(st.integers(1, 8), st.integers(1, 8)),
    elements=st.floats(0.0, 1.0),
)


class TestYuv:
    def test_white_and_black(self):
        y, c = rgb_to_yuv(np.ones((1, 1, 3)))
        assert y.values[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert abs(c.u[0, 0]) < 1e-12 and abs(c.v[0, 0]) < 1e-12
        y, c = rgb_to_yuv(np.zeros((1, 1, 3)))
        assert y.values[0, 0] == 0.0 and c.u[0, 0] == 0.0 and c.v[0, 0] == 0.0

    def test_pure_red_matches_matrix(self):
        y, c = rgb_to_yuv(np.array([[[1.0, 0.0, 0.0]]]))
        expected = RGB_TO_YUV @ np.array([1.0, 0.0, 0.0])
        assert y.values[0, 0] == pytest.approx(0.299)
        np.testing.assert_allclose([c.u[0, 0], c.v[0, 0]], expected[1:], atol=1e-15)

    def test_inverse_white(self):
        img = yuv_to_rgb(LumaPlane(np.ones((2, 2))), rgb_to_yuv(np.ones((2, 2, 3)))[1])
        np.testing.assert_allclose(img.pixels, 1.0, atol=1e-12)
        assert img.out_of_gamut == 0

    def test_round_trip(self, rng):
        px = rng.random((9, 7, 3))
        y, c = rgb_to_yuv(px)
        np.testing.assert_allclose(yuv_to_rgb(y, c).pixels, px, atol=1e-6)

    def test_boosted_luma_clamps(self):
        _, chroma = rgb_to_yuv(np.array([[[1.0, 0.0, 0.0]]]))
        img = yuv_to_rgb(LumaPlane(np.array([[0.95]])), chroma)
        assert img.out_of_gamut == 1
        assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0

    def test_dimension_mismatch(self):
        _, chroma = rgb_to_yuv(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            yuv_to_rgb(LumaPlane(np.zeros((3, 2))), chroma)

    def test_image_validation(self):
        with pytest.raises(ValueError):
            ImageRGB(np.full((2, 2, 3), 1.5))
        with pytest.raises(ValueError):
            ImageRGB(np.zeros((2, 2)))


class TestPower:
    def test_luma_black_and_white(self):
        assert tdp_luma(np.zeros((4, 4))) == 0.0
        assert tdp_luma(np.ones((4, 5))) == 20.0

    def test_luma_loop_oracle(self, rng):
        y = rng.random((4, 4))
        expected = sum(float(v) ** 2.2 for v in y.ravel())
        assert tdp_luma(y, PanelModel(gamma=2.2)) == pytest.approx(expected, abs=1e-9)

    def test_rgb_black_and_white(self):
        assert tdp_rgb(np.zeros((3, 3, 3))) == 0.0
        assert tdp_rgb(np.ones((3, 4, 3))) == 36.0

    def test_rgb_loop_oracle(self, rng):
        px = rng.random((5, 3, 3))
        panel = PanelModel(gamma=2.2, w0=0.1, wR=0.3, wG=0.6, wB=1.0)
        expected = 0.0
        for r, g, b in px.reshape(-1, 3):
            expected += 0.1 + 0.3 * r**2.2 + 0.6 * g**2.2 + 1.0 * b**2.2
        assert tdp_rgb(px, panel) == pytest.approx(expected, abs=1e-9)

    def test_panel_validation(self):
        with pytest.raises(ValueError):
            PanelModel(gamma=0.0)
        with pytest.raises(ValueError):
            PanelModel(wR=-1.0)


class TestDimming:
    def test_ratio_values(self):
        assert dim_ratio(0.0) == 1.0
        assert dim_ratio(0.5, PanelModel(gamma=2.2)) == pytest.approx(0.5 ** (1 / 2.2))
        assert dim_ratio(0.5) == pytest.approx(0.72974, abs=1e-5)

    @pytest.mark.parametrize("rate", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    def test_ratio_inverse(self, rate):
        assert 1.0 - dim_ratio(rate) ** 2.2 == pytest.approx(rate, abs=1e-12)

    def test_ratio_rejects_full_saving(self):
        with pytest.raises(ValueError):
            dim_ratio(1.0)

    def test_apply_dim(self):
        x = np.full((3, 3), 0.8)
        np.testing.assert_array_equal(apply_dim(x, 1.0).values, x)
        out = apply_dim(x, 0.5)
        np.testing.assert_allclose(out.values, 0.4)
        assert out.role == "dimmed"

    def test_achieved_rate_cases(self, rng):
        x = rng.random((6, 6))
        assert achieved_rate(x, x) == 0.0
        assert achieved_rate(x, np.zeros_like(x)) == 1.0
        assert achieved_rate(x, apply_dim(x, 0.72974)) == pytest.approx(0.5, abs=1e-5)
        k = dim_ratio(0.5)
        assert achieved_rate(x, apply_dim(x, k)) == pytest.approx(0.5, abs=1e-9)

    def test_achieved_rate_zero_power(self):
        with pytest.raises(ZeroPowerError):
            achieved_rate(np.zeros((2, 2)), np.zeros((2, 2)))

    def test_brighter_output_gives_negative_rate(self):
        x = np.full((2, 2), 0.5)
        assert achieved_rate(x, np.full((2, 2), 0.6)) < 0

    def test_plan_dim(self, rng):
        x = rng.random((5, 5))
        dimmed, spec = plan_dim(x, 0.3)
        assert spec.ratio == dim_ratio(0.3)
        assert spec.achieved == pytest.approx(0.3, abs=1e-12)
        np.testing.assert_allclose(dimmed.values, x * spec.ratio)


@settings(max_examples=60, deadline=None)
@given(rate=st.floats(0.0, 0.99), gamma=st.floats(1.5, 3.0))
def test_rate_ratio_round_trip(rate, gamma):
    panel = PanelModel(gamma=gamma)
    assert abs(1.0 - dim_ratio(rate, panel) ** gamma - rate) < 1e-12


@settings(max_examples=60, deadline=None)
@given(plane=unit_planes, k=st.floats(0.05, 1.0), gamma=st.floats(1.5, 3.0))
def test_pure_scaling_identity(plane, k, gamma):
    if tdp_luma(plane, PanelModel(gamma=gamma)) < 1e-6:
        return
    panel = PanelModel(gamma=gamma)
    assert abs(achieved_rate(plane, apply_dim(plane, k), panel) - (1 - k**gamma)) < 1e-9


@settings(max_examples=60, deadline=None)
@given(plane=unit_planes, idx=st.integers(0, 63), bump=st.floats(0.0, 1.0))
def test_tdp_monotone(plane, idx, bump):
    brighter = plane.copy()
    pos = np.unravel_index(idx % plane.size, plane.shape)
    brighter[pos] = min(1.0, brighter[pos] + bump)
    assert tdp_luma(brighter) >= tdp_luma(plane)


@settings(max_examples=60, deadline=None)
@given(px=arrays(np.float64, (3, 4, 3), elements=st.floats(0.0, 1.0)))
def test_yuv_round_trip_property(px):
    y, c = rgb_to_yuv(px)
    np.testing.assert_allclose(yuv_to_rgb(y, c).pixels, px, atol=1e-6)


class TestVideoRate:
    def test_black_frame_hits_lower_clamp(self):
        assert video_rate(np.zeros((4, 4))) == 0.01

    def test_half_grey(self):
        assert video_rate(np.full((4, 4), 0.5), VideoPolicy(rho=1.5)) == pytest.approx(0.5**1.5, abs=1e-12)
        assert video_rate(np.full((4, 4), 0.5)) == pytest.approx(0.35355, abs=1e-5)

    def test_white_frame_hits_upper_clamp(self):
        assert video_rate(np.ones((4, 4))) == 0.8

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            VideoPolicy(rho=0.0)
        with pytest.raises(ValueError):
            VideoPolicy(clamp=(0.5, 1.0))

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(0.0, 1.0), b=st.floats(0.0, 1.0))
    def test_monotone_in_mean(self, a, b):
        lo, hi = sorted((a, b))
        assert video_rate(np.full((2, 2), lo)) <= video_rate(np.full((2, 2), hi))
