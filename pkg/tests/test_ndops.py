import numpy as np
import pytest
from gradcheck import max_rel_error, numeric_grad
from hypothesis import given, settings
from hypothesis import strategies as st

from oled_ace import ndops as nd
from oled_ace.ndops import AdamState, Tensor, adam_step

SEEDS = [0, 1, 2, 3, 4]


def direct_conv(x, w, b, dilation):
    """Direct convolution sum over the valid region (no padding)."""
    N, C, H, W = x.shape
    O, _, k, _ = w.shape
    reach = dilation * (k - 1)
    out = np.zeros((N, O, H - reach, W - reach))
    for n in range(N):
        for o in range(O):
            for y in range(H - reach):
                for xx in range(W - reach):
                    acc = b[o]
                    for c in range(C):
                        for i in range(k):
                            for j in range(k):
                                acc += w[o, c, i, j] * x[n, c, y + i * dilation, xx + j * dilation]
                    out[n, o, y, xx] = acc
    return out


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.random((1, 1, 4, 4))
        out = nd.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x)

    def test_constant_preserved_by_average_kernel(self):
        x = np.full((1, 1, 7, 9), 0.37)
        w = np.full((1, 1, 3, 3), 1.0 / 9.0)
        out = nd.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)), padding="reflect")
        assert out.shape == x.shape
        np.testing.assert_allclose(out.data, 0.37, atol=1e-15)

    def test_dilated_impulse_response(self, rng):
        x = np.zeros((1, 1, 9, 9))
        x[0, 0, 4, 4] = 1.0
        w = rng.standard_normal((1, 1, 3, 3))
        out = nd.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)), dilation=2).data[0, 0]
        # cross-correlation places w[i, j] at centre - dilation * (i - 1, j - 1)
        expected = np.zeros((9, 9))
        for i in range(3):
            for j in range(3):
                expected[4 - 2 * (i - 1), 4 - 2 * (j - 1)] = w[0, 0, i, j]
        np.testing.assert_allclose(out, expected, atol=1e-15)
        assert set(zip(*np.nonzero(out))) <= {(4 + a, 4 + b) for a in (-2, 0, 2) for b in (-2, 0, 2)}

    @pytest.mark.parametrize("dilation", [1, 2, 3])
    def test_valid_matches_direct_sum(self, rng, dilation):
        x = rng.standard_normal((2, 3, 10, 11))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = nd.conv2d(Tensor(x), Tensor(w), Tensor(b), dilation=dilation, padding="none")
        np.testing.assert_allclose(out.data, direct_conv(x, w, b, dilation), atol=1e-12)

    def test_reflect_same_matches_direct_on_padded(self, rng):
        x = rng.standard_normal((1, 2, 8, 8))
        w = rng.standard_normal((3, 2, 3, 3))
        b = np.zeros(3)
        xp = np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)), mode="reflect")
        out = nd.conv2d(Tensor(x), Tensor(w), Tensor(b), dilation=2)
        np.testing.assert_allclose(out.data, direct_conv(xp, w, b, 2), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="channel"):
            nd.conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            nd.conv2d(Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros((1, 1, 2, 2))))

    def test_pad_exceeding_extent_rejected(self):
        # dilation 4 with 3x3 needs a pad of 4, which must stay below H and W
        with pytest.raises(ValueError, match="exceeds"):
            nd.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), dilation=4)
        nd.conv2d(Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros((1, 1, 3, 3))), dilation=4)

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("padding", ["reflect", "none"])
    def test_gradients(self, seed, padding):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((1, 2, 7, 8))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        probe = rng.standard_normal((1, 3, 7, 8) if padding == "reflect" else (1, 3, 3, 4))

        def fn(x, w, b):
            return nd.total(nd.conv2d(x, w, b, dilation=2, padding=padding) * probe)

        assert max_rel_error(fn, [x, w, b]) < 1e-4


class TestAvgPool:
    def test_two_by_two(self):
        out = nd.avg_pool2(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
        np.testing.assert_array_equal(out.data, [[[[2.5]]]])

    def test_constant(self):
        out = nd.avg_pool2(Tensor(np.full((1, 3, 6, 4), 0.2)))
        assert out.shape == (1, 3, 3, 2)
        np.testing.assert_allclose(out.data, 0.2)

    def test_matches_loop(self, rng):
        x = rng.random((1, 1, 4, 4))
        expected = np.array(
            [[np.mean(x[0, 0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]) for j in range(2)] for i in range(2)]
        )
        np.testing.assert_allclose(nd.avg_pool2(Tensor(x)).data[0, 0], expected, atol=1e-15)

    def test_odd_rejected(self):
        with pytest.raises(ValueError):
            nd.avg_pool2(Tensor(np.zeros((1, 1, 5, 4))))

    def test_gradient_is_quarter(self):
        x = Tensor(np.ones((1, 1, 4, 6)), requires_grad=True)
        nd.total(nd.avg_pool2(x)).backward()
        np.testing.assert_array_equal(x.grad, 0.25)


class TestPixelShuffle:
    def test_definition(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
        out = nd.pixel_shuffle(Tensor(x), 2).data
        np.testing.assert_array_equal(out, [[[[1.0, 2.0], [3.0, 4.0]]]])

    def test_index_oracle(self, rng):
        x = rng.random((1, 8, 3, 3))
        out = nd.pixel_shuffle(Tensor(x), 2).data
        assert out.shape == (1, 2, 6, 6)
        for c in range(2):
            for Y in range(6):
                for X in range(6):
                    y, dy = divmod(Y, 2)
                    xx, dx = divmod(X, 2)
                    assert out[0, c, Y, X] == x[0, c * 4 + dy * 2 + dx, y, xx]

    def test_bijection(self, rng):
        x = rng.random((2, 12, 4, 5))
        back = nd.pixel_unshuffle(nd.pixel_shuffle(Tensor(x), 2), 2).data
        np.testing.assert_array_equal(back, x)

    def test_channels_not_divisible(self):
        with pytest.raises(ValueError):
            nd.pixel_shuffle(Tensor(np.zeros((1, 6, 2, 2))), 2)

    def test_gradient_is_inverse_permutation(self, rng):
        x = Tensor(rng.random((1, 4, 2, 3)), requires_grad=True)
        probe = rng.random((1, 1, 4, 6))
        nd.total(nd.pixel_shuffle(x, 2) * probe).backward()
        np.testing.assert_array_equal(x.grad, nd.pixel_unshuffle(Tensor(probe), 2).data)


class TestLRelu:
    def test_values(self):
        out = nd.lrelu(Tensor(np.array([5.0, -1.0])), 0.2).data
        np.testing.assert_allclose(out, [5.0, -0.2])

    def test_negative_slope_gradient_fd(self):
        fn = lambda x: nd.total(nd.lrelu(x, 0.2))
        g = numeric_grad(fn, [np.array([-3.0])], 0)
        assert g[0] == pytest.approx(0.2, abs=1e-9)

    def test_gradient_at_zero_is_slope(self):
        x = Tensor(np.array([0.0]), requires_grad=True)
        nd.total(nd.lrelu(x, 0.2)).backward()
        assert x.grad[0] == pytest.approx(0.2)

    def test_bad_slope(self):
        with pytest.raises(ValueError):
            nd.lrelu(Tensor(np.zeros(2)), 1.5)


class TestElementwiseAndReductions:
    def test_power_at_origin(self):
        x = Tensor(np.array([0.0]), requires_grad=True)
        out = nd.power(x, 2.2)
        nd.total(out).backward()
        assert out.data[0] == 0.0
        assert x.grad[0] == 0.0

    def test_std_of_constant(self):
        assert nd.std(Tensor(np.full((5, 5), 0.3))).item() == 0.0

    def test_mean_std_two_pass_oracle(self, rng):
        patch = rng.random((11, 11))
        vals = patch.ravel().tolist()
        m = sum(vals) / len(vals)
        var = sum((v - m) ** 2 for v in vals) / len(vals)
        assert nd.mean(Tensor(patch)).item() == pytest.approx(m, abs=1e-12)
        assert nd.std(Tensor(patch)).item() == pytest.approx(var**0.5, abs=1e-12)

    def test_patch_stats_two_pass_oracle(self, rng):
        plane = rng.random((14, 13))
        mu = nd.patch_mean(Tensor(plane), 11).data
        sd = nd.patch_std(Tensor(plane), 11).data
        padded = np.pad(plane, 5, mode="reflect")
        for y, x in [(0, 0), (6, 7), (13, 12), (3, 11)]:
            win = padded[y : y + 11, x : x + 11].ravel()
            m = sum(win) / win.size
            v = sum((w - m) ** 2 for w in win) / win.size
            assert mu[y, x] == pytest.approx(m, abs=1e-12)
            assert sd[y, x] == pytest.approx(v**0.5, abs=1e-12)

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError, match="epsilon"):
            nd.log(Tensor(np.array([1.0, 0.0])))

    def test_clamp_gradient_mask(self):
        x = Tensor(np.array([-0.5, 0.5, 1.5]), requires_grad=True)
        nd.total(nd.clamp(x, 0.0, 1.0)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_abs_gradient_at_zero(self):
        x = Tensor(np.array([0.0, -2.0, 3.0]), requires_grad=True)
        nd.total(nd.absolute(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, -1.0, 1.0])

    def test_concat_channels(self, rng):
        a, b = rng.random((1, 2, 3, 3)), rng.random((1, 1, 3, 3))
        out = nd.concat_channels([Tensor(a), Tensor(b)])
        np.testing.assert_array_equal(out.data, np.concatenate([a, b], axis=1))

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize(
        "name, fn, positive",
        [
            ("add", lambda a, b: nd.total((a + b) * (a + b)), False),
            ("sub", lambda a, b: nd.total((a - b) * a), False),
            ("mul", lambda a, b: nd.mean(a * b * a), False),
            ("div", lambda a, b: nd.total(a / b), True),
            ("scale", lambda a, b: nd.total(nd.scale(a, 3.5) * b), False),
            ("power", lambda a, b: nd.total(nd.power(a, 2.2) * b), True),
            ("log", lambda a, b: nd.total(nd.log(a) * b), True),
            ("sqrt", lambda a, b: nd.total(nd.sqrt(a) * b), True),
            ("abs", lambda a, b: nd.total(nd.absolute(a) * b), False),
            ("clamp", lambda a, b: nd.total(nd.clamp(a, -0.5, 0.5) * b), False),
            ("lrelu", lambda a, b: nd.total(nd.lrelu(a, 0.2) * b), False),
            ("mean", lambda a, b: nd.mean(a) * nd.mean(b), False),
            ("std", lambda a, b: nd.std(a) * nd.mean(b), False),
            ("patch_mean", lambda a, b: nd.total(nd.patch_mean(a, 5) * b), False),
            ("patch_std", lambda a, b: nd.total(nd.patch_std(a, 5) * b), False),
            ("gauss", lambda a, b: nd.total(nd.separable_filter(a, [0.2, 0.5, 0.3]) * nd.crop(b, 6, 7)), False),
            ("crop", lambda a, b: nd.total(nd.crop(a, 5, 6) * nd.crop(b, 5, 6)), False),
        ],
    )
    def test_gradients(self, seed, name, fn, positive):
        rng = np.random.default_rng(seed)
        a = rng.random((8, 9)) + 0.1 if positive else rng.standard_normal((8, 9))
        b = rng.random((8, 9)) + 0.1
        assert max_rel_error(fn, [a, b]) < 1e-4, name


class TestBackward:
    def test_mean_gradient(self):
        x = Tensor(np.zeros(7), requires_grad=True)
        nd.mean(x).backward()
        np.testing.assert_allclose(x.grad, 1.0 / 7.0)

    def test_sum_of_squares(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        nd.total(x * x).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_accumulates_until_reset(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        nd.total(x * x).backward()
        nd.total(x * x).backward()
        np.testing.assert_array_equal(x.grad, [4.0, 8.0])
        x.zero_grad()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            Tensor(np.ones(3), requires_grad=True).backward()

    def test_intermediates_get_grads(self):
        x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        h = x * x
        nd.total(h).backward()
        assert h.grad is not None and h.grad.shape == h.shape

    @pytest.mark.parametrize("seed", SEEDS)
    def test_composite_conv_lrelu_mean(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((1, 2, 8, 8))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)

        def fn(x, w, b):
            return nd.mean(nd.lrelu(nd.conv2d(x, w, b, dilation=1), 0.2))

        assert max_rel_error(fn, [x, w, b]) < 1e-4

    def test_reused_node_accumulates(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * 2.0
        nd.total(y * y + y).backward()
        # d/dx (4x^2 + 2x) = 8x + 2
        assert x.grad[0] == pytest.approx(26.0)


def scalar_adam(theta, grads, lr, b1, b2, eps):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - lr * mhat / (vhat**0.5 + eps)
    return theta


class TestAdam:
    def test_zero_gradient_is_identity(self, rng):
        w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        before = w.data.copy()
        w.zero_grad()
        state = AdamState()
        adam_step({"w": w}, state, lr=1e-3)
        np.testing.assert_array_equal(w.data, before)
        assert state.t == 1

    def test_first_step_magnitude(self):
        w = Tensor(np.zeros(4), requires_grad=True)
        w.grad = np.array([0.5, -2.0, 3.0, -0.01])
        adam_step({"w": w}, AdamState(), lr=1e-3, eps=1e-8)
        g = np.array([0.5, -2.0, 3.0, -0.01])
        np.testing.assert_allclose(w.data, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)
        np.testing.assert_allclose(np.abs(w.data), 1e-3, rtol=1e-5)

    def test_two_steps_match_scalar_reference(self):
        w = Tensor(np.array([0.3, -1.2]), requires_grad=True)
        state = AdamState()
        g = np.array([0.7, -0.05])
        for _ in range(2):
            w.grad = g.copy()
            adam_step({"w": w}, state, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8)
        for i in range(2):
            ref = scalar_adam([0.3, -1.2][i], [g[i], g[i]], 1e-2, 0.9, 0.999, 1e-8)
            assert w.data[i] == pytest.approx(ref, abs=1e-12)
        assert state.t == 2
        assert state.m["w"].shape == w.shape and state.v["w"].shape == w.shape

    def test_missing_gradient(self):
        w = Tensor(np.zeros(2), requires_grad=True)
        with pytest.raises(ValueError, match="no gradient"):
            adam_step({"w": w}, AdamState())


@settings(max_examples=40, deadline=None)
@given(
    h=st.integers(3, 12),
    w=st.integers(3, 12),
    dilation=st.integers(1, 3),
)
def test_reflect_conv_preserves_shape(h, w, dilation):
    if dilation >= min(h, w):
        return
    x = Tensor(np.random.default_rng(h * 31 + w).random((1, 2, h, w)))
    out = nd.conv2d(x, Tensor(np.ones((3, 2, 3, 3))), Tensor(np.zeros(3)), dilation=dilation)
    assert out.shape == (1, 3, h, w)


@settings(max_examples=40, deadline=None)
@given(c=st.integers(1, 3), h=st.integers(1, 5), w=st.integers(1, 5), seed=st.integers(0, 2**16))
def test_shuffle_bijection_property(c, h, w, seed):
    x = np.random.default_rng(seed).random((1, 4 * c, h, w))
    np.testing.assert_array_equal(nd.pixel_unshuffle(nd.pixel_shuffle(Tensor(x), 2), 2).data, x)
