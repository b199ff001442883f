import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csc_ctrl import tensor as T
from csc_ctrl.tensor import BatchNormState, ConvGeometry, NumericError, ShapeError
from oracles import conv2d_loops, deconv2d_loops


def test_conv_impulse_returns_flipped_kernel():
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0
    K = np.arange(9.0).reshape(1, 1, 3, 3)
    out = T.conv2d(x, K, (1, 1))
    assert out.shape == (1, 1, 5, 5)
    np.testing.assert_array_equal(out[0, 0, 1:4, 1:4], K[0, 0, ::-1, ::-1])
    assert np.count_nonzero(out) == 8  # K has a single zero entry


def test_conv_constant_sums():
    out = T.conv2d(np.ones((1, 1, 4, 4)), np.ones((1, 1, 2, 2)), (2, 0))
    np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 4.0))


def test_conv_matches_loop_oracle(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    K = rng.normal(size=(4, 3, 3, 3))
    for stride, pad in [(1, 0), (1, 1), (2, 1)]:
        ref = conv2d_loops(x, K, stride, pad)
        got = T.conv2d(x, K, (stride, pad))
        assert np.abs(got - ref).max() <= 1e-12 * np.abs(ref).max()


def test_deconv_impulse_stamps_kernel():
    z = np.zeros((1, 1, 5, 5))
    z[0, 0, 2, 2] = 1.0
    K = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    out = T.deconv2d(z, K, (1, 1))
    np.testing.assert_array_equal(out[0, 0, 1:4, 1:4], K[0, 0])
    assert np.count_nonzero(out) == 9


def test_strided_deconv_of_impulse_is_cropped_kernel():
    z = np.zeros((1, 1, 2, 2))
    z[0, 0, 0, 0] = 1.0
    K = np.arange(16.0).reshape(1, 1, 4, 4)
    out = T.deconv2d(z, K, (2, 1))
    assert out.shape == (1, 1, 4, 4)
    np.testing.assert_array_equal(out, deconv2d_loops(z, K, 2, 1, (4, 4)))
    # padding 1 crops the first row/column of the stamped kernel
    np.testing.assert_array_equal(out[0, 0, :3, :3], K[0, 0, 1:, 1:])


def test_adjoint_identity(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    K = rng.normal(size=(4, 3, 3, 3))
    y = T.conv2d(x, K, (2, 1))
    z = rng.normal(size=y.shape)
    lhs = np.vdot(y, z)
    rhs = np.vdot(x, T.deconv2d(z, K, (2, 1), out_hw=(8, 8)))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(1, 2), cin=st.integers(1, 3), cout=st.integers(1, 3),
    k=st.integers(1, 4), stride=st.integers(1, 3), pad=st.integers(0, 2),
    h=st.integers(4, 9), w=st.integers(4, 9), seed=st.integers(0, 2**31),
)
def test_conv_pair_random_geometries(n, cin, cout, k, stride, pad, h, w, seed):
    if h + 2 * pad < k or w + 2 * pad < k:
        return
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, cin, h, w))
    K = rng.normal(size=(cout, cin, k, k))
    y = T.conv2d(x, K, (stride, pad))
    ref = conv2d_loops(x, K, stride, pad)
    assert np.abs(y - ref).max() <= 1e-12 * max(np.abs(ref).max(), 1.0)
    z = rng.normal(size=y.shape)
    back = T.deconv2d(z, K, (stride, pad), out_hw=(h, w))
    np.testing.assert_allclose(back, deconv2d_loops(z, K, stride, pad, (h, w)), rtol=0, atol=1e-12 * max(np.abs(back).max(), 1))
    assert abs(np.vdot(y, z) - np.vdot(x, back)) <= 1e-10 * max(1.0, abs(np.vdot(y, z)))


def test_shape_and_numeric_errors():
    with pytest.raises(ShapeError):
        T.conv2d(np.ones((1, 2, 4, 4)), np.ones((1, 3, 2, 2)), (1, 0))
    with pytest.raises(ShapeError):
        T.conv2d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 5, 5)), (1, 0))
    bad = np.ones((1, 1, 4, 4))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        T.conv2d(bad, np.ones((1, 1, 2, 2)), (1, 0))
    with pytest.raises(ShapeError):
        T.ConvGeometry(3, 1, 0, 2, 2).output_size(2)


def test_geometry_kernel_shape_checked():
    geom = ConvGeometry(3, 1, 1, in_channels=2, out_channels=4)
    assert geom.kernel_shape == (4, 2, 3, 3)
    with pytest.raises(ShapeError):
        T.conv2d(np.ones((1, 2, 5, 5)), np.ones((4, 2, 2, 2)), geom)


def test_soft_threshold_values():
    assert T.soft_threshold(1.5, 1.0) == pytest.approx(0.5)
    assert T.soft_threshold(-0.3, 0.5) == 0.0
    assert T.soft_threshold(-2.0, 0.5) == pytest.approx(-1.5)
    with pytest.raises(ValueError):
        T.soft_threshold(1.0, -0.1)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0, 1e3))
def test_soft_threshold_is_contraction(a, b, lam):
    d = abs(T.soft_threshold(a, lam) - T.soft_threshold(b, lam))
    assert d <= abs(a - b) * (1 + 1e-15) + 1e-9


def test_activations():
    assert T.relu(-2.0) == 0.0 and T.relu(3.0) == 3.0
    assert T.leaky_relu(-2.0, 0.2) == pytest.approx(-0.4)
    assert T.leaky_relu(5.0) == 5.0
    big = T.tanh(np.array([-30.0, -5.0, 5.0, 30.0]))
    assert np.all(np.abs(big) <= 1.0)
    assert np.all(np.abs(T.tanh(np.linspace(-10, 10, 101))) < 1.0)


def test_batch_norm_constant_channel_gives_shift():
    st_ = BatchNormState(2)
    st_.bias[:] = [0.3, -0.7]
    x = np.ones((4, 2, 3, 3)) * np.array([2.0, -5.0])[None, :, None, None]
    out = T.batch_norm(x, st_, "train")
    np.testing.assert_allclose(out[:, 0], 0.3, atol=1e-12)
    np.testing.assert_allclose(out[:, 1], -0.7, atol=1e-12)


def test_batch_norm_standardizes(rng):
    x = rng.normal(3.0, 5.0, size=(16, 3, 5, 5))
    out = T.batch_norm(x, BatchNormState(3), "train")
    mean = out.mean(axis=(0, 2, 3))
    var = out.var(axis=(0, 2, 3))
    assert np.abs(mean).max() <= 1e-10
    in_var = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(var, in_var / (in_var + T.BN_EPS), atol=1e-12)
    assert np.abs(var - 1).max() <= 1e-6


def test_batch_norm_identity_on_standard_input():
    x = np.array([-1.0, 1.0] * 8).reshape(16, 1)
    out = T.batch_norm(x, BatchNormState(1), "train")
    np.testing.assert_allclose(out, x / np.sqrt(1 + T.BN_EPS))


def test_batch_norm_running_stats_and_eval(rng):
    st_ = BatchNormState(2)
    x = rng.normal(1.0, 2.0, size=(8, 2, 4, 4))
    T.batch_norm(x, st_, "train")
    mean = x.mean(axis=(0, 2, 3))
    np.testing.assert_allclose(st_.running_mean, 0.1 * mean)
    a = T.batch_norm(x, st_, "eval")
    b = T.batch_norm(x, st_, "eval")
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ShapeError):
        T.batch_norm(np.ones((2, 3, 2, 2)), st_, "eval")


def test_float32_mode():
    try:
        T.set_default_dtype("float32")
        out = T.conv2d(np.ones((1, 1, 4, 4)), np.ones((1, 1, 2, 2)), (2, 0))
        assert out.dtype == np.float32
    finally:
        T.set_default_dtype("float64")
    assert T.asarray([1.0]).dtype == np.float64
