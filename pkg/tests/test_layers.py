import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import conv2d_direct, transposed_scatter
from plaqueseg import layers as L
from plaqueseg.autodiff import Parameter, ShapeError, Tensor, backprop, default_dtype


def conv_params(w, b=None, stride=1, padding=0, dilation=1):
    w = np.asarray(w, dtype=np.float64)
    bias = None if b is None else Parameter(np.asarray(b, dtype=np.float64), "b")
    return L.Conv2dParams(Parameter(w, "w"), bias, stride, padding, dilation)


# ------------------------------------------------------------------ conv2d

def test_conv_zero_weight_gives_bias():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 5, 5)))
    p = conv_params(np.zeros((4, 3, 3, 3)), [1.0, 2.0, 3.0, 4.0], padding=1)
    out = L.conv2d(x, p).data
    assert np.array_equal(out, np.broadcast_to(np.array([1.0, 2, 3, 4])[None, :, None, None], out.shape))


def test_conv_identity_kernel():
    x = np.random.default_rng(1).standard_normal((1, 1, 6, 7))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    assert np.array_equal(L.conv2d(Tensor(x), conv_params(k, padding=1)).data, x)


def test_conv_dilated_impulse():
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0
    out = L.conv2d(Tensor(x), conv_params(np.ones((1, 1, 3, 3)), padding=2, dilation=2)).data[0, 0]
    expected = np.zeros((5, 5))
    expected[np.ix_([0, 2, 4], [0, 2, 4])] = 1.0
    assert np.array_equal(out, expected)
    assert np.array_equal(out, conv2d_direct(x, np.ones((1, 1, 3, 3)), None, 1, 2, 2)[0, 0])


def test_conv_matches_direct_sum_oracle_50_cases():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        d = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        k = int(rng.choice([1, 3]))
        pad = int(rng.integers(0, d + 1))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h = int(rng.integers(d * (k - 1) + 1, 10))
        w = int(rng.integers(d * (k - 1) + 1, 10))
        x = rng.integers(-4, 5, (int(rng.integers(1, 3)), cin, h, w)).astype(np.float64)
        wt = rng.integers(-3, 4, (cout, cin, k, k)).astype(np.float64)
        b = rng.integers(-2, 3, cout).astype(np.float64)
        out = L.conv2d(Tensor(x), conv_params(wt, b, s, pad, d)).data
        # small integers keep every partial sum exact in double precision
        assert np.array_equal(out, conv2d_direct(x, wt, b, s, pad, d))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_receptive_field_support(d):
    size = 15
    x = np.zeros((1, 1, size, size))
    x[0, 0, 7, 7] = 1.0
    out = L.conv2d(Tensor(x), conv_params(np.ones((1, 1, 3, 3)), padding=d, dilation=d)).data[0, 0]
    rows, cols = np.nonzero(out)
    assert rows.max() - rows.min() + 1 == 3 + 2 * (d - 1)
    assert cols.max() - cols.min() + 1 == 3 + 2 * (d - 1)


def test_conv_errors():
    p = conv_params(np.ones((1, 2, 3, 3)))
    with pytest.raises(ShapeError):
        L.conv2d(Tensor(np.ones((1, 3, 5, 5))), p)
    with pytest.raises(ShapeError):
        L.conv2d(Tensor(np.ones((1, 2, 2, 2))), p)


def test_conv_output_size_formula():
    assert L.conv_output_size(9, 3, 2, 2, 2) == (9 + 4 - 4 - 1) // 2 + 1


# ------------------------------------------------------------------ batchnorm

def _bn(c, gamma=1.0, beta=0.0):
    s = L.BatchNormState.create("bn", c, dtype=np.float64)
    s.gamma.data[...] = gamma
    s.beta.data[...] = beta
    return s


def test_bn_constant_input_training():
    x = np.ones((2, 3, 4, 4)) * np.array([1.0, -2.0, 5.0])[None, :, None, None]
    out = L.batchnorm2d(Tensor(x), _bn(3)).data
    assert np.abs(out).max() <= 1e-6
    out = L.batchnorm2d(Tensor(x), _bn(3, beta=3.0)).data
    assert np.allclose(out, 3.0, atol=1e-6)


def test_bn_inference_closed_form():
    s = _bn(2, gamma=2.0)
    s.training = False
    x = np.random.default_rng(3).standard_normal((2, 2, 3, 3))
    out = L.batchnorm2d(Tensor(x), s).data
    assert np.allclose(out, 2 * x / np.sqrt(1 + s.epsilon), rtol=0, atol=1e-12)


def test_bn_running_stats_update():
    s = _bn(1)
    x = np.arange(8.0).reshape(2, 1, 2, 2)
    L.batchnorm2d(Tensor(x), s)
    assert np.isclose(s.running_mean.data[0], 0.1 * x.mean())
    assert np.isclose(s.running_var.data[0], 0.9 + 0.1 * x.var(ddof=1))
    assert (s.running_var.data >= 0).all()


def test_bn_channel_mismatch():
    with pytest.raises(ShapeError):
        L.batchnorm2d(Tensor(np.ones((1, 2, 2, 2))), _bn(3))


# ------------------------------------------------------------------ maxpool

def test_maxpool_examples():
    out = L.maxpool2d(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
    assert out.data.tolist() == [[[[4.0]]]]
    ramp = np.arange(16.0).reshape(1, 1, 4, 4)
    assert L.maxpool2d(Tensor(ramp)).data[0, 0].tolist() == [[5.0, 7.0], [13.0, 15.0]]


def test_maxpool_tie_goes_to_first():
    x = Parameter(np.full((1, 1, 2, 2), 7.0), "x")
    out = L.maxpool2d(x)
    assert out.data[0, 0, 0, 0] == 7.0
    backprop(out.sum())
    assert x.grad[0, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_maxpool_odd_rejected():
    with pytest.raises(ShapeError):
        L.maxpool2d(Tensor(np.ones((1, 1, 3, 4))))


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_maxpool_inverts_block_upsample(h, w, seed):
    x = np.random.default_rng(seed).standard_normal((1, 2, h, w))
    up = np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)
    assert np.array_equal(L.maxpool2d(Tensor(up)).data, x)


# ------------------------------------------------------------------ upsample

def _up(w, b=None):
    return L.Conv2dParams(Parameter(np.asarray(w, float), "w"),
                          None if b is None else Parameter(np.asarray(b, float), "b"), stride=2)


def test_upsample_single_pixel():
    out = L.upsample2x(Tensor(np.ones((1, 1, 1, 1))), _up(np.ones((1, 1, 2, 2))))
    assert out.data.tolist() == [[[[1.0, 1.0], [1.0, 1.0]]]]


def test_upsample_zero_weight_bias():
    out = L.upsample2x(Tensor(np.ones((1, 2, 3, 3))), _up(np.zeros((2, 3, 2, 2)), [1.0, 2.0, 3.0]))
    assert out.shape == (1, 3, 6, 6)
    assert np.array_equal(out.data[0, :, 0, 0], [1.0, 2.0, 3.0])
    assert (out.data[0, 2] == 3.0).all()


def test_upsample_disjoint_scatter():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = L.upsample2x(Tensor(x), _up(np.ones((1, 1, 2, 2)))).data
    assert np.array_equal(out, transposed_scatter(x, np.ones((1, 1, 2, 2)), None))
    assert out[0, 0].tolist() == [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]


def test_upsample_random_matches_scatter_oracle():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 3, 4))
    w = rng.standard_normal((3, 2, 2, 2))
    b = rng.standard_normal(2)
    assert np.allclose(L.upsample2x(Tensor(x), _up(w, b)).data, transposed_scatter(x, w, b), atol=1e-12)


def test_upsample_channel_mismatch():
    with pytest.raises(ShapeError):
        L.upsample2x(Tensor(np.ones((1, 2, 2, 2))), _up(np.ones((3, 1, 2, 2))))


# ------------------------------------------------------------------ activations

def test_activation_values():
    assert L.pointwise_activation("relu", Tensor(np.array([-1.0, 2.0]))).data.tolist() == [0.0, 2.0]
    assert L.pointwise_activation("sigmoid", Tensor(np.array([0.0]))).data[0] == 0.5
    sm = L.pointwise_activation("softmax", Tensor(np.zeros((1, 2, 1, 1))))
    assert sm.data.ravel().tolist() == [0.5, 0.5]


@given(st.integers(0, 2 ** 31), st.floats(0.1, 80.0))
def test_softmax_normalised(seed, scale):
    x = np.random.default_rng(seed).standard_normal((2, 3, 4, 4)) * scale
    p = L.softmax_channels(Tensor(x)).data
    assert np.all((p >= 0) & (p <= 1))
    assert np.abs(p.sum(axis=1) - 1).max() <= 1e-6


def test_softmax_needs_two_channels():
    with pytest.raises(ShapeError):
        L.softmax_channels(Tensor(np.zeros((1, 1, 2, 2))))


def test_sigmoid_extreme_inputs_finite():
    out = L.sigmoid(Tensor(np.array([-800.0, 800.0]))).data
    assert np.isfinite(out).all()


# ------------------------------------------------------------------ pooling / concat

def test_global_avg_pool():
    x = np.zeros((2, 2, 2, 2))
    x[:, 0] = 3.0
    x[0, 1] = [[0, 2], [4, 6]]
    x[1, 1] = 1.0
    out = L.global_avg_pool(Tensor(x)).data
    assert out.tolist() == [[3.0, 3.0], [3.0, 1.0]]


def test_concat_shapes_and_gradient_split():
    a = Parameter(np.ones((1, 2, 3, 3)), "a")
    b = Parameter(np.ones((1, 3, 3, 3)), "b")
    out = L.concat_channels([a, b])
    assert out.shape == (1, 5, 3, 3)
    weights = np.arange(5.0)[None, :, None, None] * np.ones((1, 5, 3, 3))
    backprop((out * Tensor(weights)).sum())
    assert np.array_equal(a.grad, weights[:, :2])
    assert np.array_equal(b.grad, weights[:, 2:])
    single = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
    assert np.array_equal(L.concat_channels([single]).data, single.data)


def test_concat_mismatch():
    with pytest.raises(ShapeError):
        L.concat_channels([Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 2)))])


# ------------------------------------------------------------------ SE / PDC

def _se(c, r=16, zero=False, seed=0):
    with default_dtype(np.float64):
        p = L.SeBlockParams.create("se", c, np.random.default_rng(seed), reduction=r, dtype=np.float64)
    if zero:
        for q in p.parameters():
            q.data[...] = 0.0
    return p


def test_se_zero_weights_halves():
    x = np.random.default_rng(0).standard_normal((2, 8, 3, 3))
    assert np.allclose(L.se_block(Tensor(x), _se(8, zero=True)).data, 0.5 * x, atol=0)


def test_se_zero_input():
    assert not L.se_block(Tensor(np.zeros((1, 8, 2, 2))), _se(8)).data.any()


@given(st.integers(0, 2 ** 31))
def test_se_gates_open_interval(seed):
    x = np.random.default_rng(seed).standard_normal((2, 12, 3, 3)) * 3
    g = L.se_gates(Tensor(x), _se(12, r=2, seed=seed)).data
    assert np.all((g > 0) & (g < 1))


def test_se_bottleneck_clamped():
    assert L.SeBlockParams.bottleneck(12, 16) == 4
    assert L.SeBlockParams.bottleneck(128, 16) == 8


def test_se_channel_mismatch():
    with pytest.raises(ShapeError):
        L.se_block(Tensor(np.ones((1, 4, 2, 2))), _se(8))


def _pdc(c, seed=0):
    return L.PdcParams.create("pdc", c, np.random.default_rng(seed), dtype=np.float64)


def test_pdc_preserves_shape():
    out = L.pdc_block(Tensor(np.random.default_rng(0).standard_normal((1, 3, 32, 32))), _pdc(3))
    assert out.shape == (1, 3, 32, 32)


def test_pdc_constructed_identity():
    c = 2
    p = _pdc(c)
    for b in p.branches:
        b.weight.data[...] = 0.0
        b.bias.data[...] = 0.0
        for i in range(c):
            b.weight.data[i, i, 1, 1] = 1.0
    p.fusion.weight.data[...] = 0.0
    p.fusion.bias.data[...] = 0.0
    for i in range(c):
        for k in range(3):
            p.fusion.weight.data[i, k * c + i, 0, 0] = 1.0 / 3.0
    x = np.random.default_rng(4).uniform(0, 1, (1, c, 6, 6))
    assert np.allclose(L.pdc_block(Tensor(x), p).data, x, atol=1e-15)


def test_pdc_zero_weights():
    p = _pdc(3)
    for q in p.parameters():
        q.data[...] = 0.0
    assert not L.pdc_block(Tensor(np.ones((1, 3, 5, 5))), p).data.any()


def test_pdc_branch_dilations():
    p = _pdc(2)
    assert [b.dilation for b in p.branches] == [1, 2, 3]
    assert [b.padding for b in p.branches] == [1, 2, 3]
    assert p.fusion.weight.shape == (2, 6, 1, 1)
