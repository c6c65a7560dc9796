import numpy as np
import pytest

import reference
from cdcnet import gradcheck, nn
from cdcnet.cdc import (
    CdcLayerSpec,
    CdcWeights,
    cdc_backward,
    cdc_forward,
    cdc_output_length,
    init_cdc_from_fc,
    param_count,
)


def random_instance(rng, c_in=None, c_out=None):
    c_in = c_in or int(rng.integers(1, 4))
    c_out = c_out or int(rng.integers(1, 4))
    s = int(rng.integers(1, 4))
    k_l = int(rng.integers(s, 7))
    k_h, k_w = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    l_in = int(rng.integers(1, 7))
    p_max = ((l_in - 1) * s + k_l - 1) // 2
    p = int(rng.integers(0, min(p_max, 2) + 1))
    spec = CdcLayerSpec(c_in, c_out, (k_l, k_h, k_w), s, p)
    x = rng.uniform(-1, 1, (c_in, l_in, k_h, k_w)).astype(np.float32)
    weights = CdcWeights(
        filters=rng.uniform(-1, 1, (c_out, c_in, k_l, k_h, k_w)).astype(np.float32),
        bias=rng.uniform(-1, 1, c_out).astype(np.float32),
    )
    return spec, x, weights


def test_output_length_examples():
    assert cdc_output_length(4, CdcLayerSpec(1, 1, (4, 1, 1), 2, 1)) == 8
    assert cdc_output_length(1, CdcLayerSpec(1, 1, (1, 1, 1), 1, 0)) == 1
    assert cdc_output_length(5, CdcLayerSpec(1, 1, (2, 1, 1), 2, 0)) == 10


def test_output_length_nonpositive_rejected():
    with pytest.raises(ValueError):
        cdc_output_length(1, CdcLayerSpec(1, 1, (2, 1, 1), 1, 1))


def test_gapped_spec_rejected():
    with pytest.raises(ValueError):
        CdcLayerSpec(1, 1, (1, 1, 1), temporal_stride=2)


def test_forward_hand_example_two_subkernels(backend):
    # One input step, two temporal sub-kernels (2, 3) applied to the scalar 5.
    spec = CdcLayerSpec(1, 1, (2, 1, 1), temporal_stride=2, temporal_padding=0)
    x = np.full((1, 1, 1, 1), 5.0, dtype=np.float32)
    weights = CdcWeights(
        filters=np.array([2.0, 3.0], dtype=np.float32).reshape(1, 1, 2, 1, 1),
        bias=np.zeros(1, dtype=np.float32),
    )
    y = cdc_forward(x, weights, spec)
    assert y.ravel().tolist() == [10.0, 15.0]


def test_forward_overlap_add_and_padding(backend):
    spec = CdcLayerSpec(1, 1, (4, 1, 1), temporal_stride=2, temporal_padding=1)
    x = np.ones((1, 2, 1, 1), dtype=np.float32)
    weights = CdcWeights(
        filters=np.ones((1, 1, 4, 1, 1), dtype=np.float32),
        bias=np.zeros(1, dtype=np.float32),
    )
    y = cdc_forward(x, weights, spec)
    # Interior slots sum two consecutive input steps; edges see one.
    assert y.ravel().tolist() == [1.0, 2.0, 2.0, 1.0]


def test_forward_zero_weights(backend, rng):
    spec, x, weights = random_instance(rng)
    weights.filters[:] = 0
    weights.bias[:] = 0
    assert not cdc_forward(x, weights, spec).any()


def test_backward_hand_example(backend):
    spec = CdcLayerSpec(1, 1, (2, 1, 1), temporal_stride=2, temporal_padding=0)
    x = np.full((1, 1, 1, 1), 5.0, dtype=np.float32)
    weights = CdcWeights(
        filters=np.array([2.0, 3.0], dtype=np.float32).reshape(1, 1, 2, 1, 1),
        bias=np.zeros(1, dtype=np.float32),
    )
    gy = np.ones((1, 2, 1, 1), dtype=np.float32)
    gx, gf, gb = cdc_backward(gy, x, weights, spec)
    assert gx.item() == 5.0
    assert gf.ravel().tolist() == [5.0, 5.0]
    assert gb.item() == 2.0


def test_backward_zero_grad(backend, rng):
    spec, x, weights = random_instance(rng)
    y = cdc_forward(x, weights, spec)
    gx, gf, gb = cdc_backward(np.zeros_like(y), x, weights, spec)
    assert not gx.any() and not gf.any() and not gb.any()


def test_backward_finite_differences(backend):
    for i in range(3):
        rng = np.random.Generator(np.random.PCG64([11, i]))
        assert gradcheck.check_cdc(rng) < 1e-3


@pytest.mark.parametrize("trial", range(10))
def test_forward_matches_direct_summation_oracle(backend, trial):
    rng = np.random.Generator(np.random.PCG64([21, trial]))
    spec, x, weights = random_instance(rng)
    y = cdc_forward(x, weights, spec)
    ref = reference.cdc_naive(
        x, weights.filters, weights.bias, spec.temporal_stride, spec.temporal_padding
    )
    assert y.shape == ref.shape
    assert np.abs(y - ref).max() < 1e-5


def test_degenerate_spec_equals_conv3d(backend, rng):
    c_in, c_out, l, kh, kw = 2, 3, 6, 4, 4
    spec = CdcLayerSpec(c_in, c_out, (1, kh, kw), 1, 0)
    x = rng.uniform(-1, 1, (c_in, l, kh, kw)).astype(np.float32)
    f = rng.uniform(-1, 1, (c_out, c_in, 1, kh, kw)).astype(np.float32)
    b = rng.uniform(-1, 1, c_out).astype(np.float32)
    y_cdc = cdc_forward(x, CdcWeights(f, b), spec)
    conv_spec = nn.Conv3dSpec(c_in, c_out, (1, kh, kw), (1, 1, 1), (0, 0, 0))
    y_conv = nn.conv3d_forward(x, f, b, conv_spec)
    assert np.abs(y_cdc - y_conv).max() < 1e-6


def test_equivalent_to_spatial_conv_then_temporal_deconv(backend, rng):
    # CDC weights built as conv filters combined with a one-hot temporal
    # selector reproduce the unfused conv -> transposed-conv composition.
    c_in, c_out, l, kh, kw, k_l, s, p = 2, 3, 5, 3, 3, 4, 2, 1
    x = rng.uniform(-1, 1, (c_in, l, kh, kw)).astype(np.float32)
    conv_w = rng.uniform(-1, 1, (c_out, c_in, kh, kw)).astype(np.float32)
    hot = rng.integers(0, k_l, c_out)
    f = np.zeros((c_out, c_in, k_l, kh, kw), dtype=np.float32)
    for co in range(c_out):
        f[co, :, hot[co]] = conv_w[co]
    spec = CdcLayerSpec(c_in, c_out, (k_l, kh, kw), s, p)
    y = cdc_forward(x, CdcWeights(f, np.zeros(c_out, np.float32)), spec)

    # Unfused baseline: per-step spatial collapse, then scatter each step's
    # value to output slot t*s - p + hot[co].
    z = np.einsum("ctab,ocab->ot", x.astype(np.float64), conv_w.astype(np.float64))
    l_out = (l - 1) * s - 2 * p + k_l
    expect = np.zeros((c_out, l_out))
    for co in range(c_out):
        for t in range(l):
            slot = t * s - p + hot[co]
            if 0 <= slot < l_out:
                expect[co, slot] += z[co, t]
    assert np.abs(y.reshape(c_out, l_out) - expect).max() < 1e-5


def test_parameter_counting_joint_vs_separate():
    joint = CdcLayerSpec(1, 1, (2, 4, 4), 2, 0)
    assert param_count(joint) - 1 == 2 * 4 * 4 == 32  # per in/out channel pair
    separate = 4 * 4 + 2  # spatial conv kernel plus temporal deconv kernel
    assert separate == 18
    assert 32 > separate
    wide = CdcLayerSpec(3, 5, (4, 2, 2), 2, 1)
    assert param_count(wide) == 5 * (3 * 4 * 2 * 2 + 1)


@pytest.mark.parametrize("l_full", [16, 32, 64])
def test_upsampling_chain_shape(backend, l_full):
    rng = np.random.Generator(np.random.PCG64(l_full))
    specs = [
        CdcLayerSpec(8, 8, (4, 4, 4), 2, 1),
        CdcLayerSpec(8, 8, (4, 1, 1), 2, 1),
        CdcLayerSpec(8, 4, (4, 1, 1), 2, 1),
    ]
    x = rng.uniform(-1, 1, (8, l_full // 8, 4, 4)).astype(np.float32)
    lengths = []
    for spec in specs:
        w = CdcWeights(
            filters=rng.uniform(-1, 1, (spec.out_channels, spec.in_channels) + spec.kernel).astype(np.float32),
            bias=np.zeros(spec.out_channels, dtype=np.float32),
        )
        x = cdc_forward(x, w, spec)
        lengths.append(x.shape[1])
        assert x.shape[2:] == (1, 1)
    assert lengths == [l_full // 4, l_full // 2, l_full]


# -- FC adaptation ---------------------------------------------------------


def test_init_from_fc_degenerate_copy(rng):
    fc_w = rng.uniform(-1, 1, (3, 2 * 4 * 4)).astype(np.float32)
    fc_b = rng.uniform(-1, 1, 3).astype(np.float32)
    w = init_cdc_from_fc(fc_w, fc_b, 1, (2, 4, 4))
    assert np.array_equal(w.filters.reshape(3, -1), fc_w)
    assert np.array_equal(w.bias, fc_b)


def test_init_from_fc_replicates_subkernels(rng):
    fc_w = rng.uniform(-1, 1, (3, 2 * 4 * 4)).astype(np.float32)
    fc_b = rng.uniform(-1, 1, 3).astype(np.float32)
    w = init_cdc_from_fc(fc_w, fc_b, 2, (2, 4, 4))
    assert np.array_equal(w.filters[:, :, 0], w.filters[:, :, 1])
    assert np.array_equal(w.filters[:, :, 0], fc_w.reshape(3, 2, 4, 4))


def test_init_from_fc_bad_width(rng):
    with pytest.raises(ValueError):
        init_cdc_from_fc(rng.uniform(-1, 1, (3, 30)).astype(np.float32),
                         np.zeros(3, np.float32), 2, (2, 4, 4))


@pytest.mark.parametrize("k_l", [1, 2, 4])
def test_transplanted_layer_replicates_fc_output(backend, k_l):
    # With stride = kernel and no padding the adapted layer repeats the FC
    # (1 x kh x kw conv) response k_l times per input step.
    rng = np.random.Generator(np.random.PCG64([31, k_l]))
    c_in, c_out, l, kh, kw = 2, 3, 5, 4, 4
    fc_w = rng.uniform(-1, 1, (c_out, c_in * kh * kw)).astype(np.float32)
    fc_b = rng.uniform(-1, 1, c_out).astype(np.float32)
    weights = init_cdc_from_fc(fc_w, fc_b, k_l, (c_in, kh, kw))
    spec = CdcLayerSpec(c_in, c_out, (k_l, kh, kw), k_l, 0)
    x = rng.uniform(-1, 1, (c_in, l, kh, kw)).astype(np.float32)
    y = cdc_forward(x, weights, spec).reshape(c_out, l * k_l)

    conv_spec = nn.Conv3dSpec(c_in, c_out, (1, kh, kw), (1, 1, 1), (0, 0, 0))
    fc_out = nn.conv3d_forward(
        x, fc_w.reshape(c_out, c_in, 1, kh, kw), fc_b, conv_spec
    ).reshape(c_out, l)
    assert np.abs(y - np.repeat(fc_out, k_l, axis=1)).max() < 1e-6


def test_shape_validation(rng):
    spec = CdcLayerSpec(2, 3, (2, 4, 4), 2, 0)
    weights = CdcWeights(
        filters=rng.uniform(-1, 1, (3, 2, 2, 4, 4)).astype(np.float32),
        bias=np.zeros(3, dtype=np.float32),
    )
    with pytest.raises(ValueError):
        cdc_forward(rng.uniform(-1, 1, (2, 5, 3, 4)).astype(np.float32), weights, spec)
    x = rng.uniform(-1, 1, (2, 5, 4, 4)).astype(np.float32)
    y = cdc_forward(x, weights, spec)
    with pytest.raises(ValueError):
        cdc_backward(y[:, :-1], x, weights, spec)
