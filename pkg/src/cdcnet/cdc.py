"""The joint spatial-convolution / temporal-deconvolution (CDC) operator.

One CDC filter reads the full k_h x k_w spatial receptive field of each
input time step and emits k_l successive values in time, one per temporal
sub-kernel: Y[c] = sum_a sum_b F[c,a,b] * X[a,b].  Consecutive input steps
whose sub-kernel outputs land on the same temporal slot add up (transposed
convolution semantics), the 2*p slots trimmed by padding are discarded, and
the bias is applied once per surviving output element.  The backward pass is
the exact adjoint: grad_X[a,b] = sum_c F[c,a,b] * grad_Y[c] accumulated over
all sliding positions and output channels, and symmetrically for grad_F.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class CdcLayerSpec:
    in_channels: int
    out_channels: int
    kernel: tuple  # (k_l, k_h, k_w)
    temporal_stride: int = 1
    temporal_padding: int = 0

    def __post_init__(self):
        k_l = self.kernel[0]
        if self.temporal_stride < 1:
            raise ValueError("temporal stride must be >= 1")
        if self.temporal_padding < 0:
            raise ValueError("temporal padding must be >= 0")
        if k_l < self.temporal_stride:
            # A temporal kernel shorter than the stride leaves output slots
            # with no contribution; rejected instead of zero-filled.
            raise ValueError(
                f"temporal kernel {k_l} shorter than stride {self.temporal_stride}"
            )

    @property
    def upsample_factor(self):
        return self.temporal_stride


@dataclass
class CdcWeights:
    filters: np.ndarray  # (out_channels, in_channels, k_l, k_h, k_w)
    bias: np.ndarray  # (out_channels,)


def cdc_output_length(l_in, spec):
    """Temporal output length: (L_in - 1) * stride - 2 * padding + k_l."""
    out = (l_in - 1) * spec.temporal_stride - 2 * spec.temporal_padding + spec.kernel[0]
    if out < 1:
        raise ValueError(f"non-positive output length {out} for input length {l_in}")
    return out


def param_count(spec):
    """Learnable parameters of the layer, bias included."""
    k_l, k_h, k_w = spec.kernel
    return spec.out_channels * (spec.in_channels * k_l * k_h * k_w + 1)


def _check(x, weights, spec):
    k_l, k_h, k_w = spec.kernel
    if x.ndim != 4 or x.shape[0] != spec.in_channels:
        raise ValueError(f"input shape {x.shape} for spec {spec}")
    if x.shape[2:] != (k_h, k_w):
        raise ValueError(
            f"input spatial extents {x.shape[2:]} must equal the spatial kernel"
            f" ({k_h}, {k_w})"
        )
    expected = (spec.out_channels, spec.in_channels, k_l, k_h, k_w)
    if weights.filters.shape != expected:
        raise ValueError(f"filter shape {weights.filters.shape}, expected {expected}")
    if weights.bias.shape != (spec.out_channels,):
        raise ValueError(f"bias shape {weights.bias.shape}")


def cdc_forward(x, weights, spec):
    """x: (C_in, L_in, k_h, k_w) -> (C_out, L_out, 1, 1)."""
    _check(x, weights, spec)
    cdc_output_length(x.shape[1], spec)
    return kernels.cdc_forward(
        x, weights.filters, weights.bias, spec.temporal_stride, spec.temporal_padding
    )


def cdc_backward(grad_y, x, weights, spec):
    _check(x, weights, spec)
    l_out = cdc_output_length(x.shape[1], spec)
    if grad_y.shape != (spec.out_channels, l_out, 1, 1):
        raise ValueError(
            f"grad shape {grad_y.shape}, expected {(spec.out_channels, l_out, 1, 1)}"
        )
    return kernels.cdc_backward(
        grad_y, x, weights.filters, spec.temporal_stride, spec.temporal_padding
    )


def init_cdc_from_fc(fc_weights, fc_bias, k_l, layout):
    """Adapt a fully-connected layer's weights into a CDC layer.

    Each of the k_l temporal sub-kernels becomes an identical copy of the FC
    filter reshaped to ``layout`` = (C_in, k_h, k_w); the bias is copied.
    """
    c_in, k_h, k_w = layout
    c_out, width = fc_weights.shape
    if width != c_in * k_h * k_w:
        raise ValueError(
            f"FC width {width} does not factor as {c_in}*{k_h}*{k_w}"
        )
    base = fc_weights.reshape(c_out, c_in, 1, k_h, k_w)
    filters = np.ascontiguousarray(
        np.broadcast_to(base, (c_out, c_in, k_l, k_h, k_w)), dtype=fc_weights.dtype
    )
    return CdcWeights(filters=filters, bias=fc_bias.copy())
