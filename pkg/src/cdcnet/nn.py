"""Building-block layers around the conv trunk: 3D convolution, max pooling,
relu, dropout, the per-frame softmax and its cross-entropy loss/gradient.

All forward maps are pure; backward ops consume whatever record their
forward produced.  Class scores live in ``ScoreMatrix`` layout: one row per
frame, K+1 columns with the background class last, rows summing to 1.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

# Clamp bounds applied to probabilities inside the loss so the perfect and
# the fully-wrong prediction both stay finite.
P_CLAMP_LO = 1e-12
P_CLAMP_HI = 1.0 - 1e-7

POOL_KERNELS = {
    "spatial": (1, 2, 2),
    "spatiotemporal": (2, 2, 2),
    "temporal": (2, 1, 1),
}


@dataclass(frozen=True)
class Conv3dSpec:
    in_channels: int
    out_channels: int
    kernel: tuple  # (k_l, k_h, k_w)
    stride: tuple = (1, 1, 1)
    padding: tuple = (1, 1, 1)

    def out_extent(self, axis, n):
        e = (n + 2 * self.padding[axis] - self.kernel[axis]) // self.stride[axis] + 1
        if e < 1:
            raise ValueError(
                f"conv output extent {e} on axis {axis} for input extent {n}"
            )
        return e

    def out_shape(self, in_shape):
        c, l, h, w = in_shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {c}")
        return (
            self.out_channels,
            self.out_extent(0, l),
            self.out_extent(1, h),
            self.out_extent(2, w),
        )


def conv3d_forward(x, weights, bias, spec):
    """Cross-correlation with zero padding (no kernel flip)."""
    expected = (spec.out_channels, spec.in_channels) + tuple(spec.kernel)
    if weights.shape != expected:
        raise ValueError(f"weights shape {weights.shape}, expected {expected}")
    if bias.shape != (spec.out_channels,):
        raise ValueError(f"bias shape {bias.shape}, expected ({spec.out_channels},)")
    spec.out_shape(x.shape)
    return kernels.conv3d_forward(x, weights, bias, spec.stride, spec.padding)


def conv3d_backward(grad_out, x, weights, spec):
    if grad_out.shape != spec.out_shape(x.shape):
        raise ValueError(
            f"grad shape {grad_out.shape}, expected {spec.out_shape(x.shape)}"
        )
    return kernels.conv3d_backward(grad_out, x, weights, spec.stride, spec.padding)


def maxpool_forward(x, kind):
    """Max pooling with stride equal to the kernel; ties break toward the
    first cell element in row-major order so the backward routing is
    deterministic."""
    kernel = POOL_KERNELS[kind]
    for axis, k in enumerate(kernel):
        if x.shape[1 + axis] % k:
            raise ValueError(
                f"{kind} pooling needs extent divisible by {k} on axis {axis},"
                f" got input shape {x.shape}"
            )
    return kernels.maxpool3d_forward(x, kernel)


def maxpool_backward(grad_out, argmax_record, in_shape):
    if grad_out.shape != argmax_record.shape:
        raise ValueError("gradient does not match the pooling argmax record")
    return kernels.maxpool3d_backward(grad_out, argmax_record, in_shape)


def maxpool_spatial_forward(x):
    """1x2x2 pooling: halve height and width, keep the temporal length."""
    return maxpool_forward(x, "spatial")


def maxpool_spatial_backward(grad_out, argmax_record, in_shape):
    return maxpool_backward(grad_out, argmax_record, in_shape)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype)


def dropout(x, ratio, train=False, seed=0):
    """Inverted dropout: eval mode is the exact identity; train mode zeroes
    elements with probability ``ratio`` and scales survivors by 1/(1-ratio).
    Returns the output and the keep mask reused by the backward pass."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
    if not train or ratio == 0.0:
        return x, None
    rng = np.random.Generator(np.random.PCG64(seed))
    keep = rng.random(x.shape) >= ratio
    scale = x.dtype.type(1.0 / (1.0 - ratio))
    return np.where(keep, x * scale, 0).astype(x.dtype), keep


def dropout_backward(grad_out, mask, ratio):
    if mask is None:
        return grad_out
    scale = grad_out.dtype.type(1.0 / (1.0 - ratio))
    return np.where(mask, grad_out * scale, 0).astype(grad_out.dtype)


def framewise_softmax(logits):
    """Independent softmax over the class axis at every time step.

    logits: (K+1, L); returns the ScoreMatrix (L, K+1).  Stabilized by
    subtracting each frame's max logit.
    """
    o = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(o)):
        raise FloatingPointError("non-finite logits")
    shifted = o - o.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=0, keepdims=True)
    return p.T.astype(logits.dtype)


def _check_labels(p, labels):
    labels = np.asarray(labels)
    if labels.shape != (p.shape[0],):
        raise ValueError(f"labels shape {labels.shape} for {p.shape[0]} frames")
    if labels.min() < 0 or labels.max() >= p.shape[1]:
        raise ValueError("label out of class range")
    return labels


def softmax_loss(score_batch, label_batch, valid_batch=None):
    """Mean over windows of the per-frame negative log likelihood, summed
    (not averaged) over each window's frames.

    ``valid_batch`` optionally masks frames out of the loss entirely; padded
    tail frames of a sliced window use it so their predictions never train.
    """
    n = len(score_batch)
    if n == 0:
        raise ValueError("empty batch")
    total = 0.0
    for i, p in enumerate(score_batch):
        labels = _check_labels(p, label_batch[i])
        picked = np.asarray(p, dtype=np.float64)[np.arange(p.shape[0]), labels]
        nll = -np.log(np.clip(picked, P_CLAMP_LO, P_CLAMP_HI))
        if valid_batch is not None:
            nll = nll[np.asarray(valid_batch[i], dtype=bool)]
        total += nll.sum()
    return total / n


def softmax_loss_grad(score_batch, label_batch, valid_batch=None):
    """Gradient of the loss w.r.t. the pre-softmax logits, per window.

    Returns a list of (K+1, L) arrays: (P - onehot(label)) / N per frame,
    zeroed on masked frames.
    """
    n = len(score_batch)
    grads = []
    for i, p in enumerate(score_batch):
        labels = _check_labels(p, label_batch[i])
        g = np.array(p, dtype=np.float64)
        g[np.arange(p.shape[0]), labels] -= 1.0
        g /= n
        if valid_batch is not None:
            g[~np.asarray(valid_batch[i], dtype=bool)] = 0.0
        grads.append(g.T.astype(p.dtype))
    return grads
