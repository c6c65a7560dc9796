"""Central finite-difference verification of every backward op.

The probe is a fixed random projection J = sum(output * R); the analytic
backward pass is fed R and compared against numeric differentiation of J.
Errors are normwise: largest elementwise difference relative to the largest
gradient magnitude, so a sound gradient of any scale passes while a wrong
formula fails by orders of magnitude.  Elements within the finite-difference
step of a relu/maxpool kink are excluded, since the quotient genuinely
disagrees with the one-sided derivative there.
"""

import numpy as np

from . import cdc as cdc_mod
from . import nn


def normwise_error(analytic, numeric, exclude=None):
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - b)
    if exclude is not None:
        diff = np.where(exclude, 0.0, diff)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(diff.max() / scale)


def numeric_grad(scalar_fn, x, h):
    """Central differences of scalar_fn() w.r.t. every element of x,
    perturbing x in place."""
    g = np.zeros(x.size, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = scalar_fn()
        flat[i] = orig - h
        fm = scalar_fn()
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return g.reshape(x.shape)


def _probe(y, r):
    return float(np.sum(np.asarray(y, dtype=np.float64) * r))


def _step(dtype):
    return 1e-3 if dtype == np.float32 else 1e-6


def check_conv3d(rng, dtype=np.float32):
    spec = nn.Conv3dSpec(2, 3, (2, 2, 3), stride=(1, 1, 1), padding=(1, 1, 1))
    x = rng.uniform(-1, 1, (2, 4, 5, 5)).astype(dtype)
    w = rng.uniform(-1, 1, (3, 2, 2, 2, 3)).astype(dtype)
    b = rng.uniform(-1, 1, 3).astype(dtype)
    r = rng.uniform(-1, 1, nn.conv3d_forward(x, w, b, spec).shape)
    gx, gw, gb = nn.conv3d_backward(r.astype(dtype), x, w, spec)
    h = _step(dtype)
    fn = lambda: _probe(nn.conv3d_forward(x, w, b, spec), r)
    return max(
        normwise_error(gx, numeric_grad(fn, x, h)),
        normwise_error(gw, numeric_grad(fn, w, h)),
        normwise_error(gb, numeric_grad(fn, b, h)),
    )


def check_maxpool(rng, kind="spatial", dtype=np.float32):
    shape = (3, 4, 4, 4)
    x = rng.uniform(-1, 1, shape).astype(dtype)
    y, idx = nn.maxpool_forward(x, kind)
    r = rng.uniform(-1, 1, y.shape)
    gx = nn.maxpool_backward(r.astype(dtype), idx, x.shape)
    h = _step(dtype)
    fn = lambda: _probe(nn.maxpool_forward(x, kind)[0], r)
    num = numeric_grad(fn, x, h)
    # Exclude every element of a cell whose top-2 margin the step can flip.
    kt, kh, kw = nn.POOL_KERNELS[kind]
    c, l, ht, wd = shape
    cells = x.reshape(c, l // kt, kt, ht // kh, kh, wd // kw, kw)
    cells = cells.transpose(0, 1, 3, 5, 2, 4, 6).reshape(
        c, l // kt, ht // kh, wd // kw, -1
    )
    top2 = np.sort(cells, axis=-1)[..., -2:]
    tied = (top2[..., 1] - top2[..., 0]) < 4 * h
    mask = np.broadcast_to(tied[..., None], cells.shape).reshape(
        c, l // kt, ht // kh, wd // kw, kt, kh, kw
    )
    mask = mask.transpose(0, 1, 4, 2, 5, 3, 6).reshape(shape)
    return normwise_error(gx, num, exclude=mask)


def check_relu(rng, dtype=np.float32):
    x = rng.uniform(-1, 1, (3, 4, 4, 4)).astype(dtype)
    r = rng.uniform(-1, 1, x.shape)
    gx = nn.relu_backward(r.astype(dtype), x)
    h = _step(dtype)
    fn = lambda: _probe(nn.relu(x), r)
    return normwise_error(gx, numeric_grad(fn, x, h), exclude=np.abs(x) < 4 * h)


def check_dropout(rng, dtype=np.float32):
    x = rng.uniform(-1, 1, (4, 6, 3, 3)).astype(dtype)
    seed = int(rng.integers(0, 2**31))
    _, mask = nn.dropout(x, 0.5, train=True, seed=seed)
    r = rng.uniform(-1, 1, x.shape)
    gx = nn.dropout_backward(r.astype(dtype), mask, 0.5)
    h = _step(dtype)
    # The mask depends on the seed only, so it is fixed across perturbations.
    fn = lambda: _probe(nn.dropout(x, 0.5, train=True, seed=seed)[0], r)
    return normwise_error(gx, numeric_grad(fn, x, h))


def check_cdc(rng, dtype=np.float32):
    spec = cdc_mod.CdcLayerSpec(2, 3, (4, 4, 4), temporal_stride=2, temporal_padding=1)
    x = rng.uniform(-1, 1, (2, 3, 4, 4)).astype(dtype)
    weights = cdc_mod.CdcWeights(
        filters=rng.uniform(-1, 1, (3, 2, 4, 4, 4)).astype(dtype),
        bias=rng.uniform(-1, 1, 3).astype(dtype),
    )
    y = cdc_mod.cdc_forward(x, weights, spec)
    r = rng.uniform(-1, 1, y.shape)
    gx, gf, gb = cdc_mod.cdc_backward(r.astype(dtype), x, weights, spec)
    h = _step(dtype)
    fn = lambda: _probe(cdc_mod.cdc_forward(x, weights, spec), r)
    return max(
        normwise_error(gx, numeric_grad(fn, x, h)),
        normwise_error(gf, numeric_grad(fn, weights.filters, h)),
        normwise_error(gb, numeric_grad(fn, weights.bias, h)),
    )


def check_softmax_loss(rng, dtype=np.float32):
    k1, l = 4, 5
    logits = rng.uniform(-1, 1, (k1, l)).astype(dtype)
    labels = rng.integers(0, k1, l)

    def loss():
        return nn.softmax_loss([nn.framewise_softmax(logits)], [labels])

    g = nn.softmax_loss_grad([nn.framewise_softmax(logits)], [labels])[0]
    h = _step(dtype)
    return normwise_error(g, numeric_grad(loss, logits, h))


CHECKS = {
    "conv3d": check_conv3d,
    "maxpool-spatial": lambda rng, dtype=np.float32: check_maxpool(rng, "spatial", dtype),
    "maxpool-spatiotemporal": lambda rng, dtype=np.float32: check_maxpool(
        rng, "spatiotemporal", dtype
    ),
    "relu": check_relu,
    "dropout-train": check_dropout,
    "cdc": check_cdc,
    "softmax-loss": check_softmax_loss,
}


def run_suite(instances=20, seed=0, tolerance=1e-3, dtype=np.float32):
    """Run every check on ``instances`` random instances.

    Returns a list of (op name, max relative error, passed) rows.
    """
    rows = []
    for name, fn in CHECKS.items():
        worst = 0.0
        for i in range(instances):
            rng = np.random.Generator(np.random.PCG64([seed, i]))
            worst = max(worst, fn(rng, dtype=dtype))
        rows.append((name, worst, worst < tolerance))
    return rows
