"""Throughput benchmark for the hot kernels, comparing every available
backend on the shapes the standard network actually runs."""

import time

import numpy as np

from . import cdc as cdc_mod
from . import kernels, network, nn


def _time_call(fn, min_time=0.2, max_reps=200):
    fn()  # warm up
    reps = 0
    start = time.perf_counter()
    while True:
        fn()
        reps += 1
        elapsed = time.perf_counter() - start
        if elapsed >= min_time or reps >= max_reps:
            return elapsed / reps


def benchmark(window_length=32, min_time=0.2):
    """Returns a list of (operation, backend, seconds/call, windows/s,
    frames/s) rows."""
    rng = np.random.Generator(np.random.PCG64(0))
    rows = []

    conv_spec = nn.Conv3dSpec(3, 8, (3, 3, 3), (1, 1, 1), (1, 1, 1))
    cx = rng.uniform(-1, 1, (3, window_length, 16, 16)).astype(np.float32)
    cw = rng.uniform(-1, 1, (8, 3, 3, 3, 3)).astype(np.float32)
    cb = rng.uniform(-1, 1, 8).astype(np.float32)
    cy = nn.conv3d_forward(cx, cw, cb, conv_spec)
    cg = rng.uniform(-1, 1, cy.shape).astype(np.float32)

    cdc_spec = cdc_mod.CdcLayerSpec(32, 32, (4, 2, 2), 2, 1)
    dx = rng.uniform(-1, 1, (32, window_length // 8, 2, 2)).astype(np.float32)
    dw = cdc_mod.CdcWeights(
        filters=rng.uniform(-1, 1, (32, 32, 4, 2, 2)).astype(np.float32),
        bias=rng.uniform(-1, 1, 32).astype(np.float32),
    )
    dy = cdc_mod.cdc_forward(dx, dw, cdc_spec)
    dg = rng.uniform(-1, 1, dy.shape).astype(np.float32)

    net = network.build_network(network.standard_config(num_classes=3), seed=0)
    frames = rng.uniform(-1, 1, net.config.input_shape()).astype(np.float32)

    cases = [
        ("conv3d-forward", lambda: nn.conv3d_forward(cx, cw, cb, conv_spec)),
        ("conv3d-backward", lambda: nn.conv3d_backward(cg, cx, cw, conv_spec)),
        ("cdc-forward", lambda: cdc_mod.cdc_forward(dx, dw, cdc_spec)),
        ("cdc-backward", lambda: cdc_mod.cdc_backward(dg, dx, dw, cdc_spec)),
        ("network-eval", lambda: net.forward(frames, train=False)),
    ]
    for backend in kernels.available_backends():
        with kernels.use_backend(backend):
            for name, fn in cases:
                sec = _time_call(fn, min_time=min_time)
                rows.append((name, backend, sec, 1.0 / sec, window_length / sec))
    return rows


def format_table(rows):
    lines = [
        f"{'operation':18s} {'backend':8s} {'ms/call':>10s} {'windows/s':>12s} {'frames/s':>12s}",
        "-" * 64,
    ]
    for name, backend, sec, wps, fps in rows:
        lines.append(
            f"{name:18s} {backend:8s} {sec * 1e3:10.3f} {wps:12.1f} {fps:12.1f}"
        )
    return "\n".join(lines)
