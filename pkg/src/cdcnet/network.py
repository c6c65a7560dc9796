"""Network assembly and training.

The architecture is a 3D-conv trunk that halves the temporal length three
times while collapsing space, followed by a stack of joint
conv-deconv (CDC) layers that upsample time back toward the frame rate and
finish in a per-frame softmax over K+1 classes (background last).  When the
CDC stack upsamples by less than the trunk's factor of 8, the coarse
predictions are repeated to per-frame resolution, so the network always maps
(C, L, H, W) windows to an (L, K+1) score matrix.

Training follows plain SGD with momentum and weight decay; every source of
randomness (init, dropout, batch order) is seeded, so runs are reproducible
bit-for-bit on one machine.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cdc as cdc_mod
from . import nn
from .data import read_tensor, write_tensor


@dataclass(frozen=True)
class ConvBlock:
    name: str
    spec: nn.Conv3dSpec  # followed by relu


@dataclass(frozen=True)
class PoolBlock:
    name: str
    pool: str  # key into nn.POOL_KERNELS


@dataclass(frozen=True)
class CdcBlock:
    name: str
    spec: cdc_mod.CdcLayerSpec
    relu: bool = True
    dropout: float = 0.0


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple
    num_classes: int
    window_length: int = 32
    in_channels: int = 3
    input_spatial: tuple = (16, 16)

    def input_shape(self):
        return (self.in_channels, self.window_length) + tuple(self.input_spatial)


GRANULARITIES = (1, 2, 4, 8)


def standard_config(
    num_classes,
    window_length=32,
    input_spatial=(16, 16),
    widths=(8, 16, 32, 32),
    cdc_channels=(32, 32),
    granularity=8,
    dropout=0.15,
):
    """Scaled-down analog of the full architecture.

    The trunk divides the temporal length by 8 (three temporal poolings) and
    space by 8; the three CDC layers upsample time by ``granularity`` in
    total, doubling in the earliest layers first.  Channel widths are free;
    the temporal factor chain is what matters.
    """
    if granularity not in GRANULARITIES:
        raise ValueError(f"granularity must be one of {GRANULARITIES}")
    h, w = input_spatial
    if h % 8 or w % 8:
        raise ValueError("input spatial extents must be divisible by 8")
    w1, w2, w3, w4 = widths
    c1, c2 = cdc_channels
    pools = ("spatial", "spatiotemporal", "spatiotemporal", "temporal")
    layers = []
    trunk_in = [3, w1, w2, w3]
    trunk_out = [w1, w2, w3, w4]
    for i in range(4):
        cin = trunk_in[i]
        layers.append(
            ConvBlock(
                f"conv{i + 1}",
                nn.Conv3dSpec(cin, trunk_out[i], (3, 3, 3), (1, 1, 1), (1, 1, 1)),
            )
        )
        layers.append(PoolBlock(f"pool{i + 1}", pools[i]))
    sp = (h // 8, w // 8)
    ups = int(math.log2(granularity))
    cdc_io = [(w4, c1), (c1, c2), (c2, num_classes + 1)]
    for i, (cin, cout) in enumerate(cdc_io):
        spatial = sp if i == 0 else (1, 1)
        if i < ups:
            kernel, stride, pad = (4,) + spatial, 2, 1
        else:
            kernel, stride, pad = (3,) + spatial, 1, 1
        final = i == len(cdc_io) - 1
        layers.append(
            CdcBlock(
                f"cdc{i + 1}",
                cdc_mod.CdcLayerSpec(cin, cout, kernel, stride, pad),
                relu=not final,
                dropout=0.0 if final else dropout,
            )
        )
    return NetworkConfig(
        layers=tuple(layers),
        num_classes=num_classes,
        window_length=window_length,
        in_channels=3,
        input_spatial=input_spatial,
    )


def infer_shapes(config):
    """Static shape inference; returns per-layer output shapes and the
    repeat factor that brings the logits back to per-frame resolution."""
    shape = config.input_shape()
    shapes = []
    for layer in config.layers:
        if isinstance(layer, ConvBlock):
            shape = layer.spec.out_shape(shape)
        elif isinstance(layer, PoolBlock):
            kernel = nn.POOL_KERNELS[layer.pool]
            for axis, k in enumerate(kernel):
                if shape[1 + axis] % k:
                    raise ValueError(
                        f"{layer.name}: extent {shape[1 + axis]} not divisible by {k}"
                    )
            shape = (
                shape[0],
                shape[1] // kernel[0],
                shape[2] // kernel[1],
                shape[3] // kernel[2],
            )
        elif isinstance(layer, CdcBlock):
            spec = layer.spec
            if shape[0] != spec.in_channels or shape[2:] != tuple(spec.kernel[1:]):
                raise ValueError(
                    f"{layer.name}: input shape {shape} does not fit spec {spec}"
                )
            shape = (spec.out_channels, cdc_mod.cdc_output_length(shape[1], spec), 1, 1)
        else:
            raise TypeError(f"unknown layer {layer!r}")
        shapes.append(shape)
    if shape[0] != config.num_classes + 1 or shape[2:] != (1, 1):
        raise ValueError(f"final shape {shape} is not (K+1, L', 1, 1)")
    if config.window_length % shape[1]:
        raise ValueError(
            f"logit length {shape[1]} does not divide window length"
            f" {config.window_length}"
        )
    return shapes, config.window_length // shape[1]


def _glorot(rng, shape, fan_in, fan_out, dtype):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape).astype(dtype)


class Network:
    def __init__(self, config, params, dtype=np.float32):
        self.config = config
        self.params = params
        self.dtype = dtype
        _, self.label_repeat = infer_shapes(config)

    @property
    def param_layers(self):
        return [l for l in self.config.layers if not isinstance(l, PoolBlock)]

    def forward(self, frames, train=False, seed=0):
        """Run one window; returns the (L, K+1) score matrix and, in train
        mode, the activation cache consumed by backward."""
        if frames.shape != self.config.input_shape():
            raise ValueError(
                f"window shape {frames.shape}, expected {self.config.input_shape()}"
            )
        x = frames
        cache = []
        for li, layer in enumerate(self.config.layers):
            if isinstance(layer, ConvBlock):
                p = self.params[layer.name]
                pre = nn.conv3d_forward(x, p["weights"], p["bias"], layer.spec)
                out = nn.relu(pre)
                cache.append({"x": x, "pre": pre})
            elif isinstance(layer, PoolBlock):
                out, idx = nn.maxpool_forward(x, layer.pool)
                cache.append({"idx": idx, "in_shape": x.shape})
            else:
                p = self.params[layer.name]
                w = cdc_mod.CdcWeights(p["weights"], p["bias"])
                pre = cdc_mod.cdc_forward(x, w, layer.spec)
                out = nn.relu(pre) if layer.relu else pre
                rec = {"x": x, "pre": pre, "mask": None}
                if layer.dropout and train:
                    drop_seed = int(
                        np.random.SeedSequence([seed, li]).generate_state(1)[0]
                    )
                    out, mask = nn.dropout(out, layer.dropout, train=True, seed=drop_seed)
                    rec["mask"] = mask
                cache.append(rec)
            x = out
        logits = x.reshape(x.shape[0], x.shape[1])
        if self.label_repeat > 1:
            full = np.repeat(logits, self.label_repeat, axis=1)
        else:
            full = logits
        scores = nn.framewise_softmax(full)
        return scores, (cache if train else None)

    def backward(self, grad_logits, cache):
        """grad_logits: (K+1, L) gradient at the per-frame logits.  Returns
        {layer name: {param name: grad}}."""
        r = self.label_repeat
        g = grad_logits
        if r > 1:
            g = grad_logits.reshape(grad_logits.shape[0], -1, r).sum(axis=2)
        g = np.ascontiguousarray(g, dtype=self.dtype).reshape(g.shape + (1, 1))
        grads = {}
        for layer, rec in zip(reversed(self.config.layers), reversed(cache)):
            if isinstance(layer, ConvBlock):
                g = nn.relu_backward(g, rec["pre"])
                g, gw, gb = nn.conv3d_backward(g, rec["x"], self.params[layer.name]["weights"], layer.spec)
                grads[layer.name] = {"weights": gw, "bias": gb}
            elif isinstance(layer, PoolBlock):
                g = nn.maxpool_backward(g, rec["idx"], rec["in_shape"])
            else:
                if rec["mask"] is not None:
                    g = nn.dropout_backward(g, rec["mask"], layer.dropout)
                if layer.relu:
                    g = nn.relu_backward(g, rec["pre"])
                w = cdc_mod.CdcWeights(*[self.params[layer.name][k] for k in ("weights", "bias")])
                g, gf, gb = cdc_mod.cdc_backward(g, rec["x"], w, layer.spec)
                grads[layer.name] = {"weights": gf, "bias": gb}
        return grads


def build_network(config, seed=0, transplant=None, dtype=np.float32):
    """Allocate all parameters: seeded uniform in +-sqrt(6/(fan_in+fan_out)),
    except layers named in ``transplant`` (mapping name -> (fc_weights,
    fc_bias)), which are adapted from flat FC weights."""
    infer_shapes(config)
    transplant = transplant or {}
    params = {}
    for li, layer in enumerate(config.layers):
        if isinstance(layer, PoolBlock):
            continue
        rng = np.random.Generator(np.random.PCG64([seed, li]))
        if isinstance(layer, ConvBlock):
            s = layer.spec
            ksize = math.prod(s.kernel)
            shape = (s.out_channels, s.in_channels) + tuple(s.kernel)
            params[layer.name] = {
                "weights": _glorot(rng, shape, s.in_channels * ksize, s.out_channels * ksize, dtype),
                "bias": np.zeros(s.out_channels, dtype=dtype),
            }
        else:
            s = layer.spec
            if layer.name in transplant:
                fc_w, fc_b = transplant[layer.name]
                w = cdc_mod.init_cdc_from_fc(
                    np.asarray(fc_w, dtype=dtype),
                    np.asarray(fc_b, dtype=dtype),
                    s.kernel[0],
                    (s.in_channels,) + tuple(s.kernel[1:]),
                )
                expected = (s.out_channels, s.in_channels) + tuple(s.kernel)
                if w.filters.shape != expected:
                    raise ValueError(
                        f"transplanted weights for {layer.name} have shape"
                        f" {w.filters.shape}, expected {expected}"
                    )
                params[layer.name] = {"weights": w.filters, "bias": w.bias}
            else:
                ksize = math.prod(s.kernel)
                shape = (s.out_channels, s.in_channels) + tuple(s.kernel)
                params[layer.name] = {
                    "weights": _glorot(rng, shape, s.in_channels * ksize, s.out_channels * ksize, dtype),
                    "bias": np.zeros(s.out_channels, dtype=dtype),
                }
    unknown = set(transplant) - {l.name for l in config.layers}
    if unknown:
        raise ValueError(f"transplant targets {sorted(unknown)} not in the network")
    return Network(config, params, dtype=dtype)


# -- optimizer ----------------------------------------------------------------


@dataclass
class SgdState:
    lr: dict
    momentum: float = 0.9
    weight_decay: float = 0.005
    velocity: dict = field(default_factory=dict)


def make_sgd(net, lr=1e-5, lr_final=1e-4, momentum=0.9, weight_decay=0.005):
    """Per-layer learning rates: ``lr`` everywhere, ``lr_final`` on the last
    (randomly initialized, class-specific) CDC layer."""
    names = [l.name for l in net.param_layers]
    rates = {n: lr for n in names}
    rates[names[-1]] = lr_final
    velocity = {
        n: {k: np.zeros_like(v) for k, v in net.params[n].items()} for n in names
    }
    return SgdState(lr=rates, momentum=momentum, weight_decay=weight_decay, velocity=velocity)


def sgd_update(net, grads, state):
    """v <- momentum*v - lr*(grad + weight_decay*param); param <- param + v."""
    for layer in net.param_layers:
        name = layer.name
        lr = state.lr[name]
        for key, p in net.params[name].items():
            g = grads[name][key].astype(np.float64)
            v = state.velocity[name][key].astype(np.float64)
            v = state.momentum * v - lr * (g + state.weight_decay * p.astype(np.float64))
            state.velocity[name][key] = v.astype(p.dtype)
            net.params[name][key] = (p.astype(np.float64) + v).astype(p.dtype)


# -- windows ------------------------------------------------------------------


@dataclass
class VideoWindow:
    frames: np.ndarray  # (C, L, H, W)
    labels: np.ndarray | None  # (L,) class indices, background = K
    valid: np.ndarray  # (L,) bool; False on padded tail frames
    video_id: str = ""
    start: int = 0


def frame_labels(num_frames, instances, num_classes):
    """Per-frame labels from inclusive instance intervals; background = K."""
    labels = np.full(num_frames, num_classes, dtype=np.int64)
    for inst in instances:
        if not 0 <= inst.start <= inst.end < num_frames:
            raise ValueError(
                f"instance [{inst.start}, {inst.end}] outside video of"
                f" {num_frames} frames"
            )
        labels[inst.start : inst.end + 1] = inst.label
    return labels


def slice_windows(frames, window_length, labels=None, video_id=""):
    """Non-overlapping windows at offsets 0, L, 2L, ...; the final partial
    window is padded by repeating the last frame, with the pad flagged."""
    total = frames.shape[1]
    if total == 0:
        raise ValueError("empty video")
    windows = []
    for start in range(0, total, window_length):
        stop = min(start + window_length, total)
        chunk = frames[:, start:stop]
        valid = np.ones(window_length, dtype=bool)
        if stop - start < window_length:
            pad = window_length - (stop - start)
            chunk = np.concatenate([chunk, np.repeat(chunk[:, -1:], pad, axis=1)], axis=1)
            valid[stop - start :] = False
        wlabels = None
        if labels is not None:
            wlabels = labels[start:stop]
            if wlabels.size < window_length:
                wlabels = np.concatenate(
                    [wlabels, np.full(window_length - wlabels.size, wlabels[-1])]
                )
        windows.append(
            VideoWindow(
                frames=np.ascontiguousarray(chunk),
                labels=wlabels,
                valid=valid,
                video_id=video_id,
                start=start,
            )
        )
    return windows


def slice_training_windows(frames, instances, window_length, num_classes, video_id=""):
    """Training windows: sliced without overlap, labeled per frame, and kept
    only when at least one (non-padded) frame belongs to an action."""
    labels = frame_labels(frames.shape[1], instances, num_classes)
    windows = slice_windows(frames, window_length, labels=labels, video_id=video_id)
    return [
        w for w in windows if np.any((w.labels != num_classes) & w.valid)
    ]


def predict_video(net, frames, video_id=""):
    """Dense per-frame scores for a whole video: eval-mode forward over
    non-overlapping windows, padded rows dropped."""
    rows = []
    for w in slice_windows(frames, net.config.window_length, video_id=video_id):
        scores, _ = net.forward(w.frames, train=False)
        rows.append(scores[w.valid])
    return np.concatenate(rows, axis=0)


# -- training -----------------------------------------------------------------


def train_step(net, batch, sgd, seed=0):
    """One SGD step over a batch of windows; returns the batch loss."""
    if not batch:
        raise ValueError("empty batch")
    scores, labels, valids, caches = [], [], [], []
    for i, w in enumerate(batch):
        wseed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        p, cache = net.forward(w.frames, train=True, seed=wseed)
        scores.append(p)
        labels.append(w.labels)
        valids.append(w.valid)
        caches.append(cache)
    loss = nn.softmax_loss(scores, labels, valids)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite training loss {loss}")
    glogits = nn.softmax_loss_grad(scores, labels, valids)
    total = None
    for g, cache in zip(glogits, caches):
        grads = net.backward(g, cache)
        if total is None:
            total = grads
        else:
            for name, layer_grads in grads.items():
                for key, val in layer_grads.items():
                    total[name][key] = total[name][key] + val
    sgd_update(net, total, sgd)
    return float(loss)


def train(net, windows, sgd, steps, batch_size=8, seed=0, log=None):
    """Seeded-permutation epochs over ``windows``; ``log`` receives
    (step, loss) pairs."""
    if not windows:
        raise ValueError("no training windows")
    rng = np.random.Generator(np.random.PCG64([seed, 0xBA7C4]))
    order = []
    losses = []
    for step in range(steps):
        while len(order) < batch_size:
            order.extend(rng.permutation(len(windows)).tolist())
        picks = [windows[order.pop(0)] for _ in range(batch_size)]
        loss = train_step(net, picks, sgd, seed=int(np.random.SeedSequence([seed, 1, step]).generate_state(1)[0]))
        losses.append(loss)
        if log is not None:
            log(step, loss)
    return losses


def frame_accuracy(net, windows):
    """Eval-mode per-frame argmax accuracy over the valid frames."""
    hit = total = 0
    for w in windows:
        scores, _ = net.forward(w.frames, train=False)
        pred = scores.argmax(axis=1)
        hit += int(np.sum((pred == w.labels) & w.valid))
        total += int(w.valid.sum())
    return hit / total


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(net, directory):
    """Manifest (one plain-text record per line) plus one tensor file per
    parameter."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = net.config
    lines = [
        "net version=1"
        f" num_classes={cfg.num_classes}"
        f" window_length={cfg.window_length}"
        f" in_channels={cfg.in_channels}"
        f" height={cfg.input_spatial[0]}"
        f" width={cfg.input_spatial[1]}"
    ]
    for layer in cfg.layers:
        if isinstance(layer, PoolBlock):
            lines.append(f"layer name={layer.name} kind=pool pool={layer.pool}")
            continue
        wfile = f"{layer.name}.weights.cdct"
        bfile = f"{layer.name}.bias.cdct"
        s = layer.spec
        if isinstance(layer, ConvBlock):
            lines.append(
                f"layer name={layer.name} kind=conv in={s.in_channels}"
                f" out={s.out_channels} kernel={','.join(map(str, s.kernel))}"
                f" stride={','.join(map(str, s.stride))}"
                f" padding={','.join(map(str, s.padding))}"
                f" weights={wfile} bias={bfile}"
            )
        else:
            lines.append(
                f"layer name={layer.name} kind=cdc in={s.in_channels}"
                f" out={s.out_channels} kernel={','.join(map(str, s.kernel))}"
                f" stride={s.temporal_stride} padding={s.temporal_padding}"
                f" relu={int(layer.relu)} dropout={layer.dropout!r}"
                f" weights={wfile} bias={bfile}"
            )
        write_tensor(directory / wfile, net.params[layer.name]["weights"])
        write_tensor(directory / bfile, net.params[layer.name]["bias"])
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def _fields(line):
    head, *rest = line.split()
    return head, dict(tok.split("=", 1) for tok in rest)


def load_checkpoint(directory):
    directory = Path(directory)
    text = (directory / "manifest.txt").read_text().splitlines()
    head, net_kv = _fields(text[0])
    if head != "net":
        raise ValueError("manifest does not start with a net record")
    layers = []
    params = {}
    for line in text[1:]:
        if not line.strip():
            continue
        head, kv = _fields(line)
        if head != "layer":
            raise ValueError(f"unexpected manifest record {head!r}")
        name, kind = kv["name"], kv["kind"]
        if kind == "pool":
            layers.append(PoolBlock(name, kv["pool"]))
            continue
        kernel = tuple(int(v) for v in kv["kernel"].split(","))
        if kind == "conv":
            spec = nn.Conv3dSpec(
                int(kv["in"]),
                int(kv["out"]),
                kernel,
                tuple(int(v) for v in kv["stride"].split(",")),
                tuple(int(v) for v in kv["padding"].split(",")),
            )
            layers.append(ConvBlock(name, spec))
        elif kind == "cdc":
            spec = cdc_mod.CdcLayerSpec(
                int(kv["in"]), int(kv["out"]), kernel, int(kv["stride"]), int(kv["padding"])
            )
            layers.append(
                CdcBlock(name, spec, relu=bool(int(kv["relu"])), dropout=float(kv["dropout"]))
            )
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        params[name] = {
            "weights": read_tensor(directory / kv["weights"]),
            "bias": read_tensor(directory / kv["bias"]),
        }
    config = NetworkConfig(
        layers=tuple(layers),
        num_classes=int(net_kv["num_classes"]),
        window_length=int(net_kv["window_length"]),
        in_channels=int(net_kv["in_channels"]),
        input_spatial=(int(net_kv["height"]), int(net_kv["width"])),
    )
    return Network(config, params)
