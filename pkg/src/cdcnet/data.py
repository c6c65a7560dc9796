"""File formats and the synthetic video benchmark.

Formats (frame indices are 0-based inclusive everywhere):

* binary tensor: magic ``CDCT``, one version byte, u32 rank, u32 dims
  (little-endian), then the raw little-endian float32 payload;
* annotations / proposals / detections: JSON lines; an annotation record is
  ``{"video", "start", "end", "label"}``, a proposal may add ``"score"``, a
  detection always carries one;
* per-video scores: a (K+1, L) binary tensor;
* configs: plain-text ``key=value`` lines, ``#`` comments allowed.

The synthetic generator renders class-specific moving gratings over
background noise.  All classes share the same spatial texture and differ
only in drift velocity (direction and speed), so the class of a single
frame is unidentifiable by construction and only temporal models can
separate them; instance boundaries stay sharp because the texture appears
and disappears with the annotation.
"""

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor
from .evaluation import GroundTruthInstance
from .localization import Detection, ProposalSegment

MAGIC = b"CDCT"
VERSION = 1


class FormatError(ValueError):
    """Malformed file content, carrying its location."""


# -- binary tensors -----------------------------------------------------------


def write_tensor(path, arr):
    arr = np.asarray(arr)
    if arr.ndim == 0:
        raise ValueError("tensors must have at least one dimension")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    dims = tensor.check_shape(arr.shape)
    if any(d > 0xFFFFFFFF for d in dims):
        raise FormatError(f"{path}: dim too large for the format")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("B", VERSION))
        f.write(struct.pack("<I", len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(arr.tobytes())


def read_tensor(path):
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 9:
        raise FormatError(f"{path}: truncated header")
    (version,) = struct.unpack("B", blob[4:5])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (rank,) = struct.unpack("<I", blob[5:9])
    if not 1 <= rank <= 32:
        raise FormatError(f"{path}: implausible rank {rank}")
    header_end = 9 + 4 * rank
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{rank}I", blob[9:header_end])
    try:
        count = tensor.element_count(dims)
    except (ValueError, OverflowError) as e:
        raise FormatError(f"{path}: {e}") from e
    payload = blob[header_end:]
    if len(payload) < 4 * count:
        raise FormatError(
            f"{path}: truncated payload ({len(payload)} of {4 * count} bytes)"
        )
    if len(payload) > 4 * count:
        raise FormatError(f"{path}: {len(payload) - 4 * count} trailing bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


# -- score matrices -----------------------------------------------------------


def save_scores(path, score_matrix):
    """Score matrices are stored class-major: (K+1, L)."""
    write_tensor(path, np.ascontiguousarray(score_matrix.T))


def load_scores(path):
    arr = read_tensor(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: score tensor must be rank 2")
    return np.ascontiguousarray(arr.T)


def load_scores_dir(directory):
    out = {}
    for p in sorted(Path(directory).glob("*.cdct")):
        out[p.stem] = load_scores(p)
    if not out:
        raise FormatError(f"{directory}: no score tensors found")
    return out


# -- JSON-lines records ---------------------------------------------------------


def _read_records(path, required):
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
            missing = required - set(obj)
            if missing:
                raise FormatError(f"{path}:{lineno}: missing {sorted(missing)}")
            records.append((lineno, obj))
    return records


def _check_interval(path, lineno, obj):
    start, end = int(obj["start"]), int(obj["end"])
    if start < 0:
        raise FormatError(f"{path}:{lineno}: negative start {start}")
    if start > end:
        raise FormatError(f"{path}:{lineno}: start {start} > end {end}")
    return start, end


def load_annotations(path, num_classes=None):
    out = []
    for lineno, obj in _read_records(path, {"video", "start", "end", "label"}):
        start, end = _check_interval(path, lineno, obj)
        label = int(obj["label"])
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise FormatError(f"{path}:{lineno}: label {label} out of range")
        out.append(GroundTruthInstance(str(obj["video"]), start, end, label))
    return out


def save_annotations(path, instances):
    with open(path, "w") as f:
        for inst in instances:
            f.write(
                json.dumps(
                    {
                        "video": inst.video_id,
                        "start": inst.start,
                        "end": inst.end,
                        "label": inst.label,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_proposals(path):
    out = []
    for lineno, obj in _read_records(path, {"video", "start", "end"}):
        start, end = _check_interval(path, lineno, obj)
        score = obj.get("score")
        out.append(
            ProposalSegment(
                str(obj["video"]), start, end, None if score is None else float(score)
            )
        )
    return out


def save_proposals(path, proposals):
    with open(path, "w") as f:
        for p in proposals:
            rec = {"video": p.video_id, "start": p.start, "end": p.end}
            if p.score is not None:
                rec["score"] = p.score
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_detections(path):
    out = []
    for lineno, obj in _read_records(path, {"video", "start", "end", "label", "score"}):
        start, end = _check_interval(path, lineno, obj)
        label = int(obj["label"])
        if label < 0:
            raise FormatError(f"{path}:{lineno}: label {label} out of range")
        out.append(Detection(str(obj["video"]), start, end, label, float(obj["score"])))
    return out


def save_detections(path, detections):
    with open(path, "w") as f:
        for d in detections:
            f.write(
                json.dumps(
                    {
                        "video": d.video_id,
                        "start": d.start,
                        "end": d.end,
                        "label": d.label,
                        "score": d.score,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


# -- key=value configs ----------------------------------------------------------


def read_config(path):
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_config(path, mapping):
    with open(path, "w") as f:
        for key in sorted(mapping):
            f.write(f"{key}={mapping[key]}\n")


# -- synthetic benchmark ----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    num_videos: int = 8
    frames: int = 256
    height: int = 16
    width: int = 16
    num_classes: int = 3
    instance_len: tuple = (16, 48)
    instances_per_video: tuple = (2, 4)
    noise: float = 0.1
    amplitude: float = 1.0
    min_gap: int = 8
    # Per-class signature parameters; filled in from the class count when
    # left empty.  All classes share the texture by default and differ only
    # in drift velocity.
    drift: tuple = ()
    texture_cycles: tuple = ()

    def class_params(self):
        if self.drift:
            drift = self.drift
        else:
            drift = tuple(
                (1.0 if k % 2 == 0 else -1.0) * 0.9 * (1.0 + 0.5 * (k // 2))
                for k in range(self.num_classes)
            )
        cycles = self.texture_cycles or ((3.0, 2.0),) * self.num_classes
        if len(drift) != self.num_classes or len(cycles) != self.num_classes:
            raise ValueError("per-class parameter count must match num_classes")
        if len(set(zip(drift, cycles))) != self.num_classes:
            raise ValueError("class signatures must be pairwise distinct")
        return drift, cycles


@dataclass
class Dataset:
    videos: dict
    instances: list
    split: str = "train"
    config: SyntheticConfig | None = None


def render_signature(config, label, length, phase, t0=0):
    """The class's moving grating for ``length`` frames starting at local
    time t0: amplitude * sin(2*pi*(fx*x/W + fy*y/H) + drift*t + phase)."""
    drift, cycles = config.class_params()
    fx, fy = cycles[label]
    x = np.arange(config.width)[None, None, :]
    y = np.arange(config.height)[None, :, None]
    t = (t0 + np.arange(length))[:, None, None]
    arg = 2 * np.pi * (fx * x / config.width + fy * y / config.height)
    wave = config.amplitude * np.sin(arg + drift[label] * t + phase)
    return wave.astype(np.float32)


def _place_instances(rng, config):
    count = int(rng.integers(config.instances_per_video[0], config.instances_per_video[1] + 1))
    lo, hi = config.instance_len
    if lo > config.frames:
        raise ValueError("instance length exceeds video length")
    placed = []
    for _ in range(400):
        if len(placed) == count:
            break
        length = int(rng.integers(lo, hi + 1))
        if length > config.frames:
            raise ValueError("instance length exceeds video length")
        start = int(rng.integers(0, config.frames - length + 1))
        end = start + length - 1
        if all(
            end + config.min_gap < s or e + config.min_gap < start
            for s, e in placed
        ):
            placed.append((start, end))
    return sorted(placed)


def generate_synthetic(config, seed, split="train"):
    """Reproducible synthetic dataset: videos of background noise with
    class-signature instances blended in and exact annotations."""
    rng = np.random.Generator(np.random.PCG64([seed, zlib.crc32(split.encode())]))
    videos = {}
    instances = []
    label_cycle = []
    for v in range(config.num_videos):
        vid = f"{split}{v:03d}"
        frames = (
            rng.normal(0.0, config.noise, (3, config.frames, config.height, config.width))
            if config.noise > 0
            else np.zeros((3, config.frames, config.height, config.width))
        ).astype(np.float32)
        for start, end in _place_instances(rng, config):
            if not label_cycle:
                label_cycle = list(rng.permutation(config.num_classes))
            label = int(label_cycle.pop(0))
            phase = float(rng.uniform(0, 2 * np.pi))
            wave = render_signature(config, label, end - start + 1, phase)
            frames[:, start : end + 1] += wave[None, :, :, :]
            instances.append(GroundTruthInstance(vid, start, end, label))
        videos[vid] = frames
    return Dataset(videos=videos, instances=instances, split=split, config=config)


def jitter_proposals(instances, video_lengths, jitter, seed):
    """Coarse proposals from ground truth: each boundary moves independently
    by up to ``jitter`` of the instance length (so proposals are dilated,
    shrunk and shifted), clamped to the video."""
    rng = np.random.Generator(np.random.PCG64([seed, 0x9E0]))
    out = []
    for inst in instances:
        length = inst.end - inst.start + 1
        amp = jitter * length
        d1 = int(round(rng.uniform(-amp, amp)))
        d2 = int(round(rng.uniform(-amp, amp)))
        last = video_lengths[inst.video_id] - 1
        start = min(max(inst.start + d1, 0), last)
        end = min(max(inst.end + d2, 0), last)
        if start > end:
            start = end
        out.append(ProposalSegment(inst.video_id, start, end))
    return out


# -- dataset directories -----------------------------------------------------------


def write_dataset(directory, dataset):
    directory = Path(directory)
    (directory / "videos").mkdir(parents=True, exist_ok=True)
    for vid, frames in dataset.videos.items():
        write_tensor(directory / "videos" / f"{vid}.cdct", frames)
    save_annotations(directory / "annotations.jsonl", dataset.instances)
    if dataset.config is not None:
        c = dataset.config
        write_config(
            directory / "dataset.cfg",
            {
                "classes": c.num_classes,
                "frames": c.frames,
                "height": c.height,
                "width": c.width,
                "noise": c.noise,
                "split": dataset.split,
            },
        )


def load_dataset(directory):
    directory = Path(directory)
    videos = {}
    for p in sorted((directory / "videos").glob("*.cdct")):
        videos[p.stem] = read_tensor(p)
    if not videos:
        raise FormatError(f"{directory}: no videos found")
    meta = read_config(directory / "dataset.cfg")
    instances = load_annotations(
        directory / "annotations.jsonl", num_classes=int(meta["classes"])
    )
    for inst in instances:
        if inst.video_id not in videos:
            raise FormatError(f"annotation references unknown video {inst.video_id!r}")
        if inst.end >= videos[inst.video_id].shape[1]:
            raise FormatError(f"annotation outside video {inst.video_id!r}")
    return Dataset(
        videos=videos,
        instances=instances,
        split=meta.get("split", "train"),
        config=None,
    ), meta
