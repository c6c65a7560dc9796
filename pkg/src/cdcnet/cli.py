"""Command-line pipeline: synthetic data, training, dense prediction,
boundary refinement, and the two evaluations, plus the gradient-check and
benchmark harnesses.

Every command takes an explicit ``--seed`` with a fixed default, so identical
command lines produce byte-identical outputs.
"""

import argparse
import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import data, evaluation, gradcheck, localization, network

DEFAULT_SEED = 1

GEN_DEFAULTS = {
    "train_videos": 8,
    "test_videos": 4,
    "frames": 256,
    "classes": 3,
    "height": 16,
    "width": 16,
    "noise": 4.8,
    "amplitude": 48.0,
    "min_len": 16,
    "max_len": 48,
    "min_instances": 2,
    "max_instances": 4,
    "proposal_jitter": 0.25,
}


def _gen_value(args, config, key, cast):
    flag = getattr(args, key)
    if flag is not None:
        return flag
    if key in config:
        return cast(config[key])
    return GEN_DEFAULTS[key]


def cmd_gen_data(args):
    config = data.read_config(args.config) if args.config else {}
    v = {
        key: _gen_value(args, config, key, float if key in
                        ("noise", "amplitude", "proposal_jitter") else int)
        for key in GEN_DEFAULTS
    }
    out = Path(args.out)
    for split, count in (("train", v["train_videos"]), ("test", v["test_videos"])):
        cfg = data.SyntheticConfig(
            num_videos=int(count),
            frames=int(v["frames"]),
            height=int(v["height"]),
            width=int(v["width"]),
            num_classes=int(v["classes"]),
            instance_len=(int(v["min_len"]), int(v["max_len"])),
            instances_per_video=(int(v["min_instances"]), int(v["max_instances"])),
            noise=float(v["noise"]),
            amplitude=float(v["amplitude"]),
        )
        ds = data.generate_synthetic(cfg, seed=args.seed, split=split)
        data.write_dataset(out / split, ds)
        if split == "test":
            lengths = {vid: f.shape[1] for vid, f in ds.videos.items()}
            props = data.jitter_proposals(
                ds.instances, lengths, float(v["proposal_jitter"]), seed=args.seed
            )
            data.save_proposals(out / split / "proposals.jsonl", props)
        print(f"{split}: {len(ds.videos)} videos, {len(ds.instances)} instances")
    return 0


def _parse_ints(text):
    return tuple(int(v) for v in text.split(","))


def cmd_train(args):
    dataset, meta = data.load_dataset(args.data)
    num_classes = int(meta["classes"])
    config = network.standard_config(
        num_classes=num_classes,
        window_length=args.window,
        input_spatial=(int(meta["height"]), int(meta["width"])),
        widths=_parse_ints(args.widths),
        cdc_channels=_parse_ints(args.cdc_channels),
        granularity=int(args.granularity.lstrip("x")),
        dropout=args.dropout,
    )
    transplant = {}
    for item in args.transplant or []:
        name, _, files = item.partition("=")
        wfile, _, bfile = files.partition(":")
        if not (name and wfile and bfile):
            raise ValueError(f"--transplant expects LAYER=WEIGHTS:BIAS, got {item!r}")
        transplant[name] = (data.read_tensor(wfile), data.read_tensor(bfile))
    net = network.build_network(config, seed=args.seed, transplant=transplant or None)
    windows = []
    for vid in sorted(dataset.videos):
        insts = [i for i in dataset.instances if i.video_id == vid]
        windows.extend(
            network.slice_training_windows(
                dataset.videos[vid], insts, args.window, num_classes, vid
            )
        )
    sgd = network.make_sgd(
        net,
        lr=args.lr,
        lr_final=args.lr_final,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
    )
    log_rows = []
    losses = network.train(
        net,
        windows,
        sgd,
        steps=args.steps,
        batch_size=args.batch,
        seed=args.seed,
        log=lambda step, loss: log_rows.append((step, loss)),
    )
    network.save_checkpoint(net, args.out)
    if args.loss_log:
        with open(args.loss_log, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "loss"])
            writer.writerows(log_rows)
    acc = network.frame_accuracy(net, windows)
    print(
        f"trained {args.steps} steps on {len(windows)} windows;"
        f" final loss {losses[-1]:.4f}, train frame accuracy {acc:.4f}"
    )
    return 0


def cmd_predict(args):
    net = network.load_checkpoint(args.checkpoint)
    dataset, _ = data.load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = sorted(dataset.videos.items())

    def score(item):
        vid, frames = item
        return vid, network.predict_video(net, frames, vid)

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(score, items))
    for vid, scores in results:
        data.save_scores(out / f"{vid}.cdct", scores)
    print(f"scored {len(results)} videos -> {out}")
    return 0


def cmd_refine(args):
    scores = data.load_scores_dir(args.scores)
    proposals = data.load_proposals(args.proposals)
    num_classes = next(iter(scores.values())).shape[1] - 1
    denominator = "original" if args.score_denominator == "algorithm1" else "refined"

    def refine_one(p):
        if p.video_id not in scores:
            raise ValueError(f"no scores for video {p.video_id!r}")
        table = scores[p.video_id]
        params = localization.RefineParams(
            alpha=args.alpha, video_start=0, video_end=table.shape[0] - 1
        )
        if args.no_refine:
            return localization.classify_proposals([p], scores, num_classes) or [None]
        return [
            localization.refine_boundaries(
                p, table, params, num_classes, score_denominator=denominator
            )
        ]

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = [d for batch in pool.map(refine_one, proposals) for d in batch]

    by_video = {}
    for p, det in zip(proposals, results):
        by_video.setdefault(p.video_id, []).append(det)
    detections = []
    for vid, dets in by_video.items():
        detections.extend(localization.nms([d for d in dets if d], args.nms_iou))
    data.save_detections(args.out, detections)
    print(f"{len(detections)} detections from {len(proposals)} proposals -> {args.out}")
    return 0


def cmd_eval_frame(args):
    scores = data.load_scores_dir(args.scores)
    num_classes = next(iter(scores.values())).shape[1] - 1
    instances = data.load_annotations(args.annotations, num_classes=num_classes)
    report = evaluation.per_frame_map(scores, instances, num_classes)
    print(report.to_table("per-frame labeling"))
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return 0


def cmd_eval_loc(args):
    detections = data.load_detections(args.detections)
    instances = data.load_annotations(args.annotations)
    num_classes = max((i.label for i in instances), default=0) + 1
    if args.classes:
        num_classes = args.classes
    if args.average_map:
        avg, reports = evaluation.average_map(detections, instances, num_classes)
        for t in sorted(reports):
            print(f"mAP@{t:.2f} = {reports[t].map:.4f}")
        print(f"average mAP over [0.50, 0.95] = {avg:.4f}")
        if args.out:
            blob = {f"{t:.2f}": reports[t].map for t in sorted(reports)}
            blob["average_map"] = avg
            import json

            Path(args.out).write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")
        return 0
    report = evaluation.localization_map(detections, instances, args.iou, num_classes)
    print(report.to_table(f"temporal localization @ IoU {args.iou}"))
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return 0


def cmd_gradcheck(args):
    rows = gradcheck.run_suite(
        instances=args.instances, seed=args.seed, tolerance=args.tolerance
    )
    print(f"{'operation':24s} {'max rel err':>12s}  result")
    print("-" * 46)
    ok = True
    for name, err, passed in rows:
        ok &= passed
        print(f"{name:24s} {err:12.3e}  {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 2


def cmd_bench(args):
    rows = bench_mod.benchmark(min_time=args.min_time)
    print(bench_mod.format_table(rows))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cdcnet",
        description="frame-level temporal action localization pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value file; flags override it")
    for key, default in GEN_DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        p.add_argument(flag, type=type(default), default=None,
                       help=f"default {default}")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a network on a dataset split")
    p.add_argument("--data", required=True, help="train split directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--window", type=int, default=32)
    p.add_argument("--granularity", choices=["x1", "x2", "x4", "x8"], default="x8",
                   help="total temporal upsampling of the CDC stack")
    p.add_argument("--widths", default="8,16,32,32")
    p.add_argument("--cdc-channels", default="32,32")
    p.add_argument("--dropout", type=float, default=0.15)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--lr-final", type=float, default=1e-4,
                   help="learning rate of the final, randomly initialized layer")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.005)
    p.add_argument("--loss-log", help="CSV file receiving step,loss")
    p.add_argument("--transplant", action="append",
                   help="LAYER=WEIGHTS:BIAS tensor files with flat FC weights")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="dense per-frame scores for a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="directory for score tensors")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("refine", help="refine proposal boundaries into detections")
    p.add_argument("--scores", required=True, help="score tensor directory")
    p.add_argument("--proposals", required=True, help="proposals JSON-lines file")
    p.add_argument("--out", required=True, help="detections JSON-lines file")
    p.add_argument("--alpha", type=float, default=0.125,
                   help="boundary extension fraction")
    p.add_argument("--nms-iou", type=float, default=0.4)
    p.add_argument("--score-denominator", choices=["refined", "algorithm1"],
                   default="refined",
                   help="divide summed scores by the refined or original length")
    p.add_argument("--no-refine", action="store_true",
                   help="classify proposals but keep their boundaries")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval-frame", help="per-frame labeling mAP")
    p.add_argument("--scores", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", help="JSON report file")
    p.set_defaults(func=cmd_eval_frame)

    p = sub.add_parser("eval-loc", help="temporal localization mAP")
    p.add_argument("--detections", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--classes", type=int, help="override the class count")
    p.add_argument("--average-map", action="store_true",
                   help="sweep IoU 0.50..0.95 and report the mean")
    p.add_argument("--out", help="JSON report file")
    p.set_defaults(func=cmd_eval_loc)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="kernel throughput per backend")
    p.add_argument("--min-time", type=float, default=0.2,
                   help="seconds of repetitions per measurement")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
