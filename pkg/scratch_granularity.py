import time

import numpy as np

from cdcnet import evaluation, localization, network
from cdcnet.data import SyntheticConfig, generate_synthetic, jitter_proposals

cfg = SyntheticConfig(amplitude=48.0, noise=4.8)
train_ds = generate_synthetic(cfg, seed=100, split="train")
test_ds = generate_synthetic(
    SyntheticConfig(num_videos=4, amplitude=48.0, noise=4.8), seed=100, split="test"
)
wins = []
for vid, frames in train_ds.videos.items():
    insts = [i for i in train_ds.instances if i.video_id == vid]
    wins.extend(network.slice_training_windows(frames, insts, 32, 3, vid))
lengths = {v: f.shape[1] for v, f in test_ds.videos.items()}
props = jitter_proposals(test_ds.instances, lengths, 0.25, seed=7)
by_video = {}
for p in props:
    by_video.setdefault(p.video_id, []).append(p)


def run(granularity, seed, steps=400):
    ncfg = network.standard_config(num_classes=3, granularity=granularity)
    net = network.build_network(ncfg, seed=seed)
    sgd = network.make_sgd(net)
    network.train(net, wins, sgd, steps=steps, batch_size=8, seed=seed)
    scores = {v: network.predict_video(net, f, v) for v, f in test_ds.videos.items()}
    dets = []
    for v, plist in by_video.items():
        cand = [
            localization.refine_boundaries(
                p,
                scores[v],
                localization.RefineParams(alpha=0.125, video_end=lengths[v] - 1),
                3,
            )
            for p in plist
        ]
        dets.extend(localization.nms([d for d in cand if d], 0.4))
    acc = network.frame_accuracy(net, wins)
    return evaluation.localization_map(dets, test_ds.instances, 0.5, 3).map, acc


t = time.time()
for g in (1, 2, 4, 8):
    vals = []
    for s in (0, 1, 2):
        m, acc = run(g, s)
        vals.append(round(m, 4))
        print(f"  g=x{g} seed={s}: mAP@0.5 {m:.4f} train-acc {acc:.4f} ({time.time()-t:.0f}s)", flush=True)
    print(f"granularity x{g}: median {np.median(vals):.4f} {vals}", flush=True)
