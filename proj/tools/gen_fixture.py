#!/usr/bin/env python3
"""Generates the committed test fixture: a small trained CNN plus datasets.

Produces, under --out (default: fixture/ next to the repo root):
  model.json / model.bin   float model container
  calib/data.tensor        128 unlabeled calibration images
  eval/data.tensor+labels  1000 labeled evaluation images
  golden/data.tensor       reference logits for the first 16 eval images

The classification task is synthetic: four smooth random templates over a
3x16x16 canvas, each sample a scaled template plus Gaussian pixel noise. The
network covers every graph feature the toolkit handles: a grouped
convolution, batch normalization (to be folded), a residual element-wise add
whose identity branch carries no rescaling op, a max pool placed after that
add, a two-branch concat, an average pool, and a fully connected head.

Deterministic: fixed seeds, CPU only, single thread.
"""

import argparse
import json
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

SEED = 7
NOISE_SIGMA = 0.18
NUM_CLASSES = 4
IMAGE_SHAPE = (3, 16, 16)
TRAIN_COUNT = 16384
EVAL_COUNT = 1000
CALIB_COUNT = 128
GOLDEN_COUNT = 16


# --- synthetic task ---------------------------------------------------------

def make_templates(rng):
    """Four smooth unit-norm templates: 4x4 noise upsampled bilinearly."""
    coarse = rng.normal(size=(NUM_CLASSES, 3, 4, 4)).astype(np.float32)
    t = torch.from_numpy(coarse)
    smooth = F.interpolate(t, size=(16, 16), mode="bilinear", align_corners=False)
    smooth = smooth.numpy()
    for k in range(NUM_CLASSES):
        smooth[k] /= np.linalg.norm(smooth[k])
    return smooth


def make_split(rng, templates, count):
    labels = np.arange(count) % NUM_CLASSES
    rng.shuffle(labels)
    amps = rng.uniform(0.8, 1.2, size=count).astype(np.float32)
    noise = rng.normal(scale=NOISE_SIGMA, size=(count, *IMAGE_SHAPE)).astype(np.float32)
    images = templates[labels] * amps[:, None, None, None] + noise
    return images.astype(np.float32), labels.astype(np.int64)


# --- the network ------------------------------------------------------------

class FixtureNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.c1 = nn.Conv2d(3, 8, 3, padding=1)
        self.b1 = nn.BatchNorm2d(8)
        self.c2 = nn.Conv2d(8, 8, 3, padding=1, groups=2)
        self.b2 = nn.BatchNorm2d(8)
        self.c3a = nn.Conv2d(8, 8, 1)
        self.c3b = nn.Conv2d(8, 8, 3, padding=1)
        self.fc = nn.Linear(16, NUM_CLASSES)

    def forward(self, x):
        x = F.relu(self.b1(self.c1(x)))
        x = F.max_pool2d(x, 2, 2)                     # 8 x 8 x 8
        y = F.relu(self.b2(self.c2(x)))
        x = x + y                                     # residual join
        x = F.max_pool2d(x, 2, 2)                     # pool after the join
        a = F.relu(self.c3a(x))
        b = F.relu(self.c3b(x))
        x = torch.cat([a, b], dim=1)                  # 16 x 4 x 4
        x = F.avg_pool2d(x, 4, 4)                     # 16 x 1 x 1
        return self.fc(torch.flatten(x, 1))


def train(net, images, labels):
    opt = torch.optim.Adam(net.parameters(), lr=3e-3, weight_decay=1e-4)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=2500, gamma=0.3)
    x = torch.from_numpy(images)
    y = torch.from_numpy(labels)
    net.train()
    steps, batch = 4000, 64
    order = torch.randperm(len(x))
    for step in range(steps):
        idx = order[(step * batch) % len(x):(step * batch) % len(x) + batch]
        if len(idx) < batch:
            order = torch.randperm(len(x))
            idx = order[:batch]
        opt.zero_grad()
        loss = F.cross_entropy(net(x[idx]), y[idx])
        loss.backward()
        opt.step()
        sched.step()
    net.eval()


def accuracy(net, images, labels):
    with torch.no_grad():
        logits = net(torch.from_numpy(images))
    return float((logits.argmax(1).numpy() == labels).mean())


# --- container writing ------------------------------------------------------

def node(id_, kind, inputs, outputs, **attrs):
    n = {
        "id": id_, "kind": kind, "inputs": inputs, "outputs": outputs,
        "kernel": 0, "stride": 1, "pad": 0, "groups": 1, "axis": 0,
        "eps": 0.0, "factor": 1.0, "shape": [], "tensors": {},
    }
    n.update(attrs)
    return n


def write_model(net, out_dir):
    s = {k: v.detach().numpy().astype(np.float32) for k, v in net.state_dict().items()}

    tensors = {}

    def slot(node_id, name, arr):
        tensors[f"{node_id}.{name}"] = np.ascontiguousarray(arr, dtype=np.float32)
        return f"{node_id}.{name}"

    def conv(id_, src, w, b, **geom):
        refs = {"weight": slot(id_, "weight", w), "bias": slot(id_, "bias", b)}
        return node(id_, "convolution", [src], [f"{id_}_out"],
                    kernel=w.shape[2], tensors=refs, **geom)

    def bn(id_, src, prefix):
        refs = {
            "bn_mean": slot(id_, "bn_mean", s[f"{prefix}.running_mean"]),
            "bn_var": slot(id_, "bn_var", s[f"{prefix}.running_var"]),
            "bn_gamma": slot(id_, "bn_gamma", s[f"{prefix}.weight"]),
            "bn_beta": slot(id_, "bn_beta", s[f"{prefix}.bias"]),
        }
        return node(id_, "batch_norm", [src], [f"{id_}_out"], eps=1e-5, tensors=refs)

    nodes = [
        node("in", "input", [], ["in_out"], shape=[3, 16, 16]),
        conv("c1", "in_out", s["c1.weight"], s["c1.bias"], pad=1),
        bn("b1", "c1_out", "b1"),
        node("r1", "relu", ["b1_out"], ["r1_out"]),
        node("p1", "max_pool", ["r1_out"], ["p1_out"], kernel=2, stride=2),
        conv("c2", "p1_out", s["c2.weight"], s["c2.bias"], pad=1, groups=2),
        bn("b2", "c2_out", "b2"),
        node("r2", "relu", ["b2_out"], ["r2_out"]),
        node("add", "eltwise_add", ["p1_out", "r2_out"], ["add_out"]),
        node("p2", "max_pool", ["add_out"], ["p2_out"], kernel=2, stride=2),
        conv("c3a", "p2_out", s["c3a.weight"], s["c3a.bias"]),
        node("r3a", "relu", ["c3a_out"], ["r3a_out"]),
        conv("c3b", "p2_out", s["c3b.weight"], s["c3b.bias"], pad=1),
        node("r3b", "relu", ["c3b_out"], ["r3b_out"]),
        node("cat", "concat", ["r3a_out", "r3b_out"], ["cat_out"], axis=0),
        node("ap", "avg_pool", ["cat_out"], ["ap_out"], kernel=4, stride=4),
        node("fc", "inner_product", ["ap_out"], ["fc_out"],
             tensors={"weight": slot("fc", "weight", s["fc.weight"]),
                      "bias": slot("fc", "bias", s["fc.bias"])}),
        node("out", "output", ["fc_out"], []),
    ]

    blob = bytearray()
    table = {}
    for name in sorted(tensors):
        arr = tensors[name]
        raw = arr.astype("<f4").tobytes()
        table[name] = {
            "dtype": "f32", "shape": list(arr.shape),
            "offset": len(blob), "bytes": len(raw),
        }
        blob.extend(raw)

    manifest = {
        "blob": "model.bin", "kind": "dfpq-float-model",
        "nodes": nodes, "tensors": table,
    }
    (out_dir / "model.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    (out_dir / "model.bin").write_bytes(bytes(blob))


def write_dataset(images, labels, dir_path):
    dir_path.mkdir(parents=True, exist_ok=True)
    shape = images.shape[1:]
    header = b"DFPT1\x00" + struct.pack("<II", len(images), len(shape))
    header += struct.pack(f"<{len(shape)}I", *shape)
    payload = np.ascontiguousarray(images, dtype="<f4").tobytes()
    (dir_path / "data.tensor").write_bytes(header + payload)
    if labels is not None:
        (dir_path / "labels.txt").write_text("".join(f"{l}\n" for l in labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixture"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(SEED)
    torch.set_num_threads(1)
    rng = np.random.default_rng(SEED)

    templates = make_templates(rng)
    train_x, train_y = make_split(rng, templates, TRAIN_COUNT)
    eval_x, eval_y = make_split(rng, templates, EVAL_COUNT)
    calib_x, _ = make_split(rng, templates, CALIB_COUNT)

    net = FixtureNet()
    train(net, train_x, train_y)
    train_acc = accuracy(net, train_x, train_y)
    eval_acc = accuracy(net, eval_x, eval_y)
    print(f"train accuracy: {train_acc:.4f}")
    print(f"eval accuracy:  {eval_acc:.4f}")
    assert eval_acc >= 0.97, "task too hard for the fixture net; lower NOISE_SIGMA"
    assert eval_acc <= 0.999, "task trivially easy; raise NOISE_SIGMA"

    write_model(net, out)
    write_dataset(eval_x, eval_y, out / "eval")
    write_dataset(calib_x, None, out / "calib")

    with torch.no_grad():
        golden = net(torch.from_numpy(eval_x[:GOLDEN_COUNT])).numpy().astype(np.float32)
    write_dataset(golden, None, out / "golden")

    print(f"fixture written to {out}")


if __name__ == "__main__":
    main()
