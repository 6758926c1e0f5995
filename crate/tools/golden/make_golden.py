#!/usr/bin/env python3
"""Generate the committed golden fixtures under fixtures/golden/.

The weights are the deterministic synthetic VGG-19 stack described in
docs/fixtures.md; the Rust side regenerates the same blobs bit-for-bit, so
only the manifest (with digests) is committed. Activations are computed with
PyTorch layer by layer: f32 storage between layers, f64 accumulation inside
each convolution.

Usage: python3 tools/golden/make_golden.py [--out fixtures/golden]
"""
import argparse
import hashlib
import json
import math
import os

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
SEED = 0x5EED_1E41_C0DE_0019
SAMPLES_PER_LAYER = 4096
SAMPLE_STRIDE = 2_654_435_761  # odd multiplier; index_i = (i * stride + offset) mod len

CONV_CHANNELS = [64, 64, 128, 128, 256, 256, 256, 256,
                 512, 512, 512, 512, 512, 512, 512, 512]
POOL_AFTER = {2, 4, 8, 12, 16}
BLOCK_CONVS = [2, 2, 4, 4, 4]
MEAN = [0.485, 0.456, 0.406]
STD = [0.229, 0.224, 0.225]


def conv_names():
    names = []
    for block, n in enumerate(BLOCK_CONVS, start=1):
        for i in range(1, n + 1):
            names.append(f"{block}_{i}")
    return names


def splitmix_stream(key, n):
    with np.errstate(over="ignore"):
        i = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(key) + i * GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def uniform_sym(key, n, scale):
    z = splitmix_stream(key, n)
    u = (z >> np.uint64(40)).astype(np.float32) * np.float32(2.0 ** -24)
    return (np.float32(2.0) * u - np.float32(1.0)) * np.float32(scale)


def stream_key(seed, layer, role):
    tag = 2 * layer + role
    return (seed ^ (tag << 48)) & 0xFFFF_FFFF_FFFF_FFFF


def synthetic_layers(seed):
    layers = []
    in_c = 3
    for idx, out_c in enumerate(CONV_CHANNELS, start=1):
        fan_in = in_c * 9
        w_scale = np.float32(math.sqrt(6.0 / fan_in))
        w = uniform_sym(stream_key(seed, idx, 0), out_c * in_c * 9, w_scale)
        b = uniform_sym(stream_key(seed, idx, 1), out_c, np.float32(0.05))
        layers.append((in_c, out_c, w.reshape(out_c, in_c, 3, 3), b))
        in_c = out_c
    return layers


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def manifest(layers):
    entries = []
    names = conv_names()
    for idx, (in_c, out_c, w, b) in enumerate(layers, start=1):
        name = names[idx - 1]
        wb = w.astype("<f4").tobytes()
        bb = b.astype("<f4").tobytes()
        entries.append({
            "name": f"conv{name}", "kind": "conv",
            "in_channels": in_c, "out_channels": out_c,
            "kernel": 3, "stride": 1, "padding": 1,
            "weights": {"path": f"conv{name}.weight.bin", "shape": [out_c, in_c, 3, 3],
                        "dtype": "f32le", "sha256": sha256(wb)},
            "bias": {"path": f"conv{name}.bias.bin", "shape": [out_c],
                     "dtype": "f32le", "sha256": sha256(bb)},
        })
        entries.append({"name": f"relu{name}", "kind": "relu"})
        if idx in POOL_AFTER:
            block = names[idx - 1].split("_")[0]
            entries.append({"name": f"pool{block}", "kind": "maxpool", "kernel": 2, "stride": 2})
    return {
        "format_version": 1,
        "arch_name": "vgg19",
        "normalization": {"mean": MEAN, "std": STD, "channel_order": "rgb", "pixel_scale": 255.0},
        "layers": entries,
    }


def fixture_image():
    from skimage import data
    img = data.chelsea()  # CC0 sample photograph shipped with scikit-image
    h, w, _ = img.shape
    y0, x0 = (h - 224) // 2, (w - 224) // 2
    return np.ascontiguousarray(img[y0:y0 + 224, x0:x0 + 224, :3])


def normalize(img):
    x = img.astype(np.float32).transpose(2, 0, 1)  # HWC -> CHW
    out = np.empty_like(x)
    for c in range(3):
        out[c] = (x[c] / np.float32(255.0) - np.float32(MEAN[c])) / np.float32(STD[c])
    return out


def forward(x32, layers):
    maps = []
    x = torch.from_numpy(x32).unsqueeze(0)
    for idx, (_, _, w, b) in enumerate(layers, start=1):
        y = F.conv2d(x.double(), torch.from_numpy(w).double(), torch.from_numpy(b).double(),
                     stride=1, padding=1)
        y = torch.relu(y.float())
        maps.append(y[0].numpy().copy())
        x = y
        if idx in POOL_AFTER:
            x = F.max_pool2d(x, 2, 2)
    return maps


def word_counts(fmap):
    counts = []
    for ch in fmap:
        v = np.sort(ch.ravel())
        n = v.size
        rank = (9 * n + 9) // 10  # ceil(0.9 n)
        t = v[rank - 1]
        counts.append(int((ch > t).sum()))
    return counts


def sample_indices(total):
    i = np.arange(SAMPLES_PER_LAYER, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return ((i * np.uint64(SAMPLE_STRIDE) + np.uint64(12345)) % np.uint64(total)).astype(np.uint32)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "..", "fixtures", "golden"))
    args = ap.parse_args()
    out = os.path.abspath(args.out)
    os.makedirs(out, exist_ok=True)
    torch.set_num_threads(max(1, os.cpu_count() or 1))

    layers = synthetic_layers(SEED)
    man = manifest(layers)
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(man, f, indent=2)
        f.write("\n")

    img = fixture_image()
    Image.fromarray(img).save(os.path.join(out, "input.png"))
    x32 = normalize(img)
    with open(os.path.join(out, "input_tensor.bin"), "wb") as f:
        f.write(x32.astype("<f4").tobytes())

    maps = forward(x32, layers)
    act_layers = []
    with open(os.path.join(out, "activations.bin"), "wb") as f:
        for idx, m in enumerate(maps, start=1):
            flat = m.ravel()
            ids = sample_indices(flat.size)
            rec = np.empty(SAMPLES_PER_LAYER, dtype=[("i", "<u4"), ("v", "<f4")])
            rec["i"] = ids
            rec["v"] = flat[ids]
            f.write(rec.tobytes())
            act_layers.append({"layer": idx, "shape": list(m.shape),
                               "max": float(flat.max()), "sum": float(flat.astype(np.float64).sum())})

    with open(os.path.join(out, "counts.csv"), "w", newline="\n") as f:
        f.write("layer,kernel,count\n")
        for idx, m in enumerate(maps, start=1):
            for k, c in enumerate(word_counts(m)):
                f.write(f"{idx},{k},{c}\n")

    files = {}
    for name in ["manifest.json", "input.png", "input_tensor.bin", "activations.bin", "counts.csv"]:
        with open(os.path.join(out, name), "rb") as fh:
            files[name] = sha256(fh.read())
    meta = {
        "synthetic_seed": SEED,
        "samples_per_layer": SAMPLES_PER_LAYER,
        "sample_stride": SAMPLE_STRIDE,
        "sample_offset": 12345,
        "threshold": {"mode": "quantile", "level": 0.9, "inclusive": False},
        "tap": "post_relu",
        "input_shape": [3, 224, 224],
        "layers": act_layers,
        "sha256": files,
    }
    with open(os.path.join(out, "fixture.json"), "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
