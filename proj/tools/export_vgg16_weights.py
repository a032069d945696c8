#!/usr/bin/env python3
"""Export torchvision's ImageNet VGG16 (conv1_1 .. conv3_3) to an RWINPARC archive.

    python tools/export_vgg16_weights.py weights/vgg16.rwarc

The result is what features.backbone = vgg16 / features.weights expects
(or RWINPAINT_VGG16_WEIGHTS). Needs torch + torchvision and network access
for the first download of the torchvision checkpoint.
"""
import argparse
import os
import struct
import zlib

# torchvision vgg16().features index of each conv we keep.
LAYERS = {
    "conv1_1": 0, "conv1_2": 2,
    "conv2_1": 5, "conv2_2": 7,
    "conv3_1": 10, "conv3_2": 12, "conv3_3": 14,
}


def f32_tensor(arr, shape):
    import numpy as np
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return struct.pack("<B4i", 4, *shape) + data


def write_archive(path, entries):
    out = bytearray(b"RWINPARC")
    out += struct.pack("<IQ", 1, len(entries))
    for key in sorted(entries):  # same order the C++ writer uses
        k = key.encode()
        out += struct.pack("<I", len(k)) + k + entries[key]
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(out)
    os.replace(tmp, path)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", help="output archive path")
    args = ap.parse_args()

    import torchvision
    model = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1)
    feats = model.features
    entries = {}
    for name, idx in LAYERS.items():
        conv = feats[idx]
        w = conv.weight.detach().cpu().numpy()  # (out, in, 3, 3), RGB input order
        b = conv.bias.detach().cpu().numpy()
        entries[f"vgg16/{name}/w"] = f32_tensor(w, w.shape)
        entries[f"vgg16/{name}/b"] = f32_tensor(b, (b.shape[0], 1, 1, 1))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_archive(args.out, entries)
    print(f"wrote {len(LAYERS)} layers to {args.out}")


if __name__ == "__main__":
    main()
