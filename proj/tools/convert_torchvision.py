#!/usr/bin/env python3
"""Convert a torchvision resnet18 state dict into a teacher weight archive.

Usage:
    python3 tools/convert_torchvision.py resnet18-f37072fd.pth teacher.arch

Only the stem and layer1..layer3 are kept; layer4, the classifier and the
num_batches_tracked counters are dropped. 1-D tensors (BatchNorm affine
parameters and statistics) are stored as C x 1 x 1 x 1. Needs PyTorch for
reading the .pth file and numpy for the byte layout.
"""

import argparse
import json
import struct
import sys

import numpy as np

MAGIC = b"PFADARCH"
VERSION = 1
KEEP = ("conv1.", "bn1.", "layer1.", "layer2.", "layer3.")


def load_state(path):
    import torch

    state = torch.load(path, map_location="cpu")
    if "state_dict" in state:
        state = state["state_dict"]
    return {k: v.detach().double().numpy() for k, v in state.items()}


def to_4d(array):
    if array.ndim == 4:
        return array
    if array.ndim == 1:
        return array.reshape(-1, 1, 1, 1)
    raise ValueError(f"unexpected tensor rank {array.ndim}")


def write_archive(path, tensors):
    manifest = {
        "meta": {"kind": "teacher", "source": "torchvision resnet18"},
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    text = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(text)))
        f.write(text)
        for _, t in tensors:
            f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def main(argv):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("checkpoint", help="torchvision resnet18 .pth file")
    parser.add_argument("output", help="archive to write")
    args = parser.parse_args(argv)

    state = load_state(args.checkpoint)
    tensors = [
        (name, to_4d(value))
        for name, value in state.items()
        if name.startswith(KEEP) and not name.endswith("num_batches_tracked")
    ]
    write_archive(args.output, tensors)
    print(f"wrote {len(tensors)} tensors to {args.output}")


if __name__ == "__main__":
    main(sys.argv[1:])
