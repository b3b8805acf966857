"""Convert torchvision ImageNet weights into the weights-cache layout.

    python python/convert_torchvision.py CACHE_DIR [--resnet34 FILE.pth] [--vgg16 FILE.pth]

Without a file argument the weights are fetched through torchvision.
Writes CACHE_DIR/resnet34/ and CACHE_DIR/vgg16/; point
ORBIT_RESTORE_WEIGHTS_CACHE at CACHE_DIR afterwards.
"""

import argparse
import hashlib
import json
import os
import struct
import sys

import torch


def state_dict(name, path):
    if path:
        return torch.load(path, map_location="cpu")
    import torchvision.models as tvm

    ctor = {"resnet34": tvm.resnet34, "vgg16": tvm.vgg16}[name]
    return ctor(weights="DEFAULT").state_dict()


def keep(name, key):
    if key.endswith("num_batches_tracked"):
        return False
    if name == "resnet34":
        return not key.startswith("fc.")
    return key.startswith("features.")


def write_archive(out_dir, tag, tensors):
    os.makedirs(out_dir, exist_ok=True)
    blob = bytearray()
    entries = []
    for key, t in tensors:
        values = t.detach().to(torch.float32).contiguous().flatten().tolist()
        offset = len(blob)
        blob += struct.pack("<%df" % len(values), *values)
        entries.append(
            {
                "name": key,
                "shape": list(t.shape),
                "dtype": "f32",
                "offset": offset,
                "length": len(blob) - offset,
            }
        )
    doc = {
        "version": 1,
        "config_hash": tag,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "entries": entries,
        "metadata": {"note": "converted from torchvision " + tag},
    }
    with open(os.path.join(out_dir, "weights.bin"), "wb") as f:
        f.write(blob)
    with open(os.path.join(out_dir, "weights.json"), "w") as f:
        json.dump(doc, f, indent=2)


def main(argv):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("cache_dir")
    p.add_argument("--resnet34", help="local resnet34 state_dict (.pth)")
    p.add_argument("--vgg16", help="local vgg16 state_dict (.pth)")
    args = p.parse_args(argv)
    for name in ("resnet34", "vgg16"):
        sd = state_dict(name, getattr(args, name))
        tensors = [(k, v) for k, v in sd.items() if keep(name, k)]
        write_archive(os.path.join(args.cache_dir, name), "torchvision-" + name, tensors)
        print("%s: %d tensors" % (name, len(tensors)))


if __name__ == "__main__":
    main(sys.argv[1:])
