"""Exercise the Python bindings end to end on a tiny synthetic dataset.

Build the extension first, e.g. `maturin develop -m crates/python/Cargo.toml`,
or copy the cdylib next to this script as orbit_restore.so.
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import orbit_restore as o  # noqa: E402


def pattern(h, w, k):
    data = []
    for y in range(h):
        for x in range(w):
            for c in range(3):
                v = ((x * (k + 1) + y * (c + 2) + k * 13) % 29) / 28.0
                data.append(v if (x // 8 + y // 8 + k) % 2 == 0 else 0.6 * v)
    return o.Image(h, w, data)


def main():
    with tempfile.TemporaryDirectory() as tmp:
        clean = os.path.join(tmp, "clean")
        os.makedirs(clean)
        for k in range(8):
            pattern(48, 48, k).save(os.path.join(clean, "img%02d.png" % k))

        data = os.path.join(tmp, "data")
        n = o.build_dataset(clean, data, json.dumps({"variants_per_image": 1, "seed": 42}))
        assert n == 8, n
        manifest = os.path.join(data, "manifest.json")

        report = json.loads(o.evaluate(manifest, os.path.join(tmp, "identity")))
        for row in report["per_pair"]:
            assert row["psnr_in"] == row["psnr_out"]

        config = {
            "version": 1,
            "model": {"pretrained": False, "width": 8, "decoder_widths": [16, 8, 8, 4]},
            "loss": {"extractor": {"pretrained": False, "width": 8}},
            "train": {
                "phases": [
                    {"image_size": 32, "epochs": 2, "batch_size": 4, "max_lr": 1e-3, "encoder_frozen": True}
                ]
            },
        }
        run = os.path.join(tmp, "run")
        best = o.train_model(manifest, run, json.dumps(config))
        assert best is not None and math.isfinite(best), best

        model = o.Model.load(run)
        out = model.enhance(pattern(250, 250, 3))
        assert (out.height, out.width) == (250, 250)

        grid = o.make_grid([[out, out, out]], 64, 64, ["input", "target", "enhanced"])
        assert (grid.height, grid.width) == (64, 192)
        assert abs(o.one_cycle_lr(25, 100, 1e-3, 0.25, 25.0, 1e4) - 1e-3) < 1e-12
    print("smoke test passed")


if __name__ == "__main__":
    main()
