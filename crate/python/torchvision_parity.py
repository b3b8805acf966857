"""Write reference activations for the torchvision parity test.

    python python/torchvision_parity.py OUT_DIR

Randomly initialised torchvision resnet34 and vgg16 (batch-norm statistics
perturbed) are converted into OUT_DIR/cache, a random 64x96 input goes to
OUT_DIR/x.bin, and the five encoder stages followed by the relu2_2,
relu3_3, relu4_3 and relu5_3 activations go to OUT_DIR/ref.bin, all as
little-endian f32. Then run
`ORBIT_RESTORE_PARITY_DIR=OUT_DIR cargo test -p orbit-restore-core --test torchvision_parity -- --ignored`.
"""

import os
import sys

import numpy as np
import torch
import torchvision

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import convert_torchvision  # noqa: E402

VGG_TAPS = (8, 15, 22, 29)


def main(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    torch.manual_seed(0)
    r = torchvision.models.resnet34(weights=None)
    v = torchvision.models.vgg16(weights=None)
    for m in r.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            m.weight.data.uniform_(0.5, 1.5)
            m.bias.data.uniform_(-0.2, 0.2)
            m.running_mean.uniform_(-0.3, 0.3)
            m.running_var.uniform_(0.5, 2.0)
    r.eval()
    v.eval()
    paths = {}
    for name, model in (("resnet34", r), ("vgg16", v)):
        paths[name] = os.path.join(out_dir, name + ".pth")
        torch.save(model.state_dict(), paths[name])
    convert_torchvision.main(
        [os.path.join(out_dir, "cache"), "--resnet34", paths["resnet34"], "--vgg16", paths["vgg16"]]
    )

    x = torch.randn(1, 3, 64, 96)
    x.numpy().astype("<f4").tofile(os.path.join(out_dir, "x.bin"))
    with torch.no_grad():
        s1 = r.relu(r.bn1(r.conv1(x)))
        s2 = r.layer1(r.maxpool(s1))
        s3 = r.layer2(s2)
        s4 = r.layer3(s3)
        s5 = r.layer4(s4)
        outs = [s1, s2, s3, s4, s5]
        h = x
        for i, layer in enumerate(v.features):
            h = layer(h)
            if i in VGG_TAPS:
                outs.append(h)
    ref = np.concatenate([o.numpy().ravel() for o in outs]).astype("<f4")
    ref.tofile(os.path.join(out_dir, "ref.bin"))


if __name__ == "__main__":
    main(sys.argv[1])
