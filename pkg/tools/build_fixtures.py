"""Build the bundled MNIST subset, tiny-CNN model fixtures and their goldens.

Source data: the ``mnist`` npm package (v1.1.0, MIT), whose ``src/digits``
directory holds 10,000 28x28 digits as 3-decimal floats in [0, 1].  Extract
the tarball and pass the digits directory:

    tar xzf mnist-1.1.0.tgz -C /tmp/npm
    python tools/build_fixtures.py /tmp/npm/package/src/digits

Training needs torch (not a package dependency).  The first convolution is
trained with 4-bit fake quantization (straight-through estimator) on ternary
pixel codes, so the shipped float kernels quantize cleanly.  Goldens are the
quantized-software accuracies per weight bit width, computed with the
integer oracle, plus reference logits from torch for a cross-check.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from opticsense.config import DATA_DIR, CoreConfig
from opticsense.fixtures import save_fixture
from opticsense.inference import Dataset, baseline, frame_codes, load_model, oracle_conv, run_rest

HOLDOUT = 1000
GOLDEN_LOGITS = 32
EPOCHS = 12


def load_digits(root: Path):
    images, labels = [], []
    for d in range(10):
        data = np.asarray(json.loads((root / f"{d}.json").read_text())["data"], dtype=np.float64)
        px = np.rint(data.reshape(-1, 28, 28) * 255.0).astype(np.uint8)
        images.append(px)
        labels.append(np.full(len(px), d, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


class FakeQuant(torch.autograd.Function):
    @staticmethod
    def forward(ctx, w, bits):
        top = 2 ** bits - 1
        scale = w.abs().max() / top
        return torch.sign(w) * torch.clamp(torch.floor(w.abs() / scale + 0.5), max=top) * scale

    @staticmethod
    def backward(ctx, g):
        return g, None


class TinyCnn(nn.Module):
    def __init__(self, k: int, bits: int = 4):
        super().__init__()
        self.bits = bits
        self.conv1 = nn.Conv2d(1, 8, k, padding=k // 2)
        self.conv2 = nn.Conv2d(8, 16, 3, padding=1)
        self.fc = nn.Linear(16 * 7 * 7, 10)

    def forward(self, x):
        w = FakeQuant.apply(self.conv1.weight, self.bits)
        x = torch.relu(nn.functional.conv2d(x, w, self.conv1.bias, padding=self.conv1.padding))
        x = nn.functional.max_pool2d(x, 2)
        x = nn.functional.max_pool2d(torch.relu(self.conv2(x)), 2)
        return self.fc(x.flatten(1))


def train(k: int, codes, labels, seed: int = 0) -> TinyCnn:
    torch.manual_seed(seed)
    net = TinyCnn(k)
    opt = torch.optim.Adam(net.parameters(), lr=2e-3)
    x = torch.tensor(codes, dtype=torch.float32)
    y = torch.tensor(labels, dtype=torch.long)
    gen = torch.Generator().manual_seed(seed)
    for epoch in range(EPOCHS):
        if epoch == EPOCHS * 2 // 3:
            for group in opt.param_groups:
                group["lr"] = 5e-4
        perm = torch.randperm(len(x), generator=gen)
        for i in range(0, len(x), 64):
            idx = perm[i:i + 64]
            opt.zero_grad()
            loss = nn.functional.cross_entropy(net(x[idx]), y[idx])
            loss.backward()
            opt.step()
    return net.eval()


def export(net: TinyCnn, k: int, out: Path) -> None:
    f64 = lambda t: t.detach().numpy().astype(np.float64)
    tensors = {
        "conv1.weight_float": f64(net.conv1.weight),
        "conv1.bias": f64(net.conv1.bias),
        "conv2.weight": f64(net.conv2.weight),
        "conv2.bias": f64(net.conv2.bias),
        "fc.weight": f64(net.fc.weight),
        "fc.bias": f64(net.fc.bias),
    }
    meta = {
        "name": f"tiny_cnn_k{k}",
        "bit_width": 4,
        "num_classes": 10,
        "input": [1, 28, 28],
        "first": {"kind": "conv", "in_height": 28, "in_width": 28, "in_channels": 1,
                  "kernel_size": k, "out_channels": 8, "stride": 1, "padding": k // 2},
        "layers": [
            {"op": "dequant", "bias": "conv1.bias"},
            {"op": "relu"},
            {"op": "maxpool", "size": 2},
            {"op": "conv", "weight": "conv2.weight", "bias": "conv2.bias", "padding": 1},
            {"op": "relu"},
            {"op": "maxpool", "size": 2},
            {"op": "flatten"},
            {"op": "linear", "weight": "fc.weight", "bias": "fc.bias"},
        ],
        "training": f"QAT (4-bit conv1, STE), Adam, {EPOCHS} epochs on 9000 MNIST digits, seed 0",
    }
    save_fixture(out, "model", tensors, meta)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits", type=Path)
    ap.add_argument("--out", type=Path, default=DATA_DIR)
    args = ap.parse_args()
    torch.set_num_threads(4)

    images, labels = load_digits(args.digits)
    order = np.random.default_rng(0).permutation(len(images))
    test, tr = order[:HOLDOUT], order[HOLDOUT:]
    save_fixture(args.out / "datasets" / "mnist_1k", "dataset",
                 {"images": images[test], "labels": labels[test]},
                 {"name": "mnist_1k", "source": "npm mnist 1.1.0 (MIT), shuffled with seed 0",
                  "count": HOLDOUT})
    cfg = CoreConfig()
    train_codes = frame_codes(images[tr].astype(np.float64) / 255.0, cfg).astype(np.float32)
    data = Dataset(images[test], labels[test].astype(np.int64), "mnist_1k")
    test_codes = frame_codes(data.intensities(), cfg)

    for k in (3, 5, 7):
        mdir = args.out / "models" / f"tiny_cnn_k{k}"
        export(train(k, train_codes, labels[tr]), k, mdir)
        accs, correct = [], []
        for bits in (1, 2, 3, 4):
            model = load_model(mdir, bits)
            bcfg = cfg.replace(awc=cfg.awc.__class__(bit_width=bits))
            res = baseline(data, model, bcfg)
            accs.append(res.accuracy)
            correct.append(res.correct)
        # independent reference for the 4-bit logits: torch, float32
        model = load_model(mdir, 4)
        net = TinyCnn(k)
        with torch.no_grad():
            for name, p in net.named_parameters():
                src = "conv1.weight_float" if name == "conv1.weight" else name
                p.copy_(torch.tensor(model.params[src]))
            x = torch.tensor(test_codes[:GOLDEN_LOGITS], dtype=torch.float32)
            ref = net(x).numpy().astype(np.float64)
        ours = run_rest(oracle_conv(test_codes[:GOLDEN_LOGITS], model.weights, model.first), model)
        if not np.allclose(ours, ref, rtol=1e-4, atol=1e-3):
            raise SystemExit(f"k={k}: reference engine disagrees with torch")
        save_fixture(args.out / "golden" / f"tiny_cnn_k{k}", "golden",
                     {"accuracy": np.asarray(accs), "correct": np.asarray(correct, dtype=np.int64),
                      "logits_reference": ref},
                     {"model": f"tiny_cnn_k{k}", "dataset": "mnist_1k", "bits": [1, 2, 3, 4],
                      "logits_samples": GOLDEN_LOGITS,
                      "note": "quantized-software accuracy via the integer oracle; "
                              "logits from an independent torch forward pass"})
        print(f"tiny_cnn_k{k}: accuracy by bits 1..4 = {accs}")


if __name__ == "__main__":
    main()
