"""Regenerate the seed-pinned goldens under tests/golden (run once, commit).

    python tools/make_test_goldens.py
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from opticsense.config import CoreConfig
from opticsense.devices import AwcConfig
from opticsense.mapper import LayerSpec, plan_layer
from opticsense.opc import execute_schedule
from opticsense.perf import synthetic_weights

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden"


def noisy_gain_case():
    layer = LayerSpec(kind="conv", in_height=16, in_width=16, in_channels=1, kernel_size=3,
                      out_channels=8, stride=1, padding=1)
    cfg = CoreConfig(awc=AwcConfig(gain_error_per_bit=(0.0, 0.0, 0.0, 0.05)))
    weights = synthetic_weights(layer, 4, seed=1)
    codes = np.random.default_rng(2).integers(0, 3, size=(1, 1, 16, 16))
    return layer, cfg, weights, codes


def main():
    layer, cfg, weights, codes = noisy_gain_case()
    maps = execute_schedule(plan_layer(layer, cfg), codes, weights, cfg, "noisy", seed=1234)
    GOLDEN.mkdir(parents=True, exist_ok=True)
    np.savez(GOLDEN / "noisy_gain_msb5.npz", maps=maps, codes=codes, weights=weights)
    print("wrote", GOLDEN / "noisy_gain_msb5.npz", maps.shape)


if __name__ == "__main__":
    main()
