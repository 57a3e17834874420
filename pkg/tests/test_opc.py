import dataclasses
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import GOLDEN
from make_test_goldens import noisy_gain_case
from opticsense.config import CoreConfig
from opticsense.devices import AwcConfig, BpdConfig, MrConfig, VamConfig, VomConfig
from opticsense.errors import GeometryError
from opticsense.inference import oracle_conv
from opticsense.mapper import LayerSpec, plan_layer
from opticsense.opc import (
    arm_mac,
    bank_compute,
    calibration_scale,
    core_cycle,
    cycle_steps,
    execute_by_cycles,
    execute_schedule,
    program_round,
    split_kernel,
    vom_reduce,
)
from opticsense.perf import synthetic_weights

CFG = CoreConfig()
NOISY = CoreConfig(
    mr=MrConfig(drift_sigma_nm=0.001),
    awc=AwcConfig(noise_sigma=0.02, mismatch_sigma=0.02),
    vam=VamConfig(noise_sigma=0.01),
    bpd=BpdConfig(noise_lsb=0.1),
    vom=VomConfig(sigma=0.01),
)


def conv(h, w, c, k, o, s=1, p=0):
    return LayerSpec(kind="conv", in_height=h, in_width=w, in_channels=c, kernel_size=k,
                     out_channels=o, stride=s, padding=p)


def test_arm_mac_worked_example():
    assert arm_mac([2, 1, 0], [3, -2, 5]) == 4.0
    assert arm_mac([2, 2, 1, 0, 1], [7, 1, -3, 4, 2]) == 15.0


def test_arm_mac_raw_is_scaled():
    a, w = [1, 2, 2], [3, 1, 4]
    assert arm_mac(a, w, raw=True) == pytest.approx(calibration_scale(CFG) * 13.0)


def test_arm_mac_noiseless_noisy_mode_converges():
    a, w = [2, 1, 2, 0, 1, 2, 2, 1, 0], [15, -15, 7, 3, -1, 0, 9, -8, 12]
    assert arm_mac(a, w, CFG, "noisy", seed=5) == pytest.approx(np.dot(a, w), abs=1e-8)


def test_arm_mac_exhaustive_pairs_ideal():
    for a0, a1 in itertools.product(range(3), repeat=2):
        for w0, w1 in itertools.product(range(-15, 16), repeat=2):
            assert arm_mac([a0, a1], [w0, w1]) == a0 * w0 + a1 * w1


@pytest.mark.parametrize("a,w", [([0, 1], [1]), ([3], [1]), ([1] * 10, [1] * 10), ([1], [16])])
def test_arm_mac_errors(a, w):
    with pytest.raises(ValueError):
        arm_mac(a, w)


def test_arm_mac_noisy_is_seeded():
    a, w = [2, 1, 2], [5, -7, 3]
    v1 = arm_mac(a, w, NOISY, "noisy", seed=1)
    assert v1 == arm_mac(a, w, NOISY, "noisy", seed=1)
    assert v1 != arm_mac(a, w, NOISY, "noisy", seed=2)


def test_bank_compute_idle_and_values():
    res = bank_compute([([1, 2], [3, 4]), None, ([2], [-5])])
    assert res.values == (11.0, 0.0, -10.0, 0.0, 0.0)
    assert res.idle == (False, True, False, True, True)
    with pytest.raises(GeometryError):
        bank_compute([None] * 6)


def test_split_kernel_and_vom_reduce():
    parts = split_kernel(np.arange(25))
    assert [len(p) for p in parts] == [10, 10, 5]
    assert vom_reduce([1.5, 2.5, -1.0]) == 3.0
    with pytest.raises(ValueError):
        vom_reduce([])


def test_vom_noise_is_relative():
    cfg = CoreConfig(vom=VomConfig(sigma=0.1))
    assert vom_reduce([0.0, 0.0], cfg, "noisy", 3) == 0.0
    assert vom_reduce([1.0, 1.0], cfg, "noisy", 3) != 2.0


@given(st.sampled_from([3, 5, 7]), st.integers(0, 2**31))
def test_ideal_schedule_matches_oracle(k, seed):
    layer = conv(k + 3, k + 4, 2, k, 3, 1, k // 2)
    rng = np.random.default_rng(seed)
    w = synthetic_weights(layer, 4, seed)
    codes = rng.integers(0, 3, size=(2, 2, layer.in_height, layer.in_width))
    got = execute_schedule(plan_layer(layer, CFG), codes, w, CFG)
    assert np.array_equal(got, oracle_conv(codes, w, layer))


def test_mlp_schedule_matches_matmul():
    layer = LayerSpec(kind="mlp", in_height=1, in_width=40, out_channels=30)
    w = synthetic_weights(layer, 3, 0)
    codes = np.random.default_rng(0).integers(0, 3, size=(4, 40))
    cfg = CoreConfig(awc=AwcConfig(bit_width=3))
    got = execute_schedule(plan_layer(layer, cfg), codes, w, cfg)
    assert np.array_equal(got, codes @ w.T)


@pytest.mark.parametrize("k", [3, 5, 7])
def test_cycle_walk_equals_vectorized(k):
    layer = conv(9, 9, 1, k, 3, 2, 1)
    w = synthetic_weights(layer, 4, 1)
    codes = np.random.default_rng(1).integers(0, 3, size=(1, 1, 9, 9))
    s = plan_layer(layer, CFG)
    for mode, cfg in (("ideal", CFG), ("noisy", NOISY)):
        a = execute_schedule(s, codes, w, cfg, mode, seed=9)[0]
        b = execute_by_cycles(s, codes[0], w, cfg, mode, seed=9)
        assert np.allclose(a, b, rtol=0, atol=1e-9)


def test_noiseless_noisy_mode_matches_ideal():
    layer = conv(8, 8, 1, 5, 4, 1, 2)
    w = synthetic_weights(layer, 4, 2)
    codes = np.random.default_rng(2).integers(0, 3, size=(2, 1, 8, 8))
    s = plan_layer(layer, CFG)
    ideal = execute_schedule(s, codes, w, CFG)
    noisy = execute_schedule(s, codes, w, CFG, "noisy", seed=3)
    assert np.allclose(noisy, ideal, atol=1e-6)


def test_noisy_error_shrinks_with_sigma():
    layer = conv(8, 8, 1, 3, 8)
    w = synthetic_weights(layer, 4, 4)
    codes = np.random.default_rng(4).integers(0, 3, size=(2, 1, 8, 8))
    s = plan_layer(layer, CFG)
    ideal = execute_schedule(s, codes, w, CFG)
    errs = []
    for sigma in (0.01, 0.05, 0.2):
        cfg = CoreConfig(awc=AwcConfig(mismatch_sigma=sigma))
        errs.append(np.abs(execute_schedule(s, codes, w, cfg, "noisy", 1) - ideal).mean())
    assert errs[0] < errs[1] < errs[2]


def test_dynamic_noise_keyed_by_sample_not_batch():
    layer = conv(6, 6, 1, 3, 2)
    w = synthetic_weights(layer, 4, 5)
    codes = np.random.default_rng(5).integers(0, 3, size=(3, 1, 6, 6))
    s = plan_layer(layer, NOISY)
    whole = execute_schedule(s, codes, w, NOISY, "noisy", 11)
    one = execute_schedule(s, codes[2:], w, NOISY, "noisy", 11, samples=[2])
    assert np.array_equal(whole[2:], one)


def test_seeded_noisy_golden():
    layer, cfg, weights, codes = noisy_gain_case()
    golden = np.load(GOLDEN / "noisy_gain_msb5.npz")
    assert np.array_equal(golden["codes"], codes) and np.array_equal(golden["weights"], weights)
    maps = execute_schedule(plan_layer(layer, cfg), codes, weights, cfg, "noisy", seed=1234)
    assert np.allclose(maps, golden["maps"], rtol=0, atol=1e-9)


def test_msb_gain_error_biases_large_weights():
    cfg = CoreConfig(awc=AwcConfig(gain_error_per_bit=(0, 0, 0, 0.05)))
    big = arm_mac([1], [8], cfg, "noisy", seed=0)
    small = arm_mac([1], [7], cfg, "noisy", seed=0)
    assert big > 8.0 and small == pytest.approx(7.0, abs=1e-8)


def test_core_cycle_empty_and_geometry():
    layer = conv(5, 5, 1, 3, 2)
    s = plan_layer(layer, CFG)
    w = synthetic_weights(layer, 4, 0)
    prog, _ = program_round(s, 0, w, CFG, "ideal", 0)
    step = next(iter(cycle_steps(s)))
    codes = np.ones((1, 5, 5), dtype=np.int64)
    out = core_cycle(step, codes, s, prog, CFG)
    assert len(out) == len(step.pairs)
    assert [r.unit for r in out] == sorted(r.unit for r in out)
    empty = dataclasses.replace(step, pairs=())
    assert core_cycle(empty, codes, s, prog, CFG) == []


def test_bad_mode_rejected():
    with pytest.raises(ValueError):
        arm_mac([1], [1], mode="fast")
