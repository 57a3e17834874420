import dataclasses
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from opticsense.config import CoreConfig, TimingEnergyConstants, load_constants
from opticsense.errors import ConfigError
from opticsense.mapper import LayerSpec, plan_layer
from opticsense.perf import (
    PerfReport,
    ProgrammingCost,
    estimate,
    frame_rate,
    programming_cost,
    resnet18_conv1,
    synthetic_weights,
)

CFG = CoreConfig()
ENERGIES = ("e_vcsel", "e_bpd", "e_vom", "e_awc_per_bit", "e_kernel_read_per_bit",
            "e_to_step", "e_eo_step", "e_pixel", "p_static")


def small():
    layer = LayerSpec(kind="conv", in_height=10, in_width=10, in_channels=1, kernel_size=5,
                      out_channels=6, padding=2)
    s = plan_layer(layer, CFG)
    return layer, s, programming_cost(s, synthetic_weights(layer, 4, 0), CFG)


def test_breakdown_sums_to_energy():
    _, s, prog = small()
    r = estimate(s, CFG.constants, prog, CFG)
    assert math.isclose(sum(r.breakdown.values()), r.energy, rel_tol=1e-12)
    assert r.breakdown["mr_tuning"] == prog.tuning_energy


def test_cycle_time_is_input_constant():
    _, s, _ = small()
    k = TimingEnergyConstants(t_mac=42e-12)
    r = estimate(s, k)
    assert r.cycle_time == 42e-12
    assert r.compute_latency == s.total_cycles * 42e-12


@given(st.floats(0.01, 100.0))
def test_efficiency_invariant_to_time_scale(f):
    _, s, prog = small()
    base = estimate(s, CFG.constants, prog, CFG)
    k = CFG.constants
    scaled_k = dataclasses.replace(k, t_mac=k.t_mac * f)
    scaled_p = dataclasses.replace(prog, latency=prog.latency * f)
    r = estimate(s, scaled_k, scaled_p, CFG)
    assert r.efficiency == pytest.approx(base.efficiency, rel=1e-9)


@given(st.floats(0.1, 10.0))
def test_efficiency_inverse_in_energy_scale(f):
    layer, s, _ = small()
    k = CFG.constants
    k2 = dataclasses.replace(k, **{e: getattr(k, e) * f for e in ENERGIES})
    cfg2 = CFG.replace(constants=k2)
    w = synthetic_weights(layer, 4, 0)
    r1 = estimate(s, k, programming_cost(s, w, CFG), CFG)
    r2 = estimate(s, k2, programming_cost(s, w, cfg2), cfg2)
    assert r2.efficiency == pytest.approx(r1.efficiency / f, rel=1e-9)


def test_ops_policies():
    _, s, prog = small()
    c = s.counters
    for policy, ops in (("mac", c["total_macs"]), ("mac2", 2 * c["total_macs"]),
                        ("dot", c["arm_evaluations"])):
        k = dataclasses.replace(CFG.constants, ops_accounting=policy)
        assert estimate(s, k, prog, CFG).ops == ops
    with pytest.raises(ConfigError):
        TimingEnergyConstants(ops_accounting="flops")


def test_dot_policy_peak_on_full_core():
    s = plan_layer(LayerSpec(kind="conv", in_height=3, in_width=3, kernel_size=3,
                             out_channels=400), CFG)
    k = dataclasses.replace(CFG.constants, ops_accounting="dot")
    assert estimate(s, k, cfg=CFG).peak_throughput == pytest.approx(400 / 55.8e-12)


def test_frame_rate_and_zero_latency():
    _, s, prog = small()
    k = CFG.constants
    fps = frame_rate(s, k, prog)
    assert fps == pytest.approx(1.0 / (s.total_cycles * k.t_mac + prog.latency + k.t_exposure))
    zero = TimingEnergyConstants(t_exposure=0.0)
    empty = dataclasses.replace(s, rounds=())
    with pytest.raises(ValueError):
        frame_rate(empty, zero)


def test_missing_constants():
    _, s, _ = small()
    with pytest.raises(ConfigError):
        estimate(s, None)


def test_negative_constant_rejected():
    with pytest.raises(ConfigError):
        TimingEnergyConstants(e_vcsel=-1.0)


def test_report_round_trip():
    _, s, prog = small()
    r = estimate(s, CFG.constants, prog, CFG)
    assert PerfReport.from_dict(r.to_dict()) == r


def test_programming_cost_sums_rounds():
    layer = LayerSpec(kind="conv", in_height=3, in_width=3, in_channels=2, kernel_size=3,
                      out_channels=300)
    s = plan_layer(layer, CFG)
    prog = programming_cost(s, synthetic_weights(layer, 2, 0), CFG.replace(
        awc=dataclasses.replace(CFG.awc, bit_width=2, gain_error_per_bit=())))
    assert s.remap_count == 2 and prog.mapped_weights == 600 * 9
    assert ProgrammingCost().latency == 0.0


def test_calibrated_scenario():
    k = load_constants("paper_cal")
    layer = resnet18_conv1(128)
    cfg = CFG.replace(constants=k)
    s = plan_layer(layer, cfg)
    r = estimate(s, k, programming_cost(s, synthetic_weights(layer, 4, 0), cfg), cfg)
    assert r.cycle_time == 55.8e-12
    assert r.frame_rate >= 1000.0
    assert abs(r.efficiency / 6.68e12 - 1.0) <= 0.05
    assert s.total_macs == 38_535_168
