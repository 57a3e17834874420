"""Analytical latency / energy / throughput model for a schedule."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import CoreConfig, TimingEnergyConstants
from .errors import ConfigError
from .mapper import (
    LayerSpec,
    Schedule,
    arms_per_unit,
    macs_per_cycle,
    map_weights,
    unit_capacity,
)

BREAKDOWN_KEYS = ("vcsel", "bpd", "vom", "mr_tuning", "awc", "kernel_bank", "pixel", "static")


@dataclass(frozen=True)
class ProgrammingCost:
    """Weight-mapping cost summed over a schedule's remap rounds."""

    tuning_energy: float = 0.0
    awc_energy: float = 0.0
    kernel_read_energy: float = 0.0
    latency: float = 0.0
    mapped_weights: int = 0
    tuning_steps: int = 0

    @classmethod
    def from_weight_maps(cls, maps) -> "ProgrammingCost":
        maps = list(maps)
        return cls(
            tuning_energy=math.fsum(m.tuning_energy for m in maps),
            awc_energy=math.fsum(m.awc_energy for m in maps),
            kernel_read_energy=math.fsum(m.kernel_read_energy for m in maps),
            latency=math.fsum(m.latency for m in maps),
            mapped_weights=sum(len(m) for m in maps),
            tuning_steps=sum(m.tuning_steps for m in maps),
        )


def programming_cost(schedule: Schedule, weights, cfg: CoreConfig) -> ProgrammingCost:
    return ProgrammingCost.from_weight_maps(
        map_weights(schedule, r, weights, cfg) for r in range(len(schedule.rounds)))


@dataclass(frozen=True)
class PerfReport:
    latency: float
    compute_latency: float
    tuning_latency: float
    cycle_time: float
    energy: float
    breakdown: dict = field(default_factory=dict)
    events: dict = field(default_factory=dict)
    ops: float = 0.0
    macs: int = 0
    average_power: float = 0.0
    throughput: float = 0.0
    efficiency: float = 0.0
    peak_throughput: float = 0.0
    frame_rate: float = 0.0
    frame_power: float = 0.0
    power_per_pixel: float = 0.0
    utilization: float = 0.0
    ops_accounting: str = "mac"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PerfReport":
        return cls(**data)


def _ops(policy: str, counters: dict) -> float:
    if policy == "mac":
        return float(counters["total_macs"])
    if policy == "mac2":
        return 2.0 * counters["total_macs"]
    if policy == "dot":
        return float(counters["arm_evaluations"])
    raise ConfigError(f"unknown ops accounting policy {policy!r}")


def peak_ops_per_cycle(layer: LayerSpec, cfg: CoreConfig, policy: str) -> float:
    if policy == "dot":
        return float(unit_capacity(layer, cfg) * arms_per_unit(layer, cfg.mrs_per_arm))
    macs = macs_per_cycle(cfg.num_banks, layer.peak_kernel)
    return float(macs * (2 if policy == "mac2" else 1))


def estimate(schedule: Schedule, constants: TimingEnergyConstants,
             programming: ProgrammingCost | None = None, cfg: CoreConfig | None = None,
             frame_pixels: int | None = None) -> PerfReport:
    """Latency, energy breakdown, power and efficiency of one schedule.

    ``programming`` is the weight-mapping cost (zero if the weights are
    already resident).  ``frame_pixels`` is the number of pixels read out for
    the frame feeding this layer; it defaults to the layer's input plane.
    """
    if constants is None:
        raise ConfigError("missing timing/energy constants")
    cfg = cfg or CoreConfig()
    prog = programming or ProgrammingCost()
    layer = schedule.layer
    c = schedule.counters
    pixels = layer.in_height * layer.in_width * layer.in_channels if frame_pixels is None \
        else int(frame_pixels)
    events = {
        "cycles": c["total_cycles"],
        "vcsel_symbols": c["total_macs"],
        "bpd_detections": c["arm_evaluations"],
        "vom_remodulations": c["vom_events"],
        "mapped_weights": prog.mapped_weights,
        "tuning_steps": prog.tuning_steps,
        "pixel_reads": pixels,
    }
    compute_latency = c["total_cycles"] * constants.t_mac
    latency = compute_latency + prog.latency
    k = constants
    breakdown = {
        "vcsel": events["vcsel_symbols"] * k.e_vcsel,
        "bpd": events["bpd_detections"] * k.e_bpd,
        "vom": events["vom_remodulations"] * k.e_vom,
        "mr_tuning": prog.tuning_energy,
        "awc": prog.awc_energy,
        "kernel_bank": prog.kernel_read_energy,
        "pixel": pixels * k.e_pixel,
        "static": k.p_static * latency,
    }
    energy = math.fsum(breakdown.values())
    ops = _ops(k.ops_accounting, c)
    throughput = ops / latency if latency > 0 else 0.0
    power = energy / latency if latency > 0 else 0.0
    efficiency = throughput / power if power > 0 else 0.0
    period = latency + k.t_exposure + k.t_readout
    fps = 1.0 / period if period > 0 else 0.0
    frame_power = energy * fps
    return PerfReport(
        latency=latency,
        compute_latency=compute_latency,
        tuning_latency=prog.latency,
        cycle_time=k.t_mac,
        energy=energy,
        breakdown=breakdown,
        events=events,
        ops=ops,
        macs=c["total_macs"],
        average_power=power,
        throughput=throughput,
        efficiency=efficiency,
        peak_throughput=peak_ops_per_cycle(layer, cfg, k.ops_accounting) / k.t_mac,
        frame_rate=fps,
        frame_power=frame_power,
        power_per_pixel=frame_power / (layer.in_height * layer.in_width),
        utilization=schedule.utilization,
        ops_accounting=k.ops_accounting,
    )


def frame_rate(schedule: Schedule, constants: TimingEnergyConstants,
               programming: ProgrammingCost | None = None) -> float:
    """Frames per second when this schedule is one frame's first layer."""
    prog = programming or ProgrammingCost()
    period = (schedule.total_cycles * constants.t_mac + prog.latency
              + constants.t_exposure + constants.t_readout)
    if period <= 0:
        raise ValueError("zero frame latency: frame rate is undefined")
    return 1.0 / period


# ---------------------------------------------------------------- scenarios


def resnet18_conv1(size: int = 128) -> LayerSpec:
    """First ResNet-18 convolution on a ``size`` x ``size`` RGB frame."""
    return LayerSpec(kind="conv", in_height=size, in_width=size, in_channels=3,
                     kernel_size=7, out_channels=64, stride=2, padding=3)


def synthetic_weights(layer: LayerSpec, bit_width: int, seed: int = 0) -> np.ndarray:
    """Uniformly distributed signed n-bit weights for a layer."""
    top = 2 ** bit_width - 1
    rng = np.random.default_rng(seed)
    if layer.kind == "mlp":
        shape = (layer.out_channels, layer.fan_in)
    else:
        shape = (layer.out_channels, layer.in_channels, layer.kernel_size, layer.kernel_size)
    return rng.integers(-top, top + 1, size=shape)
