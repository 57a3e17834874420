"""Kernel-to-core mapping.

A layer is cut into *items*: 2-D kernel instances ``(out_ch, in_ch)`` for
convolutions, 9-weight fan-in chunks ``(neuron, chunk)`` for MLP layers.  An
item occupies one *unit*: an arm for 3x3 kernels and MLP chunks, a whole bank
(partials reduced by the VOM) for 5x5 and 7x7 kernels.

Items fill units in (bank, arm) row-major order, one remap round per full
core load.  When a round holds fewer items than units, the spare units get
replicas of the resident kernels, and each replica walks its own share of
the stride positions in raster order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .devices import tuning_cost
from .errors import GeometryError

KERNEL_SIZES = (3, 5, 7)
MLP_CHUNK = 9
SCHEDULE_FORMAT = "opticsense-schedule"
SCHEDULE_VERSION = 1


def macs_per_cycle(f: int, K: int) -> int:
    """Core-wide MACs per cycle, f * n * K^2 with n = 5 for 3x3 else 1."""
    if K not in KERNEL_SIZES:
        raise GeometryError(f"unsupported kernel size {K}; expected one of {KERNEL_SIZES}")
    if f < 1:
        raise GeometryError(f"bank count must be >= 1, got {f}")
    n = 5 if K == 3 else 1
    return f * n * K * K


@dataclass(frozen=True)
class LayerSpec:
    kind: str = "conv"
    in_height: int = 1
    in_width: int = 1
    in_channels: int = 1
    kernel_size: int = 3
    out_channels: int = 1
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kind not in ("conv", "mlp"):
            raise GeometryError(f"layer kind must be conv or mlp, got {self.kind!r}")
        for name in ("in_height", "in_width", "in_channels", "out_channels", "stride"):
            if getattr(self, name) < 1:
                raise GeometryError(f"{name} must be >= 1")
        if self.padding < 0:
            raise GeometryError("padding must be >= 0")
        if self.kind == "conv":
            if self.kernel_size not in KERNEL_SIZES:
                raise GeometryError(
                    f"unsupported kernel size {self.kernel_size}; expected one of {KERNEL_SIZES}")
            if self.out_height < 1 or self.out_width < 1:
                raise GeometryError("layer has zero output geometry")

    @property
    def out_height(self) -> int:
        if self.kind == "mlp":
            return 1
        return (self.in_height + 2 * self.padding - self.kernel_size) // self.stride + 1

    @property
    def out_width(self) -> int:
        if self.kind == "mlp":
            return 1
        return (self.in_width + 2 * self.padding - self.kernel_size) // self.stride + 1

    @property
    def positions(self) -> int:
        return self.out_height * self.out_width

    @property
    def fan_in(self) -> int:
        if self.kind == "mlp":
            return self.in_height * self.in_width * self.in_channels
        return self.kernel_size ** 2

    @property
    def chunks(self) -> int:
        return math.ceil(self.fan_in / MLP_CHUNK) if self.kind == "mlp" else 1

    @property
    def num_items(self) -> int:
        if self.kind == "mlp":
            return self.out_channels * self.chunks
        return self.out_channels * self.in_channels

    def item_key(self, item: int) -> tuple[int, int]:
        """(out channel, in channel) for conv, (neuron, chunk) for mlp."""
        if self.kind == "mlp":
            return divmod(item, self.chunks)
        return divmod(item, self.in_channels)

    def item_size(self, item: int) -> int:
        if self.kind == "conv":
            return self.kernel_size ** 2
        chunk = item % self.chunks
        return min(MLP_CHUNK, self.fan_in - chunk * MLP_CHUNK)

    @property
    def total_macs(self) -> int:
        if self.kind == "mlp":
            return self.out_channels * self.fan_in
        return self.num_items * self.positions * self.kernel_size ** 2

    @property
    def peak_kernel(self) -> int:
        """Kernel size whose per-cycle MAC budget governs this layer."""
        return 3 if self.kind == "mlp" else self.kernel_size

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def arms_per_unit(layer: LayerSpec, mrs_per_arm: int = 10) -> int:
    if layer.kind == "mlp" or layer.kernel_size == 3:
        return 1
    return math.ceil(layer.kernel_size ** 2 / mrs_per_arm)


def unit_capacity(layer: LayerSpec, cfg) -> int:
    if layer.kind == "mlp" or layer.kernel_size == 3:
        return cfg.num_banks * cfg.arms_per_bank
    if arms_per_unit(layer, cfg.mrs_per_arm) > cfg.arms_per_bank:
        raise GeometryError(f"a {layer.kernel_size}x{layer.kernel_size} kernel does not fit one bank")
    return cfg.num_banks


def slot_layout(layer: LayerSpec, size: int, mrs_per_arm: int = 10) -> list[tuple[int, int]]:
    """(arm offset, slot) for each weight of one item.

    3x3 kernels leave the tenth slot as a spare; 5x5 and 7x7 kernels use all
    ten slots of each arm (10+10+5 and 10+10+10+10+9).
    """
    if layer.kind == "mlp" or layer.kernel_size == 3:
        if size > mrs_per_arm - 1:
            raise GeometryError(f"{size} weights overflow the 9 usable slots of an arm")
        return [(0, e) for e in range(size)]
    return [divmod(e, mrs_per_arm) for e in range(size)]


@dataclass(frozen=True)
class Placement:
    unit: int
    item: int
    replica: int
    replicas: int

    def positions(self, total: int) -> range:
        return range(self.replica, total, self.replicas)


@dataclass(frozen=True)
class Round:
    index: int
    placements: tuple[Placement, ...]
    cycles: int

    @property
    def items(self) -> list[int]:
        return sorted({p.item for p in self.placements})

    def cycle_plan(self, positions: int):
        """Yield, per cycle, the list of (placement, stride position) pairs."""
        for c in range(self.cycles):
            batch = []
            for pl in self.placements:
                p = c * pl.replicas + pl.replica
                if p < positions:
                    batch.append((pl, p))
            yield batch


@dataclass(frozen=True)
class Schedule:
    layer: LayerSpec
    num_banks: int
    arms_per_bank: int
    mrs_per_arm: int
    rounds: tuple[Round, ...]
    replicate: bool = True

    # ------------------------------------------------------------ geometry
    @property
    def arms_per_unit(self) -> int:
        return arms_per_unit(self.layer, self.mrs_per_arm)

    @property
    def units_per_bank(self) -> int:
        return 1 if self.arms_per_unit > 1 else self.arms_per_bank

    def unit_location(self, unit: int) -> tuple[int, int]:
        """(bank, first arm) of a unit."""
        if self.units_per_bank == 1:
            return unit, 0
        return divmod(unit, self.arms_per_bank)

    def unit_arms(self, item: int) -> int:
        """Arms an item actually lights (5x5 kernels use 3 of the 5)."""
        if self.arms_per_unit == 1:
            return 1
        return math.ceil(self.layer.item_size(item) / self.mrs_per_arm)

    # ------------------------------------------------------------ counters
    @cached_property
    def counters(self) -> dict:
        layer = self.layer
        P = layer.positions
        total_arms = self.num_banks * self.arms_per_bank
        macs = results = arm_evals = vom = 0
        cycles = 0
        idle = 0
        peak = 0
        for rnd in self.rounds:
            cycles += rnd.cycles
            busy = 0
            for pl in rnd.placements:
                n = len(pl.positions(P))
                arms = self.unit_arms(pl.item)
                results += n
                macs += n * layer.item_size(pl.item)
                arm_evals += n * arms
                busy += n * arms
                if layer.kind == "mlp" and layer.chunks > 1:
                    vom += n
                elif arms > 1:
                    vom += n * arms
            idle += rnd.cycles * total_arms - busy
            # first cycle of a round is always the fullest one
            peak = max(peak, sum(layer.item_size(pl.item) for pl in rnd.placements))
        return {
            "total_cycles": cycles,
            "total_macs": macs,
            "remap_count": len(self.rounds),
            "idle_arm_cycles": idle,
            "stride_results": results,
            "arm_evaluations": arm_evals,
            "vom_events": vom,
            "peak_macs_per_cycle": peak,
        }

    @property
    def total_cycles(self) -> int:
        return self.counters["total_cycles"]

    @property
    def total_macs(self) -> int:
        return self.counters["total_macs"]

    @property
    def remap_count(self) -> int:
        return len(self.rounds)

    @property
    def idle_arm_cycles(self) -> int:
        return self.counters["idle_arm_cycles"]

    @property
    def vom_depth(self) -> int:
        if self.layer.kind == "mlp":
            return self.layer.chunks if self.layer.chunks > 1 else 0
        return self.arms_per_unit if self.arms_per_unit > 1 else 0

    @property
    def macs_per_cycle(self) -> int:
        return macs_per_cycle(self.num_banks, self.layer.peak_kernel)

    @property
    def utilization(self) -> float:
        if self.total_cycles == 0:
            return 0.0
        return self.total_macs / (self.total_cycles * self.macs_per_cycle)

    def pairs(self):
        """Every (item, stride position) pair the plan evaluates."""
        P = self.layer.positions
        for rnd in self.rounds:
            for pl in rnd.placements:
                for p in pl.positions(P):
                    yield pl.item, p

    def occupancy(self, round_index: int = 0) -> np.ndarray:
        """Arms lit per bank in one round, shape (num_banks,)."""
        occ = np.zeros(self.num_banks, dtype=int)
        if self.rounds:
            for pl in self.rounds[round_index].placements:
                bank, _ = self.unit_location(pl.unit)
                occ[bank] += self.unit_arms(pl.item)
        return occ

    # ------------------------------------------------------- serialization
    def to_dict(self) -> dict:
        return {
            "format": SCHEDULE_FORMAT,
            "version": SCHEDULE_VERSION,
            "layer": self.layer.to_dict(),
            "geometry": {
                "num_banks": self.num_banks,
                "arms_per_bank": self.arms_per_bank,
                "mrs_per_arm": self.mrs_per_arm,
            },
            "replicate": self.replicate,
            "rounds": [
                {
                    "index": r.index,
                    "cycles": r.cycles,
                    "placements": [[p.unit, p.item, p.replica, p.replicas] for p in r.placements],
                }
                for r in self.rounds
            ],
            "counters": dict(self.counters),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "Schedule":
        if data.get("format") != SCHEDULE_FORMAT:
            raise ValueError("not a schedule document")
        if data.get("version") != SCHEDULE_VERSION:
            raise ValueError(f"unsupported schedule version {data.get('version')}")
        geo = data["geometry"]
        rounds = tuple(
            Round(r["index"], tuple(Placement(*p) for p in r["placements"]), r["cycles"])
            for r in data["rounds"]
        )
        sched = cls(LayerSpec(**data["layer"]), geo["num_banks"], geo["arms_per_bank"],
                    geo["mrs_per_arm"], rounds, data.get("replicate", True))
        if "counters" in data and data["counters"] != sched.counters:
            raise ValueError("schedule counters do not match its rounds")
        return sched

    @classmethod
    def from_json(cls, text: str) -> "Schedule":
        return cls.from_dict(json.loads(text))


def plan_layer(layer: LayerSpec, cfg, replicate: bool = True) -> Schedule:
    if layer.positions < 1:
        raise GeometryError("layer has zero output geometry")
    cap = unit_capacity(layer, cfg)
    P = layer.positions
    rounds = []
    for r, start in enumerate(range(0, layer.num_items, cap)):
        items = range(start, min(start + cap, layer.num_items))
        m = len(items)
        base, extra = divmod(cap, m)
        placements = []
        max_cycles = 0
        for j, item in enumerate(items):
            reps = min(base + (j < extra), P) if replicate else 1
            max_cycles = max(max_cycles, math.ceil(P / reps))
            for k in range(reps):
                placements.append(Placement(unit=k * m + j, item=item, replica=k, replicas=reps))
        placements.sort(key=lambda p: p.unit)
        rounds.append(Round(r, tuple(placements), max_cycles))
    return Schedule(layer, cfg.num_banks, cfg.arms_per_bank, cfg.mrs_per_arm,
                    tuple(rounds), replicate)


def enumerate_pairs(layer: LayerSpec) -> list[tuple[int, int]]:
    """Brute-force reference: every item at every stride position."""
    return [(i, p) for i in range(layer.num_items) for p in range(layer.positions)]


# ------------------------------------------------------------ weight mapping


def item_weights(layer: LayerSpec, weights: np.ndarray, item: int) -> np.ndarray:
    """Signed integer weights of one item, flattened in slot order.

    ``weights`` is (out, in, K, K) for conv and (neurons, fan_in) for mlp.
    """
    a, b = layer.item_key(item)
    if layer.kind == "mlp":
        return weights[a, b * MLP_CHUNK:(b + 1) * MLP_CHUNK]
    return weights[a, b].ravel()


def check_weights(layer: LayerSpec, weights) -> np.ndarray:
    w = np.asarray(weights)
    if layer.kind == "mlp":
        shape = (layer.out_channels, layer.fan_in)
    else:
        shape = (layer.out_channels, layer.in_channels, layer.kernel_size, layer.kernel_size)
    if w.shape != shape:
        raise GeometryError(f"weights have shape {w.shape}, layer needs {shape}")
    if not np.issubdtype(w.dtype, np.integer):
        raise GeometryError("weights must be integers (quantized)")
    return w.astype(np.int64)


@dataclass(frozen=True)
class WeightMap:
    """Per-MR programming of one round.

    Arrays are parallel, one entry per mapped weight.  ``rail`` is +1 for the
    positive waveguide, -1 for the negative one.
    """

    bank: np.ndarray
    arm: np.ndarray
    slot: np.ndarray
    rail: np.ndarray
    level: np.ndarray
    unit: np.ndarray
    item: np.ndarray
    element: np.ndarray
    energy: float
    latency: float
    tuning_steps: int
    coarse_steps: int
    fine_steps: int
    tuning_energy: float
    awc_energy: float
    kernel_read_energy: float

    def __len__(self) -> int:
        return len(self.level)

    def tuples(self):
        for t in zip(self.bank, self.arm, self.slot, self.rail, self.level):
            yield tuple(int(v) for v in t)


def map_weights(schedule: Schedule, round_index: int, weights, cfg) -> WeightMap:
    """Program one round's placements: levels, AWC rows and tuning cost.

    The 40 AWC units of a core row program that row's MRs in parallel; rows
    are tuned one after another, each taking as long as its slowest MR.
    """
    layer = schedule.layer
    w = check_weights(layer, weights)
    n = cfg.awc.bit_width
    top = 2 ** n - 1
    if np.abs(w).max(initial=0) > top:
        raise GeometryError(f"weights exceed the {n}-bit magnitude range (max {top})")
    rnd = schedule.rounds[round_index]
    banks, arms, slots, rails, levels, units, items, elems = ([] for _ in range(8))
    for pl in rnd.placements:
        vec = item_weights(layer, w, pl.item)
        bank, arm0 = schedule.unit_location(pl.unit)
        for e, (da, slot) in enumerate(slot_layout(layer, len(vec), schedule.mrs_per_arm)):
            arm = arm0 + da
            if bank >= schedule.num_banks or arm >= schedule.arms_per_bank:
                raise GeometryError(f"placement overflows core at bank {bank}, arm {arm}")
            banks.append(bank)
            arms.append(arm)
            slots.append(slot)
            rails.append(-1 if vec[e] < 0 else 1)
            levels.append(abs(int(vec[e])))
            units.append(pl.unit)
            items.append(pl.item)
            elems.append(e)
    arr = {k: np.array(v, dtype=np.int64) for k, v in
           dict(bank=banks, arm=arms, slot=slots, rail=rails, level=levels,
                unit=units, item=items, element=elems).items()}
    const = cfg.constants
    tuning_e = 0.0
    coarse = fine = 0
    row_latency: dict[int, float] = {}
    rows = (arr["bank"] // cfg.bank_columns) * cfg.arms_per_bank + arr["arm"]
    for row, lvl in zip(rows.tolist(), arr["level"].tolist()):
        cost = tuning_cost(lvl, n, const)
        tuning_e += cost.energy
        coarse += cost.coarse_steps
        fine += cost.fine_steps
        row_latency[row] = max(row_latency.get(row, 0.0), cost.latency)
    awc_e = len(levels) * n * const.e_awc_per_bit
    read_e = len(levels) * n * const.e_kernel_read_per_bit
    return WeightMap(
        **arr,
        energy=tuning_e + awc_e + read_e,
        latency=sum(row_latency[r] for r in sorted(row_latency)),
        tuning_steps=len(row_latency),
        coarse_steps=coarse,
        fine_steps=fine,
        tuning_energy=tuning_e,
        awc_energy=awc_e,
        kernel_read_energy=read_e,
    )


def awc_unit_index(bank, slot, cfg):
    """Which of the row's AWC units drives the MR at (bank, slot)."""
    return (np.asarray(bank) % cfg.bank_columns) * cfg.mrs_per_arm + np.asarray(slot)
