"""Optical processing core: arms, banks, VOM reduction and schedule execution.

Each MR slot position carries two filters, one per waveguide.  A weight's
magnitude tunes the filter on the sign-selected rail; the filter on the
other rail sits on resonance (full extinction).  The balanced photodiode
subtracts the rails, so the extinction floor cancels and the sign survives.

Ideal mode evaluates the integer dot product directly.  Noisy mode pushes
every activation through the VCSEL, MR and BPD transfer functions, with
static errors (AWC gain mismatch and noise, MR resonance drift) drawn once
per chip and round, and dynamic errors (VCSEL intensity noise, detector
noise, VOM re-modulation error) drawn per cycle.  Both kinds are keyed on
the run seed, so results never depend on evaluation order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtri

from .config import CoreConfig
from .devices import (
    MRState,
    awc_currents,
    detuning_for_transmission,
    level_transmission,
    lorentzian_transmission,
    vam_intensity,
)
from .errors import GeometryError
from .mapper import LayerSpec, Schedule, awc_unit_index, check_weights, map_weights, slot_layout

MODES = ("ideal", "noisy")

_TAG_AWC = 0xA3C
_TAG_STATIC = 0x57A
_TAG_DYNAMIC = 0xD1A
_TINY = 2.0 ** -60


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _seed(seed) -> int:
    return 0 if seed is None else int(seed)


# ------------------------------------------------------------------- types


@dataclass(frozen=True)
class Arm:
    """Ten MR slot positions; ``rail`` is +1/-1 for active slots, 0 for unused."""

    pos: tuple[MRState, ...]
    neg: tuple[MRState, ...]
    rail: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.pos) == len(self.neg) == len(self.rail) == 10):
            raise GeometryError("an arm has exactly 10 MR slots")


@dataclass(frozen=True)
class Bank:
    arms: tuple[Arm, ...]

    def __post_init__(self):
        if len(self.arms) != 5:
            raise GeometryError("a bank has exactly 5 arms")


@dataclass(frozen=True)
class BankResult:
    values: tuple[float, ...]
    idle: tuple[bool, ...]


@dataclass(frozen=True)
class StrideResult:
    bank: int
    arm: int
    unit: int
    item: int
    position: int
    value: float


@dataclass
class ProgrammedUnits:
    """Tuned core state for a set of units, arrays shaped (units, arms, slots)."""

    t_pos: np.ndarray
    t_neg: np.ndarray
    lam_pos: np.ndarray
    lam_neg: np.ndarray
    used: np.ndarray
    weights: np.ndarray
    offset: np.ndarray  # dark response per arm, subtracted at calibration
    scale: float

    @property
    def shape(self):
        return self.used.shape

    def arm(self, unit: int, arm: int, cfg: CoreConfig) -> Arm:
        mr = cfg.mr
        pos, neg, rails = [], [], []
        for s in range(self.shape[2]):
            lam_ch = mr.channel(s)
            pos.append(MRState(float(self.lam_pos[unit, arm, s]), mr.q_factor,
                               int(max(self.weights[unit, arm, s], 0)),
                               float(self.t_pos[unit, arm, s]), lam_ch, mr.t_min))
            neg.append(MRState(float(self.lam_neg[unit, arm, s]), mr.q_factor,
                               int(max(-self.weights[unit, arm, s], 0)),
                               float(self.t_neg[unit, arm, s]), lam_ch, mr.t_min))
            w = self.weights[unit, arm, s]
            rails.append(0 if not self.used[unit, arm, s] else (-1 if w < 0 else 1))
        return Arm(tuple(pos), tuple(neg), tuple(rails))


# ----------------------------------------------------------- programming


def chip_awc_gains(cfg: CoreConfig, seed) -> np.ndarray:
    """Per-AWC-unit, per-bit gain error: systematic part plus chip mismatch."""
    awc = cfg.awc
    draws = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([_seed(seed), _TAG_AWC]))).standard_normal(
        (cfg.awc_units_per_row, awc.bit_width))
    return np.asarray(awc.gain_error_per_bit) + awc.mismatch_sigma * draws


def program_units(n_units, arms, unit, arm, slot, rail, level, awc_index,
                  cfg: CoreConfig, mode: str, seed, round_index: int = 0,
                  scale: float | None = None) -> ProgrammedUnits:
    """Tune MRs for the listed (unit, arm, slot) weights.

    Every MR's programming draws (AWC conversion noise, resonance drift on
    both rails) come from one stream per (seed, round); they are always drawn
    and then scaled, so sweeping a sigma re-uses the same underlying errors.
    """
    _check_mode(mode)
    S = cfg.mrs_per_arm
    shape = (n_units, arms, S)
    unit, arm, slot = (np.asarray(a, dtype=np.int64) for a in (unit, arm, slot))
    rail = np.asarray(rail, dtype=np.int64)
    level = np.asarray(level, dtype=np.int64)
    mr = cfg.mr
    top = cfg.awc.levels - 1
    if level.size and (level.min() < 0 or level.max() > top):
        raise GeometryError(f"weight level outside the {cfg.awc.bit_width}-bit AWC range")
    lam_ch = mr.lambda0_nm + slot * mr.channel_spacing_nm

    if mode == "ideal":
        current = level.astype(float) * cfg.awc.unit_current
        drift = np.zeros((2, len(level)))
    else:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([_seed(seed), _TAG_STATIC, int(round_index)])))
        z = rng.standard_normal((3, len(level)))
        gains = chip_awc_gains(cfg, seed)[np.asarray(awc_index, dtype=np.int64)]
        current = awc_currents(level, gains, cfg.awc.unit_current, cfg.awc.noise_sigma * z[0])
        drift = mr.drift_sigma_nm * z[1:]
    frac = np.clip(current / cfg.awc.full_scale, 0.0, 1.0)
    target = level_transmission(frac, mr)
    delta = detuning_for_transmission(target, lam_ch, mr.q_factor, mr.t_min)
    lam_sel = lam_ch + delta + drift[0]
    lam_opp = lam_ch + drift[1]
    t_sel = lorentzian_transmission(lam_ch, lam_sel, mr.q_factor, mr.t_min)
    t_opp = lorentzian_transmission(lam_ch, lam_opp, mr.q_factor, mr.t_min)
    neg = rail < 0

    out = ProgrammedUnits(
        t_pos=np.zeros(shape), t_neg=np.zeros(shape),
        lam_pos=np.full(shape, mr.lambda0_nm), lam_neg=np.full(shape, mr.lambda0_nm),
        used=np.zeros(shape, dtype=bool), weights=np.zeros(shape, dtype=np.int64),
        offset=np.zeros((n_units, arms)), scale=1.0,
    )
    idx = (unit, arm, slot)
    out.t_pos[idx] = np.where(neg, t_opp, t_sel)
    out.t_neg[idx] = np.where(neg, t_sel, t_opp)
    out.lam_pos[idx] = np.where(neg, lam_opp, lam_sel)
    out.lam_neg[idx] = np.where(neg, lam_sel, lam_opp)
    out.used[idx] = True
    out.weights[idx] = rail * level
    out.scale = calibration_scale(cfg) if scale is None else scale
    # dark-frame probe: bias-floor light leaking through the tuned filters
    dark = np.zeros(shape, dtype=np.int64)
    out.offset = _raw_response(dark, out, cfg)
    return out


def _raw_response(acts, prog: ProgrammedUnits, cfg: CoreConfig, rin=None, bpd_noise=None):
    """BPD output per arm before calibration; leading dims broadcast."""
    intensity = vam_intensity(acts, cfg.vam)
    if rin is not None:
        intensity = intensity * (1.0 + rin)
    eta = cfg.mr.loss_factor
    pos = 0.0
    neg = 0.0
    for s in range(prog.used.shape[-1]):
        on = prog.used[..., s]
        pos = pos + np.where(on, intensity[..., s] * prog.t_pos[..., s], 0.0)
        neg = neg + np.where(on, intensity[..., s] * prog.t_neg[..., s], 0.0)
    raw = cfg.bpd.responsivity * (eta * pos - eta * neg)
    if bpd_noise is not None:
        raw = raw + bpd_noise
    return raw


def calibration_scale(cfg: CoreConfig) -> float:
    """Electrical response of one a=1, w=1 product (dark response removed)."""
    prog = program_units(1, 1, [0], [0], [0], [1], [1], [0], cfg, "ideal", 0, scale=1.0)
    one = np.zeros((1, 1, cfg.mrs_per_arm), dtype=np.int64)
    one[0, 0, 0] = 1
    lit = _raw_response(one, prog, cfg)
    return float(lit[0, 0] - prog.offset[0, 0])


def unit_values(acts, prog: ProgrammedUnits, cfg: CoreConfig, mode: str,
                dyn=None, vom: bool = False, index=None):
    """Calibrated output of units for activations shaped (..., arms, slots).

    ``index`` selects which programmed units the leading positions use; ``dyn``
    holds standard normals shaped (..., arms, slots + 2): per-slot VCSEL noise,
    then BPD noise, then VOM error.
    """
    sel = (lambda a: a) if index is None else (lambda a: a[index])
    if mode == "ideal":
        prod = np.asarray(acts, dtype=np.int64) * sel(prog.weights)
        return prod.sum(axis=(-1, -2))
    sub = ProgrammedUnits(sel(prog.t_pos), sel(prog.t_neg), None, None, sel(prog.used),
                          None, sel(prog.offset), prog.scale)
    S = prog.used.shape[-1]
    rin = bpd_noise = None
    if dyn is not None:
        if cfg.vam.noise_sigma:
            rin = cfg.vam.noise_sigma * dyn[..., :S]
        if cfg.bpd.noise_lsb:
            live = sub.used.any(axis=-1)
            bpd_noise = np.where(live, cfg.bpd.noise_lsb * prog.scale * dyn[..., S], 0.0)
    raw = _raw_response(acts, sub, cfg, rin, bpd_noise)
    y = (raw - sub.offset) / prog.scale
    if vom and dyn is not None and cfg.vom.sigma:
        y = y * (1.0 + cfg.vom.sigma * dyn[..., S + 1])
    total = y[..., 0]
    for a in range(1, y.shape[-1]):
        total = total + y[..., a]
    return total


def has_dynamic_noise(cfg: CoreConfig) -> bool:
    return bool(cfg.vam.noise_sigma or cfg.bpd.noise_lsb or cfg.vom.sigma)


def dynamic_normals(seed, sample: int, round_index: int, per_cycle_shape,
                    start: int, count: int) -> np.ndarray:
    """Standard normals for cycles [start, start+count) of one (sample, round).

    Uniform draws consume exactly one 64-bit word each, so any cycle can be
    reached by advancing the generator instead of replaying earlier cycles.
    """
    bg = np.random.PCG64(np.random.SeedSequence(
        [_seed(seed), _TAG_DYNAMIC, int(sample), int(round_index)]))
    per = int(np.prod(per_cycle_shape))
    bg.advance(start * per)
    u = np.random.Generator(bg).random(count * per)
    return ndtri(np.maximum(u, _TINY)).reshape((count, *per_cycle_shape))


# ------------------------------------------------------- arm / bank / VOM


def _check_workload(activations, weights, max_len: int):
    a = np.asarray(activations, dtype=np.int64).ravel()
    w = np.asarray(weights, dtype=np.int64).ravel()
    if a.size != w.size:
        raise ValueError(f"length mismatch: {a.size} activations vs {w.size} weights")
    if a.size > max_len:
        raise ValueError(f"length overflow: {a.size} > {max_len} usable slots")
    if np.any((a < 0) | (a > 2)):
        raise ValueError("activations must be ternary codes in {0, 1, 2}")
    return a, w


def arm_mac(activations, weights, cfg: CoreConfig | None = None, mode: str = "ideal",
            seed=None, max_len: int = 9, raw: bool = False):
    """Signed dot product of ternary activations and n-bit weights on one arm.

    Returns the calibrated value (integer units); ``raw=True`` returns the
    BPD-side electrical value, i.e. ``calibration_scale(cfg) * result``.
    """
    cfg = cfg or CoreConfig()
    _check_mode(mode)
    a, w = _check_workload(activations, weights, max_len)
    top = cfg.awc.levels - 1
    if np.abs(w).max(initial=0) > top:
        raise ValueError(f"weight magnitude exceeds {cfg.awc.bit_width}-bit range")
    if mode == "ideal":
        value = float(np.dot(a, w))
        return calibration_scale(cfg) * value if raw else value
    L = a.size
    slots = np.arange(L)
    prog = program_units(1, 1, np.zeros(L), np.zeros(L), slots, np.where(w < 0, -1, 1),
                         np.abs(w), awc_unit_index(0, slots, cfg), cfg, mode, seed)
    acts = np.zeros((1, 1, cfg.mrs_per_arm), dtype=np.int64)
    acts[0, 0, :L] = a
    dyn = dynamic_normals(seed, 0, 0, (1, 1, cfg.mrs_per_arm + 2), 0, 1)[0]
    value = float(unit_values(acts, prog, cfg, mode, dyn)[0])
    return prog.scale * value if raw else value


def bank_compute(workloads, cfg: CoreConfig | None = None, mode: str = "ideal",
                 seed=None, max_len: int = 9) -> BankResult:
    """Run up to five arm workloads ``(activations, weights)``; ``None`` is idle."""
    cfg = cfg or CoreConfig()
    workloads = list(workloads)
    if len(workloads) > cfg.arms_per_bank:
        raise GeometryError(f"{len(workloads)} workloads for {cfg.arms_per_bank} arms")
    workloads += [None] * (cfg.arms_per_bank - len(workloads))
    seeds = np.random.SeedSequence(_seed(seed)).generate_state(len(workloads))
    values, idle = [], []
    for k, wl in enumerate(workloads):
        if wl is None:
            values.append(0.0)
            idle.append(True)
        else:
            values.append(arm_mac(wl[0], wl[1], cfg, mode, int(seeds[k]), max_len))
            idle.append(False)
    return BankResult(tuple(values), tuple(idle))


def split_kernel(values, per_arm: int = 10) -> list[np.ndarray]:
    """Cut a flattened 5x5/7x7 kernel into per-arm pieces (10, 10, ..., rest)."""
    v = np.asarray(values).ravel()
    return [v[i:i + per_arm] for i in range(0, v.size, per_arm)]


def vom_reduce(partials, cfg: CoreConfig | None = None, mode: str = "ideal", seed=None) -> float:
    """Re-modulate and sum arm partials; noisy mode applies (1 + eps) per partial."""
    p = np.asarray(partials, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("vom_reduce needs at least one partial")
    _check_mode(mode)
    if mode == "noisy" and cfg is not None and cfg.vom.sigma:
        eps = np.random.default_rng(_seed(seed)).standard_normal(p.size)
        p = p * (1.0 + cfg.vom.sigma * eps)
    total = 0.0
    for x in p:
        total += x
    return total


# ------------------------------------------------------ schedule execution


def program_round(schedule: Schedule, round_index: int, weights, cfg: CoreConfig,
                  mode: str, seed, scale: float | None = None):
    """Tune the MRs of one round; returns (ProgrammedUnits, WeightMap)."""
    wm = map_weights(schedule, round_index, weights, cfg)
    rnd = schedule.rounds[round_index]
    q_of_unit = {pl.unit: q for q, pl in enumerate(rnd.placements)}
    q = np.array([q_of_unit[u] for u in wm.unit.tolist()], dtype=np.int64)
    first_arm = np.array([schedule.unit_location(u)[1] for u in wm.unit.tolist()], dtype=np.int64)
    prog = program_units(
        len(rnd.placements), schedule.arms_per_unit, q, wm.arm - first_arm, wm.slot,
        wm.rail, wm.level, awc_unit_index(wm.bank, wm.slot, cfg), cfg, mode, seed,
        round_index, scale)
    return prog, wm


def im2col(codes, layer: LayerSpec) -> np.ndarray:
    """(N, C, H, W) codes -> (N, C, positions, K*K) windows, raster order."""
    x = np.asarray(codes)
    if x.ndim != 4 or x.shape[1:] != (layer.in_channels, layer.in_height, layer.in_width):
        raise GeometryError(
            f"input shape {x.shape[1:]} does not match layer "
            f"{(layer.in_channels, layer.in_height, layer.in_width)}")
    K, s, pad = layer.kernel_size, layer.stride, layer.padding
    x = np.pad(x.astype(np.int64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (K, K), axis=(2, 3))[:, :, ::s, ::s]
    win = win[:, :, :layer.out_height, :layer.out_width]
    return win.reshape(x.shape[0], layer.in_channels, layer.positions, K * K)


def _item_inputs(layer: LayerSpec, cols, item: int):
    """Activations feeding one item, (N, P, size)."""
    a, b = layer.item_key(item)
    if layer.kind == "mlp":
        chunk = cols[:, b * 9:(b + 1) * 9]
        return chunk[:, None, :]
    return cols[:, b]


def _to_slots(vals, layer: LayerSpec, arms: int, S: int):
    """Scatter (..., size) activations into the (..., arms, slots) layout."""
    out = np.zeros(vals.shape[:-1] + (arms, S), dtype=vals.dtype)
    for e, (da, slot) in enumerate(slot_layout(layer, vals.shape[-1], S)):
        out[..., da, slot] = vals[..., e]
    return out


def _flatten_inputs(codes, layer: LayerSpec):
    if layer.kind == "mlp":
        x = np.asarray(codes, dtype=np.int64).reshape(len(codes), -1)
        if x.shape[1] != layer.fan_in:
            raise GeometryError(f"input has {x.shape[1]} values, layer fan-in is {layer.fan_in}")
        return x
    return im2col(codes, layer)


def _output_array(layer: LayerSpec, n: int, mode: str):
    dtype = np.int64 if mode == "ideal" else float
    if layer.kind == "mlp":
        return np.zeros((n, layer.out_channels), dtype=dtype)
    return np.zeros((n, layer.out_channels, layer.positions), dtype=dtype)


def _finish(out, layer: LayerSpec):
    if layer.kind == "mlp":
        return out
    return out.reshape(out.shape[0], layer.out_channels, layer.out_height, layer.out_width)


def execute_schedule(schedule: Schedule, codes, weights, cfg: CoreConfig, mode: str = "ideal",
                     seed=None, samples=None, programmed=None):
    """Vectorized evaluation of a whole schedule over a batch of inputs.

    ``codes`` is (N, C, H, W) for conv and (N, ...) for mlp; ``samples`` gives
    the sample id keying each row's dynamic noise (defaults to 0..N-1).
    """
    _check_mode(mode)
    layer = schedule.layer
    w = check_weights(layer, weights)
    cols = _flatten_inputs(codes, layer)
    n = cols.shape[0]
    samples = np.arange(n) if samples is None else np.asarray(samples)
    S, A = schedule.mrs_per_arm, schedule.arms_per_unit
    P = layer.positions
    vom = schedule.vom_depth > 0
    noisy_dyn = mode == "noisy" and has_dynamic_noise(cfg)
    out = _output_array(layer, n, mode)
    if programmed is None:
        programmed = [program_round(schedule, r, w, cfg, mode, seed)[0]
                      for r in range(len(schedule.rounds))]
    for rnd, prog in zip(schedule.rounds, programmed):
        nq = len(rnd.placements)
        dyn = None
        if noisy_dyn:
            dyn = np.stack([dynamic_normals(seed, s, rnd.index, (nq, A, S + 2), 0, rnd.cycles)
                            for s in samples])
        by_item: dict[int, list[int]] = {}
        for q, pl in enumerate(rnd.placements):
            by_item.setdefault(pl.item, []).append(q)
        for item in sorted(by_item):
            qs = by_item[item]
            reps = rnd.placements[qs[0]].replicas
            replica_q = np.array(sorted(qs, key=lambda q: rnd.placements[q].replica))
            pos = np.arange(P)
            q_idx = replica_q[pos % reps]
            c_idx = pos // reps
            acts = _to_slots(_item_inputs(layer, cols, item), layer, A, S)
            d = None if dyn is None else dyn[:, c_idx, q_idx]
            vals = unit_values(acts, prog, cfg, mode, d, vom, index=q_idx)
            a, _ = layer.item_key(item)
            if layer.kind == "mlp":
                out[:, a] = out[:, a] + vals[:, 0]
            else:
                out[:, a] = out[:, a] + vals
    return _finish(out, layer)


@dataclass(frozen=True)
class CycleStep:
    round_index: int
    cycle: int
    pairs: tuple  # ((Placement, position), ...)


def cycle_steps(schedule: Schedule):
    for rnd in schedule.rounds:
        for c, batch in enumerate(rnd.cycle_plan(schedule.layer.positions)):
            yield CycleStep(rnd.index, c, tuple(batch))


def core_cycle(step: CycleStep, codes, schedule: Schedule, programmed: ProgrammedUnits,
               cfg: CoreConfig, mode: str = "ideal", seed=None, sample: int = 0):
    """Evaluate every mapped unit for one cycle of one input sample.

    ``codes`` is the (C, H, W) code plane (or flat vector for mlp).  Results
    come back ordered by unit, i.e. by (bank, arm).
    """
    _check_mode(mode)
    if not step.pairs:
        return []
    layer = schedule.layer
    S, A = schedule.mrs_per_arm, schedule.arms_per_unit
    if programmed.shape[1:] != (A, S):
        raise GeometryError("programmed state does not match the schedule geometry")
    rnd = schedule.rounds[step.round_index]
    q_of_unit = {pl.unit: q for q, pl in enumerate(rnd.placements)}
    nq = len(rnd.placements)
    cols = _flatten_inputs(np.asarray(codes)[None], layer)
    dyn = None
    if mode == "noisy" and has_dynamic_noise(cfg):
        dyn = dynamic_normals(seed, sample, step.round_index, (nq, A, S + 2), step.cycle, 1)[0]
    vom = schedule.vom_depth > 0
    results = []
    for pl, p in sorted(step.pairs, key=lambda t: t[0].unit):
        if pl.unit not in q_of_unit or p >= layer.positions:
            raise GeometryError(f"unit {pl.unit} / position {p} not in this round")
        q = q_of_unit[pl.unit]
        acts = _to_slots(_item_inputs(layer, cols, pl.item)[0, p], layer, A, S)
        d = None if dyn is None else dyn[q]
        val = unit_values(acts, programmed, cfg, mode, d, vom, index=q)
        bank, arm = schedule.unit_location(pl.unit)
        results.append(StrideResult(bank, arm, pl.unit, pl.item, p, val.item()))
    return results


def execute_by_cycles(schedule: Schedule, codes, weights, cfg: CoreConfig, mode: str = "ideal",
                      seed=None, sample: int = 0):
    """Reference executor: walks the schedule cycle by cycle for one input."""
    layer = schedule.layer
    w = check_weights(layer, weights)
    programmed = [program_round(schedule, r, w, cfg, mode, seed)[0]
                  for r in range(len(schedule.rounds))]
    partial: dict[tuple[int, int], float] = {}
    for step in cycle_steps(schedule):
        for res in core_cycle(step, codes, schedule, programmed[step.round_index],
                              cfg, mode, seed, sample):
            partial[(res.item, res.position)] = res.value
    out = _output_array(layer, 1, mode)
    for (item, p) in sorted(partial):
        a, _ = layer.item_key(item)
        if layer.kind == "mlp":
            out[0, a] = out[0, a] + partial[(item, p)]
        else:
            out[0, a, p] = out[0, a, p] + partial[(item, p)]
    return _finish(out, layer)[0]


__all__ = [
    "Arm", "Bank", "BankResult", "CycleStep", "ProgrammedUnits", "StrideResult",
    "arm_mac", "bank_compute", "calibration_scale", "core_cycle",
    "cycle_steps", "execute_by_cycles", "execute_schedule", "im2col", "program_round",
    "program_units", "split_kernel", "unit_values", "vom_reduce",
]
