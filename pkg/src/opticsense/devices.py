"""Behavioral models of the analog and optical devices.

Covers the microring resonator (MR), the approximate weight converter (AWC),
the VCSEL activation modulator (VAM) thresholding and the balanced
photodiode (BPD).  Everything here is a pure function of its inputs; random
perturbations are always driven by an explicit seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MrConfig:
    lambda0_nm: float = 1550.0
    q_factor: float = 5000.0
    t_min: float = 0.01  # on-resonance extinction floor
    channel_spacing_nm: float = 0.8
    max_detuning_nm: float = 0.4  # park position of the full-scale weight level
    drift_sigma_nm: float = 0.0  # static resonance error per MR
    insertion_loss_db: float = 1.0

    def __post_init__(self):
        if self.lambda0_nm <= 0 or self.q_factor <= 0:
            raise ValueError("MR wavelength and Q-factor must be positive")
        if not 0.0 <= self.t_min < 1.0:
            raise ValueError(f"t_min must lie in [0, 1), got {self.t_min}")
        if self.max_detuning_nm <= 0 or self.drift_sigma_nm < 0:
            raise ValueError("max_detuning_nm must be > 0 and drift_sigma_nm >= 0")

    def channel(self, slot: int) -> float:
        return self.lambda0_nm + slot * self.channel_spacing_nm

    @property
    def loss_factor(self) -> float:
        return 10.0 ** (-self.insertion_loss_db / 10.0)


@dataclass(frozen=True)
class MRState:
    """One tuned microring.  Wavelengths are in nm."""

    lambda_res: float
    q_factor: float
    tuning_level: int = 0
    tuned_transmission: float = 1.0
    lambda_channel: float | None = None
    t_min: float = 0.01

    @property
    def fwhm(self) -> float:
        return self.lambda_res / self.q_factor


@dataclass(frozen=True)
class AwcConfig:
    bit_width: int = 4
    unit_current: float = 1.0
    gain_error_per_bit: tuple[float, ...] = ()
    noise_sigma: float = 0.0
    # spread of the per-unit random gain mismatch (drawn once per chip)
    mismatch_sigma: float = 0.0

    def __post_init__(self):
        if not 1 <= self.bit_width <= 4:
            raise ValueError(f"AWC bit width must be in [1, 4], got {self.bit_width}")
        gains = tuple(float(g) for g in self.gain_error_per_bit)
        if not gains:
            gains = (0.0,) * self.bit_width
        if len(gains) != self.bit_width:
            raise ValueError(
                f"gain_error_per_bit needs {self.bit_width} entries, got {len(gains)}")
        object.__setattr__(self, "gain_error_per_bit", gains)
        if self.noise_sigma < 0 or self.mismatch_sigma < 0:
            raise ValueError("AWC noise terms must be non-negative")

    @property
    def levels(self) -> int:
        return 2 ** self.bit_width

    @property
    def full_scale(self) -> float:
        return self.unit_current * (self.levels - 1)


@dataclass(frozen=True)
class TernaryCode:
    value: int
    t1: bool
    t2: bool

    def __post_init__(self):
        if (not self.t1) and self.t2:
            raise ValueError("sense-amp pair (t1=0, t2=1) is not a valid state")
        if self.value != int(self.t1) + int(self.t2):
            raise ValueError("value must equal t1 + t2")


@dataclass(frozen=True)
class VamConfig:
    v_ref_low: float = 0.16
    v_ref_high: float = 0.32
    supply: float = 1.0
    bias_current: float = 0.1  # always-on emission floor, code 0
    intensity_per_level: float = 1.0
    noise_sigma: float = 0.0  # relative intensity noise per emitted symbol

    def __post_init__(self):
        if not 0 < self.v_ref_low < self.v_ref_high < self.supply:
            raise ValueError("need 0 < v_ref_low < v_ref_high < supply")
        if self.bias_current <= 0 or self.intensity_per_level <= 0:
            raise ValueError("VCSEL bias floor and level step must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass(frozen=True)
class BpdConfig:
    responsivity: float = 1.0
    noise_lsb: float = 0.0  # detector noise, in units of one output LSB


@dataclass(frozen=True)
class VomConfig:
    sigma: float = 0.0  # relative re-modulation error per partial sum


# ---------------------------------------------------------------- microring


def lorentzian_transmission(lam, lambda_res, q_factor, t_min):
    """Through-port notch; broadcasts over numpy arrays."""
    half = np.asarray(lambda_res) / q_factor / 2.0
    det = np.asarray(lam) - lambda_res
    return 1.0 - (1.0 - t_min) * half**2 / (det**2 + half**2)


def mr_transmission(state: MRState, lam: float) -> float:
    if state.q_factor <= 0:
        raise ValueError(f"invalid MR state: q_factor={state.q_factor}")
    if state.lambda_res <= 0:
        raise ValueError(f"invalid MR state: lambda_res={state.lambda_res}")
    if lam <= 0:
        raise ValueError(f"wavelength must be positive, got {lam}")
    return float(lorentzian_transmission(lam, state.lambda_res, state.q_factor, state.t_min))


def detuning_for_transmission(target, lambda_ch, q_factor, t_min):
    """Red-side detuning that puts the channel at ``target`` transmission.

    The notch width follows the shifted resonance (FWHM = lambda_res / Q), so
    the inversion is solved exactly rather than with the channel's FWHM.
    """
    target = np.asarray(target, dtype=float)
    if np.any(target < t_min) or np.any(target >= 1.0):
        raise ValueError("target transmission must lie in [t_min, 1)")
    s = np.sqrt((1.0 - t_min) / (1.0 - target) - 1.0)
    return s * lambda_ch / (2.0 * q_factor - s)


def full_scale_transmission(mr: MrConfig) -> float:
    """Transmission of the full-scale level, shared by every channel.

    Set by parking the slot-0 ring ``max_detuning_nm`` off its channel; other
    channels solve for their own detuning to hit the same value, so a level
    means the same weight on every slot.
    """
    lam = mr.lambda0_nm
    return float(lorentzian_transmission(lam, lam + mr.max_detuning_nm, mr.q_factor, mr.t_min))


def level_transmission(fraction, mr: MrConfig):
    """Channel transmission realizing a normalized weight in [0, 1]."""
    t_max = full_scale_transmission(mr)
    return mr.t_min + (t_max - mr.t_min) * np.asarray(fraction, dtype=float)


@dataclass(frozen=True)
class TuningCost:
    energy: float
    latency: float
    coarse_steps: int
    fine_steps: int


def hybrid_tuning_steps(level: int, bit_width: int) -> tuple[int, int]:
    """(coarse TO steps, fine EO steps) to reach ``level``.

    Thermo-optic covers whole quartiles of the level range, electro-optic the
    remainder.  Each stage always spends one settle step.
    """
    quartile = max(1, (2 ** bit_width) // 4)
    return level // quartile + 1, level % quartile + 1


def tune_mr(target_level: int, cfg, slot: int = 0) -> tuple[MRState, float, float]:
    """Tune one MR to a weight level.  ``cfg`` is a :class:`CoreConfig`.

    Returns the state plus the hybrid TO+EO tuning energy (J) and latency (s).
    """
    n = cfg.awc.bit_width
    top = 2**n - 1
    if not 0 <= target_level <= top:
        raise ValueError(f"level {target_level} out of range [0, {top}] for {n}-bit weights")
    mr = cfg.mr
    lam_ch = mr.channel(slot)
    target = float(level_transmission(target_level / top, mr))
    delta = float(detuning_for_transmission(target, lam_ch, mr.q_factor, mr.t_min))
    state = MRState(
        lambda_res=lam_ch + delta,
        q_factor=mr.q_factor,
        tuning_level=target_level,
        tuned_transmission=float(
            lorentzian_transmission(lam_ch, lam_ch + delta, mr.q_factor, mr.t_min)),
        lambda_channel=lam_ch,
        t_min=mr.t_min,
    )
    cost = tuning_cost(target_level, n, cfg.constants)
    return state, cost.energy, cost.latency


def tuning_cost(level: int, bit_width: int, constants) -> TuningCost:
    coarse, fine = hybrid_tuning_steps(level, bit_width)
    return TuningCost(
        energy=coarse * constants.e_to_step + fine * constants.e_eo_step,
        latency=coarse * constants.t_to_step + fine * constants.t_eo_step,
        coarse_steps=coarse,
        fine_steps=fine,
    )


def normalized_weight(state: MRState, mr: MrConfig) -> float:
    """Inverse of the level map: (T - T_min) / (T_max - T_min)."""
    return (state.tuned_transmission - mr.t_min) / (full_scale_transmission(mr) - mr.t_min)


# ----------------------------------------------------------------------- AWC


def awc_currents(codes, gains, unit_current: float, noise=None):
    """Vectorized AWC: ``codes`` (...), ``gains`` (..., n) broadcastable."""
    codes = np.asarray(codes, dtype=np.int64)
    gains = np.asarray(gains, dtype=float)
    n = gains.shape[-1]
    bits = (codes[..., None] >> np.arange(n)) & 1
    weights = unit_current * (2.0 ** np.arange(n)) * (1.0 + gains)
    out = np.sum(bits * weights, axis=-1)
    if noise is not None:
        out = out + noise
    return out


def awc_convert(weight_code: int, cfg: AwcConfig, rng_seed=None) -> float:
    if not 0 <= weight_code < cfg.levels:
        raise ValueError(
            f"weight code {weight_code} out of range [0, {cfg.levels - 1}]")
    noise = None
    if cfg.noise_sigma > 0:
        noise = cfg.noise_sigma * np.random.default_rng(rng_seed).standard_normal()
    return float(awc_currents(weight_code, cfg.gain_error_per_bit, cfg.unit_current, noise))


# ----------------------------------------------------------------------- VAM


def vam_encode(v_pd: float, cfg: VamConfig) -> TernaryCode:
    if v_pd < 0:
        raise ValueError(f"negative sense voltage {v_pd}")
    if v_pd > cfg.supply:
        raise ValueError(f"sense voltage {v_pd} exceeds supply {cfg.supply}")
    # equality resolves to the lower code
    t1 = v_pd > cfg.v_ref_low
    t2 = v_pd > cfg.v_ref_high
    return TernaryCode(int(t1) + int(t2), t1, t2)


def vam_encode_array(v, cfg: VamConfig) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("negative sense voltage in plane")
    if np.any(v > cfg.supply):
        raise ValueError("sense voltage exceeds supply")
    return ((v > cfg.v_ref_low).astype(np.uint8) + (v > cfg.v_ref_high).astype(np.uint8))


def vam_intensity(codes, cfg: VamConfig):
    """Emitted optical intensity per ternary code (bias floor at code 0)."""
    return cfg.bias_current + cfg.intensity_per_level * np.asarray(codes, dtype=float)


# ----------------------------------------------------------------------- BPD


def bpd_detect(pos_intensity: float, neg_intensity: float, responsivity: float = 1.0) -> float:
    if pos_intensity < 0 or neg_intensity < 0:
        raise ValueError("optical intensities must be non-negative")
    return responsivity * (pos_intensity - neg_intensity)
