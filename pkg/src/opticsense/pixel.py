"""ADC-less global-shutter pixel array.

Light discharges each photodiode from ``v_reset``; the activation modulator
then compares the discharge depth against its two references, so brighter
pixels produce higher ternary codes.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .devices import VamConfig, vam_encode_array


@dataclass(frozen=True)
class PixelConfig:
    v_reset: float = 1.0
    # 0.48 V full-scale discharge puts the 0.16/0.32 V references at 1/3 and 2/3 intensity
    discharge_gain: float = 0.48
    exposure: float = 1.0

    def __post_init__(self):
        if self.v_reset <= 0:
            raise ValueError("v_reset must be positive")
        if self.discharge_gain < 0 or self.exposure < 0:
            raise ValueError("discharge_gain and exposure must be non-negative")


@dataclass(frozen=True)
class Frame:
    width: int
    height: int
    intensities: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=float)
        if arr.shape != (self.height, self.width):
            raise ValueError(
                f"frame declared {self.height}x{self.width} but data is {arr.shape}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("frame intensities must lie in [0, 1]")
        object.__setattr__(self, "intensities", arr)

    @classmethod
    def from_array(cls, arr) -> "Frame":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 2:
            raise ValueError(f"a frame is a 2-D plane, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], intensities=arr)

    @classmethod
    def from_u8(cls, arr) -> "Frame":
        arr = np.asarray(arr)
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
        return cls.from_array(arr.astype(float) / 255.0)


def expose(frame: Frame, cfg: PixelConfig) -> np.ndarray:
    """Photodiode voltage after one global exposure."""
    if not isinstance(frame, Frame):
        frame = Frame.from_array(frame)
    drop = cfg.discharge_gain * cfg.exposure * frame.intensities
    return np.clip(cfg.v_reset - drop, 0.0, cfg.v_reset)


def ternarize(v_pd_plane, vam_cfg: VamConfig, v_reset: float = 1.0) -> np.ndarray:
    """Map a V_PD plane to ternary codes (uint8, same shape)."""
    v = np.asarray(v_pd_plane, dtype=float)
    if np.any(v < 0) or np.any(v > v_reset):
        raise ValueError("V_PD outside [0, v_reset]")
    return vam_encode_array(v_reset - v, vam_cfg)


def capture(images, pixel: PixelConfig, vam: VamConfig) -> np.ndarray:
    """Intensity planes (..., H, W) in [0, 1] -> ternary code planes.

    Batched equivalent of ``ternarize(expose(frame))``.
    """
    images = np.asarray(images, dtype=float)
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ValueError("frame intensities must lie in [0, 1]")
    v = np.clip(pixel.v_reset - pixel.discharge_gain * pixel.exposure * images, 0.0, pixel.v_reset)
    return ternarize(v, vam, pixel.v_reset)


# --------------------------------------------------------------------- PGM I/O


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary (P5) or ASCII (P2) PGM into a uint8 array."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval, with '#' comments
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported (maxval={maxval})")
    if magic == b"P5":
        body = data[pos + 1:pos + 1 + width * height]
        if len(body) != width * height:
            raise ValueError(f"{path}: truncated PGM body")
        arr = np.frombuffer(body, dtype=np.uint8)
    elif magic == b"P2":
        arr = np.array(data[pos:].split(), dtype=np.int64)
        if arr.size != width * height or arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
            raise ValueError(f"{path}: bad ASCII PGM body")
        arr = arr.astype(np.uint8)
    else:
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    return arr.reshape(height, width).copy()


def write_pgm(path, pixels) -> None:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())
