"""Quantized inference: optical first layer, exact reference engine for the rest.

The first convolution runs through the core model (ideal or noisy); every
later layer is evaluated in float64 from a small layer descriptor.  An
independent integer convolution (``oracle_conv``) is the ground truth for the
ideal optical path.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import DATA_DIR, CoreConfig, to_dict
from .errors import ConfigError, FixtureError, GeometryError
from .fixtures import Fixture, load_fixture
from .mapper import KERNEL_SIZES, LayerSpec, Schedule, plan_layer
from .opc import MODES, execute_schedule, program_round
from .pixel import Frame, capture

LAYER_OPS = ("dequant", "relu", "maxpool", "avgpool", "conv", "linear", "flatten")
ACTIVATION_BITS = 2  # ternary codes need two bits
CHUNK = 50  # evaluation batch; fixed so results do not depend on thread count


# ------------------------------------------------------------- quantization


def quantize(weights, bit_width: int) -> tuple[np.ndarray, float]:
    """Symmetric sign-magnitude quantization to ``bit_width`` magnitude bits.

    Returns integer codes in [-(2^n - 1), 2^n - 1] and the per-layer scale
    max|w| / (2^n - 1).  Ties round away from zero.
    """
    if not 1 <= int(bit_width) <= 4:
        raise ConfigError(f"weight bit width must be in 1..4, got {bit_width}")
    w = np.asarray(weights, dtype=np.float64)
    top = 2 ** int(bit_width) - 1
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    if peak == 0.0:
        return np.zeros(w.shape, dtype=np.int64), 1.0
    scale = peak / top
    mag = np.minimum(np.floor(np.abs(w) / scale + 0.5), top)
    return (np.sign(w) * mag).astype(np.int64), scale


# ------------------------------------------------------------------- model


@dataclass(frozen=True)
class QuantModel:
    """First-layer integer kernels plus an exact descriptor for the rest."""

    first: LayerSpec
    weights: np.ndarray
    bit_width: int
    scale: float
    layers: tuple = ()
    params: dict = field(default_factory=dict)
    name: str = "model"
    num_classes: int = 10

    def __post_init__(self):
        w = np.asarray(self.weights)
        if not np.issubdtype(w.dtype, np.integer):
            raise ConfigError("first-layer weights must be integer codes")
        top = 2 ** self.bit_width - 1
        if w.size and np.abs(w).max() > top:
            raise ConfigError(f"first-layer weights exceed {self.bit_width}-bit magnitude")
        f = self.first
        if f.kind != "conv" or f.kernel_size not in KERNEL_SIZES:
            raise GeometryError("the optical first layer must be a 3x3, 5x5 or 7x7 convolution")
        if w.shape != (f.out_channels, f.in_channels, f.kernel_size, f.kernel_size):
            raise GeometryError(f"weights {w.shape} do not match the first layer")
        for op in self.layers:
            if op.get("op") not in LAYER_OPS:
                raise ConfigError(f"unsupported layer kind {op.get('op')!r}")
            for key in ("weight", "bias"):
                if key in op and op[key] not in self.params:
                    raise FixtureError(f"layer parameter {op[key]!r} missing from model")
        shape = output_shape(self, (f.out_channels, f.out_height, f.out_width))
        if len(shape) != 1:
            raise GeometryError(f"descriptor ends with shape {shape}, expected a vector")

    @property
    def config_id(self) -> str:
        return f"[{self.bit_width}:{ACTIVATION_BITS}]"

    def requantize(self, bit_width: int) -> "QuantModel":
        """Same network with first-layer kernels quantized to another width."""
        if "conv1.weight_float" not in self.params:
            raise FixtureError("model carries no float first-layer weights to requantize")
        codes, scale = quantize(self.params["conv1.weight_float"], bit_width)
        return QuantModel(self.first, codes, int(bit_width), scale, self.layers, self.params,
                          self.name, self.num_classes)


def model_from_fixture(fx: Fixture, bit_width: int | None = None) -> QuantModel:
    meta = fx.meta
    try:
        first = LayerSpec(**meta["first"])
        bits = int(meta.get("bit_width", 4) if bit_width is None else bit_width)
        layers = tuple(dict(op) for op in meta["layers"])
        w_float = fx["conv1.weight_float"]
    except (KeyError, TypeError) as exc:
        raise FixtureError(f"{fx.path}: malformed model manifest: {exc}") from exc
    codes, scale = quantize(w_float, bits)
    params = {k: np.asarray(v, dtype=np.float64) for k, v in fx.tensors.items()}
    return QuantModel(first, codes, bits, scale, layers, params,
                      str(meta.get("name", "model")), int(meta.get("num_classes", 10)))


def load_model(path, bit_width: int | None = None) -> QuantModel:
    return model_from_fixture(load_fixture(path, kind="model"), bit_width)


# ------------------------------------------------------------------ dataset


@dataclass(frozen=True)
class Dataset:
    """8-bit grayscale images (N, H, W) and integer labels (N,)."""

    images: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        if self.images.ndim != 3 or self.images.dtype != np.uint8:
            raise FixtureError("dataset images must be uint8 (N, H, W)")
        if self.labels.shape != (len(self.images),):
            raise FixtureError("dataset needs exactly one label per image")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.name)

    def intensities(self) -> np.ndarray:
        return self.images.astype(np.float64) / 255.0


def load_dataset(path) -> Dataset:
    fx = load_fixture(path, kind="dataset")
    return Dataset(fx["images"], fx["labels"].astype(np.int64), str(fx.meta.get("name", "dataset")))


# ------------------------------------------------------------------- oracle


def oracle_conv(codes, kernels, layer: LayerSpec) -> np.ndarray:
    """Exact integer cross-correlation, computed by direct summation.

    ``codes`` is (C, H, W) or (N, C, H, W); the result is (O, OH, OW) or
    (N, O, OH, OW).  Each output is the sum over input channel and kernel
    offset of code * weight, in int64.
    """
    x = np.asarray(codes)
    single = x.ndim == 3
    if single:
        x = x[None]
    w = np.asarray(kernels)
    if not (np.issubdtype(x.dtype, np.integer) and np.issubdtype(w.dtype, np.integer)):
        raise TypeError("oracle_conv works on integer codes and kernels")
    K, s, pad = layer.kernel_size, layer.stride, layer.padding
    if x.ndim != 4 or x.shape[1:] != (layer.in_channels, layer.in_height, layer.in_width):
        raise GeometryError(f"frame shape {x.shape} does not match the layer")
    if w.shape != (layer.out_channels, layer.in_channels, K, K):
        raise GeometryError(f"kernel shape {w.shape} does not match the layer")
    x = np.pad(x.astype(np.int64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    w = w.astype(np.int64)
    OH, OW = layer.out_height, layer.out_width
    out = np.zeros((x.shape[0], layer.out_channels, OH, OW), dtype=np.int64)
    for o in range(layer.out_channels):
        for c in range(layer.in_channels):
            for dy in range(K):
                for dx in range(K):
                    patch = x[:, c, dy:dy + s * (OH - 1) + 1:s, dx:dx + s * (OW - 1) + 1:s]
                    out[:, o] += w[o, c, dy, dx] * patch
    return out[0] if single else out


# -------------------------------------------------------------- first layer


def frame_codes(images, cfg: CoreConfig) -> np.ndarray:
    """Intensity planes (N, H, W) or (N, C, H, W) -> (N, C, H, W) ternary codes."""
    codes = capture(images, cfg.pixel, cfg.vam)
    return codes[:, None] if codes.ndim == 3 else codes


def run_first_layer(frame, model: QuantModel, cfg: CoreConfig, mode: str = "ideal", seed=0,
                    sample: int = 0, schedule: Schedule | None = None) -> np.ndarray:
    """One frame through the pixel array and the optical core.

    Returns the first-layer maps (O, OH, OW) in integer product units; ideal
    mode gives int64 values equal to ``oracle_conv``.
    """
    if isinstance(frame, Frame):
        frame = frame.intensities
    frame = np.asarray(frame, dtype=np.float64)
    codes = frame_codes(frame[None], cfg)
    schedule = schedule or plan_layer(model.first, cfg)
    return execute_schedule(schedule, codes, model.weights, cfg, mode, seed,
                            samples=[sample])[0]


# ------------------------------------------------------------------- rest


def _pool(x, size: int, stride: int, reduce):
    win = sliding_window_view(x, (size, size), axis=(-2, -1))[..., ::stride, ::stride, :, :]
    return reduce(win, axis=(-2, -1))


def _conv_float(x, w, b, stride: int, padding: int):
    K = w.shape[-1]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (K, K), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("nchwij,ocij->nohw", win, w, optimize=True)
    return out if b is None else out + b[None, :, None, None]


def _apply(op: dict, x: np.ndarray, model: QuantModel) -> np.ndarray:
    kind = op["op"]
    p = model.params
    if kind == "dequant":
        x = x * model.scale
        if "bias" in op:
            b = p[op["bias"]]
            x = x + b.reshape((1, -1) + (1,) * (x.ndim - 2))
        return x
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind in ("maxpool", "avgpool"):
        size = int(op.get("size", 2))
        return _pool(x, size, int(op.get("stride", size)), np.max if kind == "maxpool" else np.mean)
    if kind == "conv":
        b = p[op["bias"]] if "bias" in op else None
        return _conv_float(x, p[op["weight"]], b, int(op.get("stride", 1)),
                           int(op.get("padding", 0)))
    if kind == "flatten":
        return x.reshape(len(x), -1)
    if kind == "linear":
        y = x @ p[op["weight"]].T
        return y + p[op["bias"]] if "bias" in op else y
    raise ConfigError(f"unsupported layer kind {kind!r}")


def output_shape(model: QuantModel, shape: tuple) -> tuple:
    """Propagate a per-sample shape through the descriptor."""
    probe = np.zeros((1,) + tuple(shape))
    for op in model.layers:
        try:
            probe = _apply(op, probe, model)
        except (ValueError, IndexError) as exc:
            raise GeometryError(f"layer {op} does not fit input shape {probe.shape[1:]}: {exc}") \
                from exc
    return probe.shape[1:]


def run_rest(features, model: QuantModel) -> np.ndarray:
    """Evaluate the descriptor on first-layer maps; (N, ...) -> (N, classes).

    A single sample without a batch axis is accepted and returns 1-D logits.
    """
    x = np.asarray(features, dtype=np.float64)
    f = model.first
    single = x.shape == (f.out_channels, f.out_height, f.out_width)
    if single:
        x = x[None]
    elif x.shape[1:] != (f.out_channels, f.out_height, f.out_width):
        raise GeometryError(f"feature shape {x.shape} does not match the first layer")
    for op in model.layers:
        x = _apply(op, x, model)
    x = x.reshape(len(x), -1)
    return x[0] if single else x


# ------------------------------------------------------------------ evaluate


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    correct: int
    total: int
    per_class_correct: tuple
    per_class_total: tuple
    config_id: str
    noise_hash: str
    mode: str
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy outside [0, 1]")
        if sum(self.per_class_total) != self.total:
            raise ValueError("per-class counts do not sum to the dataset size")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["per_class_correct"] = list(self.per_class_correct)
        d["per_class_total"] = list(self.per_class_total)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "EvalResult":
        d = dict(data)
        d["per_class_correct"] = tuple(d["per_class_correct"])
        d["per_class_total"] = tuple(d["per_class_total"])
        return cls(**d)


def noise_hash(cfg: CoreConfig, mode: str) -> str:
    """Short digest of every setting that changes noisy-mode numbers."""
    if mode == "ideal":
        payload = {"mode": "ideal"}
    else:
        d = to_dict(cfg)
        payload = {"mode": mode, "mr": d["mr"], "awc": d["awc"], "vam": d["vam"],
                   "bpd": d["bpd"], "vom": d["vom"], "pixel": d["pixel"]}
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _check_model_cfg(model: QuantModel, cfg: CoreConfig) -> None:
    if model.bit_width != cfg.awc.bit_width:
        raise ConfigError(
            f"model weights are {model.bit_width}-bit but the AWC is {cfg.awc.bit_width}-bit")


def predict(dataset: Dataset, model: QuantModel, cfg: CoreConfig, mode: str = "ideal",
            seed=0, threads: int = 1, oracle: bool = False) -> np.ndarray:
    """Logits for every sample, (N, classes).

    With ``oracle=True`` the first layer is ``oracle_conv`` instead of the
    optical core (the quantized-software baseline).
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    _check_model_cfg(model, cfg)
    schedule = plan_layer(model.first, cfg)
    programmed = None
    if not oracle:
        programmed = [program_round(schedule, r, model.weights, cfg, mode, seed)[0]
                      for r in range(len(schedule.rounds))]
    starts = list(range(0, len(dataset), CHUNK))

    def work(start):
        idx = np.arange(start, min(start + CHUNK, len(dataset)))
        codes = frame_codes(dataset.images[idx].astype(np.float64) / 255.0, cfg)
        if oracle:
            maps = oracle_conv(codes, model.weights, model.first)
        else:
            maps = execute_schedule(schedule, codes, model.weights, cfg, mode, seed,
                                    samples=idx, programmed=programmed)
        return run_rest(maps, model)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate(parts)


def score(logits, dataset: Dataset, model: QuantModel, cfg: CoreConfig, mode: str,
          seed) -> EvalResult:
    pred = np.argmax(logits, axis=1)
    labels = dataset.labels
    hits = pred == labels
    nc = max(model.num_classes, int(labels.max()) + 1)
    per_total = np.bincount(labels, minlength=nc)
    per_correct = np.bincount(labels[hits], minlength=nc)
    return EvalResult(
        accuracy=float(hits.mean()), correct=int(hits.sum()), total=len(labels),
        per_class_correct=tuple(int(v) for v in per_correct),
        per_class_total=tuple(int(v) for v in per_total),
        config_id=model.config_id, noise_hash=noise_hash(cfg, mode), mode=mode,
        seed=int(seed),
    )


def evaluate(dataset: Dataset, model: QuantModel, cfg: CoreConfig, mode: str = "ideal",
             seed=0, threads: int = 1) -> EvalResult:
    """Top-1 accuracy of the optical pipeline; deterministic per seed."""
    logits = predict(dataset, model, cfg, mode, seed, threads)
    return score(logits, dataset, model, cfg, mode, seed)


def baseline(dataset: Dataset, model: QuantModel, cfg: CoreConfig, threads: int = 1) -> EvalResult:
    """Quantized-software accuracy: first layer by ``oracle_conv``."""
    logits = predict(dataset, model, cfg, "ideal", 0, threads, oracle=True)
    return score(logits, dataset, model, cfg, "ideal", 0)


def bundled(name: str) -> Path:
    """Path of a fixture shipped with the package (``models/...``, ``datasets/...``)."""
    return DATA_DIR / name
