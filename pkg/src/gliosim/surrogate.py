"""Forward-only inference engine for the anatomy-conditioned tumor emulator.

The network encodes the three tissue maps through residual convolutional
blocks with strided downsampling into a latent volume, embeds the scalar
parameters {D_w, rho, T} through a linear layer into three extra latent
channels, and decodes the concatenation back to a single-channel density
via nearest-neighbor upsampling and mirrored convolutional blocks.

Weight files use the TGSW container: magic ``TGSW``, u32 version, u64
header length, a JSON header (network config, parameter normalization
ranges, tensor table), then raw little-endian float32 tensor payloads at
absolute offsets.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volumes import ScalarField3D

WEIGHTS_MAGIC = b"TGSW"
WEIGHTS_VERSION = 1

PARAM_KEYS = ("D_w", "rho", "T")

# The parameter embedding always occupies three latent channels, mirroring
# the fully-connected map onto an ls^3 x 3 tensor.
EMB_CHANNELS = 3


class WeightsFormatError(ValueError):
    """Raised for malformed or inconsistent weight files."""


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters.

    ``side`` is the cubic input size (power of two), ``levels`` the number
    of stride-2 downsamplings, so the latent side is side / 2^levels.
    ``convs_per_block`` is the number of 3x3x3 convolutions inside each
    residual block.
    """

    side: int = 32
    channels: int = 8
    convs_per_block: int = 2
    levels: int = 2
    param_count: int = 3

    def __post_init__(self):
        if self.side < 2 or (self.side & (self.side - 1)) != 0:
            raise ValueError(f"side must be a power of two, got {self.side}")
        if self.channels < 1 or self.convs_per_block < 1 or self.levels < 1:
            raise ValueError("channels, convs_per_block, levels must be >= 1")
        if self.side >> self.levels < 1:
            raise ValueError(f"latent side under 1: side {self.side}, levels {self.levels}")
        if self.param_count != 3:
            raise ValueError("param_count must be 3 ({D_w, rho, T})")

    @property
    def latent_side(self) -> int:
        return self.side >> self.levels


def expected_tensors(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor table (name -> shape) for a given configuration.

    Convolution kernels are [out_ch][in_ch][kz][ky][kx]; the parameter
    embedding is [out][in]; biases are [out_ch].
    """
    c, n = cfg.channels, cfg.convs_per_block
    ls = cfg.latent_side
    t: dict[str, tuple[int, ...]] = {}
    t["enc.stem.weight"] = (c, 3, 3, 3, 3)
    t["enc.stem.bias"] = (c,)
    for lvl in range(cfg.levels):
        for i in range(n):
            t[f"enc.level{lvl}.conv{i}.weight"] = (c, c, 3, 3, 3)
            t[f"enc.level{lvl}.conv{i}.bias"] = (c,)
        t[f"enc.level{lvl}.down.weight"] = (c, c, 3, 3, 3)
        t[f"enc.level{lvl}.down.bias"] = (c,)
    t["param_fc.weight"] = (EMB_CHANNELS * ls ** 3, cfg.param_count)
    t["param_fc.bias"] = (EMB_CHANNELS * ls ** 3,)
    t["dec.stem.weight"] = (c, c + EMB_CHANNELS, 3, 3, 3)
    t["dec.stem.bias"] = (c,)
    for lvl in range(cfg.levels):
        for i in range(n):
            t[f"dec.level{lvl}.conv{i}.weight"] = (c, c, 3, 3, 3)
            t[f"dec.level{lvl}.conv{i}.bias"] = (c,)
    t["dec.out.weight"] = (1, c, 3, 3, 3)
    t["dec.out.bias"] = (1,)
    return t


@dataclass
class SurrogateWeights:
    """Named tensor container for the network, with the normalization
    ranges the parameters were trained against. Treat as immutable after
    construction; predict never mutates it."""

    config: NetConfig
    param_ranges: dict[str, tuple[float, float]]
    tensors: dict[str, np.ndarray]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        expected = expected_tensors(self.config)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise WeightsFormatError(f"missing tensor {name}")
            got = tuple(self.tensors[name].shape)
            if got != shape:
                raise WeightsFormatError(
                    f"shape mismatch for {name}: expected {shape}, got {got}"
                )
            arr = np.asarray(self.tensors[name], dtype=np.float32)
            if not np.all(np.isfinite(arr)):
                raise WeightsFormatError(f"non-finite values in tensor {name}")
            self.tensors[name] = arr
        for key in PARAM_KEYS:
            if key not in self.param_ranges:
                raise WeightsFormatError(f"missing normalization range for {key}")
            lo, hi = self.param_ranges[key]
            if not hi > lo:
                raise WeightsFormatError(f"bad normalization range for {key}: [{lo}, {hi}]")

    def f64(self, name: str) -> np.ndarray:
        """Float64 copy of a tensor, cached."""
        key = ("f64", name)
        if key not in self._cache:
            self._cache[key] = self.tensors[name].astype(np.float64)
        return self._cache[key]

    def conv_taps(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Kernel restacked as (3, 3, 3, in_ch, out_ch) float32 tap matrices
        plus the bias, cached; this is the layout the fast path consumes."""
        key = ("taps", name)
        if key not in self._cache:
            w = self.tensors[name + ".weight"]
            self._cache[key] = (
                np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0)),
                self.tensors[name + ".bias"],
            )
        return self._cache[key]


def normalize_params(params, ranges: dict[str, tuple[float, float]]) -> np.ndarray:
    """Min-max normalize {D_w, rho, T} to [0,1]; reject values outside the
    training ranges."""
    if isinstance(params, dict):
        raw = [params[k] for k in PARAM_KEYS]
    else:
        raw = list(params)
        if len(raw) != len(PARAM_KEYS):
            raise ValueError(f"expected {len(PARAM_KEYS)} parameters, got {len(raw)}")
    out = np.empty(len(PARAM_KEYS), dtype=np.float64)
    for i, key in enumerate(PARAM_KEYS):
        lo, hi = ranges[key]
        p = (raw[i] - lo) / (hi - lo)
        if p < -1e-9 or p > 1.0 + 1e-9:
            raise ValueError(
                f"parameter out of training range: {key}={raw[i]} not in [{lo}, {hi}]"
            )
        out[i] = min(max(p, 0.0), 1.0)
    return out


# ---------------------------------------------------------------------------
# Layer primitives. Public functions take activations laid out [ch][z][y][x]
# in float64; the internal pipeline keeps channels last and runs in float32
# (the storage precision of the weights), which is what makes the per-tap
# matmul formulation fast.
# ---------------------------------------------------------------------------


def _conv3d_cl(x: np.ndarray, taps: np.ndarray, bias: np.ndarray, stride: int) -> np.ndarray:
    """Cross-correlation on channels-last input (nz, ny, nx, ci) with zero
    'same' padding of 1 and tap matrices (3, 3, 3, ci, co); arithmetic
    follows x.dtype."""
    nz, ny, nx, ci = x.shape
    co = taps.shape[4]
    p = np.zeros((nz + 2, ny + 2, nx + 2, ci), dtype=x.dtype)
    p[1:-1, 1:-1, 1:-1, :] = x
    oz, oy, ox = ((n + stride - 1) // stride for n in (nz, ny, nx))
    out = np.empty((oz, oy, ox, co), dtype=x.dtype)
    out[...] = bias
    for kz in range(3):
        for ky in range(3):
            for kx in range(3):
                v = p[
                    kz : kz + stride * (oz - 1) + 1 : stride,
                    ky : ky + stride * (oy - 1) + 1 : stride,
                    kx : kx + stride * (ox - 1) + 1 : stride,
                    :,
                ]
                out += v @ taps[kz, ky, kx]
    return out


def conv3d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """3D cross-correlation with 'same' zero padding, in float64.

    ``x`` is [ch][z][y][x], ``kernel`` is [out_ch][in_ch][kz][ky][kx] with
    3x3x3 spatial taps, stride 1 or 2; output spatial dims are
    ceil(in/stride).
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError("input must be [ch][z][y][x]")
    if kernel.ndim != 5 or kernel.shape[2:] != (3, 3, 3):
        raise ValueError("kernel must be [out][in][3][3][3]")
    if kernel.shape[1] != x.shape[0]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[0]}, kernel expects {kernel.shape[1]}"
        )
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    xl = np.ascontiguousarray(np.moveaxis(x, 0, 3))
    taps = np.ascontiguousarray(kernel.transpose(2, 3, 4, 1, 0))
    out = _conv3d_cl(xl, taps, bias, stride)
    return np.ascontiguousarray(np.moveaxis(out, 3, 0))


def _upsample_cl(x: np.ndarray, factor: int = 2) -> np.ndarray:
    out = np.repeat(x, factor, axis=0)
    out = np.repeat(out, factor, axis=1)
    return np.repeat(out, factor, axis=2)


def upsample_nn(x: np.ndarray, factor: int = 2) -> np.ndarray:
    """Nearest-neighbor upsampling of a [ch][z][y][x] activation:
    out[c, z, y, x] = in[c, z // factor, y // factor, x // factor]."""
    x = np.asarray(x, dtype=np.float64)
    out = np.repeat(x, factor, axis=1)
    out = np.repeat(out, factor, axis=2)
    return np.repeat(out, factor, axis=3)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _encode_cl(w: SurrogateWeights, x: np.ndarray) -> np.ndarray:
    cfg = w.config
    x = _relu(_conv3d_cl(x, *w.conv_taps("enc.stem"), 1))
    for lvl in range(cfg.levels):
        r = x
        for i in range(cfg.convs_per_block):
            r = _relu(_conv3d_cl(r, *w.conv_taps(f"enc.level{lvl}.conv{i}"), 1))
        x = x + r
        x = _relu(_conv3d_cl(x, *w.conv_taps(f"enc.level{lvl}.down"), 2))
    return x


def encode_anatomy(anatomy_crop: np.ndarray, w: SurrogateWeights) -> np.ndarray:
    """Map a 3-channel anatomy crop [3][side]^3 to the latent activation
    [channels][latent_side]^3 (float32 arithmetic, float64 result)."""
    anatomy_crop = np.asarray(anatomy_crop, dtype=np.float64)
    s = w.config.side
    if anatomy_crop.shape != (3, s, s, s):
        raise ValueError(f"expected anatomy crop of shape (3, {s}, {s}, {s}), got {anatomy_crop.shape}")
    xl = np.moveaxis(anatomy_crop, 0, 3).astype(np.float32)
    latent = _encode_cl(w, xl)
    return np.ascontiguousarray(np.moveaxis(latent, 3, 0)).astype(np.float64)


def param_embedding(w: SurrogateWeights, params_normalized: np.ndarray) -> np.ndarray:
    """Linear embedding of the normalized parameters as a [3][ls][ls][ls]
    activation (the FC output vector is read channel-major, x-fastest)."""
    ls = w.config.latent_side
    v = w.f64("param_fc.weight") @ np.asarray(params_normalized, dtype=np.float64)
    v = v + w.f64("param_fc.bias")
    return v.reshape(EMB_CHANNELS, ls, ls, ls)


def predict(
    w: SurrogateWeights,
    anatomy_crop: np.ndarray,
    params,
    spacing_mm: float = 1.0,
) -> ScalarField3D:
    """Run the full forward pass and return the predicted density.

    ``params`` carries raw {D_w, rho, T}; they are min-max normalized with
    the ranges stored in the weights and rejected if outside. Arithmetic
    runs in float32 (the storage precision of the weights); the output is
    clamped to [0, 1]. Pure and deterministic.
    """
    cfg = w.config
    p = normalize_params(params, w.param_ranges)
    anatomy_crop = np.asarray(anatomy_crop, dtype=np.float64)
    s = cfg.side
    if anatomy_crop.shape != (3, s, s, s):
        raise ValueError(f"expected anatomy crop of shape (3, {s}, {s}, {s}), got {anatomy_crop.shape}")

    x = np.moveaxis(anatomy_crop, 0, 3).astype(np.float32)
    x = _encode_cl(w, x)

    emb = param_embedding(w, p).astype(np.float32)  # (3, ls, ls, ls)
    emb_cl = np.moveaxis(emb, 0, 3)
    y = np.concatenate([x, emb_cl], axis=3)

    y = _relu(_conv3d_cl(y, *w.conv_taps("dec.stem"), 1))
    for lvl in range(cfg.levels):
        y = _upsample_cl(y, 2)
        r = y
        for i in range(cfg.convs_per_block):
            r = _relu(_conv3d_cl(r, *w.conv_taps(f"dec.level{lvl}.conv{i}"), 1))
        y = y + r
    out = _conv3d_cl(y, *w.conv_taps("dec.out"), 1)
    u = np.clip(out[:, :, :, 0].astype(np.float64), 0.0, 1.0)
    return ScalarField3D(u, spacing_mm)


# ---------------------------------------------------------------------------
# TGSW weight container
# ---------------------------------------------------------------------------


def _canonical_header(w: SurrogateWeights) -> tuple[bytes, list[tuple[str, bytes]]]:
    """Serialize the header with a fixed-point iteration on payload offsets
    (offset digit counts feed back into the header length)."""
    cfg = w.config
    order = list(expected_tensors(cfg).keys())
    payloads = [(name, w.tensors[name].astype("<f4").tobytes(order="C")) for name in order]
    header_len = 0
    for _ in range(8):
        offset = 4 + 4 + 8 + header_len
        table = {}
        for name, blob in payloads:
            table[name] = {
                "shape": list(w.tensors[name].shape),
                "dtype": "f32le",
                "offset": offset,
                "length": len(blob),
            }
            offset += len(blob)
        header = {
            "config": {
                "side": cfg.side,
                "channels": cfg.channels,
                "convs_per_block": cfg.convs_per_block,
                "levels": cfg.levels,
                "param_count": cfg.param_count,
            },
            "param_ranges": {k: list(w.param_ranges[k]) for k in PARAM_KEYS},
            "tensors": table,
        }
        blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
        if len(blob) == header_len:
            return blob, payloads
        header_len = len(blob)
    raise RuntimeError("header layout did not converge")


def save_weights(w: SurrogateWeights, path) -> None:
    """Write the TGSW file; round-trips bit-exactly through load_weights."""
    header, payloads = _canonical_header(w)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", WEIGHTS_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for _, blob in payloads:
            fh.write(blob)


def load_weights(path) -> SurrogateWeights:
    """Read and validate a TGSW file; errors name the offending tensor."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != WEIGHTS_MAGIC:
        raise WeightsFormatError(f"magic mismatch: not a TGSW weight file: {path}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(f"unsupported weight file version {version}")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    if 16 + header_len > len(raw):
        raise WeightsFormatError("truncated header")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightsFormatError(f"malformed header: {e}") from e
    try:
        cfg = NetConfig(**header["config"])
        ranges = {k: tuple(v) for k, v in header["param_ranges"].items()}
        table = header["tensors"]
    except (KeyError, TypeError) as e:
        raise WeightsFormatError(f"malformed header: {e}") from e

    tensors = {}
    for name, shape in expected_tensors(cfg).items():
        if name not in table:
            raise WeightsFormatError(f"missing tensor {name}")
        entry = table[name]
        got = tuple(int(d) for d in entry["shape"])
        if got != shape:
            raise WeightsFormatError(f"shape mismatch for {name}: expected {shape}, got {got}")
        if entry.get("dtype") != "f32le":
            raise WeightsFormatError(f"unsupported dtype for {name}: {entry.get('dtype')!r}")
        off, length = int(entry["offset"]), int(entry["length"])
        count = int(np.prod(shape))
        if length != count * 4 or off < 0 or off + length > len(raw):
            raise WeightsFormatError(f"bad payload extent for {name}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape).copy()
        tensors[name] = arr
    return SurrogateWeights(config=cfg, param_ranges=ranges, tensors=tensors)


def random_weights(
    cfg: NetConfig,
    param_ranges: dict[str, tuple[float, float]],
    rng_seed: int = 0,
) -> SurrogateWeights:
    """He-initialized random weights (zero biases); used for benchmarks and
    for exercising the engine before a trained file exists."""
    rng = np.random.default_rng(rng_seed)
    tensors = {}
    for name, shape in expected_tensors(cfg).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
            continue
        fan_in = int(np.prod(shape[1:]))
        std = np.sqrt(2.0 / fan_in)
        tensors[name] = rng.normal(0.0, std, size=shape).astype(np.float32)
    return SurrogateWeights(config=cfg, param_ranges=dict(param_ranges), tensors=tensors)
