"""DeepMA encoder/decoder pairs.

Each encoder is four residual convolutional blocks (RCB) with an SNR-aware
attention feature block (AFB) after the first three; the decoder mirrors it
with residual transposed-convolution blocks (RTCB). The encoder output is
read as interleaved ``(re, im)`` pairs, i.e. ``K`` complex symbols.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np

from . import autodiff as ad
from .autodiff import InvalidShapeError, Tensor

__all__ = [
    "ArchConfig",
    "Ssv",
    "EdpModel",
    "DmaNet",
    "ContractError",
    "DegenerateInputError",
    "encode",
    "decode",
    "power_normalize",
    "pack_complex",
    "unpack_complex",
    "complex_to_interleaved",
]

GDN_PEDESTAL = 1e-6


class ContractError(ValueError):
    """An input violates a documented precondition."""


class DegenerateInputError(ValueError):
    """Input that cannot be normalised (all-zero feature)."""


@dataclass(frozen=True)
class ArchConfig:
    height: int = 32
    width: int = 32
    in_channels: int = 3
    channels: tuple[int, ...] = (32, 64, 64, 32)
    strides: tuple[int, ...] = (1, 2, 2, 2)
    afb_reduction: int = 2
    kernel_size: int = 3
    n_edps: int = 2
    power: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ValueError("channels and strides must be non-empty and of equal length")
        if any(s not in (1, 2) for s in self.strides):
            raise ValueError(f"strides must be 1 or 2, got {self.strides}")
        f = self.downsample
        if self.height % f or self.width % f:
            raise ValueError(f"image {self.height}x{self.width} not divisible by total stride {f}")
        if self.n_edps < 1 or self.power <= 0:
            raise ValueError("need n_edps >= 1 and power > 0")
        if self.feature_length % 2:
            raise ValueError(f"feature length {self.feature_length} is odd; cannot pair into complex symbols")

    @property
    def downsample(self) -> int:
        return prod(self.strides)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        f = self.downsample
        return self.channels[-1], self.height // f, self.width // f

    @property
    def feature_length(self) -> int:
        return prod(self.latent_shape)

    @property
    def n_symbols(self) -> int:
        """K, the number of complex symbols per SSV."""
        return self.feature_length // 2

    @property
    def cspp(self) -> float:
        return self.n_symbols / (self.height * self.width)


@dataclass
class Ssv:
    """Batch of complex symbol vectors stored as interleaved reals ``[B, 2K]``."""

    symbols: Tensor
    power: float | None = None

    @property
    def n_symbols(self) -> int:
        return self.symbols.shape[1] // 2

    K = n_symbols

    @property
    def batch(self) -> int:
        return self.symbols.shape[0]

    def to_complex(self) -> np.ndarray:
        d = self.symbols.data
        return d[:, 0::2] + 1j * d[:, 1::2]

    def average_power(self) -> np.ndarray:
        return np.mean(np.abs(self.to_complex()) ** 2, axis=1)


def complex_to_interleaved(z: np.ndarray, dtype=np.float64) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z))
    out = np.empty((z.shape[0], 2 * z.shape[1]), dtype=dtype)
    out[:, 0::2] = z.real
    out[:, 1::2] = z.imag
    return out


def _as_batch(feature) -> Tensor:
    t = feature if isinstance(feature, Tensor) else Tensor(np.asarray(feature, dtype=np.float64))
    if t.data.ndim == 1:
        t = ad.reshape(t, (1, -1))
    if t.data.ndim != 2:
        raise InvalidShapeError(f"expected feature of shape [2K] or [B, 2K], got {t.shape}")
    return t


def pack_complex(feature, power: float | None = None) -> Ssv:
    t = _as_batch(feature)
    if t.shape[1] % 2:
        raise InvalidShapeError(f"feature length {t.shape[1]} is odd")
    return Ssv(t, power)


def unpack_complex(ssv: Ssv) -> Tensor:
    return ssv.symbols


def power_normalize(feature, power: float) -> Ssv:
    """Scale each row to average symbol power ``power``: ``z = sqrt(K P) y / ||y||``."""
    y = _as_batch(feature)
    if y.shape[1] % 2:
        raise InvalidShapeError(f"feature length {y.shape[1]} is odd")
    k = y.shape[1] // 2
    norm = np.sqrt(np.sum(y.data.astype(np.float64) ** 2, axis=1, keepdims=True))
    if np.any(norm == 0):
        raise DegenerateInputError("cannot power-normalise an all-zero feature")
    s = np.sqrt(k * power)
    unit = (y.data / norm).astype(y.dtype)
    out = (s * unit).astype(y.dtype)

    def back(g):
        proj = np.sum(g * unit, axis=1, keepdims=True)
        return ((s / norm) * (g - proj * unit)).astype(g.dtype),

    return Ssv(ad._node(out, (y,), back, "power_normalize"), power)


# ----------------------------------------------------------------------------
# parameters


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class _Builder:
    def __init__(self, rng: np.random.Generator, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = ad.parameter(value, self.dtype)

    def conv(self, name, cin, cout, k, stride=1, transposed=False):
        shape = (cin, cout, k, k) if transposed else (cout, cin, k, k)
        # a transposed conv output pixel sees ~k*k/stride^2 input taps per channel
        fan_in = max(1, cin * k * k // (stride * stride if transposed else 1))
        self.add(f"{name}.w", _he(self.rng, shape, fan_in, self.dtype))
        self.add(f"{name}.b", np.zeros(cout))

    def gdn(self, name, c):
        gamma = 0.1 * np.eye(c) + 1e-3
        self.add(f"{name}.beta_sqrt", np.ones(c))
        self.add(f"{name}.gamma_sqrt", np.sqrt(gamma))

    def prelu(self, name, c):
        self.add(f"{name}.alpha", np.full(c, 0.25))

    def dense(self, name, fin, fout):
        self.add(f"{name}.w", _he(self.rng, (fin, fout), fin, self.dtype))
        self.add(f"{name}.b", np.zeros(fout))


def _block_plan(arch: ArchConfig):
    enc = []
    cin = arch.in_channels
    for cout, s in zip(arch.channels, arch.strides):
        enc.append((cin, cout, s))
        cin = cout
    dec_out = list(reversed(arch.channels[:-1])) + [arch.in_channels]
    dec = []
    cin = arch.channels[-1]
    for cout, s in zip(dec_out, arch.strides):
        dec.append((cin, cout, s))
        cin = cout
    return enc, dec


def _init_params(arch: ArchConfig, rng: np.random.Generator, dtype) -> dict[str, Tensor]:
    b = _Builder(rng, dtype)
    k = arch.kernel_size
    enc, dec = _block_plan(arch)
    n = len(enc)
    for i, (cin, cout, s) in enumerate(enc):
        p = f"enc.rcb{i}"
        b.conv(f"{p}.conv1", cin, cout, k)
        b.gdn(f"{p}.gdn", cout)
        b.prelu(f"{p}.act1", cout)
        b.conv(f"{p}.conv2", cout, cout, k)
        if cin != cout or s != 1:
            b.conv(f"{p}.skip", cin, cout, 1)
        if i < n - 1:
            b.prelu(f"{p}.act2", cout)
            _init_afb(b, f"enc.afb{i}", cout, arch.afb_reduction)
    for i, (cin, cout, s) in enumerate(dec):
        p = f"dec.rtcb{i}"
        b.conv(f"{p}.tconv", cin, cout, k + 1 if s == 2 else k, s, transposed=True)
        b.gdn(f"{p}.igdn", cout)
        b.prelu(f"{p}.act1", cout)
        b.conv(f"{p}.conv2", cout, cout, k)
        if cin != cout or s != 1:
            b.conv(f"{p}.skip", cin, cout, s, s, transposed=True)
        if i < n - 1:
            b.prelu(f"{p}.act2", cout)
            _init_afb(b, f"dec.afb{i}", cout, arch.afb_reduction)
    return b.params


def _init_afb(b: _Builder, name: str, c: int, reduction: int) -> None:
    hidden = max(1, c // reduction)
    b.dense(f"{name}.fc1", c + 1, hidden)
    b.prelu(f"{name}.act", hidden)
    b.dense(f"{name}.fc2", hidden, c)


@dataclass
class EdpModel:
    """One encoder/decoder pair; parameters are keyed ``enc.*`` / ``dec.*``."""

    index: int
    arch: ArchConfig
    params: dict[str, Tensor] = field(repr=False)

    @classmethod
    def init(cls, index: int, arch: ArchConfig, rng: np.random.Generator, dtype=np.float32) -> "EdpModel":
        return cls(index, arch, _init_params(arch, rng, dtype))

    def encoder_params(self) -> list[Tensor]:
        return [t for n, t in self.params.items() if n.startswith("enc.")]

    def decoder_params(self) -> list[Tensor]:
        return [t for n, t in self.params.items() if n.startswith("dec.")]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype


@dataclass
class DmaNet:
    arch: ArchConfig
    edps: list[EdpModel]

    @classmethod
    def init(cls, arch: ArchConfig, seed: int = 0, dtype=np.float32) -> "DmaNet":
        rng = np.random.default_rng(seed)
        return cls(arch, [EdpModel.init(i, arch, rng, dtype) for i in range(arch.n_edps)])

    @property
    def n_edps(self) -> int:
        return len(self.edps)

    def parameters(self) -> list[Tensor]:
        return [p for e in self.edps for p in e.parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"edp{e.index}.{n}", t) for e in self.edps for n, t in e.params.items()]


# ----------------------------------------------------------------------------
# forward passes


def _gdn_params(p, name):
    bs, gs = p[f"{name}.beta_sqrt"], p[f"{name}.gamma_sqrt"]
    beta = ad.add(ad.mul(bs, bs), Tensor(np.full(bs.shape, GDN_PEDESTAL, dtype=bs.dtype)))
    return beta, ad.mul(gs, gs)


def _afb(p, name, x: Tensor, snr: np.ndarray) -> Tensor:
    cm = ad.channel_mean(x)
    side = Tensor((snr / 20.0).reshape(-1, 1).astype(x.dtype))
    h = ad.dense(ad.concat([cm, side], axis=1), p[f"{name}.fc1.w"], p[f"{name}.fc1.b"])
    h = ad.prelu(h, p[f"{name}.act.alpha"])
    w = ad.sigmoid(ad.dense(h, p[f"{name}.fc2.w"], p[f"{name}.fc2.b"]))
    return ad.scale_channels(x, w)


def _snr_vector(snr_db, batch: int) -> np.ndarray:
    snr = np.broadcast_to(np.asarray(snr_db, dtype=np.float64), (batch,))
    if not np.all(np.isfinite(snr)):
        raise ContractError("snr_db must be finite")
    return snr


def encode(edp: EdpModel, image, snr_db) -> Tensor:
    """Image batch ``[B, C, H, W]`` in [0, 1] to real features ``[B, 2K]``."""
    x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=edp.dtype))
    arch = edp.arch
    expect = (arch.in_channels, arch.height, arch.width)
    if x.data.ndim != 4 or x.shape[1:] != expect:
        raise InvalidShapeError(f"encode: expected images [B, {expect[0]}, {expect[1]}, {expect[2]}], got {x.shape}")
    if x.data.min() < 0.0 or x.data.max() > 1.0:
        raise ContractError("encode: pixel values must lie in [0, 1]")
    snr = _snr_vector(snr_db, x.shape[0])
    p = edp.params
    k = arch.kernel_size
    enc, _ = _block_plan(arch)
    for i, (cin, cout, s) in enumerate(enc):
        name = f"enc.rcb{i}"
        h = ad.conv2d(x, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"], s, k // 2)
        h = ad.gdn(h, *_gdn_params(p, f"{name}.gdn"))
        h = ad.prelu(h, p[f"{name}.act1.alpha"])
        h = ad.conv2d(h, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"], 1, k // 2)
        skip = ad.conv2d(x, p[f"{name}.skip.w"], p[f"{name}.skip.b"], s, 0) if f"{name}.skip.w" in p else x
        x = ad.add(h, skip)
        if i < len(enc) - 1:
            x = ad.prelu(x, p[f"{name}.act2.alpha"])
            x = _afb(p, f"enc.afb{i}", x, snr)
    return ad.reshape(x, (x.shape[0], -1))


def decode(edp: EdpModel, rmssv, snr_db) -> Tensor:
    """Recovered symbols ``[B, 2K]`` (or :class:`Ssv`) to images in [0, 1]."""
    z = rmssv.symbols if isinstance(rmssv, Ssv) else _as_batch(rmssv)
    arch = edp.arch
    if z.shape[1] != arch.feature_length:
        raise InvalidShapeError(f"decode: expected {arch.feature_length} reals per SSV, got {z.shape[1]}")
    if z.dtype != edp.dtype:
        z = ad.cast(z, edp.dtype)
    snr = _snr_vector(snr_db, z.shape[0])
    p = edp.params
    k = arch.kernel_size
    _, dec = _block_plan(arch)
    x = ad.reshape(z, (z.shape[0],) + arch.latent_shape)
    for i, (cin, cout, s) in enumerate(dec):
        name = f"dec.rtcb{i}"
        kt = k + 1 if s == 2 else k
        h = ad.transposed_conv2d(x, p[f"{name}.tconv.w"], p[f"{name}.tconv.b"], s, (kt - s) // 2)
        h = ad.igdn(h, *_gdn_params(p, f"{name}.igdn"))
        h = ad.prelu(h, p[f"{name}.act1.alpha"])
        h = ad.conv2d(h, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"], 1, k // 2)
        skip = ad.transposed_conv2d(x, p[f"{name}.skip.w"], p[f"{name}.skip.b"], s, 0) if f"{name}.skip.w" in p else x
        x = ad.add(h, skip)
        if i < len(dec) - 1:
            x = ad.prelu(x, p[f"{name}.act2.alpha"])
            x = _afb(p, f"dec.afb{i}", x, snr)
    return ad.sigmoid(x)
