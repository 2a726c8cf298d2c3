"""Complex-baseband AWGN / slow Rayleigh fading channel with co-frequency superposition.

Receiver ``i`` observes ``rx_i = sum_k h[k, i] z_k + n_i``. Downlink and uplink
are handled by constraining the CSI matrix and reusing the D2D path, so the
three scenarios share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import InvalidShapeError, Tensor
from .model import Ssv

__all__ = [
    "ScenarioKind",
    "ChannelRealization",
    "DeepFadeError",
    "H_MIN",
    "noise_power_from_snr",
    "sample_csi",
    "awgn_realization",
    "effective_csi",
    "draw_noise",
    "transmit",
    "equalize",
]

H_MIN = 1e-3


class DeepFadeError(ArithmeticError):
    """Own-link coefficient too small to equalise."""


class ScenarioKind(str, Enum):
    AWGN = "awgn"
    D2D = "d2d"
    DOWNLINK = "downlink"
    UPLINK = "uplink"


@dataclass
class ChannelRealization:
    """One channel draw.

    ``csi[..., k, i]`` is the coefficient from transmitter ``k`` to receiver
    ``i``; a leading batch axis gives every batch row its own draw.
    """

    csi: np.ndarray
    noise_power: np.ndarray
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.csi.shape[-1]

    def own_link(self, i: int) -> np.ndarray:
        return self.csi[..., i, i]


def noise_power_from_snr(snr_db, power: float):
    """``sigma^2 = P_z / 10^(snr/10)``."""
    return power / 10.0 ** (np.asarray(snr_db, dtype=np.float64) / 10.0)


def _noise_vector(snr_db, n: int, power: float) -> np.ndarray:
    return np.broadcast_to(noise_power_from_snr(snr_db, power), (n,)).astype(np.float64)


def sample_csi(
    n: int,
    seed: int | np.random.Generator,
    snr_db=np.inf,
    power: float = 2.0,
    batch: int | None = None,
) -> ChannelRealization:
    """Rayleigh draw ``h ~ CN(0, 1)`` for every (tx, rx) pair."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (n, n) if batch is None else (batch, n, n)
    csi = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)
    return ChannelRealization(csi, _noise_vector(snr_db, n, power), seed if isinstance(seed, int) else None)


def awgn_realization(n: int, snr_db=np.inf, power: float = 2.0, seed: int | None = None, batch: int | None = None):
    shape = (n, n) if batch is None else (batch, n, n)
    return ChannelRealization(np.ones(shape, dtype=np.complex128), _noise_vector(snr_db, n, power), seed)


def effective_csi(ch: ChannelRealization, kind: ScenarioKind | str) -> np.ndarray:
    """CSI matrix actually applied for ``kind``.

    Downlink uses ``h[k, i] = h[i, i]`` for every ``k`` (one BS, per-UE link);
    uplink uses ``h[i, j] = h[i, i]`` for every ``j`` (per-UE link to one BS).
    """
    kind = ScenarioKind(kind)
    csi = ch.csi
    if kind is ScenarioKind.AWGN:
        return np.ones_like(csi)
    if kind is ScenarioKind.D2D:
        return csi
    diag = np.diagonal(csi, axis1=-2, axis2=-1)
    n = ch.n
    if kind is ScenarioKind.DOWNLINK:
        return np.repeat(diag[..., None, :], n, axis=-2)
    return np.repeat(diag[..., :, None], n, axis=-1)


def draw_noise(ch: ChannelRealization, kind, batch: int, length: int, rng=None, dtype=np.float64) -> list[np.ndarray]:
    """Per-receiver interleaved noise ``[B, 2K]``; uplink shares one draw at ``noise_power[0]``."""
    kind = ScenarioKind(kind)
    if rng is None:
        rng = np.random.default_rng(ch.seed)
    sig = np.sqrt(np.asarray(ch.noise_power, dtype=np.float64) / 2.0)
    if kind is ScenarioKind.UPLINK:
        shared = (sig[0] * rng.standard_normal((batch, length))).astype(dtype)
        return [shared] * ch.n
    return [(sig[i] * rng.standard_normal((batch, length))).astype(dtype) for i in range(ch.n)]


def transmit(
    ssvs: Sequence[Ssv | Tensor | None],
    ch: ChannelRealization,
    kind: ScenarioKind | str = ScenarioKind.D2D,
    noise: Sequence[np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
) -> list[Tensor]:
    """Received interleaved vectors, one per receiver.

    ``None`` entries are silent transmitters. Noise and CSI are constants for
    differentiation; gradients flow to the transmitted symbols.
    """
    kind = ScenarioKind(kind)
    syms = [s.symbols if isinstance(s, Ssv) else s for s in ssvs]
    if len(syms) != ch.n:
        raise InvalidShapeError(f"transmit: {len(syms)} transmitters for a {ch.n}x{ch.n} channel")
    live = [s for s in syms if s is not None]
    if not live:
        raise ValueError("transmit: every transmitter is silent")
    shape = live[0].shape
    if any(s.shape != shape for s in live):
        raise InvalidShapeError(f"transmit: SSV shapes differ: {[s.shape for s in live]}")
    batch, length = shape
    h = effective_csi(ch, kind)
    if h.ndim == 3 and h.shape[0] != batch:
        raise InvalidShapeError(f"transmit: CSI batch {h.shape[0]} vs SSV batch {batch}")
    if noise is None:
        noise = draw_noise(ch, kind, batch, length, rng, live[0].dtype)
    out = []
    for i in range(ch.n):
        acc = None
        for k, z in enumerate(syms):
            if z is None:
                continue
            term = ad.complex_scale(z, h[..., k, i])
            acc = term if acc is None else ad.add(acc, term)
        out.append(ad.add(acc, Tensor(np.asarray(noise[i], dtype=acc.dtype))))
    return out


def equalize(rx: Tensor, h_ii, h_min: float = H_MIN) -> Ssv:
    """Divide received symbols by the own-link coefficient (per row if an array)."""
    h = np.asarray(h_ii, dtype=np.complex128)
    if np.any(np.abs(h) <= h_min):
        raise DeepFadeError(f"|h_ii| <= {h_min}: deep fade, transmission marked as outage")
    return Ssv(ad.complex_scale(rx, 1.0 / h))
