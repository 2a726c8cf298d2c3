"""User detection by correlating a recovered SSV with reference SSVs of the paired encoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .model import EdpModel, Ssv, encode, power_normalize

__all__ = [
    "ReferenceBank",
    "GateConfig",
    "Decision",
    "ThresholdCalibration",
    "aacd",
    "gate",
    "build_reference_bank",
    "calibrate_threshold",
    "REFERENCE_SNR_DB",
]

log = logging.getLogger(__name__)

REFERENCE_SNR_DB = 20.0


class Decision(str, Enum):
    ACCEPT = "accept"
    ABANDON = "abandon"


@dataclass(frozen=True)
class ReferenceBank:
    refs: np.ndarray  # complex [M, K]
    owner: int = 0

    def __post_init__(self):
        refs = np.atleast_2d(np.asarray(self.refs, dtype=np.complex128))
        object.__setattr__(self, "refs", refs)

    @property
    def m(self) -> int:
        return self.refs.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.refs.shape[1]


@dataclass(frozen=True)
class GateConfig:
    threshold: float
    m: int = 2

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"gate threshold must be > 0, got {self.threshold}")


def _as_complex(z) -> np.ndarray:
    return z.to_complex() if isinstance(z, Ssv) else np.asarray(z, dtype=np.complex128)


def aacd(rmssv, bank: ReferenceBank):
    """Average absolute correlation degree ``(1/KM) sum_m |z~^H z_m|``; one value per row."""
    if bank.m < 1:
        raise ValueError("aacd: empty reference bank")
    z = _as_complex(rmssv)
    if z.shape[-1] != bank.n_symbols:
        raise ValueError(f"aacd: RMSSV has K={z.shape[-1]}, references have K={bank.n_symbols}")
    inner = np.conj(z) @ bank.refs.T  # [..., M]
    val = np.abs(inner).sum(axis=-1) / (bank.n_symbols * bank.m)
    return float(val) if np.ndim(val) == 0 else val


def gate(rmssv, bank: ReferenceBank, cfg: GateConfig):
    r = aacd(rmssv, bank)
    if np.ndim(r) == 0:
        return Decision.ACCEPT if r >= cfg.threshold else Decision.ABANDON
    return [Decision.ACCEPT if v >= cfg.threshold else Decision.ABANDON for v in r]


def build_reference_bank(edp: EdpModel, samples: np.ndarray, snr_db: float = REFERENCE_SNR_DB) -> ReferenceBank:
    """Power-normalised encoder outputs for ``samples`` (images in [0, 1], ``[M, C, H, W]``)."""
    ssv = power_normalize(encode(edp, samples, snr_db), edp.arch.power)
    return ReferenceBank(ssv.to_complex(), edp.index)


@dataclass(frozen=True)
class ThresholdCalibration:
    threshold: float
    overlap: bool
    overlap_fraction: float
    accuracy: float


def calibrate_threshold(paired: Sequence[float], unpaired: Sequence[float]) -> ThresholdCalibration:
    """Midpoint between the largest unpaired and smallest paired AACD.

    If the two samples overlap the midpoint of the means is used instead and
    the fraction of samples inside the overlap interval is reported.
    """
    p = np.asarray(paired, dtype=np.float64)
    u = np.asarray(unpaired, dtype=np.float64)
    if p.size == 0 or u.size == 0:
        raise ValueError("calibrate_threshold: both AACD samples must be non-empty")
    lo, hi = p.min(), u.max()
    if hi < lo:
        th, overlap, frac = 0.5 * (lo + hi), False, 0.0
    else:
        th = 0.5 * (p.mean() + u.mean())
        overlap = True
        inside = np.count_nonzero((p >= lo) & (p <= hi)) + np.count_nonzero((u >= lo) & (u <= hi))
        frac = inside / (p.size + u.size)
        log.warning("paired/unpaired AACD overlap: %.1f%% of samples in [%.4g, %.4g]", 100 * frac, lo, hi)
    acc = (np.count_nonzero(p >= th) + np.count_nonzero(u < th)) / (p.size + u.size)
    return ThresholdCalibration(float(th), overlap, float(frac), float(acc))
