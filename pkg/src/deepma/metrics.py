"""Image quality, bandwidth efficiency and SSV correlation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import Ssv

__all__ = [
    "PSNR_CAP_DB",
    "psnr",
    "avg_psnr",
    "corr_complex",
    "expected_corr_complex",
    "corr_real",
    "to_real_ssv",
    "correlation_matrix",
    "BandwidthMetrics",
    "bandwidth_metrics",
]

PSNR_CAP_DB = 100.0
MAX_PIXEL = 255.0


def psnr(original, recovered) -> float | np.ndarray:
    """PSNR in dB of 8-bit images; a leading batch axis yields one value per image.

    Identical images return :data:`PSNR_CAP_DB`.
    """
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(recovered, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes {a.shape} and {b.shape} differ")
    axes = tuple(range(1, a.ndim)) if a.ndim == 4 else None
    err = np.mean((a - b) ** 2, axis=axes)
    with np.errstate(divide="ignore"):
        val = 10.0 * np.log10(MAX_PIXEL**2 / err)
    val = np.minimum(val, PSNR_CAP_DB)
    return float(val) if np.ndim(val) == 0 else val


def avg_psnr(reports: Iterable) -> float:
    """Arithmetic mean of per-report dB values (reports without a PSNR are skipped)."""
    vals = [r.psnr_db if hasattr(r, "psnr_db") else r for r in reports]
    vals = [v for v in vals if v is not None]
    if not vals:
        raise ValueError("avg_psnr: no PSNR values")
    return float(np.mean(vals))


def _complex(z) -> np.ndarray:
    return z.to_complex() if isinstance(z, Ssv) else np.asarray(z)


def corr_complex(zi, zj) -> complex | np.ndarray:
    """``(1/K) zi^H zj``; row-wise for batched input."""
    a, b = _complex(zi), _complex(zj)
    k = a.shape[-1]
    val = np.sum(np.conj(a) * b, axis=-1) / k
    return complex(val) if np.ndim(val) == 0 else val


def expected_corr_complex(zi, zj) -> complex:
    """Empirical expectation of :func:`corr_complex` over the batch axis."""
    return complex(np.mean(np.atleast_1d(corr_complex(zi, zj))))


def to_real_ssv(z) -> np.ndarray:
    """``[Re(z); Im(z)]`` along the last axis."""
    c = _complex(z)
    return np.concatenate([c.real, c.imag], axis=-1)


def corr_real(vi, vj) -> float | np.ndarray:
    """``(1/2K) <vi, vj>`` for real vectors of length 2K."""
    a, b = np.asarray(vi, dtype=np.float64), np.asarray(vj, dtype=np.float64)
    val = np.sum(a * b, axis=-1) / a.shape[-1]
    return float(val) if np.ndim(val) == 0 else val


def correlation_matrix(ssvs: Sequence, real: bool = False) -> np.ndarray:
    """Pairwise R_z (complex, Hermitian) or R_v (real, symmetric) for single-vector SSVs."""
    vecs = [_complex(z).reshape(-1) for z in ssvs]
    n = len(vecs)
    if real:
        rv = [to_real_ssv(v) for v in vecs]
        return np.array([[corr_real(rv[i], rv[j]) for j in range(n)] for i in range(n)])
    return np.array([[corr_complex(vecs[i], vecs[j]) for j in range(n)] for i in range(n)])


@dataclass(frozen=True)
class BandwidthMetrics:
    spp: float
    cspp: float
    min_cspp: float


def bandwidth_metrics(c: int, n: int = 1) -> BandwidthMetrics:
    """Symbols per pixel for a last-block width ``c`` with three stride-2 stages."""
    if c < 1 or n < 1:
        raise ValueError("need c >= 1 and n >= 1")
    return BandwidthMetrics(spp=c / 64, cspp=c / 128, min_cspp=c / (128 * n))
