"""Channel multiplexing, dedicated and cross-decoding transmissions with optional SSV gating."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .channel import ChannelRealization, effective_csi, equalize, transmit
from .data import denormalize, normalize
from .detection import REFERENCE_SNR_DB, Decision, GateConfig, ReferenceBank, aacd, build_reference_bank
from .metrics import psnr
from .model import DmaNet, Ssv, decode, encode, power_normalize
from .training import draw_channel

__all__ = [
    "TransmissionReport",
    "ScenarioResult",
    "SCENARIOS",
    "run_transmission",
    "run_scenario",
    "reference_banks",
    "detection_trials",
    "receive",
]

SCENARIOS = ("multiplex", "dedicated", "cross")


@dataclass(frozen=True)
class TransmissionReport:
    scenario: str
    edp: int
    snr_db: float
    psnr_db: float | None
    aacd: float | None
    gate: str
    draw: int
    image: int = 0


@dataclass
class ScenarioResult:
    reports: list[TransmissionReport]
    recovered: dict[tuple[int, int], np.ndarray]  # (edp, image) -> uint8 [B?, 3, H, W] or None

    def psnrs(self, edp: int | None = None) -> np.ndarray:
        return np.array([r.psnr_db for r in self.reports if r.psnr_db is not None and (edp is None or r.edp == edp)])


def _transmit_all(net, images, snrs, ch, kind, rng):
    p = net.arch.power
    ssvs = []
    for e, x, s in zip(net.edps, images, snrs):
        ssvs.append(None if x is None else power_normalize(encode(e, normalize(x, e.dtype), s), p))
    return transmit(ssvs, ch, kind, rng=rng), effective_csi(ch, kind)


def receive(net: DmaNet, images, snrs, ch: ChannelRealization, kind, i: int, rng) -> Ssv:
    """Equalised RMSSV at receiver ``i`` when the non-``None`` entries of ``images`` transmit."""
    rx, h = _transmit_all(net, images, snrs, ch, kind, rng)
    return equalize(rx[i], h[..., i, i])


def run_transmission(
    net: DmaNet,
    images: Sequence[np.ndarray | None],
    snrs: Sequence[float],
    ch: ChannelRealization,
    kind,
    decoders: Sequence[int],
    rng: np.random.Generator,
    banks: Sequence[ReferenceBank] | None = None,
    gate_cfg: GateConfig | None = None,
):
    """One channel use. Returns per-decoder ``(aacd or None, decision, decoded uint8 or None)``."""
    rx, h = _transmit_all(net, images, snrs, ch, kind, rng)
    out = {}
    for i in decoders:
        rm = equalize(rx[i], h[..., i, i])
        r = None
        accept = np.ones(rm.batch, dtype=bool)
        if banks is not None and gate_cfg is not None:
            r = np.atleast_1d(aacd(rm, banks[i]))
            accept = r >= gate_cfg.threshold
        dec = None
        if accept.any():
            keep = np.nonzero(accept)[0]
            sub = Tensor(rm.symbols.data[keep])
            rec = denormalize(decode(net.edps[i], sub, snrs[i]).data)
            dec = np.zeros((rm.batch,) + rec.shape[1:], dtype=np.uint8)
            dec[keep] = rec
        out[i] = (r, accept, dec)
    return out


def run_scenario(
    net: DmaNet,
    images: Sequence[np.ndarray],
    scenario: str,
    snr_db,
    kind="d2d",
    seed: int = 0,
    draws: int = 1,
    banks: Sequence[ReferenceBank] | None = None,
    gate_cfg: GateConfig | None = None,
) -> ScenarioResult:
    """Run one of ``multiplex``, ``dedicated`` or ``cross`` for ``N`` aligned image batches.

    ``images[i]`` (uint8 ``[B, 3, H, W]``) is what EDP ``i`` sends. In
    ``dedicated`` each EDP transmits alone; in ``cross`` EDP ``i`` stays silent
    and decoder ``i`` listens to the others. Every run reuses the same channel
    draws, so scenarios are comparable draw by draw. PSNR is always measured
    against ``images[i]``; abandoned RMSSVs are not decoded and carry no PSNR.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    n = net.n_edps
    if len(images) != n:
        raise ValueError(f"scenario needs {n} image batches (one per EDP), got {len(images)}")
    snrs = np.broadcast_to(np.asarray(snr_db, dtype=np.float64), (n,))
    batch = images[0].shape[0]
    reports: list[TransmissionReport] = []
    recovered: dict = {}
    for d in range(draws):
        rng = np.random.default_rng([seed, d])
        ch = draw_channel(n, batch, snrs, net.arch.power, kind, rng)
        noise_rng_state = rng.bit_generator.state
        if scenario == "multiplex":
            runs = [(list(images), list(range(n)))]
        elif scenario == "dedicated":
            runs = [([images[j] if j == i else None for j in range(n)], [i]) for i in range(n)]
        else:
            runs = [([None if j == i else images[j] for j in range(n)], [i]) for i in range(n)]
        for imgs, decs in runs:
            rng.bit_generator.state = noise_rng_state
            res = run_transmission(net, imgs, snrs, ch, kind, decs, rng, banks, gate_cfg)
            for i, (r, accept, dec) in res.items():
                vals = psnr(images[i], dec) if dec is not None else None
                for b in range(batch):
                    ok = bool(accept[b])
                    reports.append(
                        TransmissionReport(
                            scenario,
                            i,
                            float(snrs[i]),
                            float(np.atleast_1d(vals)[b]) if ok else None,
                            None if r is None else float(r[b]),
                            (Decision.ACCEPT if ok else Decision.ABANDON).value,
                            d,
                            b,
                        )
                    )
                if d == 0:
                    recovered[i] = dec
    return ScenarioResult(reports, recovered)


def reference_banks(net: DmaNet, images: np.ndarray, m: int = 2, snr_db: float = REFERENCE_SNR_DB) -> list[ReferenceBank]:
    """One bank per EDP, built from the first ``m`` uint8 images."""
    if m < 1 or images.shape[0] < m:
        raise ValueError(f"need at least {max(m, 1)} reference images, got {images.shape[0]}")
    x = images[:m]
    return [build_reference_bank(e, normalize(x, e.dtype), snr_db) for e in net.edps]


def detection_trials(
    net: DmaNet,
    images: np.ndarray,
    snr_db: float,
    banks: Sequence[ReferenceBank],
    trials: int,
    kind="awgn",
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Paired and unpaired AACD samples, ``trials`` of each per receiver.

    Paired: only EDP ``i`` transmits and receiver ``i`` correlates with its own
    bank. Unpaired: a different EDP transmits alone and receiver ``i`` still
    correlates with bank ``i``. Needs at least two EDPs.
    """
    n = net.n_edps
    if n < 2:
        raise ValueError("unpaired trials need at least two EDPs")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    snrs = np.full(n, float(snr_db))
    paired, unpaired = [], []
    for i in range(n):
        pick = rng.integers(0, images.shape[0], size=trials)
        x = images[pick]
        others = [j for j in range(n) if j != i]
        src = np.asarray(others)[np.arange(trials) % len(others)]
        ch = draw_channel(n, trials, snrs, net.arch.power, kind, rng)
        paired.append(aacd(receive(net, [x if j == i else None for j in range(n)], snrs, ch, kind, i, rng), banks[i]))
        for j in others:
            rows = src == j
            if not rows.any():
                continue
            ch_j = draw_channel(n, int(rows.sum()), snrs, net.arch.power, kind, rng)
            imgs = [x[rows] if k == j else None for k in range(n)]
            unpaired.append(aacd(receive(net, imgs, snrs, ch_j, kind, i, rng), banks[i]))
    return np.concatenate([np.atleast_1d(p) for p in paired]), np.concatenate([np.atleast_1d(u) for u in unpaired])
