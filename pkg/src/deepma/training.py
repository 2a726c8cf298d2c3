"""Joint training of all encoder/decoder pairs through a shared superposed channel."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .channel import (
    H_MIN,
    ChannelRealization,
    ScenarioKind,
    awgn_realization,
    effective_csi,
    equalize,
    noise_power_from_snr,
    transmit,
)
from .checkpoint import save_checkpoint
from .data import ImageSet, denormalize, normalize
from .metrics import psnr
from .model import DmaNet, decode, encode, power_normalize

__all__ = [
    "TrainConfig",
    "TrainState",
    "NumericalError",
    "lr_at",
    "draw_channel",
    "forward_superposed",
    "train_iteration",
    "train_loop",
    "evaluate",
    "EvalResult",
    "HISTORY_HEADER",
]

log = logging.getLogger(__name__)

HISTORY_HEADER = ["epoch", "iteration", "loss", "val_psnr_db", "lr"]
PAPER_LR_SCHEDULE = ((0, 5e-4), (100, 1e-4), (200, 5e-5))


class NumericalError(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 400
    lr_schedule: tuple[tuple[int, float], ...] = PAPER_LR_SCHEDULE
    snr_range: tuple[float, float] = (0.0, 20.0)
    fixed_snrs: tuple[float, ...] | None = None
    channel: str = "d2d"
    seed: int = 0
    max_iterations: int | None = None
    val_snr_db: float = 10.0
    validate_every: int = 1

    def __post_init__(self):
        self.lr_schedule = tuple((int(e), float(lr)) for e, lr in self.lr_schedule)
        epochs = [e for e, _ in self.lr_schedule]
        if not epochs or any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"lr schedule epochs must be strictly increasing, got {epochs}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        ScenarioKind(self.channel)


@dataclass
class TrainState:
    epoch: int
    iteration: int
    optimizer: AdamState
    rng: np.random.Generator
    best_val_psnr: float = -np.inf

    @classmethod
    def fresh(cls, net: DmaNet, seed: int) -> "TrainState":
        return cls(0, 0, AdamState.zeros_like(net.parameters()), np.random.default_rng(seed))


def lr_at(schedule: Sequence[tuple[int, float]], epoch: int) -> float:
    lr = schedule[0][1]
    for start, value in schedule:
        if epoch >= start:
            lr = value
    return lr


def draw_channel(n: int, batch: int, snrs, power: float, kind, rng: np.random.Generator) -> ChannelRealization:
    """Per-row CSI (redrawn where an own link falls in a deep fade) and per-receiver noise power."""
    kind = ScenarioKind(kind)
    sigma2 = np.asarray(noise_power_from_snr(np.broadcast_to(snrs, (n,)), power), dtype=np.float64)
    if kind is ScenarioKind.AWGN:
        ch = awgn_realization(n, batch=batch)
        ch.noise_power = sigma2
        return ch
    shape = (batch, n, n)
    csi = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)
    diag = np.arange(n)
    while True:
        bad = np.abs(csi[:, diag, diag]) <= H_MIN
        if not bad.any():
            break
        redraw = (rng.standard_normal(bad.sum()) + 1j * rng.standard_normal(bad.sum())) * np.sqrt(0.5)
        rows, cols = np.nonzero(bad)
        csi[rows, cols, cols] = redraw
    return ChannelRealization(csi, sigma2)


def forward_superposed(
    net: DmaNet,
    images: Sequence[np.ndarray | None],
    snrs: Sequence[float],
    ch: ChannelRealization,
    kind,
    rng: np.random.Generator,
    decoders: Sequence[int] | None = None,
):
    """Encode each active image, superpose over the channel, equalise and decode.

    ``images[i] is None`` silences transmitter ``i``. Returns the SSVs, the
    equalised RMSSVs and the decoded images (``None`` for skipped decoders).
    """
    p = net.arch.power
    ssvs = [None if x is None else power_normalize(encode(e, x, s), p) for e, x, s in zip(net.edps, images, snrs)]
    rx = transmit(ssvs, ch, kind, rng=rng)
    h = effective_csi(ch, kind)
    decoders = range(net.n_edps) if decoders is None else decoders
    rmssvs = [equalize(rx[i], h[..., i, i]) if i in decoders else None for i in range(net.n_edps)]
    outs = [None if z is None else decode(net.edps[i], z, snrs[i]) for i, z in enumerate(rmssvs)]
    return ssvs, rmssvs, outs


def _sample_snrs(cfg: TrainConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.fixed_snrs is not None:
        return np.broadcast_to(np.asarray(cfg.fixed_snrs, dtype=np.float64), (n,)).copy()
    lo, hi = cfg.snr_range
    return rng.uniform(lo, hi, size=n)


def train_iteration(
    net: DmaNet,
    batches: Sequence[np.ndarray],
    snrs: Sequence[float],
    cfg: TrainConfig,
    state: TrainState,
    lr: float,
    indices: Sequence[np.ndarray] | None = None,
) -> float:
    """One joint step: every EDP transmits its own batch over the shared channel."""
    n = net.n_edps
    if len(batches) != n:
        raise ValueError(f"need {n} batches, got {len(batches)}")
    if indices is not None:
        flat = np.concatenate([np.asarray(i).ravel() for i in indices])
        if np.unique(flat).size != flat.size:
            raise ValueError("train_iteration: EDP batches overlap; each EDP needs distinct samples")
    b = batches[0].shape[0]
    ch = draw_channel(n, b, snrs, net.arch.power, cfg.channel, state.rng)
    _, _, outs = forward_superposed(net, batches, snrs, ch, cfg.channel, state.rng)
    dtype = outs[0].dtype
    losses = [ad.mse(o, Tensor(np.asarray(x, dtype=dtype))) for o, x in zip(outs, batches)]
    total = losses[0]
    for extra in losses[1:]:
        total = ad.add(total, extra)
    loss = ad.scale(total, 1.0 / n)
    params = net.parameters()
    grads = ad.grad(loss, params)
    ad.adam_step(params, grads, state.optimizer, lr)
    state.iteration += 1
    return float(loss.data)


@dataclass
class EvalResult:
    avg_psnr_db: float
    per_edp_db: list[float]
    per_draw_db: list[float] = field(default_factory=list)


def _split_for_edps(images: np.ndarray, n: int) -> list[np.ndarray]:
    per = images.shape[0] // n
    if per == 0:
        raise ValueError(f"need at least {n} images, got {images.shape[0]}")
    return [images[i * per : (i + 1) * per] for i in range(n)]


def evaluate(
    net: DmaNet,
    test_set: ImageSet | np.ndarray,
    snr_db,
    kind="d2d",
    draws: int = 1,
    seed: int = 0,
    batch_size: int = 256,
) -> EvalResult:
    """Average PSNR with every EDP transmitting simultaneously, over ``draws`` channel draws.

    The test images are split into ``N`` disjoint groups, one per EDP.
    """
    imgs8 = test_set.images if isinstance(test_set, ImageSet) else np.asarray(test_set)
    if imgs8.shape[0] == 0:
        raise ValueError("evaluate: empty test set")
    n = net.n_edps
    groups = _split_for_edps(imgs8, n)
    snrs = np.broadcast_to(np.asarray(snr_db, dtype=np.float64), (n,))
    rng = np.random.default_rng(seed)
    per_draw = []
    sums = np.zeros(n)
    for _ in range(draws):
        draw_vals = np.zeros(n)
        for start in range(0, groups[0].shape[0], batch_size):
            chunk = [g[start : start + batch_size] for g in groups]
            xs = [normalize(c) for c in chunk]
            ch = draw_channel(n, xs[0].shape[0], snrs, net.arch.power, kind, rng)
            _, _, outs = forward_superposed(net, xs, snrs, ch, kind, rng)
            for i, (o, orig) in enumerate(zip(outs, chunk)):
                draw_vals[i] += np.sum(psnr(orig, denormalize(o.data)))
        draw_vals /= groups[0].shape[0]
        sums += draw_vals
        per_draw.append(float(draw_vals.mean()))
    per_edp = sums / draws
    return EvalResult(float(per_edp.mean()), [float(v) for v in per_edp], per_draw)


def _write_history_row(path, row) -> None:
    new = not os.path.exists(path)
    with open(path, "a", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            w.writerow(HISTORY_HEADER)
        w.writerow(row)


def train_loop(
    net: DmaNet,
    dataset: ImageSet,
    val_set: ImageSet,
    cfg: TrainConfig,
    out_dir=None,
    state: TrainState | None = None,
):
    """Epoch loop with per-epoch validation; the checkpoint is rewritten only on improvement.

    Each epoch shuffles the training set and partitions it into ``N`` disjoint
    streams, one per EDP. Returns ``(net, history)``; ``history`` rows follow
    :data:`HISTORY_HEADER`.
    """
    n = net.n_edps
    if len(dataset) == 0:
        raise ValueError("train_loop: empty training set")
    if len(val_set) == 0:
        raise ValueError("train_loop: empty validation set")
    per_stream = len(dataset) // n
    its_per_epoch = per_stream // cfg.batch_size
    if its_per_epoch == 0:
        raise ValueError(f"dataset of {len(dataset)} too small for {n} EDPs x batch {cfg.batch_size}")
    state = state or TrainState.fresh(net, cfg.seed)
    history = []
    ckpt = hist_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, "best.dman")
        hist_path = os.path.join(out_dir, "history.csv")
    x_all = dataset.images
    while state.epoch < cfg.max_epochs:
        lr = lr_at(cfg.lr_schedule, state.epoch)
        perm = state.rng.permutation(len(dataset))
        streams = [perm[i * per_stream : (i + 1) * per_stream] for i in range(n)]
        losses = []
        for it in range(its_per_epoch):
            if cfg.max_iterations is not None and state.iteration >= cfg.max_iterations:
                break
            idx = [s[it * cfg.batch_size : (it + 1) * cfg.batch_size] for s in streams]
            batches = [normalize(x_all[i]) for i in idx]
            snrs = _sample_snrs(cfg, n, state.rng)
            loss = train_iteration(net, batches, snrs, cfg, state, lr, indices=idx)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at iteration {state.iteration}")
            losses.append(loss)
        state.epoch += 1
        if not losses:
            break
        done = cfg.max_iterations is not None and state.iteration >= cfg.max_iterations
        if state.epoch % cfg.validate_every and not done and state.epoch < cfg.max_epochs:
            continue
        val = evaluate(net, val_set, cfg.val_snr_db, cfg.channel, 1, seed=cfg.seed + 7919 * state.epoch).avg_psnr_db
        if not np.isfinite(val):
            raise NumericalError(f"validation PSNR is {val} after epoch {state.epoch} (last loss {losses[-1]:.6g})")
        if val > state.best_val_psnr:
            state.best_val_psnr = val
            if ckpt:
                save_checkpoint(net, ckpt)
        row = [state.epoch, state.iteration, f"{np.mean(losses):.6f}", f"{val:.4f}", f"{lr:.6g}"]
        history.append(row)
        log.info("epoch %d it %d loss %.5f val %.2f dB (best %.2f)", *[state.epoch, state.iteration, np.mean(losses), val, state.best_val_psnr])
        if hist_path:
            _write_history_row(hist_path, row)
        if done:
            break
    return net, history
