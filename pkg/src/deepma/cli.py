"""Command-line front end: ``train``, ``eval``, ``scenario`` and ``detect``.

Exit codes are 0 on success, 2 for usage, configuration or input errors and
3 for numerical failures. ``DEEPMA_LOG`` selects ``quiet``, ``info`` or ``debug``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .channel import DeepFadeError
from .checkpoint import CheckpointFormatError, load_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, log_defaults, parse_config
from .data import FormatError, ImageSet, center_crop, load_cifar10, load_cifar100, synthetic_set, write_ppm
from .detection import GateConfig, calibrate_threshold
from .model import ArchConfig, ContractError, DegenerateInputError, DmaNet
from .scenarios import detection_trials, reference_banks, run_scenario
from .training import NumericalError, TrainConfig, evaluate, train_loop

log = logging.getLogger("deepma")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("DEEPMA_LOG", "info").strip().lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"DEEPMA_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", force=True)


def _dB(v: float) -> str:
    return f"{v:.4f}"


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    log.info("wrote %s", path)


# --- config to objects ----------------------------------------------------------------------


def arch_from(cfg: ExperimentConfig) -> ArchConfig:
    m = cfg["model"]
    return ArchConfig(
        height=m["height"],
        width=m["width"],
        channels=tuple(m["channels"]),
        strides=tuple(m["strides"]),
        afb_reduction=m["afb_reduction"],
        kernel_size=m["kernel_size"],
        n_edps=cfg.require("model", "n_edps"),
        power=m["power"],
    )


def train_config_from(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        batch_size=t["batch_size"],
        max_epochs=t["max_epochs"],
        lr_schedule=t["lr_schedule"],
        snr_range=(t["snr_min"], t["snr_max"]),
        fixed_snrs=t["fixed_snrs"],
        channel=cfg.get("run", "channel"),
        seed=cfg.get("run", "seed"),
        max_iterations=t["max_iterations"],
        val_snr_db=t["val_snr_db"],
        validate_every=t["validate_every"],
    )


def _load_images(cfg: ExperimentConfig, split: str, n: int, seed: int, hw: tuple[int, int]) -> ImageSet:
    d = cfg["data"]
    if d["source"] == "synthetic":
        return synthetic_set(n, hw[0], hw[1], seed, d["kind"])
    path = d[f"{split}_path"]
    if not path:
        raise ConfigError(f"[data] {split}_path is required when source = {d['source']}", source=cfg.source)
    images = (load_cifar10 if d["source"] == "cifar10" else load_cifar100)(path)
    if images.hw != hw:
        images = center_crop(images, hw)
    return images.subset(slice(0, n)) if n < len(images) else images


def eval_images(cfg: ExperimentConfig, arch: ArchConfig, n: int | None = None) -> ImageSet:
    n = cfg.get("data", "test_size") if n is None else n
    return _load_images(cfg, "test", n, cfg.get("data", "test_seed"), (arch.height, arch.width))


def _checkpoint(cfg: ExperimentConfig, section: str) -> DmaNet:
    path = cfg.require(section, "checkpoint")
    net = load_checkpoint(path)
    if cfg.is_set("model", "n_edps") and cfg.get("model", "n_edps") != net.n_edps:
        raise UsageError(f"config says n_edps = {cfg.get('model', 'n_edps')} but {path} holds {net.n_edps} EDPs")
    return net


def _out_dir(cfg: ExperimentConfig) -> str:
    out = cfg.get("run", "out")
    os.makedirs(out, exist_ok=True)
    return out


# --- commands ----------------------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig) -> int:
    arch = arch_from(cfg)
    log_defaults(cfg, ("run", "model", "data", "train"))
    tcfg = train_config_from(cfg)
    seed = cfg.get("run", "seed")
    hw = (arch.height, arch.width)
    d = cfg["data"]
    train_set = _load_images(cfg, "train", d["train_size"], seed, hw)
    if d["source"] == "synthetic":
        val_set = synthetic_set(d["val_size"], hw[0], hw[1], seed + 1, d["kind"])
    else:
        val_set = _load_images(cfg, "test", d["val_size"], seed, hw)
    net = DmaNet.init(arch, seed)
    _, history = train_loop(net, train_set, val_set, tcfg, out_dir=_out_dir(cfg))
    if history:
        log.info("best validation PSNR %s dB", _dB(max(float(r[3]) for r in history)))
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig) -> int:
    log_defaults(cfg, ("eval",))
    net = _checkpoint(cfg, "eval")
    e = cfg["eval"]
    if e["draws"] < 1:
        raise UsageError("[eval] draws must be >= 1")
    images = eval_images(cfg, net.arch)
    if len(images) == 0:
        raise UsageError("evaluation set is empty")
    rows = []
    for snr in e["snrs"]:
        res = evaluate(net, images, snr, cfg.get("run", "channel"), e["draws"], seed=cfg.get("run", "seed"))
        for i, v in enumerate(res.per_edp_db):
            rows.append([_dB(snr), i, _dB(v), _dB(res.avg_psnr_db)])
    _write_csv(os.path.join(_out_dir(cfg), "eval.csv"), ["snr_db", "edp", "psnr_db", "avg_psnr_db"], rows)
    return EXIT_OK


def _calibrate(net, cfg, images, banks, snr, trials) -> float:
    if cfg.get("detect", "threshold") is not None:
        return cfg.get("detect", "threshold")
    paired, unpaired = detection_trials(net, images, snr, banks, trials, cfg.get("run", "channel"), cfg.get("run", "seed"))
    cal = calibrate_threshold(paired, unpaired)
    log.info("calibrated gate threshold %.5f at %s dB (accuracy %.3f)", cal.threshold, _dB(snr), cal.accuracy)
    return cal.threshold


def cmd_scenario(cfg: ExperimentConfig) -> int:
    log_defaults(cfg, ("scenario",))
    net = _checkpoint(cfg, "scenario")
    s = cfg["scenario"]
    n, b, m = net.n_edps, s["images"], cfg.get("detect", "references")
    if b < 1 or s["draws"] < 1:
        raise UsageError("[scenario] images and draws must be >= 1")
    pool = eval_images(cfg, net.arch, max(cfg.get("data", "test_size"), n * b + m)).images
    if pool.shape[0] < n * b + m:
        raise UsageError(f"need {n * b + m} test images, the data source has {pool.shape[0]}")
    sent = [pool[i * b : (i + 1) * b] for i in range(n)]
    refs = pool[-m:]
    out = _out_dir(cfg)
    rows = []
    for snr in s["snrs"]:
        banks = gate_cfg = None
        if s["gate"] and n > 1:
            banks = reference_banks(net, refs, m)
            th = _calibrate(net, cfg, pool[n * b : -m] if pool.shape[0] > n * b + m else refs, banks, snr, 50)
            gate_cfg = GateConfig(th, m)
        res = run_scenario(net, sent, s["kind"], snr, cfg.get("run", "channel"), cfg.get("run", "seed"), s["draws"], banks, gate_cfg)
        for r in res.reports:
            psnr_s = "" if r.psnr_db is None else _dB(r.psnr_db)
            aacd_s = "" if r.aacd is None else f"{r.aacd:.6f}"
            rows.append([r.scenario, _dB(snr), r.edp, r.draw, r.image, psnr_s, aacd_s, r.gate])
        for i, dec in res.recovered.items():
            if dec is None:
                continue
            for k in range(dec.shape[0]):
                if any(r.edp == i and r.image == k and r.draw == 0 and r.psnr_db is not None for r in res.reports):
                    write_ppm(os.path.join(out, f"{s['kind']}_snr{snr:g}_img{k}_edp{i}.ppm"), dec[k])
    rows.sort(key=lambda r: (float(r[1]), r[2], r[3], r[4]))
    header = ["scenario", "snr_db", "edp", "draw", "image", "psnr_db", "aacd", "gate"]
    _write_csv(os.path.join(out, f"scenario_{s['kind']}.csv"), header, rows)
    return EXIT_OK


def cmd_detect(cfg: ExperimentConfig) -> int:
    log_defaults(cfg, ("detect",))
    net = _checkpoint(cfg, "detect")
    dcfg = cfg["detect"]
    if dcfg["trials"] < 1:
        raise UsageError("[detect] trials must be >= 1")
    if net.n_edps < 2:
        raise UsageError("detection needs a model with at least two EDPs")
    m = dcfg["references"]
    pool = eval_images(cfg, net.arch).images
    if pool.shape[0] <= m:
        raise UsageError(f"need more than {m} test images for references plus trials")
    banks = reference_banks(net, pool[-m:], m)
    rows = []
    for snr in dcfg["snrs"]:
        p, u = detection_trials(net, pool[:-m], snr, banks, dcfg["trials"], cfg.get("run", "channel"), cfg.get("run", "seed"))
        cal = calibrate_threshold(p, u)
        th = cal.threshold if dcfg["threshold"] is None else dcfg["threshold"]
        acc = (np.count_nonzero(p >= th) + np.count_nonzero(u < th)) / (p.size + u.size)
        rows.append(
            [_dB(snr), f"{p.mean():.6f}", f"{p.std():.6f}", f"{u.mean():.6f}", f"{u.std():.6f}", f"{th:.6f}", f"{acc:.4f}"]
        )
        log.info("%s dB: paired %.4f +- %.4f, unpaired %.4f +- %.4f, accuracy %.3f", _dB(snr), p.mean(), p.std(), u.mean(), u.std(), acc)
    header = ["snr_db", "paired_mean", "paired_std", "unpaired_mean", "unpaired_std", "threshold", "accuracy"]
    _write_csv(os.path.join(_out_dir(cfg), "detect.csv"), header, rows)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "scenario": cmd_scenario, "detect": cmd_detect}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepma", description="Deep multiple access image transmission experiments.")
    parser.add_argument("--config", help="experiment config file (key = value with [section] headers)")
    parser.add_argument("--seed", type=int, help="override [run] seed")
    parser.add_argument("--out", help="override [run] out directory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", help="train a DMANet and write history.csv and best.dman")
    p = sub.add_parser("eval", help="PSNR-vs-SNR sweep with all EDPs transmitting")
    p.add_argument("--checkpoint")
    p.add_argument("--snrs", help="comma-separated SNRs in dB")
    p.add_argument("--draws", type=int)
    p = sub.add_parser("scenario", help="multiplex, dedicated or cross-decoding test")
    p.add_argument("kind", nargs="?", choices=("multiplex", "dedicated", "cross"))
    p.add_argument("--checkpoint")
    p.add_argument("--snrs")
    p.add_argument("--images", type=int)
    p.add_argument("--no-gate", action="store_true")
    p = sub.add_parser("detect", help="paired/unpaired AACD statistics and threshold calibration")
    p.add_argument("--checkpoint")
    p.add_argument("--snrs")
    p.add_argument("--trials", type=int)
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> None:
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        cfg.set("run", "seed", args.seed)
    if args.out is not None:
        cfg.set("run", "out", args.out)
    section = args.command
    for key in ("checkpoint", "draws", "images", "trials"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.set(section, key, val)
    if getattr(args, "snrs", None):
        try:
            cfg.set(section, "snrs", tuple(float(v) for v in args.snrs.split(",")))
        except ValueError:
            raise UsageError(f"--snrs must be comma-separated numbers, got {args.snrs!r}") from None
    if getattr(args, "kind", None):
        cfg.set("scenario", "kind", args.kind)
    if getattr(args, "no_gate", False):
        cfg.set("scenario", "gate", False)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        _setup_logging()
        cfg = load_config(args.config) if args.config else parse_config("", "<defaults>")
        _apply_overrides(cfg, args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, UsageError, ContractError, CheckpointFormatError, FormatError, FileNotFoundError) as e:
        print(f"deepma: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, DegenerateInputError, DeepFadeError, FloatingPointError) as e:
        print(f"deepma: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"deepma: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
