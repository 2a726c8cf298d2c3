"""Line-oriented experiment configuration: ``key = value`` under ``[section]`` headers.

Unknown sections and keys are rejected with the offending line number. Keys
that are absent fall back to a default, and every default that gets used is
logged so a run records exactly what it ran with.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

log = logging.getLogger(__name__)

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "SCHEMA"]


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + msg)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.replace(",", " ").split())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(",", " ").split())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {s!r}")


def _schedule(s: str) -> tuple[tuple[int, float], ...]:
    out = []
    for item in s.split(","):
        epoch, _, lr = item.partition(":")
        if not lr:
            raise ValueError(f"schedule entries look like 'epoch:lr', got {item.strip()!r}")
        out.append((int(epoch), float(lr)))
    return tuple(out)


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() == "none" else int(s)


def _opt_floats(s: str) -> tuple[float, ...] | None:
    return None if s.strip().lower() == "none" else _floats(s)


def _threshold(s: str) -> float | None:
    return None if s.strip().lower() == "auto" else float(s)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        v = s.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v

    return parse


CHANNELS = ("awgn", "d2d", "downlink", "uplink")

# section -> key -> (parser, default). A default of ``REQUIRED`` must be given.
REQUIRED = object()
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {
        "seed": (int, 0),
        "out": (str, "runs/default"),
        "channel": (_choice(*CHANNELS), "awgn"),
    },
    "model": {
        "n_edps": (int, REQUIRED),
        "height": (int, 16),
        "width": (int, 16),
        "channels": (_ints, (16, 32, 32, 16)),
        "strides": (_ints, (1, 2, 2, 2)),
        "afb_reduction": (int, 2),
        "kernel_size": (int, 3),
        "power": (float, 2.0),
    },
    "data": {
        "source": (_choice("synthetic", "cifar10", "cifar100"), "synthetic"),
        "kind": (_choice("noise", "gradients", "shapes"), "shapes"),
        "train_path": (str, ""),
        "test_path": (str, ""),
        "train_size": (int, 4000),
        "val_size": (int, 200),
        "test_size": (int, 200),
        "test_seed": (int, 12345),
    },
    "train": {
        "batch_size": (int, 32),
        "max_epochs": (int, 400),
        "max_iterations": (_opt_int, 3000),
        "lr_schedule": (_schedule, ((0, 1e-3),)),
        "snr_min": (float, 0.0),
        "snr_max": (float, 20.0),
        "fixed_snrs": (_opt_floats, None),
        "val_snr_db": (float, 10.0),
        "validate_every": (int, 5),
    },
    "eval": {
        "checkpoint": (str, ""),
        "snrs": (_floats, (1.0, 4.0, 7.0, 10.0, 13.0, 16.0, 19.0, 22.0, 25.0)),
        "draws": (int, 10),
    },
    "scenario": {
        "checkpoint": (str, ""),
        "kind": (_choice("multiplex", "dedicated", "cross"), "multiplex"),
        "snrs": (_floats, (10.0,)),
        "images": (int, 4),
        "draws": (int, 1),
        "gate": (_bool, True),
    },
    "detect": {
        "checkpoint": (str, ""),
        "snrs": (_floats, (0.0, 5.0, 10.0, 15.0, 20.0)),
        "trials": (int, 100),
        "references": (int, 2),
        "threshold": (_threshold, None),
    },
}


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, Any]]
    explicit: set[tuple[str, str]] = field(default_factory=set)
    source: str = "<config>"

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value) -> None:
        self.values[section][key] = value
        self.explicit.add((section, key))

    def is_set(self, section: str, key: str) -> bool:
        return (section, key) in self.explicit

    def require(self, section: str, key: str) -> Any:
        v = self.values[section][key]
        if v is REQUIRED or v == "":
            raise ConfigError(f"missing required key '{key}' in [{section}]", source=self.source)
        return v


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    explicit: set[tuple[str, str]] = set()
    section = "run"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno, source)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]; known: {', '.join(SCHEMA)}", lineno, source)
            continue
        key, eq, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not eq or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in [{section}]", lineno, source)
        if (section, key) in explicit:
            raise ConfigError(f"duplicate key '{key}' in [{section}]", lineno, source)
        parser = SCHEMA[section][key][0]
        try:
            values[section][key] = parser(val)
        except ValueError as e:
            raise ConfigError(f"bad value for '{key}': {e}", lineno, source) from None
        explicit.add((section, key))
    return ExperimentConfig(values, explicit, source)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", source=str(path)) from None
    return parse_config(text, str(path))


def log_defaults(cfg: ExperimentConfig, sections) -> None:
    for sec in sections:
        for key, (_, default) in SCHEMA[sec].items():
            if (sec, key) not in cfg.explicit and default is not REQUIRED:
                log.info("config default [%s] %s = %r", sec, key, default)
