"""Image sets: CIFAR binary loaders, synthetic generators, 8-bit conversion and PPM export."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ImageSet",
    "FormatError",
    "load_cifar10",
    "load_cifar100",
    "synthetic_set",
    "normalize",
    "denormalize",
    "center_crop",
    "write_ppm",
    "read_ppm",
]

PIXELS = 3 * 32 * 32


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class ImageSet:
    images: np.ndarray  # uint8 [n, 3, H, W]
    labels: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        if self.images.dtype != np.uint8 or self.images.ndim != 4:
            raise ValueError(f"images must be uint8 [n, C, H, W], got {self.images.dtype} {self.images.shape}")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def hw(self) -> tuple[int, int]:
        return self.images.shape[2], self.images.shape[3]

    def subset(self, idx) -> "ImageSet":
        return ImageSet(self.images[idx], None if self.labels is None else self.labels[idx], self.source)


def _load_cifar(path, n_labels: int, source: str) -> ImageSet:
    raw = np.fromfile(path, dtype=np.uint8)
    rec = n_labels + PIXELS
    if raw.size % rec:
        raise FormatError(
            f"{os.fspath(path)}: size {raw.size} bytes is not a multiple of the {rec}-byte record "
            f"(expected {raw.size // rec * rec} or {(raw.size // rec + 1) * rec})"
        )
    recs = raw.reshape(-1, rec)
    images = recs[:, n_labels:].reshape(-1, 3, 32, 32).copy()
    return ImageSet(images, recs[:, n_labels - 1].astype(np.int64), source)


def load_cifar10(path) -> ImageSet:
    """CIFAR-10 binary batch: 1 label byte + 3072 plane-major RGB bytes per record."""
    return _load_cifar(path, 1, "cifar10")


def load_cifar100(path) -> ImageSet:
    """CIFAR-100 binary file: coarse + fine label bytes + 3072 pixels; keeps the fine label."""
    return _load_cifar(path, 2, "cifar100")


def synthetic_set(n: int, height: int, width: int, seed: int, kind: str = "shapes") -> ImageSet:
    """Deterministic synthetic images.

    ``noise``: i.i.d. uniform pixels. ``gradients``: linear colour ramps.
    ``shapes``: a flat background with one to three filled rectangles or discs.
    """
    rng = np.random.default_rng(seed)
    if kind == "noise":
        imgs = rng.integers(0, 256, size=(n, 3, height, width), dtype=np.uint8)
        return ImageSet(imgs, None, "synthetic:noise")
    yy, xx = np.mgrid[0:height, 0:width]
    yy = (yy + 0.5) / height
    xx = (xx + 0.5) / width
    out = np.empty((n, 3, height, width), dtype=np.float64)
    if kind == "gradients":
        for t in range(n):
            a, b = rng.uniform(0, 255, size=(2, 3))
            ang = rng.uniform(0, 2 * np.pi)
            ramp = np.clip(0.5 + (xx - 0.5) * np.cos(ang) + (yy - 0.5) * np.sin(ang), 0, 1)
            out[t] = a[:, None, None] + (b - a)[:, None, None] * ramp
    elif kind == "shapes":
        for t in range(n):
            img = np.broadcast_to(rng.uniform(0, 255, size=(3, 1, 1)), (3, height, width)).copy()
            for _ in range(rng.integers(1, 4)):
                color = rng.uniform(0, 255, size=3)
                cy, cx = rng.uniform(0.1, 0.9, size=2)
                if rng.random() < 0.5:
                    hh, hw = rng.uniform(0.1, 0.35, size=2)
                    mask = (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
                else:
                    r = rng.uniform(0.1, 0.35)
                    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
                img[:, mask] = color[:, None]
            out[t] = img
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return ImageSet(np.floor(out + 0.5).clip(0, 255).astype(np.uint8), None, f"synthetic:{kind}")


def normalize(images, dtype=np.float32) -> np.ndarray:
    """8-bit pixels to [0, 1]."""
    arr = images.images if isinstance(images, ImageSet) else np.asarray(images)
    return (arr.astype(np.float64) / 255.0).astype(dtype)


def denormalize(values) -> np.ndarray:
    """[0, 1] floats to uint8 with clamping and round-half-up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def center_crop(images: ImageSet, size: int | tuple[int, int]) -> ImageSet:
    th, tw = (size, size) if np.isscalar(size) else size
    h, w = images.hw
    if th > h or tw > w:
        raise ValueError(f"crop {th}x{tw} larger than image {h}x{w}")
    top = (h - th) // 2
    left = (w - tw) // 2
    return ImageSet(images.images[:, :, top : top + th, left : left + tw].copy(), images.labels, images.source)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, maxval 255; ``image`` is uint8 ``[3, H, W]``."""
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"PPM export needs uint8 [3, H, W], got {img.dtype} {img.shape}")
    _, h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6" or fields[3] != b"255":
        raise FormatError(f"{path}: only P6 with maxval 255 is supported")
    w, h = int(fields[1]), int(fields[2])
    body = data[pos + 1 : pos + 1 + 3 * w * h]
    if len(body) != 3 * w * h:
        raise FormatError(f"{path}: truncated pixel data at byte offset {pos + 1 + len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1).copy()
