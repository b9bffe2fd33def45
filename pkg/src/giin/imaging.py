"""Image resizing, normalisation, augmentation and PPM file IO.

Images are ``(height, width, 3)`` float64 arrays in raw pixel units
(0..255) until :func:`preprocess` normalises them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, InvariantError

FULL_SIZE = (512, 768)
DESK_SIZE = (64, 96)
CROP_FRACTION = 0.9
NOISE_MAX = 0.2 * 255
AUGMENTATIONS = ("hflip", "vflip", "rot90", "rot180", "rot270", "crop", "noise", "identity")


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with aligned corners (corner pixels map onto corners)."""
    h, w = img.shape[:2]
    oh, ow = size
    if (h, w) == (oh, ow):
        return img.astype(np.float64, copy=True)
    ys = np.linspace(0.0, h - 1.0, oh) if oh > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, ow) if ow > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    im = img.astype(np.float64)
    top = im[y0][:, x0] * (1 - wx) + im[y0][:, x1] * wx
    bot = im[y1][:, x0] * (1 - wx) + im[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


@dataclass(frozen=True)
class ModalityStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        if any(not s > 0 for s in self.std):
            raise InvariantError(f"channel std must be positive, got {self.std}")

    @classmethod
    def fit(cls, images, size: tuple[int, int] = DESK_SIZE) -> "ModalityStats":
        """Per-channel statistics over (resized) training images."""
        px = np.concatenate([resize_bilinear(im, size).reshape(-1, 3) for im in images])
        return cls(tuple(px.mean(axis=0)), tuple(px.std(axis=0)))


def preprocess(img: np.ndarray, stats: ModalityStats,
               size: tuple[int, int] = DESK_SIZE) -> np.ndarray:
    out = resize_bilinear(img, size)
    return (out - np.asarray(stats.mean)) / np.asarray(stats.std)


def random_crop(img: np.ndarray, crop: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    ch, cw = crop
    if ch > h or cw > w or ch < 1 or cw < 1:
        raise DomainError(f"crop {crop} does not fit image {(h, w)}")
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return img[top:top + ch, left:left + cw]


def gaussian_noise(img: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add N(0, sigma^2) noise in raw pixel units."""
    if sigma < 0:
        raise DomainError(f"noise sigma must be >= 0, got {sigma}")
    return img + rng.normal(0.0, 1.0, size=img.shape) * sigma


def apply_augmentation(img: np.ndarray, name: str, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    if name == "hflip":
        return img[:, ::-1].copy()
    if name == "vflip":
        return img[::-1].copy()
    if name.startswith("rot"):
        return np.rot90(img, k=int(name[3:]) // 90, axes=(0, 1)).copy()
    if name == "crop":
        ch, cw = max(1, int(round(h * CROP_FRACTION))), max(1, int(round(w * CROP_FRACTION)))
        return resize_bilinear(random_crop(img, (ch, cw), rng), (h, w))
    if name == "noise":
        return gaussian_noise(img, rng.uniform(0.0, NOISE_MAX), rng)
    if name == "identity":
        return img.copy()
    raise DomainError(f"unknown augmentation {name!r}")


def augment(img: np.ndarray, seed) -> np.ndarray:
    """Apply exactly one transform drawn uniformly from :data:`AUGMENTATIONS`."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    name = AUGMENTATIONS[int(rng.integers(len(AUGMENTATIONS)))]
    return apply_augmentation(img, name, rng)


# ------------------------------------------------------------------ PPM IO

def write_ppm(path, img: np.ndarray) -> None:
    px = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = px.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(px.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM supported")
    data = raw[pos + 1:pos + 1 + w * h * 3]
    if len(data) != w * h * 3:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).astype(np.float64)
