"""Random crop (crop-then-upscale) and horizontal flip with exact size semantics.

Crop intensity ``alpha`` is the percentage of the linear image size removed.
The side of the crop window is ``round(size * (1 - alpha/100))`` with Python's
round-half-to-even rule, evaluated on exact decimals so the result never
depends on binary floating point.  The window is resized back to the original
size with a half-pixel-centred bilinear kernel (the convention shared by PIL,
``torch.nn.functional.interpolate(align_corners=False)`` and
``tf.image.resize``)::

    src = (dst + 0.5) * (window / size) - 0.5, clamped to [0, window - 1]
    out = a + frac(src) * (b - a),  a = in[floor(src)], b = in[min(floor(src) + 1, window - 1)]

The ``a + f * (b - a)`` form keeps constant images bit-exactly constant.
No padding is ever used.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateCrop, InvalidSpec

Alpha = Decimal

_HUNDRED = Decimal(100)


def to_alpha(value) -> Decimal:
    """Convert ``value`` (int, str, Decimal, Fraction or float) to an exact percent."""
    if isinstance(value, Decimal):
        alpha = value
    elif isinstance(value, bool):
        raise InvalidSpec(f"alpha must be numeric, got {value!r}")
    elif isinstance(value, int):
        alpha = Decimal(value)
    elif isinstance(value, Fraction):
        alpha = Decimal(value.numerator) / Decimal(value.denominator)
    elif isinstance(value, float):
        # repr gives the shortest decimal that round-trips, i.e. what the user typed
        alpha = Decimal(repr(value))
    elif isinstance(value, str):
        try:
            alpha = Decimal(value.strip())
        except ArithmeticError as exc:
            raise InvalidSpec(f"not a decimal alpha: {value!r}") from exc
    else:
        raise InvalidSpec(f"unsupported alpha type {type(value).__name__}")
    if not alpha.is_finite() or not (0 <= alpha < 100):
        raise InvalidSpec(f"alpha must lie in [0, 100), got {value!r}")
    if alpha == 0:
        return Decimal(0)
    alpha = alpha.normalize()
    # normalize() turns 10 into 1E+1; keep a plain integer exponent
    return alpha.quantize(Decimal(1)) if alpha.as_tuple().exponent > 0 else alpha


def format_alpha(alpha) -> str:
    """Plain decimal text for an alpha, e.g. ``36`` or ``36.5`` (never exponent form)."""
    a = to_alpha(alpha)
    text = format(a, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text


def effective_dim(image_size: int, alpha) -> int:
    """Side length of the crop window for ``alpha`` percent removal."""
    if image_size < 1:
        raise InvalidSpec(f"image_size must be >= 1, got {image_size}")
    a = to_alpha(alpha)
    exact = Decimal(image_size) * (_HUNDRED - a) / _HUNDRED
    dim = int(exact.quantize(Decimal(1), rounding=ROUND_HALF_EVEN))
    if dim < 1:
        raise DegenerateCrop(
            f"alpha={format_alpha(a)}% leaves a {dim}px window on a {image_size}px image"
        )
    return dim


@dataclass(frozen=True)
class CropSpec:
    alpha: Decimal

    def __post_init__(self):
        object.__setattr__(self, "alpha", to_alpha(self.alpha))


@dataclass(frozen=True)
class FlipSpec:
    probability: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.probability <= 1.0):
            raise InvalidSpec(f"flip probability must be in [0, 1], got {self.probability}")


@dataclass(frozen=True)
class AugmentationPolicy:
    """Training-time transforms: an optional crop followed by an optional flip.

    There is intentionally no evaluation-time entry point; test images are
    never augmented.
    """

    crop: CropSpec | None = None
    flip: FlipSpec | None = None
    applied_at: str = field(default="train", init=False)

    @property
    def label(self) -> str:
        parts = []
        if self.crop is not None:
            parts.append("crop")
        if self.flip is not None:
            parts.append("flip")
        return "+".join(parts) or "none"

    def with_alpha(self, alpha) -> "AugmentationPolicy":
        return AugmentationPolicy(crop=CropSpec(alpha), flip=self.flip)

    def apply_train_batch(self, images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Augment an N x H x W x C training batch; fresh randomness per image."""
        out = images
        if self.crop is not None:
            out = random_crop_batch(out, self.crop, rng)
        if self.flip is not None:
            out = random_flip_batch(out, self.flip, rng)
        return out

    def to_dict(self) -> dict:
        return {
            "crop": None if self.crop is None else {"alpha": format_alpha(self.crop.alpha)},
            "flip": None if self.flip is None else {"probability": self.flip.probability},
            "applied_at": self.applied_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationPolicy":
        crop = d.get("crop")
        flip = d.get("flip")
        return cls(
            crop=None if crop is None else CropSpec(crop["alpha"]),
            flip=None if flip is None else FlipSpec(float(flip["probability"])),
        )


# -- resizing -----------------------------------------------------------------


def _bilinear_taps(src_size: int, dst_size: int):
    scale = src_size / dst_size
    pos = (np.arange(dst_size, dtype=np.float64) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, src_size - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, src_size - 1)
    return i0, i1, pos - i0


def resize_bilinear(images: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an N x h x w x C float batch to N x out_h x out_w x C."""
    n, h, w, c = images.shape
    if (h, w) == (out_h, out_w):
        return images.copy()
    r0, r1, rf = _bilinear_taps(h, out_h)
    a, b = images[:, r0], images[:, r1]
    rows = a + rf[None, :, None, None] * (b - a)
    c0, c1, cf = _bilinear_taps(w, out_w)
    a, b = rows[:, :, c0], rows[:, :, c1]
    return a + cf[None, None, :, None] * (b - a)


def _as_float(images: np.ndarray) -> np.ndarray:
    return images if np.issubdtype(images.dtype, np.floating) else images.astype(np.float64)


def _restore_dtype(out: np.ndarray, like: np.ndarray) -> np.ndarray:
    if np.issubdtype(like.dtype, np.floating):
        return out.astype(like.dtype, copy=False)
    info = np.iinfo(like.dtype)
    return np.clip(np.rint(out), info.min, info.max).astype(like.dtype)


def crop_windows(images: np.ndarray, tops, lefts, win_h: int, win_w: int) -> np.ndarray:
    """Gather one window per image at the given top-left offsets."""
    n = images.shape[0]
    tops = np.asarray(tops, dtype=np.intp).reshape(n, 1, 1)
    lefts = np.asarray(lefts, dtype=np.intp).reshape(n, 1, 1)
    rows = tops + np.arange(win_h)[None, :, None]
    cols = lefts + np.arange(win_w)[None, None, :]
    return images[np.arange(n)[:, None, None], rows, cols]


def crop_and_resize(images: np.ndarray, tops, lefts, win_h: int, win_w: int) -> np.ndarray:
    """Deterministic core of the random crop: fixed offsets, then upscale back."""
    _, h, w, _ = images.shape
    if (win_h, win_w) == (h, w):
        return images.copy()
    windows = crop_windows(_as_float(images), tops, lefts, win_h, win_w)
    return _restore_dtype(resize_bilinear(windows, h, w), images)


def window_dims(height: int, width: int, alpha) -> tuple[int, int]:
    return effective_dim(height, alpha), effective_dim(width, alpha)


def random_crop_batch(images: np.ndarray, spec: CropSpec, rng: np.random.Generator) -> np.ndarray:
    """Random crop of every image in an N x H x W x C batch.

    Offsets are uniform over all valid positions, drawn independently per
    axis and per image.
    """
    n, h, w, _ = images.shape
    win_h, win_w = window_dims(h, w, spec.alpha)
    if (win_h, win_w) == (h, w):
        return images.copy()
    tops = rng.integers(0, h - win_h + 1, size=n)
    lefts = rng.integers(0, w - win_w + 1, size=n)
    return crop_and_resize(images, tops, lefts, win_h, win_w)


def apply_random_crop(image: np.ndarray, spec: CropSpec, rng: np.random.Generator) -> np.ndarray:
    """Crop an H x W x C image at a random offset and upscale it back to H x W."""
    if image.ndim != 3:
        raise InvalidSpec(f"expected an H x W x C image, got shape {image.shape}")
    return random_crop_batch(image[None], spec, rng)[0]


def random_flip_batch(images: np.ndarray, spec: FlipSpec, rng: np.random.Generator) -> np.ndarray:
    mask = rng.random(images.shape[0]) < spec.probability
    out = images.copy()
    out[mask] = out[mask][:, :, ::-1]
    return out


def apply_random_flip(image: np.ndarray, spec: FlipSpec, rng: np.random.Generator) -> np.ndarray:
    """Mirror the columns of an H x W x C image with probability ``spec.probability``."""
    if rng.random() < spec.probability:
        return image[:, ::-1].copy()
    return image.copy()


# -- alpha grids ----------------------------------------------------------------


@dataclass(frozen=True)
class AlphaGrid:
    alphas: tuple[Decimal, ...]
    image_size: int

    def __post_init__(self):
        alphas = tuple(to_alpha(a) for a in self.alphas)
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise InvalidSpec("grid alphas must be strictly increasing")
        if self.image_size < 1:
            raise InvalidSpec("image_size must be >= 1")
        object.__setattr__(self, "alphas", alphas)

    def __len__(self) -> int:
        return len(self.alphas)

    def __iter__(self):
        return iter(self.alphas)

    @property
    def dims(self) -> list[int]:
        return [effective_dim(self.image_size, a) for a in self.alphas]

    def to_dict(self) -> dict:
        return {"image_size": self.image_size, "alphas": [format_alpha(a) for a in self.alphas]}

    @classmethod
    def from_dict(cls, d: dict) -> "AlphaGrid":
        return cls(tuple(d["alphas"]), int(d["image_size"]))


def dedupe_grid(grid: AlphaGrid) -> AlphaGrid:
    """Keep the smallest alpha of every group sharing one effective crop dimension.

    Alphas whose window would be degenerate (< 1px) are dropped as well.
    """
    seen: set[int] = set()
    kept = []
    for a in grid.alphas:
        try:
            dim = effective_dim(grid.image_size, a)
        except DegenerateCrop:
            continue
        if dim not in seen:
            seen.add(dim)
            kept.append(a)
    return AlphaGrid(tuple(kept), grid.image_size)


# floor(10k/3) for k = 0..27 -> 0, 3, 6, 10, 13, ..., 86, 90
DEFAULT_ALPHAS: tuple[int, ...] = tuple(10 * k // 3 for k in range(28))


def default_grid(image_size: int = 32) -> AlphaGrid:
    """The 3-4% step grid over [0, 90], deduplicated for ``image_size``."""
    if image_size < 4:
        raise InvalidSpec("default_grid needs image_size >= 4")
    return dedupe_grid(AlphaGrid(tuple(Decimal(a) for a in DEFAULT_ALPHAS), image_size))


def step_grid(start, stop, step, image_size: int) -> AlphaGrid:
    """Alphas ``start, start+step, ...`` strictly below ``stop`` (not deduplicated)."""
    lo, hi = to_alpha(start), Decimal(str(stop))
    inc = Decimal(str(step))
    if inc <= 0:
        raise InvalidSpec("step must be > 0")
    values = []
    a = lo
    while a < hi and a < 100:
        values.append(a)
        a += inc
    return AlphaGrid(tuple(values), image_size)


def parse_grid(text: str, image_size: int) -> AlphaGrid:
    """Parse ``default``, ``a,b,c`` or ``start:stop:step`` into a deduplicated grid."""
    text = text.strip()
    if text in ("", "default"):
        return default_grid(image_size)
    if ":" in text:
        start, stop, step = text.split(":")
        return dedupe_grid(step_grid(start, stop, step, image_size))
    values: Iterable[str] = (t for t in text.split(",") if t.strip())
    return dedupe_grid(AlphaGrid(tuple(sorted({to_alpha(v) for v in values})), image_size))


def grid_dims(grid: Sequence, image_size: int) -> list[int]:
    return [effective_dim(image_size, a) for a in grid]
