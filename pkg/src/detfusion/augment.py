"""Photometric test-time augmentations on 8-bit images.

Images are ``uint8`` numpy arrays shaped ``(height, width)`` for gray or
``(height, width, 3)`` for RGB.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import correlate, correlate1d

from .errors import UnsupportedSpec

LUMA = np.array([0.299, 0.587, 0.114])


class Kind(str, enum.Enum):
    IDENTITY = "identity"
    BRIGHTNESS = "brightness"
    CONTRAST = "contrast"
    EDGE_ENHANCE = "edge_enhance"
    HIST_EQUALIZE = "hist_equalize"
    GAUSSIAN_BLUR = "gaussian_blur"
    GAUSSIAN_NOISE = "gaussian_noise"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class AugmentationSpec:
    kind: Kind
    factor: float = 1.0
    radius: float = 2.0
    variance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", Kind(self.kind))
        except ValueError:
            raise UnsupportedSpec(f"unknown augmentation kind {self.kind!r}") from None
        if self.kind in (Kind.BRIGHTNESS, Kind.CONTRAST) and self.factor < 0:
            raise ValueError("factor must be non-negative")
        if self.kind is Kind.GAUSSIAN_BLUR and self.radius <= 0:
            raise ValueError("blur radius must be positive")
        if self.variance < 0:
            raise ValueError("noise variance must be non-negative")

    @property
    def id(self) -> str:
        """Stable name, ``<kind>`` or ``<kind>_<param>``."""
        if self.kind in (Kind.BRIGHTNESS, Kind.CONTRAST):
            return f"{self.kind}_{self.factor:g}"
        if self.kind is Kind.GAUSSIAN_BLUR:
            return f"{self.kind}_{self.radius:g}"
        if self.kind is Kind.GAUSSIAN_NOISE:
            return f"{self.kind}_{self.variance:g}"
        return str(self.kind)

    def to_json(self) -> dict:
        d = asdict(self)
        d["kind"] = str(self.kind)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "AugmentationSpec":
        return cls(**obj)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "AugmentationSpec":
        """Inverse of :attr:`id`, e.g. ``"contrast_1.5"`` or ``"edge_enhance"``."""
        try:
            return cls(Kind(text), seed=seed)
        except ValueError:
            pass
        kind, _, param = text.rpartition("_")
        try:
            value = float(param)
            k = Kind(kind)
        except ValueError:
            raise UnsupportedSpec(f"cannot parse augmentation {text!r}") from None
        if k in (Kind.BRIGHTNESS, Kind.CONTRAST):
            return cls(k, factor=value, seed=seed)
        if k is Kind.GAUSSIAN_BLUR:
            return cls(k, radius=value, seed=seed)
        if k is Kind.GAUSSIAN_NOISE:
            return cls(k, variance=value, seed=seed)
        raise UnsupportedSpec(f"{k} takes no parameter")


def check_image(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise TypeError(f"expected uint8 samples, got {arr.dtype}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if not (arr.ndim == 2 or (arr.ndim == 3 and arr.shape[2] == 3)):
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must be non-empty")
    return arr


def _quantize(values: np.ndarray) -> np.ndarray:
    # round half up, then clamp to the 8-bit range
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def mean_luma(img: np.ndarray) -> int:
    if img.ndim == 2:
        m = img.mean()
    else:
        m = (img.astype(float) @ LUMA).mean()
    return int(math.floor(m + 0.5))


def brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return _quantize(img.astype(float) * factor)


def contrast(img: np.ndarray, factor: float) -> np.ndarray:
    mean = mean_luma(img)
    return _quantize(mean + factor * (img.astype(float) - mean))


EDGE_ENHANCE_KERNEL = np.array([[-1, -1, -1], [-1, 10, -1], [-1, -1, -1]], dtype=float) / 2.0


def _per_channel(img: np.ndarray, fn) -> np.ndarray:
    if img.ndim == 2:
        return fn(img)
    return np.stack([fn(img[:, :, c]) for c in range(img.shape[2])], axis=2)


def edge_enhance(img: np.ndarray) -> np.ndarray:
    return _per_channel(
        img, lambda ch: _quantize(correlate(ch.astype(float), EDGE_ENHANCE_KERNEL, mode="nearest"))
    )


def _equalize_channel(ch: np.ndarray) -> np.ndarray:
    hist = np.bincount(ch.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = cdf[hist > 0][0]
    total = ch.size
    if total == cdf_min:
        return ch.copy()
    lut = _quantize((cdf - cdf_min) / (total - cdf_min) * 255.0)
    return lut[ch]


def hist_equalize(img: np.ndarray) -> np.ndarray:
    return _per_channel(img, _equalize_channel)


def gaussian_kernel(sigma: float) -> np.ndarray:
    half = int(math.ceil(3 * sigma))
    t = np.arange(-half, half + 1, dtype=float)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, radius: float) -> np.ndarray:
    k = gaussian_kernel(radius)

    def blur(ch):
        out = correlate1d(ch.astype(float), k, axis=0, mode="nearest")
        return _quantize(correlate1d(out, k, axis=1, mode="nearest"))

    return _per_channel(img, blur)


def noise_generator(seed: int) -> np.random.Generator:
    """Counter-based Philox stream, so other implementations can match it."""
    return np.random.Generator(np.random.Philox(key=seed & (2**64 - 1)))


def gaussian_noise(img: np.ndarray, variance: float, seed: int) -> np.ndarray:
    if variance == 0:
        return img.copy()
    rng = noise_generator(seed)
    noisy = img.astype(float) / 255.0 + rng.normal(0.0, math.sqrt(variance), size=img.shape)
    return _quantize(np.clip(noisy, 0.0, 1.0) * 255.0)


def apply(img, spec: AugmentationSpec) -> np.ndarray:
    """Return the augmented copy of ``img``; the input is never modified."""
    img = check_image(img)
    kind = spec.kind
    if kind is Kind.IDENTITY:
        return img.copy()
    if kind is Kind.BRIGHTNESS:
        return brightness(img, spec.factor)
    if kind is Kind.CONTRAST:
        return contrast(img, spec.factor)
    if kind is Kind.EDGE_ENHANCE:
        return edge_enhance(img)
    if kind is Kind.HIST_EQUALIZE:
        return hist_equalize(img)
    if kind is Kind.GAUSSIAN_BLUR:
        return gaussian_blur(img, spec.radius)
    if kind is Kind.GAUSSIAN_NOISE:
        return gaussian_noise(img, spec.variance, spec.seed)
    raise UnsupportedSpec(f"no operator for {kind!r}")


BRIGHTNESS_FACTORS = (0.25, 0.5, 1.0, 1.5, 2.0, 2.5)
CONTRAST_FACTORS = (0.25, 0.5, 1.5, 2.0, 2.5)
NOISE_VARIANCES = (0.001, 0.003, 0.005)


def full_roster(seed: int = 0) -> list:
    """All 18 variants in canonical (unranked) order, identity first.

    Brightness factor 1 reproduces the original image; it is kept as its own
    entry because it belongs to the brightness factor set.
    """
    specs = [AugmentationSpec(Kind.IDENTITY)]
    specs += [AugmentationSpec(Kind.BRIGHTNESS, factor=f) for f in BRIGHTNESS_FACTORS]
    specs += [AugmentationSpec(Kind.CONTRAST, factor=f) for f in CONTRAST_FACTORS]
    specs += [AugmentationSpec(Kind.GAUSSIAN_NOISE, variance=v, seed=seed + i)
              for i, v in enumerate(NOISE_VARIANCES)]
    specs += [AugmentationSpec(Kind.EDGE_ENHANCE), AugmentationSpec(Kind.HIST_EQUALIZE),
              AugmentationSpec(Kind.GAUSSIAN_BLUR, radius=2.0)]
    return specs


def load_ranking(path: Optional[Path] = None) -> list:
    """Augmentation ids ordered by how often each made the top-T set."""
    if path is None:
        text = resources.files("detfusion").joinpath("data/roster_ranking.json").read_text()
    else:
        text = Path(path).read_text()
    return list(json.loads(text)["ranking"])


def roster(m: Optional[int] = None, ranking: Optional[Sequence[str]] = None, seed: int = 0) -> list:
    """Identity plus the ``m - 1`` best-ranked augmentations.

    ``m=None`` returns the whole roster in ranked order.
    """
    specs = {s.id: s for s in full_roster(seed)}
    if ranking is None:
        ranking = load_ranking()
    ordered = [specs["identity"]]
    for name in ranking:
        if name not in specs:
            raise UnsupportedSpec(f"ranking names unknown augmentation {name!r}")
        if name != "identity":
            ordered.append(specs[name])
    ordered += [s for s in specs.values() if s not in ordered]
    if m is None:
        return ordered
    if not 1 <= m <= len(ordered):
        raise ValueError(f"m must be in [1, {len(ordered)}], got {m}")
    return ordered[:m]


# --- binary PNM I/O -------------------------------------------------------

def _tokens(data: bytes, count: int):
    """Read ``count`` header tokens, skipping comments. Returns (tokens, offset)."""
    out = []
    i = 0
    while len(out) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        out.append(data[i:j])
        i = j
    return out, i + 1


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _tokens(data, 4)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: only binary PGM (P5) and PPM (P6) are supported")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit images are supported")
    channels = 3 if magic == b"P6" else 1
    n = w * h * channels
    pixels = np.frombuffer(data, dtype=np.uint8, count=n, offset=offset)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return pixels.reshape(shape).copy()


def write_pnm(path, img) -> None:
    img = check_image(img)
    magic = b"P6" if img.ndim == 3 else b"P5"
    h, w = img.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes())


def read_image(path) -> np.ndarray:
    """PNM natively; other formats through Pillow when it is installed."""
    p = Path(path)
    if p.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        return read_pnm(p)
    try:
        from PIL import Image
    except ImportError:
        raise ValueError(f"{path}: install Pillow to read {p.suffix} files") from None
    with Image.open(p) as im:
        im = im.convert("L" if im.mode in ("L", "1") else "RGB")
        return np.asarray(im, dtype=np.uint8).copy()


def write_image(path, img) -> None:
    p = Path(path)
    if p.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        write_pnm(p, img)
        return
    try:
        from PIL import Image
    except ImportError:
        raise ValueError(f"{path}: install Pillow to write {p.suffix} files") from None
    Image.fromarray(check_image(img)).save(p)
