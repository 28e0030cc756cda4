"""Linear camera images and the color pipeline around them.

Pooling order: every per-channel statistic is reduced with ``numpy.mean`` over
the flattened ``(N, 3)`` array of unmasked pixels in row-major order, so sums
are bit-reproducible for a given image.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .chroma import DomainError, normalize

# IEC 61966-2-1 XYZ (D65) to linear sRGB.
XYZ_TO_SRGB = np.array(
    [
        [3.2406, -1.5372, -0.4986],
        [-0.9689, 1.8758, 0.0415],
        [0.0557, -0.2040, 1.0570],
    ]
)
SRGB_TO_XYZ = np.linalg.inv(XYZ_TO_SRGB)

ORACLE_SHORT_SIDE = 448


def _as_rects(mask) -> tuple[tuple[int, int, int, int], ...]:
    rects = []
    for rect in mask or ():
        rect = tuple(rect)
        if len(rect) != 4 or not all(isinstance(v, (int, np.integer)) for v in rect):
            raise DomainError(f"mask rectangle must be 4 integers, got {rect!r}")
        x, y, w, h = (int(v) for v in rect)
        if w < 0 or h < 0:
            raise DomainError(f"mask rectangle has negative size: {rect!r}")
        rects.append((x, y, w, h))
    return tuple(rects)


def _frozen(data: np.ndarray) -> np.ndarray:
    data = np.array(data, dtype=np.float64, copy=True)
    data.setflags(write=False)
    return data


@dataclass(frozen=True, eq=False)
class LinearImage:
    """H x W x 3 linear camera RGB, nonnegative, with optional excluded rectangles.

    ``mask`` holds ``(x, y, w, h)`` rectangles; pixels inside any of them are
    left out of every statistic.
    """

    data: np.ndarray
    mask: tuple = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise DomainError(f"expected an H x W x 3 array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DomainError("image contains non-finite samples")
        if np.any(data < 0):
            raise DomainError("linear image samples must be nonnegative")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "mask", _as_rects(self.mask))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def valid(self) -> np.ndarray:
        """Boolean H x W map, True where the pixel takes part in statistics."""
        keep = np.ones(self.data.shape[:2], dtype=bool)
        for x, y, w, h in self.mask:
            keep[max(y, 0) : max(y + h, 0), max(x, 0) : max(x + w, 0)] = False
        return keep

    def pixels(self) -> np.ndarray:
        return self.data[self.valid()]

    def with_data(self, data: np.ndarray) -> "LinearImage":
        return LinearImage(data, self.mask)


@dataclass(frozen=True, eq=False)
class SrgbImage:
    """Display-referred H x W x 3 image in [0, 1]."""

    data: np.ndarray
    gamma: bool = True

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise DomainError(f"expected an H x W x 3 array, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or data.min() < 0 or data.max() > 1:
            raise DomainError("sRGB samples must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def to_uint8(self) -> np.ndarray:
        return np.round(self.data * 255.0).astype(np.uint8)


def check_ccm(ccm) -> np.ndarray:
    m = np.asarray(ccm, dtype=np.float64)
    if m.shape != (3, 3):
        raise DomainError(f"color matrix must be 3 x 3, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("color matrix has non-finite entries")
    if abs(np.linalg.det(m)) <= 1e-9:
        raise DomainError("color matrix is not invertible")
    return m


def _gains(ell) -> np.ndarray:
    ell = normalize(ell)
    return ell / ell.max()


def white_balance(img: LinearImage, est) -> LinearImage:
    """Divide each channel by the estimate, rescaled so its largest gain is 1."""
    return img.with_data(img.data / _gains(est))


def apply_illuminant(wb: LinearImage, ell) -> LinearImage:
    """Tint a white-balanced image with ``ell`` (rescaled to max component 1)."""
    return wb.with_data(wb.data * _gains(ell))


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    linear = np.asarray(linear, dtype=np.float64)
    return np.where(
        linear <= 0.0031308,
        12.92 * linear,
        1.055 * np.power(np.maximum(linear, 0.0031308), 1.0 / 2.4) - 0.055,
    )


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    encoded = np.asarray(encoded, dtype=np.float64)
    return np.where(
        encoded <= 0.04045,
        encoded / 12.92,
        np.power((np.maximum(encoded, 0.04045) + 0.055) / 1.055, 2.4),
    )


def to_pseudo_srgb(img: LinearImage, ccm, gamma: bool = True) -> SrgbImage:
    """Camera RGB -> XYZ -> clipped linear sRGB, optionally gamma encoded."""
    m = XYZ_TO_SRGB @ check_ccm(ccm)
    out = np.clip(img.data @ m.T, 0.0, 1.0)
    if gamma:
        out = np.clip(srgb_encode(out), 0.0, 1.0)
    return SrgbImage(out, gamma=gamma)


def linearize(img: SrgbImage) -> np.ndarray:
    """Undo the transfer curve of an :class:`SrgbImage`, if it has one."""
    return srgb_decode(img.data) if img.gamma else np.array(img.data)


def resize_shorter_side(img: SrgbImage, target: int = ORACLE_SHORT_SIDE) -> SrgbImage:
    """Bilinear resize so the shorter side equals ``target``; aspect ratio kept."""
    if target < 16:
        raise DomainError("resize target must be at least 16 pixels")
    h, w = img.height, img.width
    short = min(h, w)
    if short == target:
        return img
    scale = target / short
    if h <= w:
        new_h, new_w = target, max(1, int(round(w * scale)))
    else:
        new_h, new_w = max(1, int(round(h * scale))), target
    out = cv2.resize(np.ascontiguousarray(img.data), (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    return SrgbImage(np.clip(out, 0.0, 1.0), gamma=img.gamma)


def _valid_pixels(img: LinearImage) -> np.ndarray:
    px = img.pixels()
    if px.shape[0] == 0:
        raise DomainError("every pixel is masked")
    return px


def gray_world(img: LinearImage) -> np.ndarray:
    return normalize(_valid_pixels(img).mean(axis=0))


def _minkowski(values: np.ndarray, p: float) -> np.ndarray:
    if p == 1:
        return values.mean(axis=0)
    # Scale by the channel max first so large p does not overflow.
    top = values.max(axis=0)
    safe = np.where(top > 0, top, 1.0)
    return top * np.power(np.power(values / safe, p).mean(axis=0), 1.0 / p)


def shades_of_gray(img: LinearImage, p: float = 6.0) -> np.ndarray:
    """Minkowski-``p`` pooled channel means; ``p=1`` is Gray-World."""
    if p < 1:
        raise DomainError("Minkowski order must be >= 1")
    return normalize(_minkowski(_valid_pixels(img), p))


def derivative_magnitude(channel: np.ndarray, order: int) -> np.ndarray:
    """Interior derivative magnitude of a 2-D array (drops a 1-pixel border)."""
    c = channel
    if order == 1:
        gx = 0.5 * (c[1:-1, 2:] - c[1:-1, :-2])
        gy = 0.5 * (c[2:, 1:-1] - c[:-2, 1:-1])
        return np.sqrt(gx * gx + gy * gy)
    if order == 2:
        lap = c[1:-1, 2:] + c[1:-1, :-2] + c[2:, 1:-1] + c[:-2, 1:-1] - 4.0 * c[1:-1, 1:-1]
        return np.abs(lap)
    raise DomainError(f"gray-edge order must be 1 or 2, got {order}")


def gray_edge(img: LinearImage, order: int = 1, p: float = 6.0, sigma: float = 2.0) -> np.ndarray:
    """Gray-Edge estimate from Minkowski-pooled derivative magnitudes.

    Each channel is Gaussian smoothed (``scipy.ndimage`` reflect boundary,
    truncate 4), differentiated with central differences (order 1) or the
    5-point Laplacian (order 2), and pooled over unmasked interior pixels.
    """
    if p < 1:
        raise DomainError("Minkowski order must be >= 1")
    if sigma < 0:
        raise DomainError("sigma must be >= 0")
    radius = int(4.0 * sigma + 0.5)
    if min(img.height, img.width) <= max(2 * radius + 1, 3):
        raise DomainError("image is too small for the blur kernel")
    mags = []
    for ch in range(3):
        c = img.data[..., ch]
        if sigma > 0:
            c = ndimage.gaussian_filter(c, sigma, mode="reflect", truncate=4.0)
        mags.append(derivative_magnitude(c, order))
    mags = np.stack(mags, axis=-1)
    keep = img.valid()[1:-1, 1:-1]
    values = mags[keep]
    if values.shape[0] == 0:
        raise DomainError("every interior pixel is masked")
    pooled = _minkowski(values, p)
    scale = max(float(img.data.max()), np.finfo(float).tiny)
    if float(pooled.max()) <= 1e-10 * scale:
        raise DomainError("image has no edges")
    return normalize(pooled)
