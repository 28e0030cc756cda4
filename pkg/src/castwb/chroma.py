"""Vector math on illuminant directions.

Illuminants are plain ``float64`` arrays of shape ``(3,)``. The canonical form
is strictly positive with unit L2 norm; :func:`normalize` produces it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

POSITIVE_FLOOR = 1e-6
DEGENERATE_TOL = 1e-12


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class Cast(enum.Enum):
    """Dominant residual color cast.

    Members are ordered red < green < blue; the order breaks ties.
    """

    RED = "red"
    GREEN = "green"
    BLUE = "blue"

    @property
    def index(self) -> int:
        return _CAST_INDEX[self]

    @property
    def axis(self) -> np.ndarray:
        d = np.zeros(3)
        d[self.index] = 1.0
        return d

    @classmethod
    def parse(cls, value: "str | Cast") -> "Cast":
        if isinstance(value, Cast):
            return value
        try:
            return cls(value)
        except ValueError:
            raise DomainError(f"not a cast label: {value!r}") from None

    def __lt__(self, other: "Cast") -> bool:
        if not isinstance(other, Cast):
            return NotImplemented
        return self.index < other.index

    def __str__(self) -> str:
        return self.value


_CAST_INDEX = {Cast.RED: 0, Cast.GREEN: 1, Cast.BLUE: 2}
CASTS = (Cast.RED, Cast.GREEN, Cast.BLUE)

NEUTRAL = np.full(3, 1.0 / math.sqrt(3.0))


def normalize(v) -> np.ndarray:
    """Canonicalize a raw RGB triple.

    Components are clamped to ``POSITIVE_FLOOR`` and the result is scaled to
    unit norm.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != (3,):
        raise DomainError(f"expected 3 components, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise DomainError("illuminant components must be finite")
    if not np.any(v > 0):
        raise DomainError("illuminant needs at least one positive component")
    v = np.maximum(v, POSITIVE_FLOOR)
    return v / np.linalg.norm(v)


def is_canonical(v, tol: float = 1e-9) -> bool:
    v = np.asarray(v, dtype=np.float64)
    return (
        v.shape == (3,)
        and bool(np.all(np.isfinite(v)))
        and bool(np.all(v > 0))
        and abs(float(np.linalg.norm(v)) - 1.0) <= tol
    )


def angular_error_deg(a, b) -> float:
    """Angle between two RGB vectors in degrees.

    Inputs need not be canonical; only their directions matter. Uses the
    ``atan2(|a x b|, a . b)`` form, which stays accurate for tiny angles.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DomainError("angular error undefined for a zero vector")
    a = a / na
    b = b / nb
    cross = np.linalg.norm(np.cross(a, b))
    dot = float(np.dot(a, b))
    return math.degrees(math.atan2(cross, dot))


def tangent_toward(u: np.ndarray, cast: Cast) -> np.ndarray | None:
    """Unit tangent at ``u`` pointing along the great circle toward the cast axis.

    Returns ``None`` when the axis is parallel to ``u``.
    """
    d = cast.axis
    w = d - np.dot(d, u) * u
    n = np.linalg.norm(w)
    if n < DEGENERATE_TOL:
        return None
    return w / n


def rotate_toward(u, cast: Cast | str, angle_deg: float) -> np.ndarray:
    """Rotate ``u`` by ``angle_deg`` toward the primary axis of ``cast``.

    If the axis is parallel to ``u`` there is no rotation plane and ``u`` is
    returned unchanged; use :func:`tangent_toward` to detect that case.
    """
    if not 0.0 < angle_deg < 90.0:
        raise DomainError(f"rotation angle must be in (0, 90) degrees, got {angle_deg}")
    u = normalize(u)
    v = tangent_toward(u, Cast.parse(cast))
    if v is None:
        return u
    a = math.radians(angle_deg)
    return normalize(math.cos(a) * u + math.sin(a) * v)


@dataclass(frozen=True)
class StepSchedule:
    """Linearly decaying step angle over ``t_max`` iterations."""

    a_start: float = 3.0
    a_end: float = 0.1
    t_max: int = 20

    def __post_init__(self):
        if not (self.a_start >= self.a_end > 0):
            raise DomainError("step schedule needs a_start >= a_end > 0")
        if self.t_max < 2:
            raise DomainError("step schedule needs t_max >= 2")


def step_angle(schedule: StepSchedule, t: int, halving_active: bool = False) -> float:
    """Step angle in degrees for iteration ``t`` (1-based).

    Both endpoints are hit exactly; the refinement phase halves the value.
    """
    if not 1 <= t <= schedule.t_max:
        raise DomainError(f"iteration {t} outside 1..{schedule.t_max}")
    w = (t - 1) / (schedule.t_max - 1)
    angle = (1.0 - w) * schedule.a_start + w * schedule.a_end
    return 0.5 * angle if halving_active else angle


def geo_mean(*estimates) -> np.ndarray:
    """Normalized component-wise geometric mean of one or more illuminants."""
    if not estimates:
        raise DomainError("geometric mean of nothing")
    stack = np.stack([normalize(e) for e in estimates])
    return normalize(np.exp(np.log(stack).mean(axis=0)))


def geo_mean3(a, b, c) -> np.ndarray:
    return geo_mean(a, b, c)


def chromaticity_point(v) -> tuple[float, float]:
    """``(r, g)`` chromaticity coordinates of an RGB vector."""
    v = np.asarray(v, dtype=np.float64)
    s = float(v.sum())
    return float(v[0] / s), float(v[1] / s)
