"""Cast oracles: anything that looks at a rendered image and names its residual cast."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .chroma import CASTS, NEUTRAL, Cast, DomainError, normalize
from .imaging import LinearImage, SrgbImage, linearize, shades_of_gray

TIE_RTOL = 1e-12


class OracleError(Exception):
    """An oracle could not produce a judgment."""


class OracleContractError(OracleError):
    """The caller broke an oracle's preconditions."""


@dataclass(frozen=True)
class PriorItem:
    object: str
    location: str
    expected_color: str
    reason: str

    def as_dict(self) -> dict:
        return {
            "object": self.object,
            "location": self.location,
            "expected_color": self.expected_color,
            "reason": self.reason,
        }


ColorPrior = tuple  # tuple[PriorItem, ...]


@dataclass(frozen=True)
class AssessContext:
    """What the solver knows about the image being judged.

    ``estimate`` is the illuminant used to white-balance the image. Oracles
    that judge from pixels alone ignore it.
    """

    iteration: int
    estimate: np.ndarray | None = None
    scene_id: str | None = None


def gt_residual_label(gt, est) -> Cast:
    """Dominant channel of ``gt / est`` after dividing out its geometric mean.

    Values within a relative ``1e-12`` of the maximum count as tied; ties go
    to red, then green, then blue.
    """
    r = normalize(gt) / normalize(est)
    r = r / np.exp(np.log(r).mean())
    top = r.max()
    for cast in CASTS:
        if r[cast.index] >= top * (1.0 - TIE_RTOL):
            return cast
    raise AssertionError("unreachable")


PLACEHOLDER_PRIOR: ColorPrior = (
    PriorItem("wall", "background", "white", "painted interior surfaces are usually neutral"),
    PriorItem("floor", "bottom", "gray", "concrete and stone are achromatic"),
)


class CastOracle:
    """Base class for cast judges.

    Subclasses implement :meth:`assess`. Those that can describe scene
    content set ``supports_priors`` and override :meth:`extract_priors`.
    """

    supports_priors = False

    def assess(self, image: SrgbImage, priors: ColorPrior, context: AssessContext) -> Cast:
        raise NotImplementedError

    def extract_priors(self, image: SrgbImage, context: AssessContext | None = None) -> ColorPrior:
        return ()


class GroundTruthOracle(CastOracle):
    """Answers from the known illuminant and the estimate passed in the context."""

    supports_priors = True

    def __init__(self, gt):
        self.gt = normalize(gt)

    def assess(self, image, priors, context):
        if context is None or context.estimate is None:
            raise OracleContractError("ground-truth oracle needs the current estimate in its context")
        return gt_residual_label(self.gt, context.estimate)

    def extract_priors(self, image, context=None):
        return PLACEHOLDER_PRIOR


class NoisyOracle(CastOracle):
    """Flips the inner label with probability ``p`` to one of the other two.

    The random draw for a call is derived from ``(seed, scene_id, iteration)``,
    so a replay with the same contexts gives the same labels regardless of
    call order or threading.
    """

    def __init__(self, inner: CastOracle, p: float, seed: int):
        if not 0.0 <= p <= 1.0:
            raise DomainError("flip probability must be in [0, 1]")
        self.inner = inner
        self.p = float(p)
        self.seed = int(seed)

    @property
    def supports_priors(self):
        return self.inner.supports_priors

    def _rng(self, context: AssessContext) -> np.random.Generator:
        key = zlib.crc32((context.scene_id or "").encode("utf-8"))
        return np.random.default_rng([self.seed, key, int(context.iteration)])

    def assess(self, image, priors, context):
        label = self.inner.assess(image, priors, context)
        rng = self._rng(context)
        if rng.random() < self.p:
            others = [c for c in CASTS if c is not label]
            label = others[int(rng.integers(2))]
        return label

    def extract_priors(self, image, context=None):
        return self.inner.extract_priors(image, context)


class StatisticalOracle(CastOracle):
    """Shades-of-Gray on the linearized rendering, read as a cast against neutral."""

    def __init__(self, p_norm: float = 6.0):
        if p_norm < 1:
            raise DomainError("Minkowski order must be >= 1")
        self.p_norm = float(p_norm)

    def assess(self, image, priors=(), context=None):
        lin = LinearImage(np.clip(linearize(image), 0.0, None))
        try:
            cast_dir = shades_of_gray(lin, self.p_norm)
        except DomainError as exc:
            raise OracleContractError(f"statistical oracle cannot judge this image: {exc}") from exc
        return gt_residual_label(cast_dir, NEUTRAL)


def ground_truth_oracle(gt) -> GroundTruthOracle:
    return GroundTruthOracle(gt)


def noisy_oracle(inner: CastOracle, p: float, seed: int) -> NoisyOracle:
    return NoisyOracle(inner, p, seed)


def statistical_oracle(p_norm: float = 6.0) -> StatisticalOracle:
    return StatisticalOracle(p_norm)
