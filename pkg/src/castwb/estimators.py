"""scikit-learn style wrappers.

Every estimator maps a batch of linear images to one illuminant per image:
``predict(X)`` returns an ``(n, 3)`` array of canonical illuminants and
``score(X, y)`` is the negative mean angular error in degrees, so grid
searches maximize accuracy. Nothing is learned, so ``fit`` only validates
parameters.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from .chroma import angular_error_deg, normalize
from .imaging import SRGB_TO_XYZ, LinearImage, gray_edge, gray_world, shades_of_gray, white_balance
from .oracle import CastOracle, StatisticalOracle
from .scene import Scene, SceneMeta
from .solver import SolverConfig, solve


def check_images(X) -> list[LinearImage]:
    """Coerce one image or a batch into a list of :class:`LinearImage`.

    Accepts ``LinearImage``, ``Scene``, an ``H x W x 3`` array, an
    ``n x H x W x 3`` array, or a sequence mixing these.
    """
    if isinstance(X, (LinearImage, Scene)):
        X = [X]
    elif isinstance(X, np.ndarray):
        if X.ndim == 3:
            X = [X]
        elif X.ndim != 4:
            raise ValueError(f"expected images of shape (H, W, 3) or (n, H, W, 3), got {X.shape}")
    out = []
    for item in X:
        if isinstance(item, Scene):
            item = item.image
        out.append(item if isinstance(item, LinearImage) else LinearImage(np.asarray(item)))
    if not out:
        raise ValueError("no images given")
    return out


def check_illuminants(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if y.ndim != 2 or y.shape[1] != 3:
        raise ValueError(f"illuminants must have shape (n, 3), got {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} illuminants for {n} images")
    return np.stack([normalize(v) for v in y])


class _IlluminantEstimator(BaseEstimator):
    def fit(self, X=None, y=None):
        self._validate()
        return self

    def _validate(self):
        pass

    def __sklearn_is_fitted__(self):
        return True

    def _estimate(self, img: LinearImage, index: int) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        self._validate()
        return np.stack([self._estimate(img, i) for i, img in enumerate(check_images(X))])

    def score(self, X, y) -> float:
        pred = self.predict(X)
        y = check_illuminants(y, len(pred))
        return -float(np.mean([angular_error_deg(a, b) for a, b in zip(pred, y)]))


class GrayWorld(_IlluminantEstimator):
    """Mean color of the unmasked pixels."""

    def _estimate(self, img, index):
        return gray_world(img)


class ShadesOfGray(_IlluminantEstimator):
    """Minkowski-``p`` norm of each channel.

    Parameters
    ----------
    p : float, default=6.0
        Norm order; 1 gives Gray-World, large values approach White-Patch.
    """

    def __init__(self, p=6.0):
        self.p = p

    def _validate(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")

    def _estimate(self, img, index):
        return shades_of_gray(img, self.p)


class GrayEdge(_IlluminantEstimator):
    """Minkowski-pooled derivative magnitudes of the smoothed channels.

    Parameters
    ----------
    order : {1, 2}, default=1
    p : float, default=6.0
    sigma : float, default=2.0
        Gaussian smoothing in pixels.
    """

    def __init__(self, order=1, p=6.0, sigma=2.0):
        self.order = order
        self.p = p
        self.sigma = sigma

    def _validate(self):
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")

    def _estimate(self, img, index):
        return gray_edge(img, self.order, self.p, self.sigma)


class FeedbackColorConstancy(_IlluminantEstimator):
    """Iterative cast-feedback illuminant estimation.

    Parameters
    ----------
    oracle : CastOracle or callable, default=None
        The judge. A callable is invoked as ``oracle(index, image)`` for each
        image and must return a :class:`CastOracle`; use this for per-image
        judges such as the ground-truth oracle. ``None`` uses a
        Shades-of-Gray statistical oracle.
    ccm : array-like of shape (3, 3) or (n, 3, 3), default=None
        Camera-to-XYZ matrices. ``None`` treats camera RGB as linear sRGB.
    t_max, a_start, a_end, init, reflection_interval, gamma, oracle_size
        Forwarded to :class:`~castwb.solver.SolverConfig`.

    Attributes
    ----------
    trajectories_ : list of Trajectory
        Per-image trajectories from the most recent ``predict`` call.
    """

    def __init__(
        self,
        oracle=None,
        ccm=None,
        t_max=20,
        a_start=3.0,
        a_end=0.1,
        init="gray_world",
        reflection_interval=6,
        gamma=True,
        oracle_size=448,
    ):
        self.oracle = oracle
        self.ccm = ccm
        self.t_max = t_max
        self.a_start = a_start
        self.a_end = a_end
        self.init = init
        self.reflection_interval = reflection_interval
        self.gamma = gamma
        self.oracle_size = oracle_size

    def _config(self) -> SolverConfig:
        return SolverConfig(
            t_max=self.t_max,
            a_start=self.a_start,
            a_end=self.a_end,
            init=self.init,
            reflection_interval=self.reflection_interval,
            gamma=self.gamma,
            oracle_size=self.oracle_size,
        )

    def _validate(self):
        self._config()

    def _oracle_for(self, index, img) -> CastOracle:
        if self.oracle is None:
            return StatisticalOracle()
        if isinstance(self.oracle, CastOracle):
            return self.oracle
        return self.oracle(index, img)

    def _ccm_for(self, index):
        if self.ccm is None:
            return SRGB_TO_XYZ
        ccm = np.asarray(self.ccm, dtype=np.float64)
        return ccm[index] if ccm.ndim == 3 else ccm

    def predict(self, X) -> np.ndarray:
        cfg = self._config()
        self.trajectories_ = []
        for i, img in enumerate(check_images(X)):
            meta = SceneMeta("estimator", self._ccm_for(i), np.ones(3))
            traj = solve(img, meta, self._oracle_for(i, img), cfg, scene_id=f"image_{i:05d}")
            self.trajectories_.append(traj)
        return np.stack([t.final_estimate for t in self.trajectories_])


class WhiteBalancer(TransformerMixin, BaseEstimator):
    """Transformer that white-balances each image with an illuminant estimator.

    Parameters
    ----------
    estimator : illuminant estimator, default=None
        Any object with ``predict(X) -> (n, 3)``; ``None`` means
        :class:`GrayWorld`.
    """

    def __init__(self, estimator=None):
        self.estimator = estimator

    def fit(self, X=None, y=None):
        est = GrayWorld() if self.estimator is None else clone(self.estimator)
        self.estimator_ = est.fit(X, y)
        return self

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "estimator_")
        images = check_images(X)
        illum = self.estimator_.predict(images)
        return [np.array(white_balance(img, ell).data) for img, ell in zip(images, illum)]
