"""Synthetic textured scenes with a controllable Gray-World bias."""
from __future__ import annotations

import math
import zlib

import numpy as np

from .chroma import angular_error_deg, normalize
from .imaging import SRGB_TO_XYZ, LinearImage, apply_illuminant
from .scene import Scene, SceneMeta


def scene_rng(seed: int, key: str) -> np.random.Generator:
    """Independent stream per ``(seed, key)``; stable across processes."""
    return np.random.default_rng([int(seed), zlib.crc32(key.encode("utf-8"))])


def _texture(rng, height, width, patch):
    rows = -(-height // patch)
    cols = -(-width // patch)
    albedo = rng.uniform(0.05, 1.0, size=(rows, cols, 3))
    tex = np.repeat(np.repeat(albedo, patch, axis=0), patch, axis=1)[:height, :width]
    yy, xx = np.mgrid[0:height, 0:width]
    shading = 0.6 + 0.4 * np.cos(xx / width * math.pi * rng.uniform(0.5, 2.0)) ** 2
    tex = tex * shading[..., None] * rng.uniform(0.9, 1.1, size=(height, width, 1))
    return tex


def _bias_for(ell: np.ndarray, direction: np.ndarray, target_deg: float) -> np.ndarray:
    """Per-channel reflectance bias that shifts Gray-World by ``target_deg`` off ``ell``."""
    lo, hi = 0.0, 1.0
    while angular_error_deg(np.exp(hi * direction) * ell, ell) < target_deg:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if angular_error_deg(np.exp(mid * direction) * ell, ell) < target_deg:
            lo = mid
        else:
            hi = mid
    return np.exp(0.5 * (lo + hi) * direction)


def random_illuminant(rng) -> np.ndarray:
    return normalize([rng.uniform(0.3, 1.0), 1.0, rng.uniform(0.3, 1.0)])


def random_ccm(rng, jitter: float = 0.05) -> np.ndarray:
    return SRGB_TO_XYZ @ (np.eye(3) + jitter * rng.uniform(-1, 1, size=(3, 3)))


def make_scene(
    rng: np.random.Generator,
    scene_id: str = "synthetic",
    height: int = 48,
    width: int = 64,
    bias_deg: float | tuple[float, float] = (5.0, 15.0),
    uniform: bool = False,
    with_chart: bool = False,
    ccm=None,
    illuminant=None,
    camera_id: str = "synthetic-cam",
) -> Scene:
    """Generate a scene whose Gray-World error equals ``bias_deg`` exactly.

    ``bias_deg`` may be a ``(lo, hi)`` range to sample from uniformly.
    ``uniform=True`` yields a constant gray reflectance (zero Gray-World
    error). ``with_chart`` paints a saturated masked rectangle that would skew
    the statistics if the mask were ignored.
    """
    ell = normalize(illuminant) if illuminant is not None else random_illuminant(rng)
    if ccm is None:
        ccm = random_ccm(rng)
    mask = ()
    if with_chart:
        cw, ch = max(4, width // 5), max(4, height // 5)
        mask = ((width - cw - 1, height - ch - 1, cw, ch),)
    keep = LinearImage(np.zeros((height, width, 3)), mask).valid()
    if uniform:
        refl = np.full((height, width, 3), 0.3)
    else:
        refl = _texture(rng, height, width, patch=8)
        refl = refl / refl[keep].mean(axis=0)
        if isinstance(bias_deg, tuple):
            bias_deg = float(rng.uniform(*bias_deg))
        if bias_deg > 0:
            w = rng.normal(size=3)
            w -= w.mean()
            w /= np.linalg.norm(w)
            refl = refl * _bias_for(ell, w, bias_deg)
        refl = refl * (0.8 / refl.max())
    if with_chart:
        refl[~keep] = (0.9, 0.05, 0.05)
    image = apply_illuminant(LinearImage(refl, mask), ell)
    meta = SceneMeta(camera_id, ccm, ell, mask)
    return Scene(scene_id, image, meta)


def make_dataset(n: int, seed: int, **kwargs) -> list[Scene]:
    """``n`` scenes named ``scene_0000``...; each drawn from its own stream."""
    scenes = []
    for i in range(n):
        sid = f"scene_{i:04d}"
        scenes.append(make_scene(scene_rng(seed, sid), scene_id=sid, **kwargs))
    return scenes
