"""Light-color augmentation and finetune-set export."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .chroma import DEGENERATE_TOL, NEUTRAL, POSITIVE_FLOOR, Cast, DomainError, normalize
from .imaging import ORACLE_SHORT_SIDE, apply_illuminant, resize_shorter_side, to_pseudo_srgb, white_balance
from .oracle import gt_residual_label
from .scene import Scene, SceneError, list_scene_dirs, read_scene
from .synthetic import scene_rng

log = logging.getLogger(__name__)

DEFAULT_MAX_DEG = 17.5
_MAX_DRAWS = 1000


@dataclass(frozen=True)
class AugmentSample:
    image: object  # SrgbImage
    label: Cast
    perturbation_deg: float
    perturbed_illuminant: np.ndarray
    source_scene: str
    image_path: str | None = None

    def manifest_line(self) -> dict:
        return {
            "image": self.image_path,
            "label": self.label.value,
            "perturbation_deg": self.perturbation_deg,
            "source_scene": self.source_scene,
            "perturbed_illuminant": [float(v) for v in self.perturbed_illuminant],
        }


def perturb_illuminant(gt, max_deg: float, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Rotate ``gt`` by an angle uniform on ``(0, max_deg]`` in a uniform tangent direction.

    Directions that would leave the positive octant are redrawn, so the
    returned angle is always the exact angular distance from ``gt``.
    Returns the perturbed illuminant and the sampled angle.
    """
    if not 0.0 < max_deg < 90.0:
        raise DomainError("max_deg must be in (0, 90)")
    gt = normalize(gt)
    theta = max_deg * (1.0 - rng.random())  # (0, max_deg]
    a = math.radians(theta)
    for _ in range(_MAX_DRAWS):
        w = rng.normal(size=3)
        w -= np.dot(w, gt) * gt
        n = np.linalg.norm(w)
        if n <= 1e-9:
            continue
        ell = math.cos(a) * gt + math.sin(a) * (w / n)
        if ell.min() >= POSITIVE_FLOOR:
            return normalize(ell), float(theta)
    # Moving toward neutral never leaves the octant.
    w = NEUTRAL - np.dot(NEUTRAL, gt) * gt
    n = np.linalg.norm(w)
    if n <= DEGENERATE_TOL:
        raise DomainError("no admissible perturbation direction")
    return normalize(math.cos(a) * gt + math.sin(a) * (w / n)), float(theta)


def make_sample(scene: Scene, max_deg: float, rng: np.random.Generator, size: int = ORACLE_SHORT_SIDE) -> AugmentSample:
    """Balance with the ground truth, re-tint with a perturbed light, render."""
    gt = normalize(scene.meta.illuminant_gt)
    balanced = white_balance(scene.image, gt)
    perturbed, theta = perturb_illuminant(gt, max_deg, rng)
    tinted = apply_illuminant(balanced, perturbed)
    image = to_pseudo_srgb(tinted, scene.meta.ccm_cam_to_xyz)
    if size:
        image = resize_shorter_side(image, size)
    return AugmentSample(image, gt_residual_label(perturbed, NEUTRAL), theta, perturbed, scene.scene_id)


def _write_png8(path: Path, image) -> None:
    if not cv2.imwrite(str(path), np.ascontiguousarray(image.to_uint8()[..., ::-1])):
        raise OSError(f"could not write {path}")


def _scene_samples(item, out_dir: Path, per_scene: int, max_deg: float, seed: int, size: int):
    scene_id = item.scene_id if isinstance(item, Scene) else Path(item).name
    lines, errors = [], []
    try:
        scene = item if isinstance(item, Scene) else read_scene(item)
    except SceneError as exc:
        return scene_id, lines, [f"{scene_id}: {exc}"]
    rng = scene_rng(seed, scene_id)
    for k in range(per_scene):
        try:
            sample = make_sample(scene, max_deg, rng, size)
            rel = f"images/{scene_id}_{k}.png"
            _write_png8(out_dir / rel, sample.image)
        except (OSError, DomainError) as exc:
            errors.append(f"{scene_id}#{k}: {exc}")
            continue
        lines.append(json.dumps({**sample.manifest_line(), "image": rel}))
    return scene_id, lines, errors


def export_finetune_dataset(
    source,
    out_dir,
    samples_per_scene: int = 4,
    max_deg: float = DEFAULT_MAX_DEG,
    seed: int = 0,
    jobs: int = 1,
    size: int = ORACLE_SHORT_SIDE,
) -> Path:
    """Write ``images/<scene>_<k>.png`` and ``manifest.jsonl`` under ``out_dir``.

    ``source`` is a dataset root or an iterable of scenes. Each scene draws
    from its own ``(seed, scene_id)`` stream, so ``jobs`` does not affect
    the output. Image paths in the manifest are relative to ``out_dir``.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    items = list_scene_dirs(source) if isinstance(source, (str, Path)) else list(source)

    def work(it):
        return _scene_samples(it, out, samples_per_scene, max_deg, seed, size)

    if jobs <= 1:
        results = [work(it) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, items))
    results.sort(key=lambda r: r[0])
    lines = [line for _, ls, _ in results for line in ls]
    errors = [e for _, _, es in results for e in es]
    for e in errors:
        log.warning("sample failed: %s", e)
    if not lines:
        raise SceneError("augmentation produced no samples")
    manifest = out / "manifest.jsonl"
    manifest.write_text("".join(line + "\n" for line in lines))
    return manifest


def read_manifest(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
