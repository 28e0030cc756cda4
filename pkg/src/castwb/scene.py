"""Scene directories: ``image.png`` (16-bit linear RGB) plus ``meta.json``."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .chroma import DomainError
from .imaging import LinearImage, _as_rects, check_ccm

IMAGE_NAME = "image.png"
META_NAME = "meta.json"


class SceneError(Exception):
    """Base class for scene loading failures."""


class SceneNotFoundError(SceneError):
    pass


class SceneFormatError(SceneError):
    pass


@dataclass(frozen=True, eq=False)
class SceneMeta:
    camera_id: str
    ccm_cam_to_xyz: np.ndarray
    illuminant_gt: np.ndarray
    mask: tuple = field(default=())

    def __post_init__(self):
        if not isinstance(self.camera_id, str):
            raise DomainError("camera_id must be a string")
        object.__setattr__(self, "ccm_cam_to_xyz", check_ccm(self.ccm_cam_to_xyz))
        gt = np.asarray(self.illuminant_gt, dtype=np.float64)
        if gt.shape != (3,) or not np.all(np.isfinite(gt)) or not np.all(gt > 0):
            raise DomainError("illuminant_gt must be 3 strictly positive numbers")
        object.__setattr__(self, "illuminant_gt", gt)
        object.__setattr__(self, "mask", _as_rects(self.mask))

    def to_json(self) -> dict:
        doc = {
            "camera_id": self.camera_id,
            "ccm_cam_to_xyz": self.ccm_cam_to_xyz.tolist(),
            "illuminant_gt": self.illuminant_gt.tolist(),
        }
        if self.mask:
            doc["mask"] = [list(r) for r in self.mask]
        return doc

    @classmethod
    def from_json(cls, doc) -> "SceneMeta":
        if not isinstance(doc, dict):
            raise SceneFormatError("meta.json must hold a JSON object")
        missing = [k for k in ("camera_id", "ccm_cam_to_xyz", "illuminant_gt") if k not in doc]
        if missing:
            raise SceneFormatError(f"meta.json lacks fields: {', '.join(missing)}")
        ccm = doc["ccm_cam_to_xyz"]
        if not (
            isinstance(ccm, list)
            and len(ccm) == 3
            and all(isinstance(row, list) and len(row) == 3 for row in ccm)
        ):
            raise SceneFormatError("ccm_cam_to_xyz must be a 3 x 3 nested array")
        gt = doc["illuminant_gt"]
        if not (isinstance(gt, list) and len(gt) == 3):
            raise SceneFormatError("illuminant_gt must be an array of 3 numbers")
        numbers = [v for row in ccm for v in row] + list(gt)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in numbers):
            raise SceneFormatError("ccm and illuminant must be numeric")
        try:
            return cls(doc["camera_id"], ccm, gt, doc.get("mask") or ())
        except DomainError as exc:
            raise SceneFormatError(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: str
    image: LinearImage
    meta: SceneMeta


def encode_png16(data: np.ndarray) -> np.ndarray:
    q = np.round(np.clip(data, 0.0, 1.0) * 65535.0).astype(np.uint16)
    return np.ascontiguousarray(q[..., ::-1])  # OpenCV stores BGR


def save_scene(path, image: LinearImage, meta: SceneMeta) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path / IMAGE_NAME), encode_png16(image.data)):
        raise SceneError(f"could not write {path / IMAGE_NAME}")
    tmp = path / (META_NAME + ".tmp")
    tmp.write_text(json.dumps(meta.to_json(), indent=2) + "\n")
    os.replace(tmp, path / META_NAME)
    return path


def load_scene(path) -> tuple[LinearImage, SceneMeta]:
    path = Path(path)
    meta_path = path / META_NAME
    image_path = path / IMAGE_NAME
    if not meta_path.is_file():
        raise SceneNotFoundError(f"missing {meta_path}")
    if not image_path.is_file():
        raise SceneNotFoundError(f"missing {image_path}")
    try:
        doc = json.loads(meta_path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SceneFormatError(f"{meta_path}: {exc}") from exc
    meta = SceneMeta.from_json(doc)
    raw = cv2.imread(str(image_path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise SceneFormatError(f"{image_path} is not a readable PNG")
    if raw.dtype != np.uint16 or raw.ndim != 3 or raw.shape[2] != 3:
        raise SceneFormatError(f"{image_path} must be a 16-bit 3-channel PNG")
    data = raw[..., ::-1].astype(np.float64) / 65535.0
    return LinearImage(data, meta.mask), meta


def read_scene(path) -> Scene:
    image, meta = load_scene(path)
    return Scene(Path(path).name, image, meta)


def list_scene_dirs(root) -> list[Path]:
    """Subdirectories of ``root`` that look like scenes, sorted by name."""
    root = Path(root)
    if not root.is_dir():
        raise SceneNotFoundError(f"dataset root {root} is not a directory")
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / META_NAME).exists())
