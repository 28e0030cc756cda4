import json

import numpy as np
import pytest

from castwb.imaging import LinearImage, gray_world
from castwb.chroma import angular_error_deg
from castwb.scene import (
    SceneFormatError,
    SceneMeta,
    SceneNotFoundError,
    list_scene_dirs,
    load_scene,
    save_scene,
)
from castwb.synthetic import make_dataset, make_scene, scene_rng


def meta_doc(**over):
    doc = {"camera_id": "cam", "ccm_cam_to_xyz": np.eye(3).tolist(), "illuminant_gt": [0.5, 1.0, 0.7]}
    doc.update(over)
    return doc


def write(path, doc, image=None):
    path.mkdir(parents=True, exist_ok=True)
    img = LinearImage(image if image is not None else np.full((4, 5, 3), 0.25))
    save_scene(path, img, SceneMeta.from_json(meta_doc()))
    (path / "meta.json").write_text(json.dumps(doc))
    return path


def test_round_trip(tmp_path, rng):
    data = rng.uniform(0, 1, (9, 11, 3))
    meta = SceneMeta("cam-7", rng.normal(size=(3, 3)) + 3 * np.eye(3), [0.3, 0.9, 0.6], [(1, 2, 3, 4)])
    save_scene(tmp_path / "s", LinearImage(data, meta.mask), meta)
    img, back = load_scene(tmp_path / "s")
    assert np.max(np.abs(img.data - data)) <= 0.5 / 65535 + 1e-12
    assert back.camera_id == meta.camera_id
    np.testing.assert_array_equal(back.ccm_cam_to_xyz, meta.ccm_cam_to_xyz)
    np.testing.assert_array_equal(back.illuminant_gt, meta.illuminant_gt)
    assert back.mask == img.mask == ((1, 2, 3, 4),)


def test_channel_order_preserved(tmp_path):
    data = np.zeros((3, 3, 3))
    data[..., 0] = 1.0
    save_scene(tmp_path / "s", LinearImage(data), SceneMeta.from_json(meta_doc()))
    img, _ = load_scene(tmp_path / "s")
    assert np.all(img.data[..., 0] == 1.0) and np.all(img.data[..., 1:] == 0)


@pytest.mark.parametrize(
    "doc",
    [
        meta_doc(illuminant_gt=[0, 1, 1]),
        meta_doc(illuminant_gt=[1, 1]),
        meta_doc(ccm_cam_to_xyz=[[1, 0, 0], [0, 1, 0]]),
        meta_doc(ccm_cam_to_xyz=np.zeros((3, 3)).tolist()),
        meta_doc(ccm_cam_to_xyz=[[1, 0, 0], [0, "a", 0], [0, 0, 1]]),
        meta_doc(mask=[[1, 2, 3]]),
        {"camera_id": "cam"},
    ],
)
def test_rejects_bad_meta(tmp_path, doc):
    write(tmp_path / "s", doc)
    with pytest.raises(SceneFormatError):
        load_scene(tmp_path / "s")


def test_missing_files(tmp_path):
    with pytest.raises(SceneNotFoundError):
        load_scene(tmp_path / "nothing")
    write(tmp_path / "s", meta_doc())
    (tmp_path / "s" / "image.png").unlink()
    with pytest.raises(SceneNotFoundError):
        load_scene(tmp_path / "s")


def test_rejects_8bit_png(tmp_path):
    import cv2

    write(tmp_path / "s", meta_doc())
    cv2.imwrite(str(tmp_path / "s" / "image.png"), np.zeros((4, 4, 3), np.uint8))
    with pytest.raises(SceneFormatError):
        load_scene(tmp_path / "s")


def test_malformed_json(tmp_path):
    write(tmp_path / "s", meta_doc())
    (tmp_path / "s" / "meta.json").write_text("{not json")
    with pytest.raises(SceneFormatError):
        load_scene(tmp_path / "s")


def test_list_scene_dirs(dataset_dir):
    names = [p.name for p in list_scene_dirs(dataset_dir)]
    assert names == sorted(names) and len(names) == 10


class TestSynthetic:
    def test_gray_world_bias_calibrated(self):
        for scene in make_dataset(30, seed=11):
            err = angular_error_deg(gray_world(scene.image), scene.meta.illuminant_gt)
            assert 5.0 - 1e-9 <= err <= 15.0 + 1e-9

    def test_exact_bias(self):
        scene = make_scene(scene_rng(1, "x"), bias_deg=8.25, with_chart=True)
        assert angular_error_deg(gray_world(scene.image), scene.meta.illuminant_gt) == pytest.approx(8.25, abs=1e-9)

    def test_chart_would_skew_unmasked_mean(self):
        scene = make_scene(scene_rng(1, "x"), bias_deg=8.0, with_chart=True)
        unmasked = LinearImage(scene.image.data)
        assert abs(angular_error_deg(gray_world(unmasked), scene.meta.illuminant_gt) - 8.0) > 0.5

    def test_uniform_scene_is_gray_world_exact(self):
        scene = make_scene(scene_rng(2, "u"), uniform=True)
        assert angular_error_deg(gray_world(scene.image), scene.meta.illuminant_gt) < 1e-9

    def test_deterministic(self):
        a = make_dataset(3, seed=5)
        b = make_dataset(3, seed=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image.data, y.image.data)
