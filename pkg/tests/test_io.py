"""Image files, dataset round-trips, config serialization."""

import json

import numpy as np
import pytest

from ogmap.config import RunConfig
from ogmap.datasets import Dataset, Frame, load_dataset, save_dataset
from ogmap.image_io import read_depth_raw, read_ppm, write_depth_raw, write_ppm

from conftest import simple_camera


def test_ppm_round_trip(tmp_path, rng):
    img = rng.random((9, 13, 3)).astype(np.float32)
    p = tmp_path / "x.ppm"
    write_ppm(p, img)
    back = read_ppm(p)
    assert back.shape == img.shape
    # 8-bit quantisation bound
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-6


def test_ppm_handles_extremes(tmp_path):
    img = np.array([[[0.0, 1.0, 0.5], [-0.2, 1.7, 0.25]]], dtype=np.float32)
    p = tmp_path / "x.ppm"
    write_ppm(p, img)
    back = read_ppm(p)
    assert back[0, 0, 0] == 0.0 and back[0, 0, 1] == 1.0
    assert back[0, 1, 0] == 0.0 and back[0, 1, 1] == 1.0  # clamped


def test_ppm_binary_layout(tmp_path):
    img = np.zeros((2, 3, 3), dtype=np.float32)
    p = tmp_path / "x.ppm"
    write_ppm(p, img)
    blob = p.read_bytes()
    assert blob.startswith(b"P6")
    assert b"3 2" in blob
    assert blob.endswith(b"\x00" * 18)


def test_depth_raw_round_trip(tmp_path, rng):
    d = (rng.random((7, 5)) * 4).astype(np.float32)
    p = tmp_path / "d.raw"
    write_depth_raw(p, d)
    assert p.stat().st_size == 7 * 5 * 4
    back = read_depth_raw(p, 5, 7)
    assert np.array_equal(back, d)


def test_depth_raw_size_mismatch(tmp_path):
    p = tmp_path / "d.raw"
    write_depth_raw(p, np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(ValueError):
        read_depth_raw(p, 5, 5)


def test_dataset_round_trip(tmp_path, rng):
    frames = []
    poses = []
    for i in range(3):
        pose = np.eye(4)
        pose[:3, 3] = [0.1 * i, 0.0, 0.0]
        poses.append(pose)
        frames.append(
            Frame(
                color=rng.random((6, 8, 3)).astype(np.float32),
                depth=(rng.random((6, 8)) + 0.5).astype(np.float32),
                pose=pose,
            )
        )
    ds = Dataset(width=8, height=6, fx=4.0, fy=4.0, cx=4.0, cy=3.0, depth_scale=1.0, frames=frames)
    save_dataset(tmp_path / "ds", ds)
    back = load_dataset(tmp_path / "ds")
    assert len(back) == 3
    assert back.width == 8 and back.height == 6
    for i in range(3):
        assert np.array_equal(back.frames[i].depth, ds.frames[i].depth)
        assert np.max(np.abs(back.frames[i].color - ds.frames[i].color)) <= 0.5 / 255 + 1e-6
        assert np.allclose(back.frames[i].pose, poses[i])
    cam = back.camera(1)
    assert cam.position[0] == pytest.approx(0.1)


def test_dataset_manifest_is_sorted_json(tmp_path, rng):
    ds = Dataset(
        width=4, height=4, fx=2.0, fy=2.0, cx=2.0, cy=2.0, depth_scale=1.0,
        frames=[Frame(np.zeros((4, 4, 3), np.float32), np.ones((4, 4), np.float32), np.eye(4))],
    )
    save_dataset(tmp_path / "ds", ds)
    text = (tmp_path / "ds" / "manifest.json").read_text()
    parsed = json.loads(text)
    assert list(parsed) == sorted(parsed)
    assert text == json.dumps(parsed, sort_keys=True, indent=2) + "\n"


def test_load_rejects_bad_manifest(tmp_path):
    d = tmp_path / "ds"
    d.mkdir()
    (d / "manifest.json").write_text(json.dumps({"width": 4}))
    with pytest.raises((KeyError, ValueError)):
        load_dataset(d)


def test_config_round_trip():
    cfg = RunConfig(voxel_size=0.07, strategy="random", seed=9)
    back = RunConfig.from_json(cfg.to_json())
    assert back == cfg
    with pytest.raises(ValueError):
        RunConfig.from_dict({"voxel_size": 0.1, "bogus_knob": 1})


def test_config_defaults_frozen():
    cfg = RunConfig()
    assert cfg.voxel_size == 0.1
    assert cfg.grad_threshold == 2e-4
    assert cfg.prune_opacity == 0.01
    assert cfg.overlap_threshold == 0.85
    assert cfg.window_size == 10
    assert (cfg.local_draws, cfg.global_draws) == (5, 4)
    assert cfg.iterations == 60
    assert cfg.lrs() == {
        "offsets": 0.001,
        "features": 0.0075,
        "color": 0.008,
        "opacity": 0.002,
        "cov": 0.004,
    }
    assert (cfg.w_color, cfg.w_ssim, cfg.w_depth, cfg.w_scale) == (0.8, 0.2, 0.5, 0.01)
