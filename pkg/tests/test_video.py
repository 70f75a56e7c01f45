import numpy as np
import pytest

from pava.video import (
    ClipReadError,
    mask_sidecar_path,
    probe_clip,
    read_clip,
    write_clip,
)


def _frames(rng, t=4, h=10, w=12):
    return rng.integers(0, 256, size=(t, h, w, 3), dtype=np.uint8)


def test_npy_round_trip_is_lossless(tmp_path):
    frames = _frames(np.random.default_rng(0))
    path = tmp_path / "clip.npy"
    write_clip(path, frames, fps=30.0)
    back, fps = read_clip(path)
    np.testing.assert_array_equal(back, frames)
    assert fps is None  # array container carries no rate metadata


def test_npy_write_is_byte_deterministic(tmp_path):
    frames = _frames(np.random.default_rng(1))
    a, b = tmp_path / "a.npy", tmp_path / "b.npy"
    write_clip(a, frames)
    write_clip(b, frames)
    assert a.read_bytes() == b.read_bytes()


def test_probe_matches_read(tmp_path):
    frames = _frames(np.random.default_rng(2), t=6, h=8, w=9)
    path = tmp_path / "clip.npy"
    write_clip(path, frames)
    info = probe_clip(path)
    assert (info.n_frames, info.height, info.width) == (6, 8, 9)


def test_avi_round_trip_preserves_geometry(tmp_path):
    frames = _frames(np.random.default_rng(3), t=5, h=32, w=40)
    path = tmp_path / "clip.avi"
    write_clip(path, frames, fps=25.0)
    back, fps = read_clip(path)
    assert back.shape == frames.shape
    assert back.dtype == np.uint8
    assert fps == pytest.approx(25.0)
    info = probe_clip(path)
    assert (info.n_frames, info.height, info.width) == (5, 32, 40)


def test_read_missing_and_corrupt_files(tmp_path):
    with pytest.raises(ClipReadError):
        read_clip(tmp_path / "absent.npy")
    bad = tmp_path / "trunc.npy"
    bad.write_bytes(b"\x93NUMPY garbage")
    with pytest.raises(ClipReadError):
        read_clip(bad)


def test_read_rejects_wrong_shape(tmp_path):
    path = tmp_path / "gray.npy"
    np.save(path, np.zeros((3, 4, 5), dtype=np.uint8))
    with pytest.raises(ClipReadError):
        read_clip(path)


def test_mask_sidecar_path():
    assert mask_sidecar_path("clips/a.npy").name == "a.mask"
    assert mask_sidecar_path("clips/b.avi").suffix == ".mask"
