import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from skelscreen import kernels
from skelscreen.errors import HeaderError, MissingFileError, SizeMismatchError, SpacingError
from skelscreen.volume import (VoxelVolume, load_label_volume, load_volume, median_filter3, read_header,
                               save_label_volume, save_volume)


def median_oracle(a):
    """Sort the 27 edge-replicated neighbours of every voxel and take the 14th."""
    p = np.pad(a, 1, mode="edge")
    out = np.empty_like(a)
    for x in range(a.shape[0]):
        for y in range(a.shape[1]):
            for z in range(a.shape[2]):
                out[x, y, z] = np.sort(p[x:x + 3, y:y + 3, z:z + 3].ravel())[13]
    return out


def test_roundtrip(tmp_path, rng):
    data = rng.integers(-1000, 3000, size=(5, 4, 3)).astype(np.int16)
    save_volume(VoxelVolume(data, (0.06, 0.07, 0.08)), tmp_path / "a.hdr")
    v = load_volume(tmp_path / "a.hdr")
    assert np.array_equal(v.data, data)
    assert v.spacing_mm == (0.06, 0.07, 0.08)


def test_raw_layout_is_x_fastest(tmp_path):
    data = np.arange(24, dtype=np.int16).reshape(2, 3, 4)
    save_volume(VoxelVolume(data, (1, 1, 1)), tmp_path / "a.hdr")
    flat = np.frombuffer((tmp_path / "a.raw").read_bytes(), "<i2")
    assert flat[0] == data[0, 0, 0] and flat[1] == data[1, 0, 0] and flat[2] == data[0, 1, 0]


def test_label_roundtrip(tmp_path):
    lab = np.zeros((3, 3, 3), np.uint16)
    lab[1, 1, 1] = 65535
    save_label_volume(lab, (0.1, 0.1, 0.1), tmp_path / "l.hdr")
    back, sp = load_label_volume(tmp_path / "l.hdr")
    assert np.array_equal(back, lab) and sp == (0.1, 0.1, 0.1)


def test_missing_header(tmp_path):
    with pytest.raises(MissingFileError):
        load_volume(tmp_path / "nope.hdr")


def test_missing_raw(tmp_path):
    (tmp_path / "a.hdr").write_text("dims = 2 2 2\nspacing_mm = 1 1 1\ndata = a.raw\ndtype = i16le\n")
    with pytest.raises(MissingFileError):
        load_volume(tmp_path / "a.hdr")


def test_size_mismatch(tmp_path):
    (tmp_path / "a.hdr").write_text("dims = 2 2 2\nspacing_mm = 1 1 1\ndata = a.raw\ndtype = i16le\n")
    (tmp_path / "a.raw").write_bytes(b"\x00" * 15)
    with pytest.raises(SizeMismatchError):
        load_volume(tmp_path / "a.hdr")


@pytest.mark.parametrize("spacing", ["0 1 1", "1 -1 1"])
def test_bad_spacing(tmp_path, spacing):
    (tmp_path / "a.hdr").write_text(f"dims = 2 2 2\nspacing_mm = {spacing}\ndata = a.raw\ndtype = i16le\n")
    with pytest.raises(SpacingError):
        read_header(tmp_path / "a.hdr")


@pytest.mark.parametrize("text", ["dims = 2 2\nspacing_mm = 1 1 1\ndata = a\ndtype = i16le\n",
                                  "dims = 2 2 2\nspacing_mm = 1 1 1\ndata = a\n",
                                  "garbage\n",
                                  "dims = 2 2 2\nspacing_mm = 1 1 1\ndata = a\ndtype = f32\n"])
def test_bad_header(tmp_path, text):
    (tmp_path / "a.hdr").write_text(text)
    with pytest.raises(HeaderError):
        read_header(tmp_path / "a.hdr")


def test_label_dtype_mismatch(tmp_path):
    save_volume(VoxelVolume(np.zeros((2, 2, 2), np.int16), (1, 1, 1)), tmp_path / "a.hdr")
    with pytest.raises(HeaderError):
        load_label_volume(tmp_path / "a.hdr")


def test_volume_validation():
    with pytest.raises(TypeError):
        VoxelVolume(np.zeros((2, 2, 2), np.float32), (1, 1, 1))
    with pytest.raises(SpacingError):
        VoxelVolume(np.zeros((2, 2, 2), np.int16), (1, 0, 1))


def test_median_known_values(backend):
    a = np.zeros((3, 3, 3), np.int16)
    a[1, 1, 1] = 1000  # isolated spike is removed
    assert not backend.median3(a).any()
    b = np.full((4, 4, 4), 7, np.int16)
    assert np.array_equal(backend.median3(b), b)


@given(arrays(np.int16, st.tuples(*[st.integers(1, 7)] * 3), elements=st.integers(-2000, 2000)))
def test_median_matches_sort_oracle(a):
    want = median_oracle(a)
    for name in ("numpy", "numba") if kernels.HAVE_NUMBA else ("numpy",):
        assert np.array_equal(kernels.get_backend(name).median3(a), want)


def test_median_filter_volume(rng):
    a = rng.integers(-500, 1500, size=(9, 8, 7)).astype(np.int16)
    v = median_filter3(VoxelVolume(a, (1, 1, 1)))
    assert np.array_equal(v.data, median_oracle(a))
