from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from skelscreen import kernels
from skelscreen.localize import (BoneInstance, classify_voxels, connected_components, foreground_box,
                                 instance_label_volume, instances_from_label_volume, localize, split_fetuses,
                                 watershed_resolve)
from skelscreen.volume import VoxelVolume, median_filter3

OFFS = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]


def flood_oracle(hu, classes):
    """Grow the classified region one voxel at a time, always taking the
    highest-HU frontier Border voxel (ties: smallest grid coordinate); it gets
    the class of its highest-HU classified neighbour (ties: first offset)."""
    out = classes.copy()
    shape = hu.shape

    def nbrs(p):
        for d in OFFS:
            q = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
            if all(0 <= q[i] < shape[i] for i in range(3)):
                yield q

    while True:
        frontier = [tuple(p) for p in np.argwhere(out == 1)
                    if any(out[q] != 1 for q in nbrs(tuple(p)))]
        if not frontier:
            break
        p = min(frontier, key=lambda p: (-int(hu[p]), p))
        best = None
        for q in nbrs(p):
            if out[q] != 1 and (best is None or hu[q] > hu[best]):
                best = q
        out[p] = out[best]
    out[out == 1] = 0
    return out


def cc_oracle(mask):
    """Breadth-first 26-connected components, smallest-coordinate-first ids."""
    seen = np.zeros(mask.shape, bool)
    comps = []
    for p in map(tuple, np.argwhere(mask)):
        if seen[p]:
            continue
        seen[p] = True
        q, comp = deque([p]), []
        while q:
            c = q.popleft()
            comp.append(c)
            for d in OFFS:
                n = (c[0] + d[0], c[1] + d[1], c[2] + d[2])
                if all(0 <= n[i] < mask.shape[i] for i in range(3)) and mask[n] and not seen[n]:
                    seen[n] = True
                    q.append(n)
        comps.append(sorted(comp))
    return comps


hu_volumes = arrays(np.int16, st.tuples(*[st.integers(1, 6)] * 3), elements=st.integers(300, 700))


def test_classify_thresholds():
    v = VoxelVolume(np.array([[[429, 430, 580, 581]]], np.int16), (1, 1, 1))
    assert classify_voxels(v).ravel().tolist() == [0, 1, 1, 2]


@given(hu_volumes)
def test_flood_matches_oracle(hu):
    v = VoxelVolume(hu, (1, 1, 1))
    cls = classify_voxels(v)
    want = flood_oracle(hu, cls)
    for name in ("numpy", "numba") if kernels.HAVE_NUMBA else ("numpy",):
        assert np.array_equal(kernels.get_backend(name).watershed_flood(hu, cls), want)


@given(hu_volumes)
def test_flood_invariants(hu):
    v = VoxelVolume(hu, (1, 1, 1))
    cls = classify_voxels(v)
    out = watershed_resolve(v, cls)
    assert (out != 1).all()
    assert (out[hu > 580] == 2).all() and (out[hu < 430] == 0).all()
    assert np.array_equal(out, watershed_resolve(v, cls))


def test_unreachable_border_is_background():
    hu = np.full((3, 3, 3), 500, np.int16)
    out = watershed_resolve(VoxelVolume(hu, (1, 1, 1)), np.ones((3, 3, 3), np.uint8))
    assert not out.any()


def test_flood_prefers_bright_neighbor():
    hu = np.array([[[700, 560, 100]]], np.int16)
    out = watershed_resolve(VoxelVolume(hu, (1, 1, 1)), classify_voxels(VoxelVolume(hu, (1, 1, 1))))
    assert out.ravel().tolist() == [2, 2, 0]


@given(arrays(np.bool_, st.tuples(*[st.integers(1, 7)] * 3)))
def test_components_match_bfs(mask):
    cls = np.where(mask, 2, 0).astype(np.uint8)
    bones = connected_components(cls, min_bone_voxels=1)
    want = cc_oracle(mask)
    assert [b.id for b in bones] == list(range(1, len(want) + 1))
    assert [sorted(map(tuple, b.voxels.tolist())) for b in bones] == want


def test_components_min_size_and_border_error():
    cls = np.zeros((10, 10, 10), np.uint8)
    cls[0:3, 0:3, 0:2] = 2  # 18 voxels
    cls[8, 8, 8] = 2
    bones = connected_components(cls, min_bone_voxels=10)
    assert [b.n_voxels for b in bones] == [18]
    cls[5, 5, 5] = 1
    with pytest.raises(ValueError):
        connected_components(cls)


def test_diagonal_voxels_connect():
    cls = np.zeros((3, 3, 3), np.uint8)
    cls[0, 0, 0] = cls[1, 1, 1] = cls[2, 2, 2] = 2
    assert len(connected_components(cls, 1)) == 1


def _blob_volume():
    hu = np.zeros((40, 30, 20), np.int16)
    hu[5:10, 5:10, 5:10] = 700
    hu[20:26, 12:16, 8:12] = 700
    hu[19, 12:16, 8:12] = 500  # Border shell
    hu[30:33, 20:25, 3:6] = 650
    return VoxelVolume(hu, (0.06, 0.06, 0.06))


def test_crop_matches_full_volume():
    v = _blob_volume()
    got = localize(v)
    full = median_filter3(v)
    want = connected_components(watershed_resolve(full, classify_voxels(full)))
    assert len(got) == len(want) == 3
    for a, b in zip(got, want):
        assert np.array_equal(a.voxels, b.voxels)


def test_foreground_box():
    v = _blob_volume()
    box = foreground_box(v)
    assert box == (slice(2, 36), slice(2, 28), slice(0, 15))
    assert foreground_box(v.with_data(np.zeros((3, 3, 3), np.int16))) is None
    assert localize(v.with_data(np.zeros((3, 3, 3), np.int16))) == []


def test_split_two_clusters():
    def blob(i, x):
        return BoneInstance(i, np.array([[x, 0, 0], [x + 1, 0, 0]], np.int32))

    bones = [blob(1, 100), blob(2, 0), blob(3, 3), blob(4, 104), blob(5, 6), blob(6, 108)]
    out = split_fetuses(bones, (1, 1, 1))
    assert [b.fetus_id for b in out] == [0, 1, 1, 0, 1, 0]
    # two bones 1 mm apart: singleton clusters are never split off
    pair = [BoneInstance(1, np.array([[0, 0, 0]], np.int32)), BoneInstance(2, np.array([[1, 0, 0]], np.int32))]
    assert {b.fetus_id for b in split_fetuses(pair, (1, 1, 1))} == {0}
    cube = [BoneInstance(i + 1, np.array([[x, y, z]], np.int32))
            for i, (x, y, z) in enumerate(np.ndindex(3, 3, 3))]
    assert {b.fetus_id for b in split_fetuses(cube, (1, 1, 1))} == {0}


def test_label_volume_roundtrip():
    bones = localize(_blob_volume())
    lab = instance_label_volume(bones, _blob_volume().dims)
    back = instances_from_label_volume(lab, {b.id: b.fetus_id for b in bones})
    assert [b.id for b in back] == [b.id for b in bones]
    for a, b in zip(back, bones):
        assert np.array_equal(a.voxels, b.voxels)


def test_phantom_bones_recovered(small_phantom):
    vol, truth = small_phantom
    bones = localize(vol)
    assert len(bones) == len(truth.bones)
    hits = set()
    for b in bones:
        ids = truth.labels[tuple(b.voxels.T)]
        ids = ids[ids > 0]
        hits.add(int(np.bincount(ids).argmax()))
    assert len(hits) == len(truth.bones)
