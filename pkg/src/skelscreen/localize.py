"""Unsupervised skeletal localization.

HU thresholds split voxels into Background / Border / Bone, marker-based
flooding resolves the Border voxels, and 26-connected Bone components become
bone instances, which are then grouped into at most two fetuses.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .kernels import BACKGROUND, BONE, BORDER
from .volume import VoxelVolume, median_filter3

BORDER_LOW_HU = 430
BORDER_HIGH_HU = 580
MIN_BONE_VOXELS = 10
MIN_FETUS_BONES = 3  # a fetus needs this many bones to get a body frame
_CONN26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class BoneInstance:
    id: int
    voxels: np.ndarray  # (n, 3) int grid coordinates, lexicographically sorted
    fetus_id: int = 0
    volume_ref: str = ""

    @property
    def n_voxels(self) -> int:
        return int(self.voxels.shape[0])


def classify_voxels(v: VoxelVolume, low: int = BORDER_LOW_HU, high: int = BORDER_HIGH_HU) -> np.ndarray:
    """Class map: HU < low is Background, low <= HU <= high is Border, HU > high is Bone."""
    hu = v.data
    out = np.full(hu.shape, BORDER, dtype=np.uint8)
    out[hu < low] = BACKGROUND
    out[hu > high] = BONE
    return out


def watershed_resolve(v: VoxelVolume, classes: np.ndarray) -> np.ndarray:
    """Assign every Border voxel to Background or Bone by HU-descending flooding.

    Border voxels are visited highest HU first (ties: smallest grid
    coordinate) and take the class of their already-classified 26-neighbor
    with the highest HU. Border regions that touch no classified voxel at all
    become Background.
    """
    if classes.shape != v.data.shape:
        raise ValueError("class map and volume shapes differ")
    return kernels.watershed_flood(np.ascontiguousarray(v.data), np.ascontiguousarray(classes))


def connected_components(classes: np.ndarray, min_bone_voxels: int = MIN_BONE_VOXELS,
                         volume_ref: str = "") -> list[BoneInstance]:
    if (classes == BORDER).any():
        raise ValueError("class map still contains Border voxels; run watershed_resolve first")
    lab, n = ndimage.label(classes == BONE, structure=_CONN26)
    if n == 0:
        return []
    flat = lab.ravel()
    idx = np.flatnonzero(flat)
    comp = flat[idx]
    order = np.argsort(comp, kind="stable")
    idx, comp = idx[order], comp[order]
    bounds = np.flatnonzero(np.diff(comp)) + 1
    groups = np.split(idx, bounds)
    keep = [grp for grp in groups if grp.size >= min_bone_voxels]
    # C-order flat index == lexicographic (x, y, z) order
    keep.sort(key=lambda grp: grp[0])
    shape = classes.shape
    return [
        BoneInstance(id=i + 1, voxels=np.stack(np.unravel_index(grp, shape), axis=1).astype(np.int32),
                     volume_ref=volume_ref)
        for i, grp in enumerate(keep)
    ]


def voxel_centers_mm(voxels: np.ndarray, spacing_mm) -> np.ndarray:
    return (voxels + 0.5) * np.asarray(spacing_mm, dtype=float)


def _two_means(points: np.ndarray, max_iter: int = 100):
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    a, b = np.unravel_index(np.argmax(d2), d2.shape)
    centers = points[[a, b]].copy()
    assign = np.zeros(len(points), dtype=int)
    for _ in range(max_iter):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new = np.argmin(dist, axis=1)  # ties go to cluster 0
        if (new == 0).all() or (new == 1).all():
            return None, None
        centers = np.stack([points[new == c].mean(axis=0) for c in (0, 1)])
        if np.array_equal(new, assign):
            break
        assign = new
    return assign, centers


def split_fetuses(bones: list[BoneInstance], spacing_mm) -> list[BoneInstance]:
    """Assign fetus ids 0/1 by 2-means on bone centroids.

    The split is kept only when the two cluster centroids are further apart
    than twice the larger cluster radius (max member distance to its
    centroid) and each cluster holds at least MIN_FETUS_BONES bones;
    otherwise every bone belongs to fetus 0. Singleton clusters have zero
    radius, so without the size floor any two bones would split. Fetus 0 is
    the cluster holding the lowest bone id.
    """
    if not bones:
        raise ValueError("no bones to split")
    if len(bones) < 2:
        return [dataclasses.replace(b, fetus_id=0) for b in bones]
    cents = np.array([voxel_centers_mm(b.voxels, spacing_mm).mean(axis=0) for b in bones])
    assign, centers = _two_means(cents)
    keep = False
    if assign is not None and np.bincount(assign, minlength=2).min() >= MIN_FETUS_BONES:
        radius = max(np.linalg.norm(cents[assign == c] - centers[c], axis=1).max() for c in (0, 1))
        keep = np.linalg.norm(centers[0] - centers[1]) > 2.0 * radius
    if not keep:
        return [dataclasses.replace(b, fetus_id=0) for b in bones]
    first = assign[int(np.argmin([b.id for b in bones]))]
    return [dataclasses.replace(b, fetus_id=int(assign[i] != first)) for i, b in enumerate(bones)]


def foreground_box(v: VoxelVolume, low: int = BORDER_LOW_HU, margin: int = 3):
    """Bounding box (as slices) of voxels with HU >= low, grown by ``margin``.

    With margin >= 3 the median filter + threshold + flooding chain gives the
    same bone voxels inside the box as on the full volume: every voxel whose
    filtered value can matter lies at least one voxel inside the box edge.
    """
    hits = np.nonzero(v.data >= low)
    if hits[0].size == 0:
        return None
    return tuple(
        slice(max(int(h.min()) - margin, 0), min(int(h.max()) + margin + 1, n))
        for h, n in zip(hits, v.data.shape)
    )


def localize(v: VoxelVolume, low: int = BORDER_LOW_HU, high: int = BORDER_HIGH_HU,
             min_bone_voxels: int = MIN_BONE_VOXELS, volume_ref: str = "",
             denoise: bool = True) -> list[BoneInstance]:
    """Median filter, threshold, flood, label and split one scan.

    Work is done on the foreground bounding box; instance voxel coordinates
    are reported in the full-volume grid.
    """
    box = foreground_box(v, low)
    if box is None:
        return []
    sub = v.with_data(np.ascontiguousarray(v.data[box]))
    if denoise:
        sub = median_filter3(sub)
    classes = watershed_resolve(sub, classify_voxels(sub, low, high))
    bones = connected_components(classes, min_bone_voxels, volume_ref)
    if not bones:
        return []
    offset = np.array([s.start for s in box], dtype=np.int32)
    bones = [dataclasses.replace(b, voxels=b.voxels + offset) for b in bones]
    return split_fetuses(bones, v.spacing_mm)


def instance_label_volume(bones: list[BoneInstance], shape) -> np.ndarray:
    """uint16 map: 0 background, k for the voxels of instance id k."""
    out = np.zeros(shape, dtype=np.uint16)
    for b in bones:
        out[tuple(b.voxels.T)] = b.id
    return out


def instances_from_label_volume(labels: np.ndarray, fetus_of: dict | None = None,
                                volume_ref: str = "") -> list[BoneInstance]:
    flat = labels.ravel()
    idx = np.flatnonzero(flat)
    ids = flat[idx]
    order = np.argsort(ids, kind="stable")
    idx, ids = idx[order], ids[order]
    bounds = np.flatnonzero(np.diff(ids)) + 1
    out = []
    for grp, bid in zip(np.split(idx, bounds), ids[np.r_[0, bounds]] if ids.size else []):
        fid = (fetus_of or {}).get(int(bid), 0)
        out.append(BoneInstance(id=int(bid), voxels=np.stack(np.unravel_index(grp, labels.shape), axis=1)
                                .astype(np.int32), fetus_id=fid, volume_ref=volume_ref))
    return out
