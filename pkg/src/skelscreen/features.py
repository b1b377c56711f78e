"""Per-bone geometric features and the per-fetus feature matrix.

Each bone becomes an 8-vector: voxel count, centroid (mm), the ascending
eigenvalues of its unit-mass inertia tensor (mm^2) and its major-axis length
(mm).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .localize import BoneInstance, voxel_centers_mm

COLUMNS = ("n_voxels", "cx", "cy", "cz", "l1", "l2", "l3", "major_axis")
CENTROID_COLS = slice(1, 4)
STAGES = ("Raw", "Bac", "Spectral", "Concat16")


@dataclass(frozen=True)
class BoneFeatures:
    n_voxels: int
    centroid_mm: tuple[float, float, float]
    inertia_eigs_mm2: tuple[float, float, float]
    major_axis_mm: float

    def as_row(self) -> list[float]:
        return [float(self.n_voxels), *self.centroid_mm, *self.inertia_eigs_mm2, self.major_axis_mm]


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # (n, 8) or (n, 16)
    stage: str = "Raw"
    bone_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        want = 16 if self.stage == "Concat16" else 8
        if self.values.ndim != 2 or self.values.shape[1] != want:
            raise ValueError(f"{self.stage} matrix needs {want} columns, got shape {self.values.shape}")
        if self.bone_ids and len(self.bone_ids) != self.values.shape[0]:
            raise ValueError("bone_ids length differs from row count")

    @property
    def n(self) -> int:
        return self.values.shape[0]


def inertia_tensor(points: np.ndarray) -> np.ndarray:
    """Unit-mass inertia tensor of ``points`` about their centroid."""
    r = points - points.mean(axis=0)
    sq = (r * r).sum()
    return sq * np.eye(3) - r.T @ r


def major_axis_length(points: np.ndarray, spacing_mm) -> float:
    """Extent of the points along their principal axis plus one grid spacing.

    The spacing added is the one of the grid axis the principal direction is
    closest to (largest absolute component, lowest axis on ties).
    """
    sp = np.asarray(spacing_mm, dtype=float)
    if len(points) < 2:
        return float(sp[0])
    r = points - points.mean(axis=0)
    _, vecs = np.linalg.eigh(r.T @ r)
    axis = vecs[:, -1]
    proj = r @ axis
    return float(proj.max() - proj.min() + sp[int(np.argmax(np.abs(axis)))])


def extract_features(b: BoneInstance, spacing_mm) -> BoneFeatures:
    if b.voxels.size == 0:
        raise ValueError(f"bone {b.id} has no voxels")
    pts = voxel_centers_mm(b.voxels, spacing_mm)
    eig = np.clip(np.linalg.eigvalsh(inertia_tensor(pts)), 0.0, None)
    return BoneFeatures(
        n_voxels=int(len(pts)),
        centroid_mm=tuple(float(c) for c in pts.mean(axis=0)),
        inertia_eigs_mm2=tuple(float(e) for e in np.sort(eig)),
        major_axis_mm=major_axis_length(pts, spacing_mm),
    )


def assemble_matrix(features: list[BoneFeatures], bone_ids=None) -> FeatureMatrix:
    if not features:
        raise ValueError("no bones to assemble")
    vals = np.array([f.as_row() for f in features], dtype=float)
    ids = tuple(int(i) for i in bone_ids) if bone_ids is not None else tuple(range(1, len(features) + 1))
    return FeatureMatrix(vals, "Raw", ids)


def fetus_matrix(bones: list[BoneInstance], spacing_mm) -> FeatureMatrix:
    """Raw matrix for the bones of one fetus, rows in bone-id order."""
    bones = sorted(bones, key=lambda b: b.id)
    return assemble_matrix([extract_features(b, spacing_mm) for b in bones], [b.id for b in bones])


def matrix_to_csv(m: FeatureMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bone_id", *COLUMNS])
    for bid, row in zip(m.bone_ids, m.values):
        w.writerow([bid, int(row[0]), *(repr(float(v)) for v in row[1:8])])
    return buf.getvalue()


def matrix_from_csv(text: str, stage: str = "Raw") -> FeatureMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["bone_id", *COLUMNS]:
        raise ValueError("unexpected feature CSV header")
    body = rows[1:]
    ids = tuple(int(r[0]) for r in body)
    vals = np.array([[float(v) for v in r[1:]] for r in body], dtype=float).reshape(len(body), 8)
    return FeatureMatrix(vals, stage, ids)
