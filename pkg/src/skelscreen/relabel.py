"""Curve-fitting relabeling of vertebral bodies, vertebral arches and ribs.

In the body frame the bones of each row (bodies, left/right arches, left/right
ribs) line up along a smooth curve. Each row gets a weighted least-squares
polynomial y(x), z(x) fit to its centroids, and every row bone is then moved
to the row of the nearest curve.
"""
from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass, field

import numpy as np

from .taxonomy import CURVE_GROUPS, Taxonomy

EPS_MM = 1e-6
N_WEIGHT_NEIGHBORS = 2
DEGREES = {"VertebralBody": 4, "VertebralArchLeft": 4, "VertebralArchRight": 4, "RibLeft": 2, "RibRight": 2}


@dataclass(frozen=True, eq=False)
class LabeledBone:
    id: int
    label: int
    centroid: np.ndarray  # body-frame mm
    n_voxels: int = 1
    major_axis: float = 0.0
    probs: np.ndarray | None = None
    head_end: np.ndarray | None = None  # body-frame voxel center with the largest x


@dataclass(frozen=True, eq=False)
class FittedCurve:
    group: str
    degree: int
    coeffs_y: np.ndarray  # ascending powers of x
    coeffs_z: np.ndarray
    x_range: tuple[float, float] = (-np.inf, np.inf)
    n_points: int = 0
    excluded: tuple[int, ...] = ()  # indices into the input points dropped by the residual pass

    def __post_init__(self):
        if len(self.coeffs_y) != self.degree + 1 or len(self.coeffs_z) != self.degree + 1:
            raise ValueError("coefficient count must be degree + 1")

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return poly_eval(self.coeffs_y, x), poly_eval(self.coeffs_z, x)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance of each point to the curve at the point's own x.

        Outside the fitted x span the curve is not extrapolated: the distance
        is taken to the curve end point instead.
        """
        points = np.atleast_2d(points)
        x = points[:, 0]
        xc = np.clip(x, *self.x_range)
        yc, zc = self.eval(xc)
        return np.sqrt((x - xc) ** 2 + (points[:, 1] - yc) ** 2 + (points[:, 2] - zc) ** 2)


@dataclass
class RelabelResult:
    labels: dict  # bone id -> label index after relabeling
    curves: list
    diffs: list = field(default_factory=list)  # (bone_id, old, new, distance_mm)
    warnings: list = field(default_factory=list)
    excluded_caudal: tuple = ()


def poly_eval(coeffs, x):
    out = np.zeros_like(np.asarray(x, dtype=float))
    for c in coeffs[::-1]:
        out = out * x + c
    return out


def neighbor_weights(points: np.ndarray, k: int = N_WEIGHT_NEIGHBORS, eps: float = EPS_MM) -> np.ndarray:
    """1 / (mean distance to the k nearest other points + eps)."""
    n = len(points)
    k = min(k, n - 1)
    if k < 1:
        return np.ones(n)
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    near = np.sort(d, axis=1)[:, :k]
    return 1.0 / (near.mean(axis=1) + eps)


def weighted_polyfit(x, v, degree: int, w) -> np.ndarray:
    """Minimize sum w_i (v_i - p(x_i))^2; coefficients in ascending powers."""
    x = np.asarray(x, dtype=float)
    sw = np.sqrt(np.asarray(w, dtype=float))
    A = np.vander(x, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], np.asarray(v, dtype=float) * sw, rcond=None)
    return coef


def fit_group_curve(points: np.ndarray, degree: int, group: str = "", weights=None) -> FittedCurve | None:
    """Weighted fit of y(x) and z(x), one residual-based exclusion pass, refit.

    Points whose residual distance exceeds the standard deviation of the
    residuals are dropped before the refit. The residuals scatter around the
    curve itself, so the deviation is taken about zero (root mean square).
    The curve keeps the x span of all input points. Returns None when there
    are fewer than degree + 1 points.
    """
    points = np.asarray(points, dtype=float)
    if len(points) < degree + 1:
        return None
    w = neighbor_weights(points) if weights is None else np.asarray(weights, dtype=float)

    def fit(idx):
        p = points[idx]
        return (weighted_polyfit(p[:, 0], p[:, 1], degree, w[idx]),
                weighted_polyfit(p[:, 0], p[:, 2], degree, w[idx]))

    idx = np.arange(len(points))
    cy, cz = fit(idx)
    res = np.hypot(points[:, 1] - poly_eval(cy, points[:, 0]), points[:, 2] - poly_eval(cz, points[:, 0]))
    keep = res <= np.sqrt(np.mean(res ** 2))
    excluded = ()
    if keep.sum() >= degree + 1 and not keep.all():
        idx = np.flatnonzero(keep)
        cy, cz = fit(idx)
        excluded = tuple(int(i) for i in np.flatnonzero(~keep))
    xs = points[:, 0]
    return FittedCurve(group, degree, cy, cz, (float(xs.min()), float(xs.max())), len(idx), excluded)


def _confidence(b: LabeledBone) -> float:
    return float(b.probs[b.label]) if b.probs is not None else 0.0


def caudal_cutoff(bones: list[LabeledBone], taxonomy: Taxonomy):
    """Predicate keeping points on the head side of the line joining the ilium head ends.

    Returns (predicate, warning or None). The predicate takes (n, 3) points
    and returns a boolean keep-mask. A point is dropped when its x is below
    the line through the two ends, evaluated at the point's y.

    Per ilium label the representative bone is the most confident one (then
    the largest) among those in the caudal half (x < 0): a single skull bone
    mislabeled as ilium must not place the cut line through the trunk.
    """
    ilium_labels = taxonomy.members("Ilium")
    ends = []
    for lab in ilium_labels:
        cands = [b for b in bones if b.label == lab and b.head_end is not None and b.centroid[0] < 0]
        if cands:
            best = max(cands, key=lambda b: (_confidence(b), b.n_voxels, -b.id))
            ends.append(np.asarray(best.head_end, dtype=float))
    if len(ilium_labels) < 2 or len(ends) < 2:
        return (lambda pts: np.ones(len(np.atleast_2d(pts)), dtype=bool)), "ilium missing: caudal cutoff skipped"
    (xa, ya, _), (xb, yb, _) = ends[0], ends[1]

    def keep(pts):
        pts = np.atleast_2d(pts)
        if abs(yb - ya) < 1e-12:
            line = np.full(len(pts), 0.5 * (xa + xb))
        else:
            line = xa + (xb - xa) * (pts[:, 1] - ya) / (yb - ya)
        return ~(pts[:, 0] < line)

    return keep, None


def fit_curves(bones: list[LabeledBone], taxonomy: Taxonomy):
    """Fit one curve per row group. Returns (curves, warnings, caudally excluded ids)."""
    keep_fn, warn = caudal_cutoff(bones, taxonomy)
    warnings = [warn] if warn else []
    curves = []
    cut = []
    for group in CURVE_GROUPS:
        members = [b for b in bones if taxonomy.curve_group_of(b.label) == group]
        if not members:
            warnings.append(f"{group}: no bones, curve skipped")
            continue
        pts = np.array([b.centroid for b in members], dtype=float)
        mask = keep_fn(pts)
        cut += [b.id for b, m in zip(members, mask) if not m]
        curve = fit_group_curve(pts[mask], DEGREES[group], group)
        if curve is None:
            warnings.append(f"{group}: {int(mask.sum())} points, need {DEGREES[group] + 1}; curve skipped")
            continue
        curves.append(curve)
    return curves, warnings, tuple(sorted(cut))


def relabel_by_curves(bones: list[LabeledBone], curves: list[FittedCurve], taxonomy: Taxonomy):
    """Move every row bone to the row of its nearest curve.

    A bone whose nearest curve is its own row keeps its label. Otherwise its
    new label is the most probable label of the new row (first such label
    when no probabilities are attached). Returns (labels, diffs).
    """
    if not curves:
        raise ValueError("no fitted curves")
    labels = {b.id: b.label for b in bones}
    diffs = []
    for b in bones:
        own = taxonomy.curve_group_of(b.label)
        if own is None:
            continue
        dist = np.array([c.distance(np.asarray(b.centroid, dtype=float))[0] for c in curves])
        j = int(np.argmin(dist))
        target = curves[j].group
        if target == own:
            continue
        cands = taxonomy.curve_members(target)
        if b.probs is not None:
            new = cands[int(np.argmax(np.asarray(b.probs)[cands]))]
        else:
            new = cands[0]
        labels[b.id] = new
        diffs.append((b.id, b.label, new, float(dist[j])))
    return labels, diffs


def relabel(bones: list[LabeledBone], taxonomy: Taxonomy) -> RelabelResult:
    curves, warnings, cut = fit_curves(bones, taxonomy)
    if not curves:
        return RelabelResult({b.id: b.label for b in bones}, [], [], warnings + ["no curves: relabeling skipped"], cut)
    labels, diffs = relabel_by_curves(bones, curves, taxonomy)
    return RelabelResult(labels, curves, diffs, warnings, cut)


def apply_labels(bones: list[LabeledBone], labels: dict) -> list[LabeledBone]:
    return [dataclasses.replace(b, label=int(labels[b.id])) for b in bones]


def diff_csv(diffs, taxonomy: Taxonomy) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bone_id", "old_label", "new_label", "distance_mm"])
    for bid, old, new, dist in diffs:
        w.writerow([bid, taxonomy.labels[old], taxonomy.labels[new], f"{dist:.6f}"])
    return buf.getvalue()
