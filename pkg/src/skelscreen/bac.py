"""Body axis correction, spectral embedding and feature concatenation.

Body axis correction puts a fetus into a canonical frame from its bone
centroids alone: x runs tail to head, y points to the left and z is
dorsal. The frame is built from two weighted principal component
steps (whole skeleton, then only the caudal half, which is dominated by the
spine) and is equivariant under rigid motions of the input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FrameError
from .features import CENTROID_COLS, FeatureMatrix

HEAD_QUANTILE = 0.25
_FLIP_Y = np.diag([-1.0, 1.0, -1.0])  # 180 degrees about y
_FLIP_X = np.diag([1.0, -1.0, -1.0])  # 180 degrees about x


@dataclass(frozen=True, eq=False)
class BodyFrame:
    rotation: np.ndarray  # (3, 3), det +1
    translation_mm: np.ndarray  # (3,)
    head_sign_flipped: bool = False

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation_mm

    def to_list(self) -> list[float]:
        return [*self.rotation.ravel().tolist(), *self.translation_mm.tolist()]

    @classmethod
    def from_list(cls, values, flipped: bool = False) -> "BodyFrame":
        v = np.asarray(values, dtype=float)
        return cls(v[:9].reshape(3, 3), v[9:12].copy(), bool(flipped))

    @classmethod
    def identity(cls) -> "BodyFrame":
        return cls(np.eye(3), np.zeros(3), False)


@dataclass(frozen=True)
class SpectralParams:
    k_neighbors: int = 10
    embed_dim: int = 8

    def __post_init__(self):
        if self.k_neighbors < 1 or self.embed_dim < 1:
            raise ValueError("k_neighbors and embed_dim must be >= 1")


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "NormStats":
        rows = np.asarray(rows, dtype=float)
        std = rows.std(axis=0)
        return cls(rows.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, rows: np.ndarray) -> np.ndarray:
        return (rows - self.mean) / self.std


def _weighted_pca(points, weights):
    w = weights / weights.sum()
    c = w @ points
    r = points - c
    cov = (r * w[:, None]).T @ r
    vals, vecs = np.linalg.eigh(cov)
    return c, vals[::-1], vecs[:, ::-1]


def _sign_canonical(v):
    i = int(np.argmax(np.abs(v)))
    return v if v[i] >= 0 else -v


def _align_to_x(d):
    """Smallest rotation taking unit vector d onto +x."""
    ex = np.array([1.0, 0.0, 0.0])
    axis = np.cross(d, ex)
    s = np.linalg.norm(axis)
    c = float(d @ ex)
    if s < 1e-15:
        return np.eye(3)
    k = axis / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def fit_bac(m: FeatureMatrix, tol: float = 1e-9) -> BodyFrame:
    """Estimate the canonical body frame of one fetus.

    1. Weighted PCA (weights = voxel counts) of the centroids; the principal
       axes in descending variance become x, y, z.
    2. Head/tail: if the 25% of the x range at +x carries less bone mass
       than the 25% at -x, rotate 180 degrees about y.
    3. Dorsoventral sign: the weighted third moment along z is made
       non-positive by a 180 degree turn about x if needed, so the long
       ventral tail of the mass distribution (limbs, sternum) lies at -z.
       Together with step 2 this fixes every axis sign from the data itself.
    4. Weighted PCA of the bones with x < 0 only; its first axis, oriented
       toward +x, is rotated onto +x by the minimal rotation.
    """
    if m.n < 3:
        raise FrameError(f"need at least 3 bones to fit a body frame, got {m.n}")
    pts = m.values[:, CENTROID_COLS]
    w = m.values[:, 0].astype(float)
    if not (w > 0).all():
        raise FrameError("bone weights must be positive")
    c, vals, vecs = _weighted_pca(pts, w)
    if not vals[0] > 0 or vals[1] <= tol * vals[0]:
        raise FrameError("bone centroids are collinear; body frame undeterminable")
    e1 = _sign_canonical(vecs[:, 0])
    e2 = _sign_canonical(vecs[:, 1])
    R = np.stack([e1, e2, np.cross(e1, e2)])
    q = (pts - c) @ R.T

    lo, hi = q[:, 0].min(), q[:, 0].max()
    span = hi - lo
    head = w[q[:, 0] >= hi - HEAD_QUANTILE * span].sum()
    tail = w[q[:, 0] <= lo + HEAD_QUANTILE * span].sum()
    flipped = bool(head < tail)
    if flipped:
        R = _FLIP_Y @ R
        q = q @ _FLIP_Y.T
    if (w * q[:, 2] ** 3).sum() > 0:
        R = _FLIP_X @ R
        q = q @ _FLIP_X.T

    caudal = q[:, 0] < 0
    if caudal.sum() >= 2:
        _, cvals, cvecs = _weighted_pca(q[caudal], w[caudal])
        if cvals[0] > 0:
            d = cvecs[:, 0]
            if d[0] < 0:
                d = -d
            R = _align_to_x(d) @ R
    return BodyFrame(R, -R @ c, flipped)


def apply_bac(m: FeatureMatrix, f: BodyFrame) -> FeatureMatrix:
    out = m.values.copy()
    out[:, CENTROID_COLS] = f.apply(m.values[:, CENTROID_COLS])
    return FeatureMatrix(out, "Bac", m.bone_ids)


def knn_affinity(x: np.ndarray, k: int):
    """Symmetric (union) k-NN graph with Gaussian weights exp(-d^2 / sigma^2).

    sigma is the median pairwise distance; returns (W, sigma).
    """
    n = len(x)
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    sigma = float(np.median(d[np.triu_indices(n, 1)]))
    k = min(k, n - 1)
    masked = d + np.diag(np.full(n, np.inf))
    nn = np.argsort(masked, axis=1, kind="stable")[:, :k]
    adj = np.zeros((n, n), dtype=bool)
    adj[np.repeat(np.arange(n), k), nn.ravel()] = True
    adj |= adj.T
    if sigma == 0:
        return np.zeros((n, n)), 0.0
    W = np.where(adj, np.exp(-(d / sigma) ** 2), 0.0)
    return W, sigma


def normalized_laplacian(W: np.ndarray) -> np.ndarray:
    deg = W.sum(axis=1)
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return np.eye(len(W)) - inv[:, None] * W * inv[None, :]


def fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry (first on ties) is positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    s = np.where(vecs[idx, np.arange(vecs.shape[1])] < 0, -1.0, 1.0)
    return vecs * s


def spectral_embed(m: FeatureMatrix, p: SpectralParams = SpectralParams(),
                   norm: NormStats | None = None) -> FeatureMatrix:
    """Laplacian eigenmap of the z-scored rows of ``m``.

    Columns are the generalized eigenvectors f of L f = lambda D f (the
    Laplacian eigenmap), numbers 2..embed_dim+1 by ascending eigenvalue. They
    are computed from the symmetric normalized Laplacian, whose eigenvectors
    v give f = D^-1/2 v; each column is scaled to unit length and
    sign-fixed. Zero-padded when the fetus has too few bones.
    """
    n = m.n
    if n < 2:
        raise ValueError("spectral embedding needs at least 2 rows")
    x = norm.apply(m.values) if norm is not None else m.values
    out = np.zeros((n, p.embed_dim))
    W, sigma = knn_affinity(x, p.k_neighbors)
    if sigma > 0:
        _, vecs = np.linalg.eigh(normalized_laplacian(W))
        take = min(p.embed_dim, n - 1)
        deg = W.sum(axis=1)
        inv = np.zeros_like(deg)
        inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
        f = vecs[:, 1:1 + take] * inv[:, None]
        norms = np.linalg.norm(f, axis=0)
        f = f / np.where(norms > 0, norms, 1.0)
        out[:, :take] = fix_signs(f)
    if p.embed_dim != 8:
        # the feature-matrix container is fixed at 8 columns
        padded = np.zeros((n, 8))
        padded[:, :min(8, p.embed_dim)] = out[:, :8]
        out = padded
    return FeatureMatrix(out, "Spectral", m.bone_ids)


def concat_features(b: FeatureMatrix, s: FeatureMatrix) -> FeatureMatrix:
    if b.n != s.n:
        raise ValueError(f"row count mismatch: {b.n} vs {s.n}")
    return FeatureMatrix(np.hstack([b.values, s.values]), "Concat16", b.bone_ids)


FEATURE_BLOCKS = ("Raw", "Spectral(Raw)", "Bac", "Spectral(Bac)")


def parse_feature_config(spec) -> tuple[str, ...]:
    """Normalize a feature selection to canonical block order."""
    if isinstance(spec, str):
        items = [s.strip() for s in spec.replace("+", ",").split(",")]
    else:
        items = [str(s).strip() for s in spec]
    items = [s for s in items if s]
    bad = [s for s in items if s not in FEATURE_BLOCKS]
    if bad or not items:
        raise ValueError(f"feature config must be a non-empty subset of {FEATURE_BLOCKS}, got {items}")
    return tuple(b for b in FEATURE_BLOCKS if b in items)


def design_matrix(raw: FeatureMatrix, bac: FeatureMatrix | None, blocks, params: SpectralParams,
                  raw_norm: NormStats | None, bac_norm: NormStats | None) -> np.ndarray:
    """Stack the requested feature blocks column-wise in canonical order."""
    cols = []
    for blk in blocks:
        if blk == "Raw":
            cols.append(raw.values)
        elif blk == "Spectral(Raw)":
            cols.append(spectral_embed(raw, params, raw_norm).values)
        elif blk == "Bac":
            cols.append(bac.values)
        elif blk == "Spectral(Bac)":
            cols.append(spectral_embed(bac, params, bac_norm).values)
    return np.hstack(cols)
