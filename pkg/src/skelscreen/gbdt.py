"""Multiclass gradient-boosted decision trees (softmax cross-entropy).

Each round fits one regression tree per class to the Newton direction of the
softmax loss: exact greedy splits over presorted feature values, level-wise
growth to ``max_depth``, leaf value -G/H scaled by the learning rate.

Training is deterministic and independent of the order of the training rows:
rows are put in a canonical order first, and split ties go to the lowest
(feature, threshold). Gradients and hessians are rounded to fixed point
(``GRAD_SCALE``) so node sums are exact integers; both kernel backends then
see identical split statistics and grow identical trees.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ModelFormatError, ModelMissingError, ModelVersionError, TrainingError
from .taxonomy import Taxonomy

N_ROUNDS = 718
LEARNING_RATE = 0.0394
MAX_DEPTH = 8
MIN_GAIN_REL = 1e-12
GRAD_SCALE = 2.0 ** 32  # fixed-point unit; sums stay exact in float64 up to 2**21 rows

MAGIC = b"SKGBDT\x00\x01"
FORMAT_VERSION = 1
_ARRAYS = ("feature", "threshold", "left", "right", "value", "tree_offset", "loss_history")


@dataclass(frozen=True)
class TrainParams:
    n_rounds: int = N_ROUNDS
    learning_rate: float = LEARNING_RATE
    max_depth: int = MAX_DEPTH
    min_gain_rel: float = MIN_GAIN_REL

    def __post_init__(self):
        if self.n_rounds < 1 or self.max_depth < 0 or not self.learning_rate > 0:
            raise ValueError(f"invalid boosting parameters {self}")


@dataclass(eq=False)
class GbdtModel:
    n_classes: int
    n_features: int
    params: TrainParams
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    tree_offset: np.ndarray
    loss_history: np.ndarray
    # opaque metadata owned by the pipeline: taxonomy, norm stats, feature config
    meta: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.tree_offset) - 1

    @property
    def n_rounds(self) -> int:
        return self.n_trees // self.n_classes

    def raw_scores(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"model expects {self.n_features} features, got shape {X.shape}")
        return kernels.predict_raw(X, self.feature, self.threshold, self.left, self.right,
                                   self.value, self.tree_offset, self.n_classes)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.raw_scores(X))

    def predict(self, X):
        """(labels, probabilities); argmax ties go to the lower class index."""
        p = self.predict_proba(X)
        return np.argmax(p, axis=1), p


def softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(p: np.ndarray, y: np.ndarray) -> float:
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], 1e-300))))


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row permutation sorting by (features..., label) lexicographically."""
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def quantize(g: np.ndarray, h: np.ndarray):
    """Fixed-point gradients and hessians; the hessian is floored at one unit."""
    gq = np.rint(g * GRAD_SCALE).astype(np.int64)
    hq = np.maximum(np.rint(h * GRAD_SCALE), 1).astype(np.int64)
    return np.ascontiguousarray(gq), np.ascontiguousarray(hq)


def train(X, y, n_classes: int, params: TrainParams = TrainParams(), meta: dict | None = None,
          progress=None) -> GbdtModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError(f"feature rows ({X.shape}) and labels ({y.shape}) disagree")
    if len(X) == 0:
        raise TrainingError("no training samples")
    if not np.isfinite(X).all():
        raise TrainingError("training features contain non-finite values")
    if y.min() < 0 or y.max() >= n_classes:
        raise TrainingError(f"labels must lie in [0, {n_classes})")
    if len(np.unique(y)) < 2:
        raise TrainingError("training needs at least two distinct labels")
    order = canonical_order(X, y)
    X = np.ascontiguousarray(X[order])
    y = y[order]
    n, d = X.shape
    K = n_classes
    sorted_idx = np.ascontiguousarray(np.stack([np.argsort(X[:, f], kind="stable") for f in range(d)]))
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    F = np.zeros((n, K))
    p = softmax(F)
    losses = [cross_entropy(p, y)]
    parts = {k: [] for k in ("feature", "threshold", "left", "right", "value")}
    sizes = []
    cols = np.arange(K)[None, :]
    for r in range(params.n_rounds):
        g, h = quantize(p - Y, p * (1.0 - p))
        feat, thr, val, exists, leaf_of = kernels.grow_round(
            X, sorted_idx, g, h, params.max_depth, params.min_gain_rel)
        val = val * params.learning_rate
        F += val[cols, leaf_of]
        fe, th, le, ri, va, sz = kernels.compact_trees(feat, thr, val, exists)
        for k, arr in zip(parts, (fe, th, le, ri, va)):
            parts[k].append(arr)
        sizes.append(sz)
        p = softmax(F)
        losses.append(cross_entropy(p, y))
        if progress is not None:
            progress(r + 1, losses[-1])
    sizes = np.concatenate(sizes)
    return GbdtModel(
        n_classes=K, n_features=d, params=params,
        feature=np.concatenate(parts["feature"]).astype(np.int32),
        threshold=np.concatenate(parts["threshold"]).astype(np.float64),
        left=np.concatenate(parts["left"]).astype(np.int32),
        right=np.concatenate(parts["right"]).astype(np.int32),
        value=np.concatenate(parts["value"]).astype(np.float64),
        tree_offset=np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
        loss_history=np.array(losses, dtype=np.float64),
        meta=dict(meta or {}),
    )


def model_bytes(model: GbdtModel) -> bytes:
    arrays = {name: np.ascontiguousarray(getattr(model, name)) for name in _ARRAYS}
    header = {
        "n_classes": model.n_classes,
        "n_features": model.n_features,
        "params": {
            "n_rounds": model.params.n_rounds,
            "learning_rate": model.params.learning_rate,
            "max_depth": model.params.max_depth,
            "min_gain_rel": model.params.min_gain_rel,
        },
        "meta": model.meta,
        "arrays": [[name, arr.dtype.newbyteorder("<").str, list(arr.shape)] for name, arr in arrays.items()],
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hdr)), hdr]
    for name, arr in arrays.items():
        chunks.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    return b"".join(chunks)


def model_from_bytes(buf: bytes) -> GbdtModel:
    if len(buf) < len(MAGIC) + 8 or not buf.startswith(MAGIC):
        raise ModelFormatError("not a model file (bad magic or too short)")
    version, hlen = struct.unpack_from("<II", buf, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"model format version {version}, this build reads {FORMAT_VERSION}")
    pos = len(MAGIC) + 8
    if pos + hlen > len(buf):
        raise ModelFormatError("model file truncated inside header")
    try:
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from None
    pos += hlen
    arrays = {}
    for name, dtype, shape in header["arrays"]:
        dt = np.dtype(dtype)
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise ModelFormatError(f"model file truncated in array {name!r}")
        arrays[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos) \
            .reshape(shape).astype(dt.newbyteorder("="))
        pos += nbytes
    if pos != len(buf):
        raise ModelFormatError("trailing bytes after model arrays")
    missing = set(_ARRAYS) - arrays.keys()
    if missing:
        raise ModelFormatError(f"model file lacks arrays {sorted(missing)}")
    model = GbdtModel(n_classes=int(header["n_classes"]), n_features=int(header["n_features"]),
                      params=TrainParams(**header["params"]), meta=header["meta"], **arrays)
    _validate(model)
    return model


def _validate(m: GbdtModel) -> None:
    total = len(m.feature)
    if m.tree_offset[0] != 0 or m.tree_offset[-1] != total or np.any(np.diff(m.tree_offset) < 1):
        raise ModelFormatError("inconsistent tree offsets")
    if m.n_trees % m.n_classes:
        raise ModelFormatError("tree count is not a multiple of the class count")
    if any(len(a) != total for a in (m.threshold, m.left, m.right, m.value)):
        raise ModelFormatError("tree arrays differ in length")
    if m.feature.max(initial=-1) >= m.n_features:
        raise ModelFormatError("split feature index out of range")
    inner = m.feature >= 0
    sizes = np.repeat(np.diff(m.tree_offset), np.diff(m.tree_offset))
    local = np.arange(total) - np.repeat(m.tree_offset[:-1], np.diff(m.tree_offset))
    for child in (m.left, m.right):
        c = child[inner]
        if np.any(c <= local[inner]) or np.any(c >= sizes[inner]):
            raise ModelFormatError("tree child index out of range")


def save_model(model: GbdtModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(model_bytes(model))
    os.replace(tmp, path)


def load_model(path) -> GbdtModel:
    path = Path(path)
    if not path.is_file():
        raise ModelMissingError(f"model file not found: {path}")
    return model_from_bytes(path.read_bytes())


def taxonomy_meta(tax: Taxonomy) -> dict:
    return {"labels": list(tax.labels), "groups": list(tax.groups)}
