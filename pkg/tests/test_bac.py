import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from skelscreen.bac import (BodyFrame, NormStats, SpectralParams, apply_bac, concat_features, design_matrix,
                            fit_bac, fix_signs, knn_affinity, normalized_laplacian, parse_feature_config,
                            spectral_embed)
from skelscreen.errors import FrameError
from skelscreen.features import FeatureMatrix, fetus_matrix
from skelscreen.localize import localize


@pytest.fixture(scope="module")
def phantom_raw(small_phantom):
    vol, _ = small_phantom
    return fetus_matrix(localize(vol), vol.spacing_mm)


def moved(m, R, t):
    v = m.values.copy()
    v[:, 1:4] = v[:, 1:4] @ R.T + t
    return FeatureMatrix(v, "Raw", m.bone_ids)


def embed_oracle(x, k, dim):
    """Loop-built k-NN Gaussian graph solved as a generalized eigenproblem by scipy."""
    n = len(x)
    d = np.array([[np.linalg.norm(x[i] - x[j]) for j in range(n)] for i in range(n)])
    sigma = np.median([d[i, j] for i in range(n) for j in range(i + 1, n)])
    k = min(k, n - 1)
    W = np.zeros((n, n))
    for i in range(n):
        others = sorted((d[i, j], j) for j in range(n) if j != i)[:k]
        for _, j in others:
            W[i, j] = W[j, i] = np.exp(-(d[i, j] / sigma) ** 2)
    D = np.diag(W.sum(axis=1))
    vals, vecs = scipy.linalg.eigh(D - W, D)  # generalized problem L f = lambda D f
    out = np.zeros((n, dim))
    for c in range(min(dim, n - 1)):
        v = vecs[:, c + 1] / np.linalg.norm(vecs[:, c + 1])
        i = int(np.argmax(np.abs(v)))
        out[:, c] = v if v[i] > 0 else -v
    return out, vals


def test_frame_is_rotation(phantom_raw):
    f = fit_bac(phantom_raw)
    assert np.allclose(f.rotation.T @ f.rotation, np.eye(3), atol=1e-9)
    assert np.linalg.det(f.rotation) == pytest.approx(1.0, abs=1e-9)


def test_phantom_frame_convention(small_phantom):
    vol, truth = small_phantom
    bones = localize(vol)
    raw = fetus_matrix(bones, vol.spacing_mm)
    bac = apply_bac(raw, fit_bac(raw))
    name_of = truth.label_of()
    c = {}
    for b, row in zip(sorted(bones, key=lambda b: b.id), bac.values):
        ids = truth.labels[tuple(b.voxels.T)]
        c.setdefault(name_of[int(np.bincount(ids[ids > 0]).argmax())], row[1:4])
    assert c["nasal"][0] > 5  # head at +x
    assert c["humerus_L"][1] > 0 > c["humerus_R"][1]  # left at +y
    assert c["sternebra"][2] < c["thoracic_body"][2]  # dorsal at +z


def test_equivariance_fifty_motions(phantom_raw):
    base = apply_bac(phantom_raw, fit_bac(phantom_raw)).values
    rots = Rotation.random(50, random_state=7).as_matrix()
    ts = np.random.default_rng(7).uniform(-50, 50, size=(50, 3))
    for R, t in zip(rots, ts):
        m = moved(phantom_raw, R, t)
        got = apply_bac(m, fit_bac(m)).values
        assert np.abs(got - base).max() < 1e-6


def test_weight_scaling_invariance(phantom_raw):
    v = phantom_raw.values.copy()
    v[:, 0] *= 2
    a, b = fit_bac(phantom_raw), fit_bac(FeatureMatrix(v, "Raw", phantom_raw.bone_ids))
    assert np.allclose(a.rotation, b.rotation, atol=1e-12) and np.allclose(a.translation_mm, b.translation_mm)


def test_aligned_cloud_fixed_point():
    # heavy head at +x, a spine along x, light ventral limbs at -z
    pts = [(10, 0, 0, 500)] + [(-x, 0, 0.3, 50) for x in range(0, 12)] + \
          [(-6, 2, -1.5, 20), (-6, -2, -1.5, 20), (2, 1.5, -1.2, 20), (2, -1.5, -1.2, 20)]
    v = np.zeros((len(pts), 8))
    for i, (x, y, z, n) in enumerate(pts):
        v[i, :4] = (n, x, y, z)
    m = FeatureMatrix(v)
    f = fit_bac(m)
    assert not f.head_sign_flipped
    assert np.allclose(np.abs(np.diag(f.rotation)), 1.0, atol=0.05)
    assert f.rotation[0, 0] > 0


def test_head_flip_detected():
    pts = [(-10, 0, 0, 500)] + [(x, 0, 0.2, 50) for x in range(0, 12)] + [(5, 1, -1, 5), (5, -1, -1, 5)]
    v = np.zeros((len(pts), 8))
    for i, (x, y, z, n) in enumerate(pts):
        v[i, :4] = (n, x, y, z)
    q = apply_bac(FeatureMatrix(v), fit_bac(FeatureMatrix(v))).values
    assert q[0, 1] > 5


def test_frame_errors():
    v = np.zeros((2, 8))
    v[:, 0] = 1
    with pytest.raises(FrameError):
        fit_bac(FeatureMatrix(v))
    v = np.zeros((5, 8))
    v[:, 0] = 1
    v[:, 1] = np.arange(5)
    with pytest.raises(FrameError):
        fit_bac(FeatureMatrix(v))


def test_apply_bac_column_selectivity(rng):
    m = FeatureMatrix(rng.normal(size=(6, 8)))
    assert np.array_equal(apply_bac(m, BodyFrame.identity()).values, m.values)
    R = Rotation.random(random_state=1).as_matrix()
    out = apply_bac(m, BodyFrame(R, np.array([1.0, 2.0, 3.0])))
    assert np.array_equal(out.values[:, [0, 4, 5, 6, 7]], m.values[:, [0, 4, 5, 6, 7]])
    assert out.stage == "Bac"


def test_frame_serialization():
    f = BodyFrame(Rotation.random(random_state=3).as_matrix(), np.array([1.0, -2.0, 0.5]), True)
    g = BodyFrame.from_list(f.to_list(), f.head_sign_flipped)
    assert np.array_equal(f.rotation, g.rotation) and g.head_sign_flipped


@given(st.integers(2, 50), st.integers(0, 2 ** 31 - 1))
def test_spectral_matches_dense_oracle(n, seed):
    x = np.random.default_rng(seed).normal(size=(n, 8))
    got = spectral_embed(FeatureMatrix(x, "Bac"), SpectralParams()).values
    want, vals = embed_oracle(x, 10, 8)
    gaps = np.diff(vals)
    if n > 2 and gaps[:min(9, n - 1)].min() < 1e-6:
        return  # repeated eigenvalue: eigenvectors not unique
    assert np.abs(got - want).max() < 1e-8
    assert vals.min() > -1e-9 and vals.max() < 2 + 1e-9


def test_laplacian_spectrum_bounds(rng):
    W, _ = knn_affinity(rng.normal(size=(30, 4)), 5)
    vals = np.linalg.eigvalsh(normalized_laplacian(W))
    assert vals.min() == pytest.approx(0.0, abs=1e-9) and vals.max() <= 2 + 1e-9


def test_line_embedding_monotone():
    x = np.zeros((20, 8))
    x[:, 1] = np.arange(20)
    e = spectral_embed(FeatureMatrix(x, "Bac")).values[:, 0]
    d = np.diff(e)
    assert (d > 0).all() or (d < 0).all()


def test_embedding_padding_and_duplicates():
    x = np.random.default_rng(0).normal(size=(5, 8))
    assert not spectral_embed(FeatureMatrix(x, "Bac")).values[:, 4:].any()
    # a duplicated row only differs along the mode antisymmetric in the pair,
    # whose eigenvalue (>= 1) lies beyond the first 8 for a well-connected graph
    x = np.random.default_rng(0).normal(size=(30, 8))
    x[3] = x[1]
    e = spectral_embed(FeatureMatrix(x, "Bac")).values
    assert np.allclose(e[1], e[3], atol=1e-9)
    assert not spectral_embed(FeatureMatrix(np.ones((4, 8)), "Bac")).values.any()
    with pytest.raises(ValueError):
        spectral_embed(FeatureMatrix(np.ones((1, 8)), "Bac"))


def test_fix_signs_ties_to_lower_row():
    v = np.array([[-1.0, 0.5], [1.0, -0.5], [0.0, 0.2]])
    out = fix_signs(v)
    assert out[0, 0] == 1.0 and out[0, 1] == 0.5


def test_norm_stats(rng):
    x = rng.normal(size=(10, 8))
    x[:, 3] = 4.0
    s = NormStats.fit(x)
    z = s.apply(x)
    assert np.allclose(z[:, [0, 1, 2]].mean(axis=0), 0) and np.all(z[:, 3] == 0)


def test_concat_and_design(rng):
    b = FeatureMatrix(rng.normal(size=(5, 8)), "Bac")
    s = FeatureMatrix(rng.normal(size=(5, 8)), "Spectral")
    c = concat_features(b, s)
    assert c.values.shape == (5, 16) and np.array_equal(c.values[:, 0], b.values[:, 0])
    with pytest.raises(ValueError):
        concat_features(b, FeatureMatrix(rng.normal(size=(4, 8)), "Spectral"))
    raw = FeatureMatrix(rng.normal(size=(5, 8)))
    X = design_matrix(raw, b, ("Bac", "Spectral(Bac)"), SpectralParams(), None, None)
    assert np.array_equal(X, concat_features(b, spectral_embed(b)).values)


def test_parse_feature_config():
    assert parse_feature_config("Spectral(Bac), Bac") == ("Bac", "Spectral(Bac)")
    assert parse_feature_config(["Raw", "Spectral(Raw)"]) == ("Raw", "Spectral(Raw)")
    assert parse_feature_config("Raw+Bac") == ("Raw", "Bac")
    for bad in ("", "Foo", ["Raw", "X"]):
        with pytest.raises(ValueError):
            parse_feature_config(bad)
