import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poseadapt.domain import WindowRef
from poseadapt.errors import ChecksumMismatch, DimensionMismatch, TooFewSamples
from poseadapt.scorer import (
    fit,
    fit_gaussian,
    fit_pca,
    frame_scores,
    frame_scores_arrays,
    project,
    score,
    score_matrix,
)

EPS = 1e-6


def test_gaussian_hand_example():
    w = fit_gaussian([(0.0, 0.0), (2.0, 2.0)])
    assert np.array_equal(w.params["mean"], [1.0, 1.0])
    assert np.allclose(w.params["var"], [1 + EPS, 1 + EPS], rtol=0, atol=1e-15)
    assert score(w, (1.0, 1.0)) == 0.0
    assert score(w, (3.0, 1.0)) == pytest.approx(4.0, rel=1e-5)


def test_gaussian_copies_and_errors():
    w = fit_gaussian([(1.0, 2.0, 3.0)] * 5)
    assert np.allclose(w.params["var"], EPS, rtol=0, atol=1e-18)
    with pytest.raises(DimensionMismatch):
        fit_gaussian([(0.0,) * 4, (0.0,) * 5])
    with pytest.raises(TooFewSamples):
        fit_gaussian([(0.0, 1.0)])
    with pytest.raises(DimensionMismatch):
        score(w, (1.0, 2.0))


def test_pca_hand_example():
    w = fit_pca([(-1.0, -1.0), (1.0, 1.0)], k=1)
    assert np.allclose(w.params["components"][0], [2 ** -0.5, 2 ** -0.5], atol=1e-12)
    assert score(w, (1.0, -1.0)) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(TooFewSamples):
        fit_pca([(-1.0, -1.0), (1.0, 1.0)], k=2)


def test_pca_full_rank_and_line(rng):
    x = rng.standard_normal((20, 5))
    w = fit_pca(x, k=5)
    assert np.all(score_matrix(w, x) < 1e-20 + 1e-9)
    line = np.outer(rng.standard_normal(30), [1.0, -2.0, 0.5]) + [3.0, 1.0, 0.0]
    assert np.all(score_matrix(fit_pca(line, 1), line) < 1e-9)


def test_pca_rank_deficient_flagged(rng):
    line = np.outer(rng.standard_normal(30), [1.0, 2.0, 3.0, 4.0])
    w = fit_pca(line, k=3)
    assert w.metadata["rank_deficient"] is True
    c = w.params["components"]
    assert np.allclose(c @ c.T, np.eye(3), atol=1e-9)


def test_pca_sign_convention(rng):
    w = fit_pca(rng.standard_normal((50, 6)), k=4)
    for v in w.params["components"]:
        assert v[np.flatnonzero(np.abs(v) > 1e-12)[0]] > 0


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_projector_idempotent(seed, k):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((15, 6)) * rng.uniform(0.1, 5, 6)
    w = fit_pca(x, k)
    p1 = project(w, x)
    assert np.allclose(project(w, p1), p1, atol=1e-9)
    assert np.all(score_matrix(w, x) >= 0)


def test_training_mean_score_close_to_dimension(rng):
    d = 40
    x = rng.standard_normal((20_000, d)) * rng.uniform(0.5, 3.0, d)
    w = fit_gaussian(x)
    var = w.params["var"] - EPS
    expected = float(np.sum(var / (var + EPS)))
    assert np.mean(score_matrix(w, x)) == pytest.approx(expected, rel=1e-3)
    assert expected == pytest.approx(d, rel=1e-3)


def test_determinism(rng):
    x = rng.standard_normal((100, 10))
    for kind in ("gaussian", "pca"):
        a, b = fit(kind, x, pca_k=3), fit(kind, x, pca_k=3)
        assert a == b and a.checksum == b.checksum
        assert np.array_equal(score_matrix(a, x), score_matrix(b, x))


def test_tampered_weights_refuse_to_score():
    w = fit_gaussian([(0.0, 0.0), (2.0, 2.0)])
    params = {k: np.array(v) for k, v in w.params.items()}
    params["mean"][0] = 1.5
    bad = type(w)(w.version, w.kind, params, w.checksum)
    with pytest.raises(ChecksumMismatch):
        score(bad, (0.0, 0.0))


def test_frame_scores_max_rule():
    items = [(WindowRef(1, 0, 0), 0.3), (WindowRef(1, 0, 2), 0.7), (WindowRef(1, 1, 3), 0.2),
             (WindowRef(1, 2, 3), 0.9)]
    out = frame_scores(items, window_size=4)
    assert out[(1, 0)] == 0.3
    assert out[(1, 2)] == 0.7
    assert out[(1, 3)] == 0.9
    assert (1, 7) not in out and out[(1, 6)] == 0.9


@given(st.lists(st.tuples(st.integers(1, 3), st.integers(0, 40), st.floats(0, 100)), min_size=1, max_size=40))
def test_vectorized_frame_scores_match_enumeration(items):
    w = 5
    ref = frame_scores([(WindowRef(c, 0, s), v) for c, s, v in items], window_size=w)
    cams, frames, sc = frame_scores_arrays(*zip(*items), window_size=w)
    assert dict(zip(zip(cams.tolist(), frames.tolist()), sc.tolist())) == ref
