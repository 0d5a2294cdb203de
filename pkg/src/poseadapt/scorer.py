"""Closed-form unsupervised scorers over window embeddings.

Higher score means more anomalous.  Both scorers fit in one pass over the
training matrix, so retraining cost is predictable and results are bit
reproducible.
"""

from __future__ import annotations

import logging
from typing import Iterable, Sequence

import numpy as np

from .domain import FeatureVector, PoseWindow, ScorerWeights, WindowRef
from .errors import DimensionMismatch, TooFewSamples

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-12


def as_matrix(features) -> np.ndarray:
    """Stack FeatureVectors / rows into an (n, D) float64 matrix."""
    if isinstance(features, np.ndarray):
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2:
            raise DimensionMismatch(f"feature matrix must be 2-D, got shape {x.shape}")
        return x
    rows = [f.values if isinstance(f, FeatureVector) else np.asarray(f, dtype=np.float64)
            for f in features]
    if not rows:
        return np.empty((0, 0))
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise DimensionMismatch(f"feature vectors have mixed dimensions {sorted(dims)}")
    return np.vstack(rows)


def fit_gaussian(features, ridge_epsilon: float = 1e-6, version: int = 0,
                 trained_on_buffer: int | None = None) -> ScorerWeights:
    x = as_matrix(features)
    if x.shape[0] < 2:
        raise TooFewSamples(f"gaussian fit needs >= 2 samples, got {x.shape[0]}")
    mean = x.mean(axis=0)
    var = ((x - mean) ** 2).mean(axis=0) + ridge_epsilon
    return ScorerWeights.create(version, "gaussian", {"mean": mean, "var": var}, trained_on_buffer,
                                {"ridge_epsilon": ridge_epsilon, "n_samples": int(x.shape[0])})


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # rows: make the first entry with |v| > EIG_FLOOR positive
    out = vecs.copy()
    for i, v in enumerate(out):
        nz = np.flatnonzero(np.abs(v) > EIG_FLOOR)
        if len(nz) and v[nz[0]] < 0:
            out[i] = -v
    return out


def fit_pca(features, k: int, ridge_epsilon: float = 1e-6, version: int = 0,
            trained_on_buffer: int | None = None) -> ScorerWeights:
    """Mean plus the top-k eigenvectors of the population covariance.

    When fewer than k eigenvalues exceed 1e-12 the remaining components are
    taken from the rest of the eigenbasis (still orthonormal) and the weights
    are flagged ``rank_deficient`` in their metadata.
    """
    x = as_matrix(features)
    n, d = x.shape
    if k < 1 or k > d:
        raise DimensionMismatch(f"need 1 <= k <= D, got k={k}, D={d}")
    if n < k + 1:
        raise TooFewSamples(f"pca fit with k={k} needs >= {k + 1} samples, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / n
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")[:k]
    comps = _fix_signs(evecs[:, order].T)
    n_strong = int((evals > EIG_FLOOR).sum())
    rank_deficient = n_strong < k
    if rank_deficient:
        log.warning("pca fit: only %d eigenvalues above %g for k=%d", n_strong, EIG_FLOOR, k)
    return ScorerWeights.create(
        version, "pca", {"mean": mean, "components": comps}, trained_on_buffer,
        {"ridge_epsilon": ridge_epsilon, "n_samples": n, "rank_deficient": rank_deficient,
         "explained_variance": [float(v) for v in evals[order]]})


def fit(kind: str, features, *, pca_k: int = 8, ridge_epsilon: float = 1e-6, version: int = 0,
        trained_on_buffer: int | None = None) -> ScorerWeights:
    if kind == "gaussian":
        return fit_gaussian(features, ridge_epsilon, version, trained_on_buffer)
    if kind == "pca":
        return fit_pca(features, pca_k, ridge_epsilon, version, trained_on_buffer)
    raise ValueError(f"unknown scorer kind {kind!r}")


def score_matrix(weights: ScorerWeights, x: np.ndarray, verify: bool = True) -> np.ndarray:
    """Scores for every row of ``x``."""
    if verify:
        weights.verify()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != weights.dim:
        raise DimensionMismatch(f"feature dimension {x.shape[1]} != weights dimension {weights.dim}")
    diff = x - weights.params["mean"]
    if weights.kind == "gaussian":
        return np.einsum("ij,ij->i", diff, diff / weights.params["var"])
    comps = weights.params["components"]
    resid = diff - (diff @ comps.T) @ comps
    return np.einsum("ij,ij->i", resid, resid)


def score(weights: ScorerWeights, feature) -> float:
    values = feature.values if isinstance(feature, FeatureVector) else feature
    return float(score_matrix(weights, np.asarray(values)[None, :])[0])


def project(weights: ScorerWeights, x: np.ndarray) -> np.ndarray:
    """Projection of centered rows onto the pca subspace (re-centered)."""
    comps = weights.params["components"]
    mean = weights.params["mean"]
    return mean + ((np.atleast_2d(x) - mean) @ comps.T) @ comps


def frame_scores(window_scores: Iterable[tuple], window_size: int | None = None) -> dict[tuple[int, int], float]:
    """Max score over every window (any person) covering each (camera_id, frame_index).

    Items are ``(window, score)`` where ``window`` is a :class:`PoseWindow` or a
    :class:`WindowRef` (the latter needs ``window_size``).
    """
    out: dict[tuple[int, int], float] = {}
    for window, s in window_scores:
        if isinstance(window, PoseWindow):
            cam = window.camera_id
            frames = [f.frame_index for f in window.frames]
        else:
            ref = WindowRef(*window)
            if window_size is None:
                raise ValueError("window_size is required for WindowRef items")
            cam = ref.camera_id
            frames = range(ref.start_frame, ref.start_frame + window_size)
        s = float(s)
        for fi in frames:
            key = (cam, fi)
            prev = out.get(key)
            if prev is None or s > prev:
                out[key] = s
    return out


def frame_scores_arrays(cameras: Sequence[int], starts: Sequence[int], scores: Sequence[float],
                        window_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`frame_scores`: returns (camera_ids, frame_indices, max_scores) sorted by key."""
    cams = np.asarray(cameras, dtype=np.int64)
    starts = np.asarray(starts, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) == 0:
        e = np.empty(0, dtype=np.int64)
        return e, e.copy(), np.empty(0)
    frames = (starts[:, None] + np.arange(window_size)).ravel()
    cam_rep = np.repeat(cams, window_size)
    sc_rep = np.repeat(scores, window_size)
    order = np.lexsort((-sc_rep, frames, cam_rep))
    cam_s, fr_s, sc_s = cam_rep[order], frames[order], sc_rep[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = (cam_s[1:] != cam_s[:-1]) | (fr_s[1:] != fr_s[:-1])
    return cam_s[first], fr_s[first], sc_s[first]
