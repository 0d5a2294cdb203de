"""Periodic adaptation loop: filter, collect, retrain, deploy with a lag.

One replay covers a schedule of slices.  In every slice the label-0 windows
are mixed with that slice's anomalous windows at the configured ratio, scored
with the active weights, and the windows scoring below the active threshold
are collected (from every camera) into the slice's buffer.  At the slice
boundary the buffer is frozen and trained into a new weights version, which
becomes active ``deployment_lag`` slices after the buffer's slice.

``simulated`` execution runs everything in one deterministic loop.
``concurrent`` execution trains in a worker thread while scoring continues;
scorers read the deployed model through :class:`ModelSlot`, an atomically
replaced reference to an immutable snapshot.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from . import scorer
from .domain import (
    CollectionBuffer,
    RunConfig,
    Schedule,
    ScorerWeights,
    ThresholdSet,
    Track,
    WindowRef,
    parse_ratio,
    validate,
)
from .errors import ChecksumMismatch, EmptyAbnormalPool, PoseAdaptError, SingleClass
from .evaluation import EvalReport, calibrate_thresholds, evaluate
from .ingest import split_tracks
from .preprocess import PreparedTrack, prepare_tracks

log = logging.getLogger(__name__)

CHUNK = 2048
# processing choices echoed into every run summary
METHODS = {
    "smoothing": "centered moving average, offsets -3..+4, truncated at track ends",
    "frame_score": "max over every scored window covering the frame (any person)",
    "evaluated_frames": "frames covered by at least one scored window",
    "slice_assignment": "window belongs to the slice holding its last frame",
}
RUN_METRICS_COLUMNS = ("slice_index", "mode", "weights_version", "auc_roc", "auc_pr",
                       "f1_at_thrF1", "hprs_at_thrHPRS", "n_frames", "n_anomalous",
                       "buffer_size", "train_seconds")


# ---------------------------------------------------------------- window tables

@dataclass
class WindowTable:
    """Flat index over every window of a set of prepared tracks."""

    tracks: list[PreparedTrack]
    track: np.ndarray
    offset: np.ndarray
    camera: np.ndarray
    person: np.ndarray
    start: np.ndarray
    end: np.ndarray
    label: np.ndarray

    @classmethod
    def build(cls, prepared: Sequence[PreparedTrack]) -> "WindowTable":
        cols: dict[str, list] = {k: [] for k in ("track", "offset", "camera", "person", "start",
                                                 "end", "label")}
        for i, p in enumerate(prepared):
            n = len(p.offsets)
            cols["track"].append(np.full(n, i))
            cols["offset"].append(p.offsets)
            cols["camera"].append(np.full(n, p.camera_id))
            cols["person"].append(np.full(n, p.person_id))
            cols["start"].append(p.start_frames)
            cols["end"].append(p.end_frames)
            cols["label"].append(p.window_labels)
        arr = {k: (np.concatenate(v) if v else np.empty(0)).astype(np.int64) for k, v in cols.items()}
        return cls(list(prepared), **arr)

    def __len__(self) -> int:
        return len(self.offset)

    def features(self, idx: np.ndarray) -> np.ndarray:
        """(len(idx), D) embeddings, rows in the order of ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) == 0:
            return np.empty((0, 0))
        out = None
        for t in np.unique(self.track[idx]):
            rows = np.flatnonzero(self.track[idx] == t)
            f = self.tracks[t].features(np.searchsorted(self.tracks[t].offsets, self.offset[idx[rows]]))
            if out is None:
                out = np.empty((len(idx), f.shape[1]))
            out[rows] = f
        return out

    def refs(self, idx) -> list[WindowRef]:
        return [WindowRef(int(c), int(p), int(s))
                for c, p, s in zip(self.camera[idx], self.person[idx], self.start[idx])]


class FrameTruth:
    """Frame-level ground truth: label = max over persons, plus the event category."""

    def __init__(self, prepared: Sequence[PreparedTrack]):
        self.labels: dict[int, np.ndarray] = {}
        self.events: dict[int, np.ndarray] = {}
        for p in prepared:
            if len(p.frame_index) == 0:
                continue
            size = int(p.frame_index.max()) + 1
            lab = self.labels.get(p.camera_id)
            if lab is None or len(lab) < size:
                grown = np.zeros(size, dtype=np.int8)
                ev = np.empty(size, dtype=object)
                if lab is not None:
                    grown[:len(lab)] = lab
                    ev[:len(lab)] = self.events[p.camera_id]
                self.labels[p.camera_id], self.events[p.camera_id] = grown, ev
            np.maximum.at(self.labels[p.camera_id], p.frame_index, p.labels)
            evs = self.events[p.camera_id]
            for fi, e in zip(p.frame_index[p.labels == 1], np.asarray(p.events, dtype=object)[p.labels == 1]):
                if evs[fi] is None:
                    evs[fi] = e

    def lookup(self, cams: np.ndarray, frames: np.ndarray) -> tuple[np.ndarray, list]:
        y = np.zeros(len(cams), dtype=np.int64)
        ev: list = [None] * len(cams)
        for c in np.unique(cams):
            m = np.flatnonzero(cams == c)
            y[m] = self.labels[int(c)][frames[m]]
            e = self.events[int(c)][frames[m]]
            for i, v in zip(m, e):
                ev[i] = v
        return y, ev


def frame_level(table: WindowTable, truth: FrameTruth, idx: np.ndarray, scores: np.ndarray,
                window_size: int):
    """Frame keys, max window score per frame, frame labels and events."""
    cams, frames, fs = scorer.frame_scores_arrays(table.camera[idx], table.start[idx], scores,
                                                  window_size)
    y, ev = truth.lookup(cams, frames)
    return cams, frames, fs, y, ev


# ---------------------------------------------------------------- offline stage

@dataclass(frozen=True)
class OfflineModel:
    weights: ScorerWeights
    thresholds: ThresholdSet
    n_train_windows: int
    n_validation_frames: int


def _fit(config: RunConfig, x: np.ndarray, version: int, buffer_index: int | None) -> ScorerWeights:
    return scorer.fit(config.scorer_kind, x, pca_k=config.pca_k,
                      ridge_epsilon=config.ridge_epsilon, version=version,
                      trained_on_buffer=buffer_index)


def train_offline(train_tracks: Sequence[Track], config: RunConfig) -> OfflineModel:
    """Fit v0 on the normal windows of the training split, calibrate on the validation split."""
    train, val = split_tracks(train_tracks, config.validation_fraction, config.rng_seed)
    tab = WindowTable.build(prepare_tracks(train, config))
    normal = np.flatnonzero(tab.label == 0)
    weights = _fit(config, tab.features(normal), 0, None)
    del tab

    vprep = prepare_tracks(val, config)
    vtab = WindowTable.build(vprep)
    idx = np.arange(len(vtab))
    s = np.concatenate([scorer.score_matrix(weights, vtab.features(idx[i:i + CHUNK]))
                        for i in range(0, len(idx), CHUNK)]) if len(idx) else np.empty(0)
    _, _, fs, y, _ = frame_level(vtab, FrameTruth(vprep), idx, s, config.window_size)
    thresholds = calibrate_thresholds(fs, y)
    log.info("offline model: %d training windows, thr_F1=%.6g thr_HPRS=%.6g", len(normal),
             thresholds.thr_f1, thresholds.thr_hprs)
    return OfflineModel(weights, thresholds, len(normal), len(y))


# ---------------------------------------------------------------- mixing

def mix_indices(n_normal: int, n_pool: int, ratio=(9, 1), seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Interleaving plan: (is_abnormal, index into normal or pool) per output position.

    Normal items keep their order.  Each block of ``a`` normal items receives
    ``b`` pool items at seeded positions; a trailing partial block of ``m``
    items receives ``round(m * b / a)``.  Pool items are drawn without
    replacement and the pool is reshuffled when exhausted.
    """
    a, b = parse_ratio(ratio)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sizes = [a] * (n_normal // a)
    if n_normal % a:
        sizes.append(n_normal % a)
    need = [b if m == a else int(math.floor(m * b / a + 0.5)) for m in sizes]
    total = sum(need)
    if total and n_pool == 0:
        raise EmptyAbnormalPool(f"{total} abnormal windows needed but the pool is empty")
    draws = []
    while sum(len(d) for d in draws) < total:
        draws.append(rng.permutation(n_pool))
    pool_order = np.concatenate(draws)[:total] if draws else np.empty(0, dtype=np.int64)
    flags, index = [], []
    ni = pi = 0
    for m, q in zip(sizes, need):
        slots = np.zeros(m + q, dtype=bool)
        slots[rng.choice(m + q, size=q, replace=False)] = True
        for is_ab in slots:
            flags.append(bool(is_ab))
            if is_ab:
                index.append(int(pool_order[pi]))
                pi += 1
            else:
                index.append(ni)
                ni += 1
    return np.array(flags, dtype=bool), np.array(index, dtype=np.int64)


def mix_batch(normal: Sequence, pool: Sequence, ratio=(9, 1), seed=0) -> list:
    """Mixed sequence of normal items and pool items (see :func:`mix_indices`)."""
    flags, index = mix_indices(len(normal), len(pool), ratio, seed)
    return [pool[i] if f else normal[i] for f, i in zip(flags, index)]


def _slice_rng(seed: int, slice_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(slice_index,)))


# ---------------------------------------------------------------- deployment

class Snapshot(NamedTuple):
    weights: ScorerWeights
    thresholds: ThresholdSet


class ModelSlot:
    """Single atomically replaced reference to an immutable (weights, thresholds) pair."""

    def __init__(self, snapshot: Snapshot):
        self._snap = snapshot
        self._lock = threading.Lock()

    def get(self) -> Snapshot:
        return self._snap  # one reference read: never a torn snapshot

    def publish(self, snapshot: Snapshot) -> None:
        snapshot.weights.verify()
        with self._lock:
            self._snap = snapshot


@dataclass
class DeploymentState:
    active_weights: ScorerWeights
    thresholds: ThresholdSet
    deployment_lag: int = 2
    pending: list[tuple[int, ScorerWeights]] = field(default_factory=list)
    history: list[tuple[int, int]] = field(default_factory=list)
    threshold_history: list[tuple[int, ThresholdSet]] = field(default_factory=list)

    def activate_due(self, slice_index: int) -> ScorerWeights | None:
        """Swap in the newest pending weights that are due; returns them (or None)."""
        due = [w for ready, w in self.pending if ready <= slice_index]
        if not due:
            return None
        self.pending = [(r, w) for r, w in self.pending if r > slice_index]
        self.active_weights = due[-1]
        return due[-1]

    def record(self, slice_index: int) -> None:
        self.history.append((slice_index, self.active_weights.version))
        self.threshold_history.append((slice_index, self.thresholds))


def deploy(state: DeploymentState, weights: ScorerWeights, current_index: int) -> DeploymentState:
    """Queue ``weights`` (trained from buffer k) to become active at slice k + lag."""
    if not weights.is_valid():
        log.error("rejecting weights v%d: checksum mismatch", weights.version)
        raise ChecksumMismatch(f"weights v{weights.version} fail checksum verification")
    k = weights.trained_on_buffer if weights.trained_on_buffer is not None else current_index
    ready = k + state.deployment_lag
    state.pending.append((ready, weights))
    state.pending.sort(key=lambda e: (e[0], e[1].version))
    return state


# ---------------------------------------------------------------- filter / collect / train

def filter_threshold(thresholds: ThresholdSet, config: RunConfig) -> float:
    return thresholds.for_choice(config.threshold_choice)


def filter_step(features: np.ndarray, ref: WindowRef, state: DeploymentState, config: RunConfig,
                buffer: CollectionBuffer, label: int = 0) -> tuple[str, float]:
    """Score one window; below the threshold it joins the buffer ("buffered")."""
    s = scorer.score(state.active_weights, features)
    tau = filter_threshold(state.thresholds, config)
    if s < tau:
        buffer.add(ref, np.asarray(features), s, tau, label)
        return "buffered", s
    return "forward", s


@dataclass(frozen=True)
class TrainingJob:
    buffer_index: int
    features: np.ndarray
    n_windows: int
    per_camera_counts: dict
    kind: str
    pca_k: int
    ridge_epsilon: float


class Collector:
    """Owns the open buffer; swaps it for a fresh one at every boundary."""

    def __init__(self, schedule: Schedule):
        self.schedule = schedule
        self.current = CollectionBuffer(0)
        self.frozen: list[CollectionBuffer] = []


def collect_and_trigger(collector: Collector, frame_index: int, config: RunConfig) -> TrainingJob | None:
    """At a schedule boundary freeze the open buffer and emit its training job.

    Returns None between boundaries and when the frozen buffer is smaller than
    ``config.min_buffer_size`` (the skip is logged).
    """
    idx = collector.current.schedule_index
    bounds = collector.schedule.boundaries
    if idx >= len(bounds) or frame_index < bounds[idx]:
        return None
    buf = collector.current
    collector.frozen.append(buf)
    collector.current = CollectionBuffer(idx + 1)
    if len(buf) < config.min_buffer_size:
        log.info("buffer %d holds %d window(s) < %d: update skipped", idx, len(buf),
                 config.min_buffer_size)
        return None
    return TrainingJob(idx, buf.feature_matrix(), len(buf), dict(buf.per_camera_counts),
                       config.scorer_kind, config.pca_k, config.ridge_epsilon)


class TrainResult(NamedTuple):
    buffer_index: int
    weights: ScorerWeights | None
    seconds: float
    error: str | None


def train_job(job: TrainingJob) -> TrainResult:
    t0 = time.perf_counter()
    try:
        w = scorer.fit(job.kind, job.features, pca_k=job.pca_k, ridge_epsilon=job.ridge_epsilon,
                       version=job.buffer_index + 1, trained_on_buffer=job.buffer_index)
        err = None
    except PoseAdaptError as exc:
        log.warning("training job for buffer %d failed: %s", job.buffer_index, exc)
        w, err = None, f"{type(exc).__name__}: {exc}"
    return TrainResult(job.buffer_index, w, time.perf_counter() - t0, err)


def recalibrate_thresholds(state: DeploymentState, scores, labels) -> ThresholdSet:
    """Calibrate on a slice's (score, label) log; keeps the old set on SingleClass."""
    try:
        return calibrate_thresholds(scores, labels)
    except SingleClass as exc:
        log.info("threshold recalibration skipped: %s", exc)
        return state.thresholds


# ---------------------------------------------------------------- replay

@dataclass
class SliceLog:
    slice_index: int
    window_idx: np.ndarray
    inserted: np.ndarray
    scores: np.ndarray
    versions: np.ndarray
    checksums: list
    buffered: np.ndarray


@dataclass
class RunResult:
    mode: str
    config: RunConfig
    schedule: Schedule
    rows: list[dict]
    reports: list[EvalReport]
    history: list[dict]
    buffers: list[dict]
    slice_logs: list[SliceLog]
    table: WindowTable
    weights: dict[int, ScorerWeights]
    timings: list[dict]
    n_frames_total: int = 0
    n_frames_covered: int = 0

    @property
    def abnormal_fraction(self) -> float:
        n = sum(len(s.window_idx) for s in self.slice_logs)
        ab = sum(int((self.table.label[s.window_idx] == 1).sum()) for s in self.slice_logs)
        return ab / n if n else 0.0

    @property
    def n_scored(self) -> int:
        return sum(len(s.window_idx) for s in self.slice_logs)

    def summary(self) -> dict:
        def mean(key):
            vals = [r[key] for r in self.rows if r[key] is not None]
            return float(np.mean(vals)) if vals else None

        return {
            "mode": self.mode,
            "num_slices": len(self.rows),
            "schedule": self.schedule.to_dict(),
            "mean_auc_roc": mean("auc_roc"),
            "mean_auc_pr": mean("auc_pr"),
            "mean_f1_at_thrF1": mean("f1_at_thrF1"),
            "mean_hprs_at_thrHPRS": mean("hprs_at_thrHPRS"),
            "versions": sorted({h["weights_version"] for h in self.history}),
            "scored_windows": self.n_scored,
            "abnormal_fraction": self.abnormal_fraction,
            "buffers_trained": sum(1 for b in self.buffers if b["status"] == "trained"),
            "buffers_skipped": sum(1 for b in self.buffers if b["status"] == "skipped"),
            "mean_contamination": (float(np.mean([b["contamination_rate"] for b in self.buffers]))
                                   if self.buffers else 0.0),
            "frames_total": self.n_frames_total,
            "frames_uncovered": self.n_frames_total - self.n_frames_covered,
            "methods": METHODS,
        }


class Replay:
    """Shared machinery of offline and periodic runs."""

    def __init__(self, tracks: Sequence[Track], offline: OfflineModel, config: RunConfig,
                 mode: str):
        if mode not in ("offline", "periodic"):
            raise ValueError(f"mode must be 'offline' or 'periodic', got {mode!r}")
        validate(config)
        self.config, self.mode, self.offline = config, mode, offline
        prepared = prepare_tracks(tracks, config)
        self.table = WindowTable.build(prepared)
        self.truth = FrameTruth(prepared)
        length = max((int(t.frame_index.max()) + 1 for t in tracks if len(t)), default=0)
        self.schedule = Schedule.build(config.schedule_mode, config.frames_per_day, length)
        if self.schedule.num_updates == 0:
            raise PoseAdaptError(f"stream of {length} frames holds no whole day of "
                                 f"{config.frames_per_day} frames")
        self.slice_of = np.asarray(self.schedule.slice_of(self.table.end))
        self.n_frames_total = sum(len(np.unique(f)) for f in self._frames_by_camera(prepared).values())

    @staticmethod
    def _frames_by_camera(prepared) -> dict[int, np.ndarray]:
        out: dict[int, list] = {}
        for p in prepared:
            out.setdefault(p.camera_id, []).append(p.frame_index)
        return {c: np.concatenate(v) for c, v in out.items()}

    def slice_windows(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Mixed window indices for slice k plus the inserted-abnormal flags."""
        members = np.flatnonzero(self.slice_of == k)
        normal = members[self.table.label[members] == 0]
        pool = members[self.table.label[members] == 1]
        try:
            flags, index = mix_indices(len(normal), len(pool), self.config.mix_ratio,
                                       _slice_rng(self.config.rng_seed, k))
        except EmptyAbnormalPool as exc:
            raise EmptyAbnormalPool(f"slice {k}: {exc}") from None
        idx = np.empty(len(flags), dtype=np.int64)
        idx[flags] = pool[index[flags]]
        idx[~flags] = normal[index[~flags]]
        return idx, flags

    def evaluate_slice(self, idx: np.ndarray, scores: np.ndarray, thresholds: ThresholdSet,
                       k: int) -> EvalReport:
        cams, frames, fs, y, ev = frame_level(self.table, self.truth, idx, scores,
                                              self.config.window_size)
        keys = list(zip(cams.tolist(), frames.tolist()))
        smap = dict(zip(keys, fs.tolist()))
        lmap = dict(zip(keys, y.tolist()))
        emap = {k_: e for k_, e in zip(keys, ev) if e}
        return evaluate(smap, lmap, thresholds, events=emap)

    def frame_arrays(self, idx, scores):
        _, _, fs, y, _ = frame_level(self.table, self.truth, idx, scores, self.config.window_size)
        return fs, y


def _metrics_row(k: int, mode: str, version: int, report: EvalReport, buffer_size: int,
                 train_seconds: float | None) -> dict:
    m = report.overall
    return {"slice_index": k, "mode": mode, "weights_version": version, "auc_roc": m.auc_roc,
            "auc_pr": m.auc_pr, "f1_at_thrF1": m.f1_at_thr_f1, "hprs_at_thrHPRS": m.hprs_at_thr_hprs,
            "n_frames": m.n_frames, "n_anomalous": m.n_anomalous, "buffer_size": buffer_size,
            "train_seconds": train_seconds}


def replay(tracks: Sequence[Track], offline: OfflineModel, config: RunConfig, mode: str,
           out_dir: str | None = None, on_chunk: Callable | None = None) -> RunResult:
    """Run the stream through the pipeline (``mode`` offline keeps v0 throughout)."""
    rp = Replay(tracks, offline, config, mode)
    periodic = mode == "periodic"
    concurrent = periodic and config.execution == "concurrent"
    state = DeploymentState(offline.weights, offline.thresholds, config.deployment_lag)
    slot = ModelSlot(Snapshot(state.active_weights, state.thresholds))
    collector = Collector(rp.schedule)
    executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="trainer") if concurrent else None
    futures: dict[int, Future] = {}
    results: dict[int, TrainResult] = {}
    weights_seen = {0: offline.weights}
    rows, reports, history, buffers, logs, timings = [], [], [], [], [], []
    prev_log: SliceLog | None = None

    def finish_job(res: TrainResult):
        results[res.buffer_index] = res
        timings.append({"buffer_index": res.buffer_index, "train_seconds": res.seconds,
                        "status": "trained" if res.weights is not None else "failed"})
        if res.weights is not None:
            try:
                deploy(state, res.weights, res.buffer_index)
                weights_seen[res.weights.version] = res.weights
            except ChecksumMismatch:
                pass

    try:
        for k in range(rp.schedule.num_updates):
            try:
                if periodic:
                    # jobs due now must be finished before the slice starts
                    for b, fut in sorted(futures.items()):
                        if b + config.deployment_lag <= k:
                            finish_job(fut.result())
                            del futures[b]
                    new = state.activate_due(k)
                    if new is not None and config.adaptive_thresholds and prev_log is not None:
                        rescored = np.concatenate([
                            scorer.score_matrix(new, rp.table.features(prev_log.window_idx[i:i + CHUNK]))
                            for i in range(0, len(prev_log.window_idx), CHUNK)])
                        fs, y = rp.frame_arrays(prev_log.window_idx, rescored)
                        state.thresholds = recalibrate_thresholds(state, fs, y)
                    slot.publish(Snapshot(state.active_weights, state.thresholds))
                state.record(k)
                snap = slot.get()
                tau = filter_threshold(snap.thresholds, config)

                idx, inserted = rp.slice_windows(k)
                scores = np.empty(len(idx))
                versions = np.empty(len(idx), dtype=np.int64)
                checksums = []
                buffered = np.zeros(len(idx), dtype=bool)
                buf = collector.current
                for i in range(0, len(idx), CHUNK):
                    s_snap = slot.get()
                    part = idx[i:i + CHUNK]
                    x = rp.table.features(part)
                    sc = scorer.score_matrix(s_snap.weights, x)
                    scores[i:i + CHUNK] = sc
                    versions[i:i + CHUNK] = s_snap.weights.version
                    checksums.append((i, s_snap.weights.version, s_snap.weights.checksum))
                    if on_chunk is not None:
                        on_chunk(k, i, s_snap)
                    low = sc < tau
                    buffered[i:i + CHUNK] = low
                    if periodic and low.any():
                        sel = part[low]
                        buf.extend(rp.table.refs(sel), x[low], sc[low], tau, rp.table.label[sel])
                report = rp.evaluate_slice(idx, scores, snap.thresholds, k)
                reports.append(report)
                lg = SliceLog(k, idx, inserted, scores, versions, checksums, buffered)
                logs.append(lg)
                prev_log = lg
                history.append({
                    "slice_index": k, "weights_version": snap.weights.version,
                    "trained_on_buffer": snap.weights.trained_on_buffer,
                    "checksum": snap.weights.checksum,
                    "thr_F1": snap.thresholds.thr_f1, "thr_HPRS": snap.thresholds.thr_hprs,
                    "filter_threshold": tau})

                buffer_size = len(buf) if periodic else int(buffered.sum())
                train_seconds = None
                if periodic:
                    job = collect_and_trigger(collector, rp.schedule.boundaries[k], config)
                    frozen = collector.frozen[-1]
                    meta = {"schedule_index": k, "size": len(frozen),
                            "per_camera_counts": {str(c): n for c, n in sorted(frozen.per_camera_counts.items())},
                            "contamination_rate": frozen.contamination_rate,
                            "status": "skipped" if job is None else "trained",
                            "version": None if job is None else k + 1,
                            "ready_at": None if job is None else k + config.deployment_lag}
                    frozen.features = []  # release memory; metadata stays
                    if job is not None:
                        if concurrent:
                            futures[k] = executor.submit(train_job, job)
                        else:
                            finish_job(train_job(job))
                            if results[k].weights is None:
                                meta.update(status="failed", version=None, ready_at=None)
                    buffers.append(meta)
                rows.append(_metrics_row(k, mode, snap.weights.version, report, buffer_size,
                                         train_seconds))
            except PoseAdaptError as exc:
                exc.args = (f"slice {k}: {exc}",)
                raise
        for b, fut in sorted(futures.items()):
            finish_job(fut.result())
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    if concurrent:
        # wall-clock training time of the job launched at each boundary
        secs = {t["buffer_index"]: t["train_seconds"] for t in timings}
        for r in rows:
            r["train_seconds"] = secs.get(r["slice_index"])
        for b in buffers:
            if b["version"] is not None and results.get(b["schedule_index"]) is not None \
                    and results[b["schedule_index"]].weights is None:
                b.update(status="failed", version=None, ready_at=None)

    covered = _covered_frames(rp.table, [lg.window_idx for lg in logs], config.window_size)
    res = RunResult(mode, config, rp.schedule, rows, reports, history, buffers, logs, rp.table,
                    weights_seen, timings, rp.n_frames_total, covered)
    if out_dir is not None:
        write_artifacts(res, out_dir)
    return res


def _covered_frames(table: WindowTable, chunks, window_size: int) -> int:
    idx = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    if len(idx) == 0:
        return 0
    span = int(table.end.max()) + 1
    keys = (table.camera[idx] * span + table.start[idx])[:, None] + np.arange(window_size)
    return len(np.unique(keys))


def run_periodic(tracks, offline: OfflineModel, config: RunConfig, out_dir=None, **kw) -> RunResult:
    return replay(tracks, offline, config, "periodic", out_dir, **kw)


def run_offline(tracks, offline: OfflineModel, config: RunConfig, out_dir=None, **kw) -> RunResult:
    return replay(tracks, offline, config, "offline", out_dir, **kw)


# ---------------------------------------------------------------- artifacts

def _cell(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_METRICS_COLUMNS)
    for r in rows:
        w.writerow([_cell(r[c]) for c in RUN_METRICS_COLUMNS])
    return buf.getvalue()


def read_metrics_csv(path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            row: dict[str, Any] = {}
            for c in RUN_METRICS_COLUMNS:
                v = r.get(c)
                if c == "mode":
                    row[c] = v
                elif v in (None, "", "NA"):
                    row[c] = None
                elif c in ("slice_index", "weights_version", "n_frames", "n_anomalous", "buffer_size"):
                    row[c] = int(v)
                else:
                    row[c] = float(v)
            out.append(row)
    return out


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def write_artifacts(res: RunResult, out_dir) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    wdir = os.path.join(out_dir, "weights")
    os.makedirs(wdir, exist_ok=True)
    files = {
        "run_metrics.csv": metrics_csv(res.rows),
        "weights_history.jsonl": _jsonl(res.history),
        "buffers.jsonl": _jsonl(res.buffers),
        "slice_reports.jsonl": _jsonl({"slice_index": i, **r.to_dict()} for i, r in enumerate(res.reports)),
        "summary.json": json.dumps(res.summary(), indent=2, sort_keys=True) + "\n",
        "run_config.json": json.dumps(res.config.to_dict(), indent=2, sort_keys=True) + "\n",
    }
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(text)
    with open(os.path.join(out_dir, "score_log.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("slice_index", "camera_id", "person_id", "start_frame", "label", "inserted",
                    "score", "weights_version", "buffered"))
        t = res.table
        for lg in res.slice_logs:
            for j, wi in enumerate(lg.window_idx.tolist()):
                w.writerow((lg.slice_index, t.camera[wi], t.person[wi], t.start[wi], t.label[wi],
                            int(lg.inserted[j]), repr(float(lg.scores[j])), lg.versions[j],
                            int(lg.buffered[j])))
    for v, wts in sorted(res.weights.items()):
        with open(os.path.join(wdir, f"v{v}.json"), "w", encoding="utf-8") as fh:
            json.dump(wts.to_dict(), fh)
    # wall-clock measurements live apart from the deterministic outputs
    with open(os.path.join(out_dir, "timings.csv"), "w", encoding="utf-8") as fh:
        fh.write("buffer_index,train_seconds,status\n")
        for t_ in res.timings:
            fh.write(f"{t_['buffer_index']},{t_['train_seconds']!r},{t_['status']}\n")
    return {name: os.path.join(out_dir, name) for name in files}
