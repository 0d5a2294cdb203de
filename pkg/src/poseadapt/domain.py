"""Shared value types for pose streams, scorer snapshots and pipeline state.

Everything here is immutable once constructed except :class:`CollectionBuffer`,
which is an append-only accumulator owned by a single pipeline loop.  Every
type offers ``to_dict``/``from_dict`` so that values can be written to JSON and
read back unchanged.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    BadROI,
    ChecksumMismatch,
    ConfigError,
    InvalidKeypointCount,
    LabelOutOfRange,
    NonMonotoneFrames,
    ValidationError,
)

COCO17 = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
NUM_KEYPOINTS = len(COCO17)
KP = {name: i for i, name in enumerate(COCO17)}

EVENT_CATEGORIES = ("pants", "hoodie", "bag_standing", "bag_floor", "jacket")


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    confidence: float
    present: bool = True

    @classmethod
    def missing(cls) -> "Keypoint":
        # canonical form so that equality and round trips stay exact
        return cls(0.0, 0.0, 0.0, False)

    def to_list(self) -> list | None:
        return [self.x, self.y, self.confidence] if self.present else None

    @classmethod
    def from_list(cls, triple) -> "Keypoint":
        if triple is None or all(v is None for v in triple):
            return cls.missing()
        x, y, c = triple
        return cls(float(x), float(y), float(c), True)


@dataclass(frozen=True)
class PoseFrame:
    camera_id: int
    frame_index: int
    person_id: int
    keypoints: tuple[Keypoint, ...]
    label: int = 0
    event_category: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "keypoints", tuple(self.keypoints))

    def to_dict(self) -> dict:
        d = {
            "camera_id": self.camera_id,
            "frame_index": self.frame_index,
            "person_id": self.person_id,
            "keypoints": [kp.to_list() for kp in self.keypoints],
            "label": self.label,
        }
        if self.event_category:
            d["event"] = self.event_category
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PoseFrame":
        return cls(
            camera_id=d["camera_id"],
            frame_index=d["frame_index"],
            person_id=d["person_id"],
            keypoints=tuple(Keypoint.from_list(t) for t in d["keypoints"]),
            label=d.get("label", 0),
            event_category=d.get("event") or None,
        )


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Track:
    """One person's pose sequence on one camera, stored column-wise.

    ``xy`` has shape (T, 17, 2), ``confidence`` and ``present`` (T, 17).
    Coordinates of absent keypoints carry no meaning.
    """

    camera_id: int
    person_id: int
    frame_index: np.ndarray
    xy: np.ndarray
    confidence: np.ndarray
    present: np.ndarray
    labels: np.ndarray
    events: tuple = ()

    def __post_init__(self):
        n = len(self.frame_index)
        object.__setattr__(self, "frame_index", _readonly(np.asarray(self.frame_index, dtype=np.int64)))
        object.__setattr__(self, "xy", _readonly(np.asarray(self.xy, dtype=np.float64)))
        object.__setattr__(self, "confidence", _readonly(np.asarray(self.confidence, dtype=np.float64)))
        object.__setattr__(self, "present", _readonly(np.asarray(self.present, dtype=bool)))
        object.__setattr__(self, "labels", _readonly(np.asarray(self.labels, dtype=np.int8)))
        events = tuple(self.events) if len(self.events) else (None,) * n
        object.__setattr__(self, "events", events)

    def __len__(self) -> int:
        return len(self.frame_index)

    @property
    def key(self) -> tuple[int, int]:
        return (self.camera_id, self.person_id)

    @property
    def is_contiguous(self) -> bool:
        fi = self.frame_index
        return len(fi) == 0 or int(fi[-1] - fi[0]) == len(fi) - 1

    def with_arrays(self, **changes) -> "Track":
        return replace(self, **changes)

    def subset(self, idx) -> "Track":
        idx = np.asarray(idx)
        ev = self.events
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Track(self.camera_id, self.person_id, self.frame_index[idx], self.xy[idx],
                     self.confidence[idx], self.present[idx], self.labels[idx],
                     tuple(ev[i] for i in idx))

    @property
    def frames(self) -> tuple[PoseFrame, ...]:
        out = []
        for t in range(len(self)):
            kps = tuple(
                Keypoint(float(self.xy[t, j, 0]), float(self.xy[t, j, 1]),
                         float(self.confidence[t, j]), True)
                if self.present[t, j] else Keypoint.missing()
                for j in range(NUM_KEYPOINTS)
            )
            out.append(PoseFrame(self.camera_id, int(self.frame_index[t]), self.person_id, kps,
                                 int(self.labels[t]), self.events[t]))
        return tuple(out)

    @classmethod
    def from_frames(cls, frames: Sequence[PoseFrame]) -> "Track":
        if not frames:
            raise ValidationError("track needs at least one frame", field="frames", rule="non-empty")
        cams = {f.camera_id for f in frames}
        pids = {f.person_id for f in frames}
        if len(cams) != 1 or len(pids) != 1:
            raise ValidationError("frames of one track must share camera_id and person_id",
                                  field="frames", rule="single identity")
        for f in frames:
            if len(f.keypoints) != NUM_KEYPOINTS:
                raise InvalidKeypointCount(
                    f"expected {NUM_KEYPOINTS} keypoints, got {len(f.keypoints)}",
                    field="keypoints", rule="length == 17")
        xy = np.array([[(k.x, k.y) for k in f.keypoints] for f in frames], dtype=np.float64)
        conf = np.array([[k.confidence for k in f.keypoints] for f in frames], dtype=np.float64)
        present = np.array([[k.present for k in f.keypoints] for f in frames], dtype=bool)
        track = cls(frames[0].camera_id, frames[0].person_id,
                    np.array([f.frame_index for f in frames], dtype=np.int64),
                    np.where(present[..., None], xy, 0.0), np.where(present, conf, 0.0), present,
                    np.array([f.label for f in frames], dtype=np.int8),
                    tuple(f.event_category for f in frames))
        validate(track)
        return track

    def to_dict(self) -> dict:
        return {"camera_id": self.camera_id, "person_id": self.person_id,
                "frames": [f.to_dict() for f in self.frames]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Track":
        return cls.from_frames([PoseFrame.from_dict(f) for f in d["frames"]])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Track):
            return NotImplemented
        return (self.camera_id == other.camera_id and self.person_id == other.person_id
                and np.array_equal(self.frame_index, other.frame_index)
                and np.array_equal(self.present, other.present)
                and np.array_equal(np.where(self.present[..., None], self.xy, 0.0),
                                   np.where(other.present[..., None], other.xy, 0.0))
                and np.array_equal(np.where(self.present, self.confidence, 0.0),
                                   np.where(other.present, other.confidence, 0.0))
                and np.array_equal(self.labels, other.labels)
                and self.events == other.events)

    __hash__ = None


class WindowRef(NamedTuple):
    camera_id: int
    person_id: int
    start_frame: int


@dataclass(frozen=True)
class PoseWindow:
    camera_id: int
    person_id: int
    start_frame: int
    frames: tuple[PoseFrame, ...]
    label: int

    @property
    def ref(self) -> WindowRef:
        return WindowRef(self.camera_id, self.person_id, self.start_frame)

    @property
    def event_category(self) -> str | None:
        return next((f.event_category for f in self.frames if f.event_category), None)

    def to_dict(self) -> dict:
        return {"camera_id": self.camera_id, "person_id": self.person_id,
                "start_frame": self.start_frame, "label": self.label,
                "frames": [f.to_dict() for f in self.frames]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PoseWindow":
        return cls(d["camera_id"], d["person_id"], d["start_frame"],
                   tuple(PoseFrame.from_dict(f) for f in d["frames"]), d["label"])


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    window_ref: WindowRef

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(np.asarray(self.values, dtype=np.float64)))
        object.__setattr__(self, "window_ref", WindowRef(*self.window_ref))

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.window_ref == other.window_ref and np.array_equal(self.values, other.values)

    __hash__ = None

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "window_ref": list(self.window_ref)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureVector":
        return cls(np.array(d["values"], dtype=np.float64), WindowRef(*d["window_ref"]))


@dataclass(frozen=True)
class ROI:
    camera_id: int
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def contains(self, x, y):
        """Inclusive point-in-rectangle test; works elementwise on arrays."""
        return (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)

    def to_dict(self) -> dict:
        return {"camera_id": self.camera_id,
                "rectangle": [self.x_min, self.y_min, self.x_max, self.y_max]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ROI":
        return cls(d["camera_id"], *map(float, d["rectangle"]))


SCORER_KINDS = ("gaussian", "pca")


def params_digest(kind: str, params: Mapping[str, np.ndarray]) -> str:
    """SHA-256 over the kind and every parameter array (name, shape, float64 LE bytes)."""
    h = hashlib.sha256()
    h.update(kind.encode())
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        h.update(b"|" + name.encode() + b"|" + repr(arr.shape).encode() + b"|")
        h.update(arr.tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class ScorerWeights:
    """Immutable, checksummed scorer snapshot.

    gaussian params: ``mean`` (D,), ``var`` (D,).  pca params: ``mean`` (D,),
    ``components`` (k, D) with orthonormal rows.
    """

    version: int
    kind: str
    params: Mapping[str, np.ndarray]
    checksum: str
    trained_on_buffer: int | None = None
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", {k: _readonly(np.asarray(v, dtype=np.float64))
                                            for k, v in self.params.items()})
        object.__setattr__(self, "metadata", dict(self.metadata))

    @classmethod
    def create(cls, version: int, kind: str, params: Mapping[str, np.ndarray],
               trained_on_buffer: int | None = None, metadata: Mapping | None = None) -> "ScorerWeights":
        if kind not in SCORER_KINDS:
            raise ValidationError(f"unknown scorer kind {kind!r}", field="kind", rule="in {gaussian,pca}")
        params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        return cls(version, kind, params, params_digest(kind, params), trained_on_buffer,
                   metadata or {})

    @property
    def dim(self) -> int:
        return int(self.params["mean"].shape[0])

    def is_valid(self) -> bool:
        return params_digest(self.kind, self.params) == self.checksum

    def verify(self) -> "ScorerWeights":
        if not self.is_valid():
            raise ChecksumMismatch(f"weights v{self.version} fail checksum verification")
        return self

    def with_version(self, version: int, trained_on_buffer: int | None) -> "ScorerWeights":
        return ScorerWeights(version, self.kind, self.params, self.checksum, trained_on_buffer,
                             self.metadata)

    def to_dict(self) -> dict:
        return {
            "format": "poseadapt-weights/1",
            "version": self.version,
            "kind": self.kind,
            "dims": {k: list(v.shape) for k, v in sorted(self.params.items())},
            "params": {k: v.ravel().tolist() for k, v in sorted(self.params.items())},
            "trained_on_buffer": self.trained_on_buffer,
            "metadata": dict(self.metadata),
            "checksum": self.checksum,
        }

    @classmethod
    def from_dict(cls, d: Mapping, verify: bool = True) -> "ScorerWeights":
        params = {k: np.array(v, dtype=np.float64).reshape(d["dims"][k]) for k, v in d["params"].items()}
        w = cls(d["version"], d["kind"], params, d["checksum"], d.get("trained_on_buffer"),
                d.get("metadata", {}))
        return w.verify() if verify else w

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScorerWeights):
            return NotImplemented
        return (self.version == other.version and self.kind == other.kind
                and self.checksum == other.checksum
                and self.trained_on_buffer == other.trained_on_buffer
                and self.params.keys() == other.params.keys()
                and all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
                and dict(self.metadata) == dict(other.metadata))

    __hash__ = None


@dataclass(frozen=True)
class ThresholdSet:
    thr_f1: float
    thr_hprs: float
    best_f1: float = 0.0
    best_hprs: float = 0.0
    n_candidates: int = 0

    def for_choice(self, choice: str) -> float:
        if choice == "f1":
            return self.thr_f1
        if choice == "hprs":
            return self.thr_hprs
        raise ConfigError(f"threshold_choice must be 'f1' or 'hprs', got {choice!r}")

    def to_dict(self) -> dict:
        return {"thr_F1": self.thr_f1, "thr_HPRS": self.thr_hprs,
                "calibration_stats": {"best_F1": self.best_f1, "best_HPRS": self.best_hprs,
                                      "n_candidates": self.n_candidates}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ThresholdSet":
        s = d["calibration_stats"]
        return cls(float(d["thr_F1"]), float(d["thr_HPRS"]), float(s["best_F1"]),
                   float(s["best_HPRS"]), int(s["n_candidates"]))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConfusionCounts":
        return cls(d["tp"], d["fp"], d["tn"], d["fn"])


SCHEDULE_MODES = ("half_day", "full_day")


@dataclass(frozen=True)
class Schedule:
    """Update calendar in logical frame time.

    Only whole simulated days are scheduled, so a half-day calendar always has
    exactly twice the boundaries of a full-day one over the same stream.
    """

    mode: str
    frames_per_day: int
    boundaries: tuple[int, ...]

    @classmethod
    def build(cls, mode: str, frames_per_day: int, stream_length: int) -> "Schedule":
        if mode not in SCHEDULE_MODES:
            raise ConfigError(f"schedule mode must be one of {SCHEDULE_MODES}, got {mode!r}")
        if frames_per_day < 2:
            raise ConfigError("frames_per_day must be >= 2")
        days = stream_length // frames_per_day
        per_day = 2 if mode == "half_day" else 1
        bounds = tuple((k * frames_per_day) // per_day for k in range(1, days * per_day + 1))
        return cls(mode, frames_per_day, bounds)

    @property
    def num_updates(self) -> int:
        return len(self.boundaries)

    @property
    def starts(self) -> tuple[int, ...]:
        return (0,) + self.boundaries[:-1]

    def slice_bounds(self, index: int) -> tuple[int, int]:
        return self.starts[index], self.boundaries[index]

    def slice_of(self, frame_index):
        """Schedule slice containing ``frame_index`` (-1 past the last boundary)."""
        idx = np.searchsorted(np.asarray(self.boundaries), frame_index, side="right")
        return np.where(idx >= self.num_updates, -1, idx)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "frames_per_day": self.frames_per_day,
                "boundaries": list(self.boundaries), "num_updates": self.num_updates}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schedule":
        return cls(d["mode"], d["frames_per_day"], tuple(d["boundaries"]))


@dataclass
class CollectionBuffer:
    """Pseudo-normal windows gathered across all cameras during one slice."""

    schedule_index: int
    windows: list[WindowRef] = field(default_factory=list)
    per_camera_counts: dict[int, int] = field(default_factory=dict)
    scores: list[float] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    features: list[np.ndarray] = field(default_factory=list)

    def add(self, ref: WindowRef, features: np.ndarray, score: float, threshold: float,
            label: int = 0) -> None:
        if not score < threshold:
            raise ValidationError(f"window {tuple(ref)} scored {score} >= threshold {threshold}",
                                  field="score", rule="score < threshold")
        ref = WindowRef(*ref)
        self.windows.append(ref)
        self.per_camera_counts[ref.camera_id] = self.per_camera_counts.get(ref.camera_id, 0) + 1
        self.scores.append(float(score))
        self.labels.append(int(label))
        self.features.append(features)

    def extend(self, refs: Sequence[WindowRef], features: np.ndarray, scores: np.ndarray,
               threshold: float, labels: Sequence[int]) -> None:
        """Bulk ``add``; ``features`` is an (n, D) array."""
        scores = np.asarray(scores, dtype=np.float64)
        if len(scores) and not np.all(scores < threshold):
            raise ValidationError("bulk insert contains windows at or above threshold",
                                  field="score", rule="score < threshold")
        for ref in refs:
            cam = int(ref[0])
            self.per_camera_counts[cam] = self.per_camera_counts.get(cam, 0) + 1
        self.windows.extend(WindowRef(*map(int, r)) for r in refs)
        self.scores.extend(scores.tolist())
        self.labels.extend(int(v) for v in labels)
        if len(scores):
            self.features.append(np.asarray(features, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.windows)

    def feature_matrix(self) -> np.ndarray:
        if not self.features:
            return np.empty((0, 0))
        return np.vstack([np.atleast_2d(f) for f in self.features])

    @property
    def contamination_rate(self) -> float:
        return float(np.mean(self.labels)) if self.labels else 0.0

    def to_dict(self) -> dict:
        return {"schedule_index": self.schedule_index,
                "windows": [list(w) for w in self.windows],
                "per_camera_counts": {str(k): v for k, v in sorted(self.per_camera_counts.items())},
                "scores": list(self.scores), "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CollectionBuffer":
        return cls(d["schedule_index"], [WindowRef(*w) for w in d["windows"]],
                   {int(k): v for k, v in d["per_camera_counts"].items()},
                   list(d["scores"]), list(d["labels"]))


def parse_ratio(text) -> tuple[int, int]:
    if isinstance(text, (tuple, list)):
        a, b = text
    else:
        try:
            a, b = str(text).split(":")
        except ValueError:
            raise ConfigError(f"mix_ratio must look like '9:1', got {text!r}") from None
    try:
        a, b = int(a), int(b)
    except (TypeError, ValueError):
        raise ConfigError(f"mix_ratio parts must be integers, got {text!r}") from None
    if a <= 0 or b <= 0:
        raise ConfigError(f"mix_ratio parts must be positive, got {text!r}")
    return a, b


@dataclass(frozen=True)
class RunConfig:
    window_size: int = 24
    stride: int = 6
    smoothing_len: int = 8
    mix_ratio: tuple[int, int] = (9, 1)
    schedule_mode: str = "half_day"
    frames_per_day: int = 10_000
    scorer_kind: str = "gaussian"
    pca_k: int = 8
    ridge_epsilon: float = 1e-6
    threshold_choice: str = "hprs"
    adaptive_thresholds: bool = False
    rng_seed: int = 42
    deployment_lag: int = 2
    include_velocity: bool = True
    validation_fraction: float = 0.5
    execution: str = "simulated"
    min_buffer: int | None = None
    fps: float = 15.0
    rois: tuple[ROI, ...] = ()
    stream_path: str | None = None
    train_stream_path: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "mix_ratio", parse_ratio(self.mix_ratio))
        object.__setattr__(self, "rois", tuple(self.rois))

    def validated(self) -> "RunConfig":
        validate(self)
        return self

    @property
    def min_buffer_size(self) -> int:
        if self.min_buffer is not None:
            return self.min_buffer
        return 2 * (self.pca_k + 1) if self.scorer_kind == "pca" else 2

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "mix_ratio":
                v = f"{v[0]}:{v[1]}"
            elif f.name == "rois":
                v = [r.to_dict() for r in v]
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        d = dict(d)
        if "rois" in d:
            d["rois"] = tuple(r if isinstance(r, ROI) else ROI.from_dict(r) for r in d["rois"])
        return cls(**d)


def _check_keypoints(kps, line=None):
    if len(kps) != NUM_KEYPOINTS:
        raise InvalidKeypointCount(f"expected {NUM_KEYPOINTS} keypoints, got {len(kps)}",
                                   field="keypoints", rule="length == 17", line=line)
    for j, kp in enumerate(kps):
        if kp.present:
            if not (math.isfinite(kp.x) and math.isfinite(kp.y)):
                raise ValidationError(f"keypoint {COCO17[j]} has non-finite coordinates",
                                      field="keypoints", rule="finite x/y", line=line)
            if not 0.0 <= kp.confidence <= 1.0:
                raise ValidationError(f"keypoint {COCO17[j]} confidence {kp.confidence} outside [0,1]",
                                      field="confidence", rule="0 <= confidence <= 1", line=line)


def _check_label(label, event, line=None):
    if label not in (0, 1) or isinstance(label, bool):
        raise LabelOutOfRange(f"label must be 0 or 1, got {label!r}", field="label",
                              rule="label in {0,1}", line=line)
    if event and label != 1:
        raise LabelOutOfRange("event_category set on a normal frame", field="event_category",
                              rule="event only when label == 1", line=line)


def validate(record, line: int | None = None):
    """Check every invariant of a domain value.

    Returns the record unchanged when it is well formed and raises a
    :class:`~poseadapt.errors.ValidationError` subclass naming the field and
    rule otherwise.
    """
    if isinstance(record, Keypoint):
        _check_keypoints([record] * NUM_KEYPOINTS, line)
    elif isinstance(record, PoseFrame):
        _check_keypoints(record.keypoints, line)
        _check_label(record.label, record.event_category, line)
        if record.frame_index < 0 or record.person_id < 0 or record.camera_id < 1:
            raise ValidationError("camera_id must be >= 1 and frame/person ids >= 0",
                                  field="ids", rule="non-negative ids", line=line)
    elif isinstance(record, Track):
        n = len(record.frame_index)
        if record.xy.shape != (n, NUM_KEYPOINTS, 2):
            raise InvalidKeypointCount(f"xy shape {record.xy.shape} != ({n}, 17, 2)",
                                       field="keypoints", rule="length == 17")
        if record.present.shape != (n, NUM_KEYPOINTS) or record.confidence.shape != (n, NUM_KEYPOINTS):
            raise InvalidKeypointCount("presence/confidence arrays must be (T, 17)",
                                       field="keypoints", rule="length == 17")
        if n > 1 and not np.all(np.diff(record.frame_index) > 0):
            raise NonMonotoneFrames("frame_index must be strictly increasing",
                                    field="frame_index", rule="strictly increasing")
        if not np.all((record.labels == 0) | (record.labels == 1)):
            raise LabelOutOfRange("labels must be 0 or 1", field="labels", rule="label in {0,1}")
        for lab, ev in zip(record.labels, record.events):
            if ev and lab != 1:
                raise LabelOutOfRange("event_category set on a normal frame",
                                      field="events", rule="event only when label == 1")
        conf = record.confidence[record.present]
        if conf.size and (conf.min() < 0 or conf.max() > 1):
            raise ValidationError("confidence outside [0,1]", field="confidence", rule="0 <= c <= 1")
        if not np.all(np.isfinite(record.xy[record.present])):
            raise ValidationError("non-finite keypoint coordinates", field="xy", rule="finite")
    elif isinstance(record, PoseWindow):
        idx = [f.frame_index for f in record.frames]
        if idx != list(range(record.start_frame, record.start_frame + len(idx))):
            raise NonMonotoneFrames("window frames must be contiguous from start_frame",
                                    field="frames", rule="contiguous")
        if any(f.camera_id != record.camera_id or f.person_id != record.person_id for f in record.frames):
            raise ValidationError("window frames must come from one track", field="frames",
                                  rule="single identity")
        for f in record.frames:
            validate(f, line)
        expected = int(any(f.label == 1 for f in record.frames))
        if record.label != expected:
            raise LabelOutOfRange(f"window label {record.label} != any-frame rule ({expected})",
                                  field="label", rule="label = any(frame labels)")
    elif isinstance(record, FeatureVector):
        if not np.all(np.isfinite(record.values)):
            raise ValidationError("feature vector has non-finite values", field="values", rule="finite")
    elif isinstance(record, ROI):
        if not (record.x_min < record.x_max and record.y_min < record.y_max):
            raise BadROI(f"ROI for camera {record.camera_id} is empty or inverted",
                         field="rectangle", rule="x_min < x_max and y_min < y_max", line=line)
    elif isinstance(record, ScorerWeights):
        record.verify()
        if record.kind == "pca":
            comps = record.params["components"]
            gram = comps @ comps.T
            if not np.allclose(gram, np.eye(len(comps)), atol=1e-9, rtol=0):
                raise ValidationError("pca components are not orthonormal", field="components",
                                      rule="orthonormal within 1e-9")
    elif isinstance(record, ThresholdSet):
        if not (math.isfinite(record.thr_f1) and math.isfinite(record.thr_hprs)):
            raise ValidationError("thresholds must be finite", field="thresholds", rule="finite")
    elif isinstance(record, ConfusionCounts):
        if min(record.tp, record.fp, record.tn, record.fn) < 0:
            raise ValidationError("confusion counts must be non-negative", field="counts",
                                  rule="non-negative")
    elif isinstance(record, Schedule):
        b = record.boundaries
        if any(y <= x for x, y in zip(b, b[1:])):
            raise NonMonotoneFrames("schedule boundaries must increase", field="boundaries",
                                    rule="strictly increasing")
    elif isinstance(record, RunConfig):
        if not record.window_size > record.stride > 0:
            raise ConfigError("need window_size > stride > 0")
        if record.smoothing_len < 1:
            raise ConfigError("smoothing_len must be >= 1")
        if record.scorer_kind not in SCORER_KINDS:
            raise ConfigError(f"scorer_kind must be one of {SCORER_KINDS}")
        if record.schedule_mode not in SCHEDULE_MODES:
            raise ConfigError(f"schedule_mode must be one of {SCHEDULE_MODES}")
        if record.threshold_choice not in ("f1", "hprs"):
            raise ConfigError("threshold_choice must be 'f1' or 'hprs'")
        if record.execution not in ("simulated", "concurrent"):
            raise ConfigError("execution must be 'simulated' or 'concurrent'")
        if record.deployment_lag < 1:
            raise ConfigError("deployment_lag must be >= 1")
        if not 0 < record.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if record.pca_k < 1:
            raise ConfigError("pca_k must be >= 1")
        cams = [r.camera_id for r in record.rois]
        if len(cams) != len(set(cams)):
            raise ConfigError("at most one ROI per camera")
        for r in record.rois:
            validate(r)
    else:
        raise TypeError(f"no invariants known for {type(record).__name__}")
    return record


_DECODERS = {cls.__name__: cls for cls in (
    PoseFrame, Track, PoseWindow, FeatureVector, ROI, ScorerWeights, ThresholdSet,
    ConfusionCounts, Schedule, CollectionBuffer, RunConfig)}


def encode(record) -> dict:
    """Tagged dict form of any domain value (see :func:`decode`)."""
    if isinstance(record, Keypoint):
        return {"type": "Keypoint", "value": [record.x, record.y, record.confidence, record.present]}
    return {"type": type(record).__name__, "value": record.to_dict()}


def decode(blob: Mapping):
    kind = blob["type"]
    if kind == "Keypoint":
        return Keypoint(*blob["value"])
    return _DECODERS[kind].from_dict(blob["value"])


def frames_to_tracks(frames: Iterable[PoseFrame]) -> list[Track]:
    """Group frames by (camera_id, person_id) into tracks sorted by frame_index."""
    groups: dict[tuple[int, int], list[PoseFrame]] = {}
    for f in frames:
        groups.setdefault((f.camera_id, f.person_id), []).append(f)
    return [Track.from_frames(sorted(g, key=lambda f: f.frame_index))
            for _, g in sorted(groups.items())]
