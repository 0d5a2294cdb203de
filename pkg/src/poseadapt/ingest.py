"""Pose-stream files: one JSON object per line.

Record layout::

    {"camera_id": 1, "frame_index": 0, "person_id": 3,
     "keypoints": [[x, y, conf], ..., [null, null, null]],   # 17 entries, COCO17 order
     "label": 0, "event": "pants"}                             # event only on label 1

Floats are written with ``repr`` so a write/load cycle is bit exact.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .domain import NUM_KEYPOINTS, Keypoint, PoseFrame, Track, frames_to_tracks, validate
from .errors import (
    DegenerateSplit,
    LabelOutOfRange,
    MissingFile,
    ParseError,
    PoseAdaptError,
    ValidationError,
)

log = logging.getLogger(__name__)

_MISSING = [None, None, None]


def _record_line(camera_id, frame_index, person_id, keypoints, label, event) -> str:
    rec = {"camera_id": camera_id, "frame_index": frame_index, "person_id": person_id,
           "keypoints": keypoints, "label": label}
    if event:
        rec["event"] = event
    return json.dumps(rec, separators=(",", ":"))


def _frame_line(frame: PoseFrame) -> str:
    kps = [[kp.x, kp.y, kp.confidence] if kp.present else _MISSING for kp in frame.keypoints]
    return _record_line(frame.camera_id, frame.frame_index, frame.person_id, kps, frame.label,
                        frame.event_category)


def _parse(text: str, line_no: int) -> PoseFrame:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", line_no) from None
    if not isinstance(rec, dict):
        raise ParseError("record is not a JSON object", line_no)
    try:
        kps = rec["keypoints"]
        if not isinstance(kps, list):
            raise ParseError("keypoints must be a list", line_no)
        keypoints = []
        for t in kps:
            if t is None or (isinstance(t, list) and all(v is None for v in t)):
                keypoints.append(Keypoint.missing())
            elif isinstance(t, list) and len(t) == 3:
                keypoints.append(Keypoint(float(t[0]), float(t[1]), float(t[2]), True))
            else:
                raise ParseError(f"keypoint entry {t!r} is not an [x, y, conf] triple", line_no)
        frame = PoseFrame(int(rec["camera_id"]), int(rec["frame_index"]), int(rec["person_id"]),
                          tuple(keypoints), rec.get("label", 0), rec.get("event") or None)
    except KeyError as exc:
        raise ParseError(f"missing key {exc.args[0]!r}", line_no) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), line_no) from None
    try:
        validate(frame, line=line_no)
    except ValidationError as exc:
        if exc.line is None:
            exc.line = line_no
        raise
    return frame


def _sort_key(f: PoseFrame):
    return (f.camera_id, f.frame_index, f.person_id)


@dataclass
class DatasetHandle:
    """Summary of a loaded stream; iterating yields frames in (camera, frame, person) order."""

    frame_counts: dict[int, int]
    camera_ids: frozenset[int]
    person_ids: frozenset[int]
    prevalence: float
    frames: tuple[PoseFrame, ...] = field(repr=False, default=())

    @classmethod
    def from_frames(cls, frames: Iterable[PoseFrame]) -> "DatasetHandle":
        frames = tuple(sorted(frames, key=_sort_key))
        counts: dict[int, int] = {}
        for f in frames:
            counts[f.camera_id] = counts.get(f.camera_id, 0) + 1
        n_pos = sum(f.label for f in frames)
        return cls(dict(sorted(counts.items())), frozenset(counts),
                   frozenset(f.person_id for f in frames),
                   n_pos / len(frames) if frames else 0.0, frames)

    def __iter__(self) -> Iterator[PoseFrame]:
        return iter(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    def tracks(self) -> list[Track]:
        return frames_to_tracks(self.frames)


def load_pose_stream(path, cameras: Iterable[int] | None = None) -> tuple[DatasetHandle, Iterator[PoseFrame]]:
    if not os.path.exists(path):
        raise MissingFile(f"pose stream {path} does not exist")
    keep = set(cameras) if cameras is not None else None
    frames = []
    with open(path, encoding="utf-8") as fh:
        for line_no, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            frame = _parse(text, line_no)
            if keep is None or frame.camera_id in keep:
                frames.append(frame)
    handle = DatasetHandle.from_frames(frames)
    return handle, iter(handle)


def load_tracks(path, cameras: Iterable[int] | None = None) -> list[Track]:
    """Load a stream straight into array-backed tracks (no per-keypoint objects)."""
    if not os.path.exists(path):
        raise MissingFile(f"pose stream {path} does not exist")
    keep = set(cameras) if cameras is not None else None
    rows: dict[tuple[int, int], list] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                rec = json.loads(text)
                cam, fi, pid = int(rec["camera_id"]), int(rec["frame_index"]), int(rec["person_id"])
                kps = rec["keypoints"]
                label = rec.get("label", 0)
                event = rec.get("event") or None
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"cannot parse record ({exc})", line_no) from None
            if keep is not None and cam not in keep:
                continue
            if not isinstance(kps, list) or len(kps) != NUM_KEYPOINTS:
                # fall back to the full parser for a precise error
                _parse(text, line_no)
            rows.setdefault((cam, pid), []).append((fi, kps, label, event, line_no))
    tracks = []
    for (cam, pid), recs in sorted(rows.items()):
        recs.sort(key=lambda r: r[0])
        n = len(recs)
        try:
            # None -> nan under a float dtype
            vals = np.array([[t if t is not None else _MISSING for t in r[1]] for r in recs],
                            dtype=np.float64)
        except (TypeError, ValueError):
            for r in recs:
                _parse(json.dumps({"camera_id": cam, "frame_index": r[0], "person_id": pid,
                                   "keypoints": r[1]}), r[4])
            raise
        if vals.shape != (n, NUM_KEYPOINTS, 3):
            raise ParseError("keypoint entries must be [x, y, conf] triples", recs[0][4])
        present = ~np.isnan(vals[..., 0])
        vals = np.where(present[..., None], vals, 0.0)
        labels = [r[2] for r in recs]
        for r in recs:
            if r[2] not in (0, 1):
                raise LabelOutOfRange(f"label must be 0 or 1, got {r[2]!r}", field="label",
                                      rule="label in {0,1}", line=r[4])
        try:
            track = Track(cam, pid, np.array([r[0] for r in recs], dtype=np.int64),
                          vals[..., :2].reshape(n, NUM_KEYPOINTS, 2), vals[..., 2], present,
                          np.array(labels, dtype=np.int8), tuple(r[3] for r in recs))
            validate(track)
        except PoseAdaptError as exc:
            raise ValidationError(f"track camera={cam} person={pid}: {exc}") from exc
        tracks.append(track)
    return tracks


def write_pose_stream(frames: Iterable[PoseFrame], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            fh.write(_frame_line(frame))
            fh.write("\n")


def write_tracks(tracks: Sequence[Track], path) -> None:
    """Write tracks in the stream format, ordered by (camera, frame, person)."""
    entries = []
    for ti, tr in enumerate(tracks):
        xy = tr.xy.tolist()
        conf = tr.confidence.tolist()
        pres = tr.present.tolist()
        fidx = tr.frame_index.tolist()
        labels = tr.labels.tolist()
        for t in range(len(tr)):
            kps = [[xy[t][j][0], xy[t][j][1], conf[t][j]] if pres[t][j] else _MISSING
                   for j in range(NUM_KEYPOINTS)]
            entries.append(((tr.camera_id, fidx[t], tr.person_id),
                            _record_line(tr.camera_id, fidx[t], tr.person_id, kps, labels[t],
                                         tr.events[t])))
    entries.sort(key=lambda e: e[0])
    with open(path, "w", encoding="utf-8") as fh:
        for _, line in entries:
            fh.write(line)
            fh.write("\n")


def split_tracks(tracks: Sequence[Track], validation_fraction: float, seed: int) -> tuple[list[Track], list[Track]]:
    """Seeded, track-atomic split.

    Tracks containing anomalies and purely normal tracks are shuffled separately
    so that the validation side receives at least one anomalous track whenever
    the source has any.
    """
    if not 0 < validation_fraction < 1:
        raise DegenerateSplit(f"validation_fraction must lie in (0, 1), got {validation_fraction}")
    n = len(tracks)
    n_val = int(round(validation_fraction * n))
    if n_val <= 0 or n_val >= n:
        raise DegenerateSplit(f"fraction {validation_fraction} of {n} tracks leaves one side empty")
    rng = np.random.default_rng(seed)
    order = sorted(range(n), key=lambda i: tracks[i].key)
    anomalous = [i for i in order if tracks[i].labels.any()]
    normal = [i for i in order if not tracks[i].labels.any()]
    anomalous = [anomalous[i] for i in rng.permutation(len(anomalous))]
    normal = [normal[i] for i in rng.permutation(len(normal))]
    n_anom = 0
    if anomalous:
        n_anom = min(max(1, int(round(validation_fraction * len(anomalous)))), len(anomalous), n_val)
        if n_val - n_anom > len(normal):
            n_anom = n_val - len(normal)
    val_idx = set(anomalous[:n_anom] + normal[:n_val - n_anom])
    train = [tracks[i] for i in order if i not in val_idx]
    val = [tracks[i] for i in order if i in val_idx]
    return train, val


def split_train_validation(handle: DatasetHandle, validation_fraction: float,
                           seed: int) -> tuple[list[PoseFrame], list[PoseFrame]]:
    tracks = handle.tracks()
    train, val = split_tracks(tracks, validation_fraction, seed)
    flatten = lambda ts: sorted((f for t in ts for f in t.frames), key=_sort_key)  # noqa: E731
    return flatten(train), flatten(val)
