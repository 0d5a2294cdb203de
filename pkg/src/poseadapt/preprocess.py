"""Track preparation: interpolate, smooth, ROI gate, windowize, embed.

The stage order is fixed (see ``PREPROCESS_ORDER``).  Single-item functions
(:func:`windowize`, :func:`extract_features`) exist for clarity and tests; the
pipeline uses :func:`prepare_track` plus :meth:`PreparedTrack.features`, which
share the same normalization code.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import (
    KP,
    NUM_KEYPOINTS,
    ROI,
    FeatureVector,
    PoseWindow,
    Track,
    WindowRef,
)
from .errors import AllMissingChannel, ConfigError, DegenerateTorso, ValidationError

log = logging.getLogger(__name__)

PREPROCESS_ORDER = ("interpolate", "smooth", "roi", "windowize", "features")
TORSO_MIN_PX = 1e-6


def check_order(stages: Sequence[str]) -> tuple[str, ...]:
    stages = tuple(s.strip() for s in stages)
    if stages != PREPROCESS_ORDER:
        raise ConfigError(f"preprocessing stages must run as {','.join(PREPROCESS_ORDER)}, "
                          f"got {','.join(stages)}")
    return stages


@dataclass(frozen=True)
class FeatureConfig:
    window_size: int = 24
    include_velocity: bool = True

    @property
    def dim(self) -> int:
        w = self.window_size
        per_frame = NUM_KEYPOINTS * 2
        return w * per_frame + ((w - 1) * per_frame if self.include_velocity else 0)


def interpolate_missing(track: Track) -> Track:
    """Fill absent keypoints linearly in frame_index, holding the nearest value at the ends."""
    if track.present.all():
        return track
    t = track.frame_index.astype(np.float64)
    xy = np.array(track.xy)
    conf = np.array(track.confidence)
    for j in range(NUM_KEYPOINTS):
        p = track.present[:, j]
        if not p.any():
            raise AllMissingChannel(
                f"keypoint {j} never observed in track camera={track.camera_id} person={track.person_id}")
        if p.all():
            continue
        miss = ~p
        for c in range(2):
            xy[miss, j, c] = np.interp(t[miss], t[p], xy[p, j, c])
        conf[miss, j] = 0.0
    return track.with_arrays(xy=xy, confidence=conf, present=np.ones_like(track.present))


def _window_offsets(length: int) -> tuple[int, int]:
    # length 8 -> offsets -3..+4
    return -((length - 1) // 2), length // 2


def smooth(track: Track, smoothing_len: int = 8) -> Track:
    """Centered moving average over each coordinate, truncated at the track ends."""
    if not track.present.all():
        raise ValidationError("smooth() needs a fully interpolated track", field="present",
                              rule="all keypoints present")
    n = len(track)
    if n <= 1 or smoothing_len <= 1:
        return track
    lo, hi = _window_offsets(smoothing_len)
    x = track.xy
    # average deviations from the centre sample: exact on constant input
    acc = np.zeros_like(x)
    count = np.zeros(n)
    for off in range(lo, hi + 1):
        a, b = max(0, -off), min(n, n - off)
        if a >= b:
            continue
        acc[a:b] += x[a + off:b + off] - x[a:b]
        count[a:b] += 1
    return track.with_arrays(xy=x + acc / count[:, None, None])


def mid_hip(xy: np.ndarray) -> np.ndarray:
    return 0.5 * (xy[..., KP["left_hip"], :] + xy[..., KP["right_hip"], :])


def mid_shoulder(xy: np.ndarray) -> np.ndarray:
    return 0.5 * (xy[..., KP["left_shoulder"], :] + xy[..., KP["right_shoulder"], :])


def _roi_map(rois: Iterable[ROI] | Mapping[int, ROI]) -> dict[int, ROI]:
    if isinstance(rois, Mapping):
        return dict(rois)
    out: dict[int, ROI] = {}
    for r in rois:
        if r.camera_id in out:
            raise ConfigError(f"more than one ROI for camera {r.camera_id}")
        out[r.camera_id] = r
    return out


def roi_mask(track: Track, rois) -> np.ndarray:
    roi = _roi_map(rois).get(track.camera_id)
    if roi is None:
        return np.ones(len(track), dtype=bool)
    hip = mid_hip(track.xy)
    ok = track.present[:, KP["left_hip"]] & track.present[:, KP["right_hip"]]
    return ok & roi.contains(hip[:, 0], hip[:, 1])


def apply_roi(frames, rois):
    """Keep frames whose mid-hip point lies inside the camera's ROI (edges count as inside).

    Accepts a :class:`Track` (returns the kept sub-track) or a sequence of
    :class:`PoseFrame` (returns the kept frames).  Cameras without an ROI keep
    everything.
    """
    rmap = _roi_map(rois)
    if isinstance(frames, Track):
        return frames.subset(roi_mask(frames, rmap))
    kept = []
    lh, rh = KP["left_hip"], KP["right_hip"]
    for f in frames:
        roi = rmap.get(f.camera_id)
        if roi is None:
            kept.append(f)
            continue
        a, b = f.keypoints[lh], f.keypoints[rh]
        if a.present and b.present and roi.contains(0.5 * (a.x + b.x), 0.5 * (a.y + b.y)):
            kept.append(f)
    return kept


def contiguous_runs(frame_index: np.ndarray) -> list[tuple[int, int]]:
    """[start, stop) positions of runs with consecutive frame indices."""
    if len(frame_index) == 0:
        return []
    breaks = np.flatnonzero(np.diff(frame_index) != 1) + 1
    edges = np.concatenate(([0], breaks, [len(frame_index)]))
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def window_offsets(frame_index: np.ndarray, window_size: int = 24, stride: int = 6) -> np.ndarray:
    """Array positions where windows start, restarting the stride at every gap."""
    out = []
    for a, b in contiguous_runs(frame_index):
        if b - a >= window_size:
            out.append(np.arange(a, b - window_size + 1, stride))
    return np.concatenate(out).astype(np.int64) if out else np.empty(0, dtype=np.int64)


def _window_labels(labels: np.ndarray, offsets: np.ndarray, window_size: int) -> np.ndarray:
    c = np.concatenate(([0], np.cumsum(labels.astype(np.int64))))
    return ((c[offsets + window_size] - c[offsets]) > 0).astype(np.int8)


def _window_events(events: Sequence, offsets: np.ndarray, window_size: int) -> list:
    out = []
    for o in offsets:
        out.append(next((e for e in events[o:o + window_size] if e), None))
    return out


def windowize(track: Track, window_size: int = 24, stride: int = 6) -> list[PoseWindow]:
    if not track.is_contiguous:
        raise ValidationError("windowize() needs a contiguous track", field="frame_index",
                              rule="contiguous")
    offsets = window_offsets(track.frame_index, window_size, stride)
    if len(offsets) == 0:
        return []
    frames = track.frames
    labels = _window_labels(track.labels, offsets, window_size)
    return [PoseWindow(track.camera_id, track.person_id, frames[o].frame_index,
                       frames[o:o + window_size], int(lab))
            for o, lab in zip(offsets, labels)]


def normalize_frames(xy: np.ndarray, strict: bool = True) -> np.ndarray:
    """Per frame: origin at mid-hip, unit torso length.  Returns (T, 34).

    With ``strict=False`` frames with a degenerate torso come back as NaN rows
    instead of raising.
    """
    hip = mid_hip(xy)
    torso = np.linalg.norm(mid_shoulder(xy) - hip, axis=-1)
    bad = ~(torso >= TORSO_MIN_PX)
    if bad.any():
        if strict:
            raise DegenerateTorso(f"torso length below {TORSO_MIN_PX} px in {int(bad.sum())} frame(s)")
        torso = np.where(bad, np.nan, torso)
    norm = (xy - hip[..., None, :]) / torso[..., None, None]
    return norm.reshape(norm.shape[:-2] + (NUM_KEYPOINTS * 2,))


def window_features(norm: np.ndarray, offsets: np.ndarray, window_size: int,
                    include_velocity: bool = True) -> np.ndarray:
    """(n, D) embeddings for windows starting at ``offsets`` of a normalized track."""
    idx = np.asarray(offsets)[:, None] + np.arange(window_size)
    block = norm[idx]
    n = len(idx)
    pos = block.reshape(n, -1)
    if not include_velocity:
        return pos
    vel = np.diff(block, axis=1).reshape(n, -1)
    return np.concatenate([pos, vel], axis=1)


def extract_features(window: PoseWindow, config: FeatureConfig | None = None) -> FeatureVector:
    config = config or FeatureConfig(window_size=len(window.frames))
    if len(window.frames) != config.window_size:
        raise ValidationError(f"window has {len(window.frames)} frames, config expects "
                              f"{config.window_size}", field="frames", rule="length == W")
    if not all(kp.present for f in window.frames for kp in f.keypoints):
        raise ValidationError("extract_features() needs fully present keypoints",
                              field="keypoints", rule="all present")
    xy = np.array([[(kp.x, kp.y) for kp in f.keypoints] for f in window.frames], dtype=np.float64)
    norm = normalize_frames(xy)
    values = window_features(norm, np.array([0]), config.window_size, config.include_velocity)[0]
    return FeatureVector(values, window.ref)


@dataclass(frozen=True, eq=False)
class PreparedTrack:
    """A track after interpolation, smoothing and ROI gating, with its window table."""

    camera_id: int
    person_id: int
    frame_index: np.ndarray
    norm: np.ndarray
    labels: np.ndarray
    events: tuple
    offsets: np.ndarray
    window_labels: np.ndarray
    window_events: tuple
    window_size: int
    include_velocity: bool

    @property
    def start_frames(self) -> np.ndarray:
        return self.frame_index[self.offsets]

    @property
    def end_frames(self) -> np.ndarray:
        return self.frame_index[self.offsets + self.window_size - 1]

    def refs(self, which=None) -> list[WindowRef]:
        starts = self.start_frames if which is None else self.start_frames[which]
        return [WindowRef(self.camera_id, self.person_id, int(s)) for s in starts]

    def features(self, which=None) -> np.ndarray:
        offs = self.offsets if which is None else self.offsets[which]
        return window_features(self.norm, offs, self.window_size, self.include_velocity)


def prepare_track(track: Track, *, window_size: int = 24, stride: int = 6, smoothing_len: int = 8,
                  rois=(), include_velocity: bool = True) -> PreparedTrack:
    """Run the fixed stage order on one track.

    Windows touching a frame with a degenerate torso are dropped (and logged)
    rather than aborting a long replay.
    """
    tr = interpolate_missing(track)
    if not tr.is_contiguous:
        # smoothing must not average across a gap
        parts = [smooth(tr.subset(np.arange(a, b)), smoothing_len)
                 for a, b in contiguous_runs(tr.frame_index)]
        xy = np.concatenate([p.xy for p in parts])
        tr = tr.with_arrays(xy=xy)
    else:
        tr = smooth(tr, smoothing_len)
    tr = tr.subset(roi_mask(tr, rois))
    offsets = window_offsets(tr.frame_index, window_size, stride)
    norm = normalize_frames(tr.xy, strict=False)
    if len(offsets):
        bad = np.isnan(norm[:, 0])
        if bad.any():
            c = np.concatenate(([0], np.cumsum(bad)))
            ok = (c[offsets + window_size] - c[offsets]) == 0
            log.warning("camera %d person %d: dropping %d window(s) with degenerate torso",
                        tr.camera_id, tr.person_id, int((~ok).sum()))
            offsets = offsets[ok]
    return PreparedTrack(
        tr.camera_id, tr.person_id, tr.frame_index, norm, tr.labels, tr.events, offsets,
        _window_labels(tr.labels, offsets, window_size) if len(offsets) else np.empty(0, np.int8),
        tuple(_window_events(tr.events, offsets, window_size)), window_size, include_velocity)


def prepare_tracks(tracks: Iterable[Track], config) -> list[PreparedTrack]:
    """``prepare_track`` over many tracks using a :class:`~poseadapt.domain.RunConfig`."""
    return [prepare_track(t, window_size=config.window_size, stride=config.stride,
                          smoothing_len=config.smoothing_len, rois=config.rois,
                          include_velocity=config.include_velocity) for t in tracks]

