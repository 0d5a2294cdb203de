"""Deterministic synthetic multi-camera pose streams.

Each track is one person on one camera for the whole stream.  Normal motion
is a COCO17 stick figure whose root does a bounded random walk while limb
angles, body yaw and lean follow Ornstein-Uhlenbeck processes; joints come
from forward kinematics, so limb lengths stay consistent.  Anomaly events
pull one or both wrists toward a category-specific point on the torso
midline and add a fast side-to-side oscillation (a "concealment" motif).

Drift is applied in image space after the motion is built:

* ``affine``: horizontal scale ``1 + scale_rate * n`` about the image centre
  plus a horizontal shift ``translation_rate * n`` px.  Scale is applied along
  x only because features are normalized by torso length, which would cancel
  an isotropic zoom.
* ``speed``: motion time runs at ``1 + speed_rate * n`` frames per frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

from .domain import EVENT_CATEGORIES, KP, NUM_KEYPOINTS, PoseFrame, Track
from .errors import ConfigError

DRIFT_KINDS = ("none", "affine", "speed")

# template (px at body scale 1), y points down, mid-hip at the origin
HIP_HALF = 12.0
SHOULDER_HALF = 20.0
TORSO = 55.0
UPPER_ARM, FOREARM = 30.0, 28.0
THIGH, SHIN = 40.0, 40.0
HEAD = {"nose": (0.0, -20.0), "left_eye": (4.0, -24.0), "right_eye": (-4.0, -24.0),
        "left_ear": (9.0, -21.0), "right_ear": (-9.0, -21.0)}

# wrist targets per category: (x offset toward the wrist's own side, y), both wrists?
MOTIFS = {
    "pants": ((4.0, -4.0), False),
    "hoodie": ((3.0, -32.0), True),
    "bag_standing": ((8.0, -18.0), False),
    "bag_floor": ((10.0, 2.0), False),
    "jacket": ((-6.0, -42.0), True),
}


@dataclass(frozen=True)
class DriftConfig:
    kind: str = "none"
    scale_rate: float = 0.0
    translation_rate: float = 0.0
    speed_rate: float = 0.0
    cameras: tuple[int, ...] | None = None  # None: every camera

    def applies_to(self, camera_id: int) -> bool:
        return self.kind != "none" and (self.cameras is None or camera_id in self.cameras)


@dataclass(frozen=True)
class MotionParams:
    """Noise scales of the normal walk; angles in radians, lengths in px."""

    image_size: tuple[int, int] = (1280, 720)
    root_speed_std: float = 1.5
    root_corr_frames: float = 50.0
    arm_std: float = 0.10
    elbow_std: float = 0.10
    leg_std: float = 0.10
    lean_std: float = 0.05
    head_std: float = 0.08
    yaw_std: float = 0.08
    limb_corr_frames: float = 30.0
    yaw_corr_frames: float = 100.0
    scale_std: float = 0.03
    jitter_px: float = 1.0
    motif_amplitude_px: float = 25.0
    motif_period_frames: float = 16.0
    motif_ramp_frames: int = 4


@dataclass(frozen=True)
class SynthConfig:
    frames_per_camera: int
    persons_per_camera: int = 1
    anomaly_event_rate: float = 0.0  # events per 1000 frames per track
    num_cameras: int = 6
    duration_lo: int = 25
    duration_hi: int = 35
    drift: DriftConfig = field(default_factory=DriftConfig)
    seed: int = 0
    missing_rate: float = 0.0
    stream_id: int = 0
    motion: MotionParams = field(default_factory=MotionParams)

    def validated(self) -> "SynthConfig":
        if self.num_cameras < 1 or self.persons_per_camera < 1 or self.frames_per_camera < 1:
            raise ConfigError("num_cameras, persons_per_camera and frames_per_camera must be >= 1")
        if self.anomaly_event_rate < 0:
            raise ConfigError("anomaly_event_rate must be >= 0")
        if not 1 <= self.duration_lo <= self.duration_hi:
            raise ConfigError("need 1 <= duration_lo <= duration_hi")
        if not 0 <= self.missing_rate < 1:
            raise ConfigError("missing_rate must lie in [0, 1)")
        d = self.drift
        if d.kind not in DRIFT_KINDS:
            raise ConfigError(f"drift must be one of {DRIFT_KINDS}, got {d.kind!r}")
        if min(d.scale_rate, d.translation_rate, d.speed_rate) < 0:
            raise ConfigError("drift rates must be >= 0")
        return self


class DriftParams(NamedTuple):
    scale_x: np.ndarray | float
    scale_y: np.ndarray | float
    tx: np.ndarray | float
    ty: np.ndarray | float
    speed: np.ndarray | float


def drift_schedule(config: SynthConfig, frame_index) -> DriftParams:
    """Drift parameters at ``frame_index`` (scalar or array); identity at frame 0."""
    n = np.asarray(frame_index, dtype=np.float64)
    d = config.drift
    one, zero = np.ones_like(n), np.zeros_like(n)
    if d.kind == "affine":
        p = DriftParams(1.0 + d.scale_rate * n, one, d.translation_rate * n, zero, one)
    elif d.kind == "speed":
        p = DriftParams(one, one, zero, zero, 1.0 + d.speed_rate * n)
    else:
        p = DriftParams(one, one, zero, zero, one)
    if n.ndim == 0:
        return DriftParams(*(float(v) for v in p))
    return p


def motion_time(config: SynthConfig, frame_index) -> np.ndarray:
    """Motion clock under speed drift: integral of the speed multiplier."""
    n = np.asarray(frame_index, dtype=np.float64)
    if config.drift.kind != "speed":
        return n
    return n + 0.5 * config.drift.speed_rate * n * n


def expected_prevalence(config: SynthConfig) -> float:
    """Frame-level anomaly prevalence targeted by the event process (ignoring stream edges)."""
    mean_dur = 0.5 * (config.duration_lo + config.duration_hi)
    return min(1.0, config.anomaly_event_rate * mean_dur / 1000.0)


def _ou(rng, n: int, std: float, corr_frames: float, size: int = 1) -> np.ndarray:
    """Stationary AR(1) paths, shape (n, size)."""
    a = math.exp(-1.0 / corr_frames)
    eps = rng.standard_normal((n, size))
    init = a * std * rng.standard_normal(size)
    out = np.empty((n, size))
    for j in range(size):
        out[:, j], _ = lfilter([math.sqrt(1 - a * a) * std], [1.0, -a], eps[:, j], zi=[init[j]])
    return out


def _reflect(p: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo
    m = np.mod(p - lo, 2 * span)
    return lo + np.where(m > span, 2 * span - m, m)


def sample_events(rng, n_frames: int, config: SynthConfig) -> list[tuple[int, int, str | None]]:
    """Non-overlapping (start, length, category=None) runs.

    Starts follow a renewal process whose mean cycle is ``1000 / rate`` frames,
    so the event count over ``N`` frames is close to ``N * rate / 1000``.
    Events that would run past the end of the track are dropped.
    """
    rate = config.anomaly_event_rate
    if rate <= 0:
        return []
    mean_dur = 0.5 * (config.duration_lo + config.duration_hi)
    mean_gap = max(1.0, 1000.0 / rate - mean_dur)
    events = []
    t = int(rng.exponential(1000.0 / rate))
    while t < n_frames:
        dur = int(rng.integers(config.duration_lo, config.duration_hi + 1))
        if t + dur > n_frames:
            break
        events.append((t, dur, None))
        t += dur + 1 + int(rng.exponential(mean_gap - 1.0)) if mean_gap > 1 else dur + 1
    return events


def _two_link_elbow(shoulder, wrist, hint, a=UPPER_ARM, b=FOREARM):
    """Elbow of a two-segment arm reaching ``wrist``; picks the branch nearest ``hint``."""
    d_vec = wrist - shoulder
    d = np.linalg.norm(d_vec, axis=-1, keepdims=True)
    d_c = np.clip(d, abs(a - b) + 1e-6, a + b - 1e-6)
    u = d_vec / np.maximum(d, 1e-9)
    cos_t = np.clip((a * a + d_c ** 2 - b * b) / (2 * a * d_c), -1.0, 1.0)
    sin_t = np.sqrt(1 - cos_t ** 2)
    perp = np.stack([-u[..., 1], u[..., 0]], axis=-1)
    e1 = shoulder + a * (cos_t * u + sin_t * perp)
    e2 = shoulder + a * (cos_t * u - sin_t * perp)
    pick1 = np.linalg.norm(e1 - hint, axis=-1) <= np.linalg.norm(e2 - hint, axis=-1)
    return np.where(pick1[..., None], e1, e2)


def _pose_local(rng, n: int, mp: MotionParams, tau: np.ndarray | None) -> np.ndarray:
    """Local joint positions (n, 17, 2) with the mid-hip at the origin (before yaw)."""
    m = n if tau is None else int(math.ceil(tau[-1])) + 2
    arm = _ou(rng, m, mp.arm_std, mp.limb_corr_frames, 2) + 0.12
    elbow = _ou(rng, m, mp.elbow_std, mp.limb_corr_frames, 2) + 0.15
    leg = _ou(rng, m, mp.leg_std, mp.limb_corr_frames, 2) + 0.04
    shin = _ou(rng, m, mp.leg_std * 0.8, mp.limb_corr_frames, 2)
    lean = _ou(rng, m, mp.lean_std, mp.limb_corr_frames, 1)[:, 0]
    head = _ou(rng, m, mp.head_std, mp.limb_corr_frames, 1)[:, 0]
    if tau is not None:
        grid = np.arange(m, dtype=np.float64)
        warp = lambda v: np.stack([np.interp(tau, grid, v[:, j]) for j in range(v.shape[1])], 1) \
            if v.ndim == 2 else np.interp(tau, grid, v)  # noqa: E731
        arm, elbow, leg, shin, lean, head = map(warp, (arm, elbow, leg, shin, lean, head))

    pts = np.zeros((n, NUM_KEYPOINTS, 2))
    c, s = np.cos(lean), np.sin(lean)

    def rot(x, y, cc=c, ss=s):
        return np.stack([cc * x - ss * y, ss * x + cc * y], axis=-1)

    for side, sgn in (("left", 1.0), ("right", -1.0)):
        i = 0 if side == "left" else 1
        hip = np.array([sgn * HIP_HALF, 0.0])
        pts[:, KP[f"{side}_hip"]] = hip
        sh = rot(np.full(n, sgn * SHOULDER_HALF), np.full(n, -TORSO))
        pts[:, KP[f"{side}_shoulder"]] = sh
        a1 = arm[:, i]
        el = sh + UPPER_ARM * np.stack([sgn * np.sin(a1), np.cos(a1)], -1)
        a2 = a1 + elbow[:, i]
        pts[:, KP[f"{side}_elbow"]] = el
        pts[:, KP[f"{side}_wrist"]] = el + FOREARM * np.stack([sgn * np.sin(a2), np.cos(a2)], -1)
        g1 = leg[:, i]
        kn = hip + THIGH * np.stack([sgn * np.sin(g1), np.cos(g1)], -1)
        g2 = g1 + shin[:, i]
        pts[:, KP[f"{side}_knee"]] = kn
        pts[:, KP[f"{side}_ankle"]] = kn + SHIN * np.stack([sgn * np.sin(g2), np.cos(g2)], -1)
    neck = rot(np.zeros(n), np.full(n, -TORSO))
    hc, hs = np.cos(lean + head), np.sin(lean + head)
    for name, (hx, hy) in HEAD.items():
        pts[:, KP[name]] = neck + rot(np.full(n, hx), np.full(n, hy), hc, hs)
    return pts


def _apply_motif(pts: np.ndarray, start: int, dur: int, category: str, mp: MotionParams) -> None:
    """In-place concealment motif on frames [start, start + dur)."""
    (tx, ty), both = MOTIFS[category]
    t = np.arange(dur, dtype=np.float64)
    ramp = np.minimum(1.0, np.minimum(t + 1, dur - t) / max(mp.motif_ramp_frames, 1))
    osc = mp.motif_amplitude_px * np.sin(2 * np.pi * t / mp.motif_period_frames)
    seg = slice(start, start + dur)
    sides = (("left", 1.0), ("right", -1.0)) if both else (("right", -1.0),)
    for side, sgn in sides:
        w_i, e_i, s_i = KP[f"{side}_wrist"], KP[f"{side}_elbow"], KP[f"{side}_shoulder"]
        wrist = pts[seg, w_i]
        target = np.stack([np.full(dur, sgn * tx) + osc, np.full(dur, ty)], -1)
        new_wrist = wrist + ramp[:, None] * (target - wrist)
        pts[seg, e_i] = _two_link_elbow(pts[seg, s_i], new_wrist, pts[seg, e_i])
        pts[seg, w_i] = new_wrist


def generate_track(config: SynthConfig, camera_id: int, person_id: int,
                   category_offset: int = 0) -> tuple[Track, int]:
    """One track plus the number of events it holds (for round-robin categories)."""
    mp = config.motion
    n = config.frames_per_camera
    ss = np.random.SeedSequence(entropy=config.seed,
                                spawn_key=(config.stream_id, camera_id, person_id))
    rng = np.random.default_rng(ss)
    events = sample_events(rng, n, config)

    frames = np.arange(n)
    tau = motion_time(config, frames) if config.drift.applies_to(camera_id) and \
        config.drift.kind == "speed" else None
    pts = _pose_local(rng, n, mp, tau)
    labels = np.zeros(n, dtype=np.int8)
    ev = [None] * n
    for k, (st, dur, _) in enumerate(events):
        cat = EVENT_CATEGORIES[(category_offset + k) % len(EVENT_CATEGORIES)]
        _apply_motif(pts, st, dur, cat, mp)
        labels[st:st + dur] = 1
        ev[st:st + dur] = [cat] * dur

    w, h = mp.image_size
    yaw = np.clip(1.0 + _ou(rng, n, mp.yaw_std, mp.yaw_corr_frames)[:, 0], 0.5, 1.3)
    body = (rng.uniform(0.85, 1.15) + _ou(rng, n, mp.scale_std, 200.0)[:, 0])
    vel = _ou(rng, n, mp.root_speed_std, mp.root_corr_frames, 2)
    start = np.array([rng.uniform(0.2, 0.8) * w, rng.uniform(0.45, 0.65) * h])
    root = start + np.cumsum(vel, axis=0)
    root[:, 0] = _reflect(root[:, 0], 0.1 * w, 0.9 * w)
    root[:, 1] = _reflect(root[:, 1], 0.4 * h, 0.75 * h)

    xy = np.empty_like(pts)
    xy[..., 0] = root[:, None, 0] + body[:, None] * yaw[:, None] * pts[..., 0]
    xy[..., 1] = root[:, None, 1] + body[:, None] * pts[..., 1]
    if config.drift.applies_to(camera_id) and config.drift.kind == "affine":
        p = drift_schedule(config, frames)
        xy[..., 0] = 0.5 * w + p.scale_x[:, None] * (xy[..., 0] - 0.5 * w) + p.tx[:, None]
        xy[..., 1] = 0.5 * h + p.scale_y[:, None] * (xy[..., 1] - 0.5 * h) + p.ty[:, None]
    if mp.jitter_px > 0:
        xy = xy + mp.jitter_px * rng.standard_normal(xy.shape)
    conf = rng.uniform(0.6, 1.0, size=(n, NUM_KEYPOINTS))
    present = np.ones((n, NUM_KEYPOINTS), dtype=bool)
    if config.missing_rate > 0:
        present = rng.random((n, NUM_KEYPOINTS)) >= config.missing_rate
        empty = ~present.any(axis=0)
        present[0, empty] = True
    xy = np.where(present[..., None], xy, 0.0)
    conf = np.where(present, conf, 0.0)
    return Track(camera_id, person_id, frames, xy, conf, present, labels, tuple(ev)), len(events)


def generate_tracks(config: SynthConfig) -> list[Track]:
    """All tracks, sorted by (camera_id, person_id); cameras are numbered from 1."""
    config.validated()
    tracks = []
    offset = 0
    for cam in range(1, config.num_cameras + 1):
        for pid in range(config.persons_per_camera):
            tr, k = generate_track(config, cam, pid, offset)
            offset += k
            tracks.append(tr)
    return tracks


def generate(config: SynthConfig) -> list[PoseFrame]:
    """Pose stream as frames ordered by (camera_id, frame_index, person_id)."""
    frames = [f for tr in generate_tracks(config) for f in tr.frames]
    frames.sort(key=lambda f: (f.camera_id, f.frame_index, f.person_id))
    return frames


def without_drift(config: SynthConfig) -> SynthConfig:
    return replace(config, drift=DriftConfig())
