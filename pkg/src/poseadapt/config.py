"""INI experiment files.

Sections: ``[run]`` (RunConfig fields), ``[synth]`` (test stream generator),
``[calibration]`` (overrides for the drift-free training stream), ``[paths]``
and ``[roi]`` (``camera_N = x_min, y_min, x_max, y_max``).  Every value has a
default except the three synth keys in ``REQUIRED_SYNTH``.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .domain import ROI, RunConfig, validate
from .errors import BadROI, ConfigError
from .synth import DriftConfig, SynthConfig

REQUIRED_SYNTH = ("frames_per_camera", "persons_per_camera", "anomaly_event_rate")

_SYNTH_KEYS = {"num_cameras": int, "frames_per_camera": int, "persons_per_camera": int,
               "anomaly_event_rate": float, "duration_lo": int, "duration_hi": int,
               "seed": int, "missing_rate": float}
_DRIFT_KEYS = {"drift": str, "scale_rate": float, "translation_rate": float, "speed_rate": float,
               "drift_cameras": str}
_PATH_KEYS = ("stream", "train_stream", "validation_scores", "out")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(section: str, key: str, text: str, kind):
    try:
        if kind is bool:
            return _bool(text)
        if kind is int:
            return int(float(text)) if "e" in text.lower() else int(text)
        return kind(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r} as {kind.__name__}") from None


_RUN_TYPES = {"window_size": int, "stride": int, "smoothing_len": int, "mix_ratio": str,
              "schedule_mode": str, "frames_per_day": int, "scorer_kind": str, "pca_k": int,
              "ridge_epsilon": float, "threshold_choice": str, "adaptive_thresholds": bool,
              "rng_seed": int, "deployment_lag": int, "include_velocity": bool,
              "validation_fraction": float, "execution": str, "min_buffer": int, "fps": float}


@dataclass(frozen=True)
class Experiment:
    run: RunConfig
    synth: SynthConfig | None = None
    calibration: SynthConfig | None = None
    paths: dict[str, str] = field(default_factory=dict)

    def with_seed(self, seed: int) -> "Experiment":
        return replace(
            self, run=replace(self.run, rng_seed=seed),
            synth=replace(self.synth, seed=seed) if self.synth else None,
            calibration=replace(self.calibration, seed=seed) if self.calibration else None)

    def to_ini(self) -> str:
        """Effective configuration with every default written out."""
        cp = configparser.ConfigParser(interpolation=None)
        cp["run"] = {k: _fmt(v) for k, v in self.run.to_dict().items()
                     if k in _RUN_TYPES and v is not None}
        if self.synth is not None:
            cp["synth"] = _synth_section(self.synth)
        if self.calibration is not None:
            cp["calibration"] = _synth_section(self.calibration)
        if self.paths:
            cp["paths"] = dict(self.paths)
        if self.run.rois:
            cp["roi"] = {f"camera_{r.camera_id}": f"{r.x_min}, {r.y_min}, {r.x_max}, {r.y_max}"
                         for r in self.run.rois}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _synth_section(s: SynthConfig) -> dict[str, str]:
    d = {k: _fmt(getattr(s, k)) for k in _SYNTH_KEYS}
    d.update(drift=s.drift.kind, scale_rate=_fmt(s.drift.scale_rate),
             translation_rate=_fmt(s.drift.translation_rate), speed_rate=_fmt(s.drift.speed_rate))
    if s.drift.cameras is not None:
        d["drift_cameras"] = ", ".join(map(str, s.drift.cameras))
    return d


def _parse_synth(section, name: str, base: dict | None = None, required=()) -> SynthConfig:
    vals: dict[str, Any] = dict(base or {})
    for key in required:
        if key not in section and key not in vals:
            raise ConfigError(f"missing required key [{name}] {key}")
    drift = dict(vals.pop("_drift", {}))
    for key, text in section.items():
        if key in _SYNTH_KEYS:
            vals[key] = _convert(name, key, text, _SYNTH_KEYS[key])
        elif key in _DRIFT_KEYS:
            drift[key] = text
        else:
            raise ConfigError(f"unknown key [{name}] {key}")
    try:
        cams = drift.get("drift_cameras")
        dc = DriftConfig(
            kind=drift.get("drift", "none").strip(),
            scale_rate=float(drift.get("scale_rate", 0.0)),
            translation_rate=float(drift.get("translation_rate", 0.0)),
            speed_rate=float(drift.get("speed_rate", 0.0)),
            cameras=tuple(int(c) for c in cams.split(",")) if cams else None)
    except ValueError as exc:
        raise ConfigError(f"[{name}] bad drift setting: {exc}") from None
    return SynthConfig(drift=dc, **vals).validated()


def _parse_roi(section) -> tuple[ROI, ...]:
    rois = []
    for key, text in section.items():
        if not key.startswith("camera_"):
            raise ConfigError(f"[roi] keys must look like camera_N, got {key!r}")
        try:
            cam = int(key[len("camera_"):])
            x0, y0, x1, y1 = (float(v) for v in text.split(","))
        except ValueError:
            raise ConfigError(f"[roi] {key}: expected 'x_min, y_min, x_max, y_max'") from None
        roi = ROI(cam, x0, y0, x1, y1)
        try:
            validate(roi)
        except BadROI as exc:
            raise ConfigError(str(exc)) from None
        rois.append(roi)
    return tuple(sorted(rois, key=lambda r: r.camera_id))


def parse_experiment(text: str, require_synth: bool = False) -> Experiment:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    known = {"run", "synth", "calibration", "paths", "roi"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")

    run_kw: dict[str, Any] = {}
    if cp.has_section("run"):
        for key, text_v in cp["run"].items():
            if key not in _RUN_TYPES:
                raise ConfigError(f"unknown key [run] {key}")
            run_kw[key] = _convert("run", key, text_v, _RUN_TYPES[key])
    paths = dict(cp["paths"]) if cp.has_section("paths") else {}
    for key in paths:
        if key not in _PATH_KEYS:
            raise ConfigError(f"unknown key [paths] {key}")
    rois = _parse_roi(cp["roi"]) if cp.has_section("roi") else ()
    run = RunConfig(rois=rois, stream_path=paths.get("stream"),
                    train_stream_path=paths.get("train_stream"), out_dir=paths.get("out"), **run_kw)
    validate(run)

    synth = calib = None
    if cp.has_section("synth"):
        synth = _parse_synth(cp["synth"], "synth", required=REQUIRED_SYNTH)
    elif require_synth:
        raise ConfigError(f"missing required section [synth] (keys: {', '.join(REQUIRED_SYNTH)})")
    if synth is not None:
        # drift-free training stream: a day per camera, two persons, same event rate
        base = {k: getattr(synth, k) for k in _SYNTH_KEYS}
        base.update(frames_per_camera=run.frames_per_day, persons_per_camera=2)
        section = cp["calibration"] if cp.has_section("calibration") else {}
        calib = replace(_parse_synth(section, "calibration", base), stream_id=1)
    elif cp.has_section("calibration"):
        calib = replace(_parse_synth(cp["calibration"], "calibration", required=REQUIRED_SYNTH),
                        stream_id=1)
    return Experiment(run, synth, calib, paths)


def load_experiment(path, require_synth: bool = False) -> Experiment:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    return parse_experiment(text, require_synth)


def run_config_fields() -> tuple[str, ...]:
    return tuple(f.name for f in fields(RunConfig))
