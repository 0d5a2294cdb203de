import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poseadapt.domain import (
    ROI,
    CollectionBuffer,
    ConfusionCounts,
    FeatureVector,
    Keypoint,
    PoseFrame,
    PoseWindow,
    RunConfig,
    Schedule,
    ScorerWeights,
    ThresholdSet,
    Track,
    WindowRef,
    decode,
    encode,
    frames_to_tracks,
    parse_ratio,
    validate,
)
from poseadapt.errors import (
    BadROI,
    ChecksumMismatch,
    ConfigError,
    InvalidKeypointCount,
    LabelOutOfRange,
    NonMonotoneFrames,
    ValidationError,
)

from conftest import make_frame, make_track

finite = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)


@st.composite
def pose_frames(draw):
    kps = []
    for _ in range(17):
        if draw(st.booleans()) and draw(st.booleans()):
            kps.append(Keypoint.missing())
        else:
            kps.append(Keypoint(draw(finite), draw(finite), draw(st.floats(0, 1))))
    label = draw(st.sampled_from([0, 1]))
    event = draw(st.sampled_from([None, "pants", "jacket"])) if label else None
    return PoseFrame(draw(st.integers(1, 9)), draw(st.integers(0, 10**6)), draw(st.integers(0, 50)),
                     tuple(kps), label, event)


def test_well_formed_frame_is_ok():
    f = make_frame()
    assert validate(f) is f


def test_sixteen_keypoints_rejected():
    with pytest.raises(InvalidKeypointCount) as exc:
        validate(make_frame(n_kp=16))
    assert exc.value.field == "keypoints"


def test_repeated_frame_index_rejected():
    frames = [make_frame(frame_index=3), make_frame(frame_index=3)]
    with pytest.raises(NonMonotoneFrames):
        Track.from_frames(frames)


@pytest.mark.parametrize("label,event", [(2, None), (-1, None), (0, "pants")])
def test_label_rules(label, event):
    with pytest.raises(LabelOutOfRange):
        validate(make_frame(label=label, event=event))


def test_confidence_out_of_range():
    kps = list(make_frame().keypoints)
    kps[3] = Keypoint(1.0, 2.0, 1.5)
    with pytest.raises(ValidationError) as exc:
        validate(PoseFrame(1, 0, 0, tuple(kps)))
    assert exc.value.rule


def test_absent_keypoint_fields_ignored():
    kps = list(make_frame().keypoints)
    kps[0] = Keypoint(float("nan"), 0.0, 7.0, present=False)
    validate(PoseFrame(1, 0, 0, tuple(kps)))


def test_roi_inverted_and_inclusive_edges():
    with pytest.raises(BadROI):
        validate(ROI(1, 10, 0, 5, 10))
    roi = validate(ROI(1, 0, 0, 10, 10))
    assert roi.contains(10.0, 0.0) and not roi.contains(10.0001, 5)


def test_window_label_rule_enforced():
    frames = tuple(make_frame(frame_index=i, label=int(i == 2), event="pants" if i == 2 else None)
                   for i in range(4))
    validate(PoseWindow(1, 0, 0, frames, 1))
    with pytest.raises(LabelOutOfRange):
        validate(PoseWindow(1, 0, 0, frames, 0))
    with pytest.raises(NonMonotoneFrames):
        validate(PoseWindow(1, 0, 1, frames, 1))


def test_weights_checksum_detects_any_byte_change():
    w = ScorerWeights.create(0, "gaussian", {"mean": np.arange(4.0), "var": np.ones(4)})
    assert w.is_valid()
    for name in ("mean", "var"):
        for i in range(4):
            p = {k: np.array(v) for k, v in w.params.items()}
            raw = bytearray(p[name].tobytes())
            raw[i * 8] ^= 1
            p[name] = np.frombuffer(bytes(raw), dtype=np.float64)
            tampered = ScorerWeights(0, "gaussian", p, w.checksum)
            assert not tampered.is_valid()
            with pytest.raises(ChecksumMismatch):
                validate(tampered)


def test_weights_are_immutable():
    w = ScorerWeights.create(0, "gaussian", {"mean": np.zeros(3), "var": np.ones(3)})
    with pytest.raises(ValueError):
        w.params["mean"][0] = 1.0
    with pytest.raises(AttributeError):
        w.version = 3


def test_pca_orthonormality_checked():
    comps = np.array([[1.0, 0.0], [1.0, 0.0]])
    w = ScorerWeights.create(1, "pca", {"mean": np.zeros(2), "components": comps})
    with pytest.raises(ValidationError):
        validate(w)


@given(pose_frames())
def test_frame_round_trip(frame):
    assert decode(encode(frame)) == frame
    assert PoseFrame.from_dict(frame.to_dict()) == frame


def test_round_trip_every_type(rng):
    tr = make_track(30, labels=[0] * 10 + [1] * 5 + [0] * 15)
    w = ScorerWeights.create(2, "pca", {"mean": rng.standard_normal(3),
                                        "components": np.eye(3)[:2]}, 1, {"note": "x"})
    buf = CollectionBuffer(3)
    buf.add(WindowRef(1, 0, 6), np.zeros(2), 0.5, 1.0)
    values = [
        Keypoint(1.5, -2.25, 0.5), tr, tr.frames[0],
        PoseWindow(1, 0, 0, tr.frames[:4], 0),
        FeatureVector(rng.standard_normal(5), (1, 0, 6)),
        ROI(2, 0, 0, 5, 5), w, ThresholdSet(0.4, 0.9, 0.8, 0.75, 5),
        ConfusionCounts(2, 1, 1, 0), Schedule.build("half_day", 100, 1000), buf,
        RunConfig(rois=(ROI(1, 0, 0, 1, 1),)),
    ]
    for v in values:
        back = decode(encode(v))
        if isinstance(v, CollectionBuffer):
            assert back.to_dict() == v.to_dict()
        else:
            assert back == v, type(v).__name__


def test_track_frames_round_trip():
    tr = make_track(12, labels=[0] * 5 + [1] * 3 + [0] * 4)
    assert Track.from_frames(tr.frames) == tr
    assert frames_to_tracks(reversed(tr.frames)) == [tr]


def test_schedule_counts():
    half = Schedule.build("half_day", 10_000, 100_000)
    full = Schedule.build("full_day", 10_000, 100_000)
    assert half.num_updates == 20 and full.num_updates == 10
    assert half.boundaries[-1] <= 100_000
    assert list(half.slice_of([0, 4999, 5000, 99_999, 100_000])) == [0, 0, 1, 19, -1]
    validate(half)


@given(st.integers(2, 5000), st.integers(0, 200_000))
def test_half_day_doubles_full_day(fpd, length):
    assert Schedule.build("half_day", fpd, length).num_updates == \
        2 * Schedule.build("full_day", fpd, length).num_updates


def test_buffer_enforces_strict_threshold():
    buf = CollectionBuffer(0)
    buf.add((1, 0, 0), np.zeros(2), 0.99, 1.0)
    with pytest.raises(ValidationError):
        buf.add((1, 0, 6), np.zeros(2), 1.0, 1.0)
    assert len(buf) == 1


def test_buffer_counts_across_cameras():
    buf = CollectionBuffer(0)
    buf.extend([(1, 0, i) for i in range(30)], np.zeros((30, 2)), np.zeros(30), 1.0, [0] * 30)
    buf.extend([(2, 0, i) for i in range(70)], np.zeros((70, 2)), np.zeros(70), 1.0, [0] * 69 + [1])
    assert len(buf) == 100 and buf.per_camera_counts == {1: 30, 2: 70}
    assert buf.feature_matrix().shape == (100, 2)
    assert buf.contamination_rate == pytest.approx(0.01)


def test_run_config_defaults():
    c = validate(RunConfig())
    assert (c.window_size, c.stride, c.smoothing_len, c.mix_ratio) == (24, 6, 8, (9, 1))
    assert c.adaptive_thresholds is False and c.deployment_lag == 2
    assert c.min_buffer_size == 2
    from dataclasses import replace
    assert replace(c, scorer_kind="pca", pca_k=4).min_buffer_size == 10


@pytest.mark.parametrize("bad", ["9-1", "9:0", "a:b", "-1:2"])
def test_bad_ratio(bad):
    with pytest.raises(ConfigError):
        parse_ratio(bad)


def test_bad_run_config():
    with pytest.raises(ConfigError):
        validate(RunConfig(window_size=6, stride=6))
