import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poseadapt.domain import KP, ROI, RunConfig
from poseadapt.errors import AllMissingChannel, ConfigError, DegenerateTorso
from poseadapt.preprocess import (
    PREPROCESS_ORDER,
    FeatureConfig,
    apply_roi,
    check_order,
    extract_features,
    interpolate_missing,
    mid_hip,
    prepare_track,
    prepare_tracks,
    smooth,
    window_offsets,
    windowize,
)

from conftest import make_track, upright_xy


def _with_missing(track, frames, joint=0):
    present = np.array(track.present)
    present[frames, joint] = False
    xy = np.array(track.xy)
    xy[frames, joint] = np.nan
    return track.with_arrays(xy=xy, present=present)


def test_interpolation_midpoint():
    tr = make_track(3)
    xy = np.array(tr.xy)
    xy[:, 0, 0] = [0.0, 99.0, 4.0]
    tr = _with_missing(tr.with_arrays(xy=xy), [1])
    out = interpolate_missing(tr)
    assert out.xy[1, 0, 0] == 2.0
    assert out.confidence[1, 0] == 0.0 and out.present.all()


def test_interpolation_uses_frame_index_spacing():
    tr = make_track(3)
    tr = tr.with_arrays(frame_index=np.array([0, 1, 4]))
    xy = np.array(tr.xy)
    xy[:, 0, 0] = [0.0, 0.0, 8.0]
    out = interpolate_missing(_with_missing(tr.with_arrays(xy=xy), [1]))
    assert out.xy[1, 0, 0] == 2.0


def test_interpolation_holds_head_and_tail():
    tr = make_track(6)
    xy = np.array(tr.xy)
    xy[:, 3, 0] = 5.0
    out = interpolate_missing(_with_missing(tr.with_arrays(xy=xy), [0, 1, 5], joint=3))
    assert list(out.xy[:, 3, 0]) == [5.0] * 6


def test_interpolation_identity_and_all_missing():
    tr = make_track(5)
    assert interpolate_missing(tr) is tr
    with pytest.raises(AllMissingChannel):
        interpolate_missing(_with_missing(tr, list(range(5)), joint=7))


def _convolution_oracle(x, lo=-3, hi=4):
    n = len(x)
    return np.array([np.mean([x[i + o] for o in range(lo, hi + 1) if 0 <= i + o < n]) for i in range(n)])


def test_smoothing_impulse():
    tr = make_track(40)
    xy = np.zeros_like(tr.xy)
    xy[20, 0, 0] = 8.0
    out = smooth(tr.with_arrays(xy=xy)).xy[:, 0, 0]
    ones = np.flatnonzero(np.isclose(out, 1.0))
    assert list(ones) == list(range(16, 24))
    assert np.allclose(out, _convolution_oracle(xy[:, 0, 0]))


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_smoothing_matches_oracle_and_stays_in_range(values):
    n = len(values)
    tr = make_track(n)
    xy = np.array(tr.xy)
    xy[:, 2, 1] = values
    out = smooth(tr.with_arrays(xy=xy)).xy[:, 2, 1]
    assert np.allclose(out, _convolution_oracle(np.array(values)), atol=1e-9)
    assert out.min() >= min(values) - 1e-9 and out.max() <= max(values) + 1e-9


def test_smoothing_constant_and_short():
    tr = make_track(20)
    assert np.array_equal(smooth(tr).xy, tr.xy)
    one = make_track(1)
    assert np.array_equal(smooth(one).xy, one.xy)
    assert np.array_equal(smooth(tr).confidence, tr.confidence)


def test_roi_enumeration(rng):
    tr = make_track(10)
    shift = rng.uniform(-150, 150, size=(10, 2))
    tr = tr.with_arrays(xy=tr.xy + shift[:, None, :])
    roi = ROI(1, 250, 300, 400, 450)
    hip = mid_hip(tr.xy)
    inside = [i for i in range(10) if 250 <= hip[i, 0] <= 400 and 300 <= hip[i, 1] <= 450]
    kept = apply_roi(tr, [roi])
    assert list(kept.frame_index) == inside
    kept_frames = apply_roi(tr.frames, [roi])
    assert [f.frame_index for f in kept_frames] == inside
    assert len(apply_roi(tr, [ROI(2, 0, 0, 1, 1)])) == 10


def test_roi_edge_kept():
    tr = make_track(1)
    hx, hy = mid_hip(tr.xy)[0]
    assert len(apply_roi(tr, [ROI(1, hx, hy, hx + 10, hy + 10)])) == 1


def test_windowize_counts_and_labels():
    assert [w.start_frame for w in windowize(make_track(36))] == [0, 6, 12]
    assert windowize(make_track(23)) == []
    labels = np.zeros(36, dtype=int)
    labels[30] = 1
    wins = windowize(make_track(36, labels=labels))
    # coverage enumeration: a window is anomalous iff it contains frame 30
    expect = [int(s <= 30 < s + 24) for s in (0, 6, 12)]
    assert [w.label for w in wins] == expect == [0, 0, 1]
    labels = np.zeros(36, dtype=int)
    labels[29] = 1
    assert [w.label for w in windowize(make_track(36, labels=labels))] == [0, 1, 1]


@given(st.integers(0, 200), st.integers(2, 30), st.integers(1, 10))
def test_window_count_formula(n, w, s):
    got = len(window_offsets(np.arange(n), w, s))
    assert got == ((n - w) // s + 1 if n >= w else 0)


def test_windows_restart_after_gap():
    fi = np.concatenate([np.arange(0, 30), np.arange(100, 130)])
    assert list(fi[window_offsets(fi, 24, 6)]) == [0, 6, 100, 106]


def test_feature_dimension_and_zero_velocity():
    win = windowize(make_track(24))[0]
    fv = extract_features(win)
    d = FeatureConfig().dim
    assert d == 24 * 34 + 23 * 34 and len(fv.values) == d
    assert np.all(fv.values[24 * 34:] == 0)
    assert len(extract_features(win, FeatureConfig(24, False)).values) == 24 * 34


@st.composite
def transforms(draw):
    return (draw(st.floats(-500, 500)), draw(st.floats(-500, 500)), draw(st.floats(0.1, 10)))


@given(st.integers(0, 10_000), transforms())
def test_translation_and_scale_invariance(seed, tf):
    dx, dy, k = tf
    rng = np.random.default_rng(seed)
    tr = make_track(24, rng=rng, noise=5.0)
    base = extract_features(windowize(tr)[0]).values
    hip = mid_hip(tr.xy)[:, None, :]
    moved = tr.with_arrays(xy=hip + k * (tr.xy - hip) + np.array([dx, dy]))
    assert np.allclose(extract_features(windowize(moved)[0]).values, base, atol=1e-8)


def test_degenerate_torso():
    tr = make_track(24)
    xy = np.array(tr.xy)
    xy[3, [KP["left_shoulder"], KP["right_shoulder"]]] = xy[3, [KP["left_hip"], KP["right_hip"]]]
    with pytest.raises(DegenerateTorso):
        extract_features(windowize(tr.with_arrays(xy=xy), 24)[0])


def test_prepare_drops_degenerate_windows_only():
    tr = make_track(60)
    xy = np.array(tr.xy)
    xy[:, [KP["left_shoulder"], KP["right_shoulder"]]] = xy[:, [KP["left_hip"], KP["right_hip"]]] + [0, -55]
    xy[55, [KP["left_shoulder"], KP["right_shoulder"]]] = xy[55, [KP["left_hip"], KP["right_hip"]]]
    p = prepare_track(tr.with_arrays(xy=xy), smoothing_len=1)
    assert list(p.start_frames) == [0, 6, 12, 18, 24, 30]


def test_prepared_features_match_single_window_path(rng):
    tr = make_track(50, labels=[0] * 40 + [1] * 10, rng=rng, noise=3.0)
    p = prepare_tracks([tr], RunConfig())[0]
    smoothed = smooth(tr)
    wins = windowize(smoothed)
    assert list(p.start_frames) == [w.start_frame for w in wins]
    assert list(p.window_labels) == [w.label for w in wins]
    feats = p.features()
    for i, w in enumerate(wins):
        assert np.allclose(feats[i], extract_features(w).values, atol=1e-12)
    assert p.window_events[-1] == "pants" and p.window_events[0] is None


def test_stage_order():
    assert check_order(PREPROCESS_ORDER) == PREPROCESS_ORDER
    with pytest.raises(ConfigError):
        check_order(["interpolate", "roi", "smooth", "windowize", "features"])


def test_upright_fixture_torso():
    xy = upright_xy(1)
    assert np.linalg.norm(xy[0, 5] / 2 + xy[0, 6] / 2 - mid_hip(xy)[0]) == pytest.approx(55)
