import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from poseadapt.domain import NUM_KEYPOINTS, Keypoint, PoseFrame, Track

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_frame(camera_id=1, frame_index=0, person_id=0, label=0, event=None, xy=None, n_kp=NUM_KEYPOINTS):
    if xy is None:
        xy = [(10.0 + j, 20.0 + 2 * j) for j in range(n_kp)]
    kps = tuple(Keypoint(float(x), float(y), 0.9) for x, y in xy)
    return PoseFrame(camera_id, frame_index, person_id, kps, label, event)


def upright_xy(n, rng=None, noise=0.0):
    """(n, 17, 2) skeleton with shoulders 55 px above the hips."""
    base = np.zeros((NUM_KEYPOINTS, 2))
    base[:, 0] = np.linspace(-20, 20, NUM_KEYPOINTS)
    base[:, 1] = np.linspace(-75, 80, NUM_KEYPOINTS)
    base[5], base[6] = (20, -55), (-20, -55)
    base[11], base[12] = (12, 0), (-12, 0)
    xy = np.repeat(base[None], n, axis=0) + np.array([300.0, 400.0])
    if rng is not None and noise:
        xy = xy + noise * rng.standard_normal(xy.shape)
    return xy


def make_track(n=40, camera_id=1, person_id=0, labels=None, start=0, rng=None, noise=0.0, events=None):
    xy = upright_xy(n, rng, noise)
    labels = np.zeros(n, dtype=np.int8) if labels is None else np.asarray(labels, dtype=np.int8)
    if events is None:
        events = tuple("pants" if lab else None for lab in labels)
    return Track(camera_id, person_id, np.arange(start, start + n), xy,
                 np.full((n, NUM_KEYPOINTS), 0.9), np.ones((n, NUM_KEYPOINTS), dtype=bool),
                 labels, events)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + \
        (f"  [{detail}]" if detail else "")
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
