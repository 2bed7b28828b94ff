import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contact_slam.geometry import rectangle
from contact_slam.simulator import CAL_BLOCK, DEFAULT_ARMS, NoiseConfig, load_share, synth_calibration, synth_contact
from contact_slam.tactile import (LEFT, RIGHT, CalibrationError, CalibrationSample, FrameError,
                                  InconsistentMeasurement, LeverArms, MarkerField, Prism, Wrench,
                                  calibrate_lever_arms, estimate_contact_point, in_hand_transform,
                                  kabsch_registration, line_residuals, load_samples_csv, net_force,
                                  resultant_torque, synthesize_wrenches, to_gripper, torque_about,
                                  write_samples_csv)

vec = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3).map(np.array)


def W(f, m=(0, 0, 0), frame=LEFT):
    return Wrench(f, m, frame)


def rot_z(deg):
    a = np.radians(deg)
    return np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


# --------------------------------------------------------------------------- wrenches

@pytest.mark.parametrize("left,right,want", [
    ((0, 0, 0), (0, 1, 0), (1, 0, 0)),
    ((0, 0, 2), (0, 0, 2), (0, 0, 0)),
    ((1, 2, 3), (4, 5, 6), (3, -3, -3)),
])
def test_net_force_examples(left, right, want):
    np.testing.assert_allclose(net_force(W(left), W(right, frame=RIGHT)), want)


def test_net_force_rejects_frame_mismatch():
    with pytest.raises(FrameError):
        net_force(W((1, 0, 0), frame=RIGHT), W((1, 0, 0), frame=LEFT))


def test_wrench_requires_finite_values():
    with pytest.raises(ValueError):
        Wrench((np.nan, 0, 0), (0, 0, 0), LEFT)


@given(vec, vec)
def test_net_force_swap_negates(a, b):
    f = net_force(W(a), W(b, frame=RIGHT))
    g = net_force(W(b), W(a, frame=RIGHT))
    np.testing.assert_allclose(f, -g, atol=1e-9)


def test_torque_about_examples():
    np.testing.assert_allclose(torque_about(W((0, 0, -1)), (10, 0, 0)), (0, 10, 0))
    w = W((3, 4, 5), (1, 2, 3))
    np.testing.assert_array_equal(torque_about(w, (0, 0, 0)), (1, 2, 3))
    np.testing.assert_allclose(torque_about(W((0, 0, 0), (1, 1, 1)), (7, -3, 2)), (1, 1, 1))


@given(vec, vec, vec, st.floats(-5, 5))
def test_torque_about_linear(f, r, s, k):
    base = torque_about(W(f), r)
    np.testing.assert_allclose(torque_about(W(k * f), r), k * base, atol=1e-6)
    np.testing.assert_allclose(torque_about(W(f), r + s) - base, np.cross(s, f), atol=1e-6)


def test_resultant_torque_examples():
    z = W((0, 0, 0))
    np.testing.assert_array_equal(resultant_torque(z, W((0, 0, 0), frame=RIGHT), DEFAULT_ARMS), 0)
    left = W((1, -2, 0.5), (3, 0, 1))
    got = resultant_torque(left, W((0, 0, 0), frame=RIGHT), DEFAULT_ARMS)
    np.testing.assert_allclose(got, torque_about(to_gripper(left), DEFAULT_ARMS.left))


@given(vec, vec, vec, vec)
def test_resultant_torque_is_sum_of_parts(fl, ml, fr, mr):
    left, right = W(fl, ml), W(fr, mr, RIGHT)
    want = torque_about(to_gripper(left), DEFAULT_ARMS.left) + torque_about(to_gripper(right), DEFAULT_ARMS.right)
    np.testing.assert_allclose(resultant_torque(left, right, DEFAULT_ARMS), want, rtol=1e-12, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_synthesized_wrenches_balance(seed):
    rng = np.random.default_rng(seed)
    point, force = synth_contact(CAL_BLOCK, rng)
    left, right = synthesize_wrenches(force, point, DEFAULT_ARMS, load_share(point, DEFAULT_ARMS))
    np.testing.assert_allclose(net_force(left, right), force, atol=1e-9)
    np.testing.assert_allclose(resultant_torque(left, right, DEFAULT_ARMS), np.cross(point, force), atol=1e-9)


# --------------------------------------------------------------------------- calibration

def test_calibration_noiseless_recovers_arms():
    arms = calibrate_lever_arms(synth_calibration(30, NoiseConfig.zero(), seed=3))
    np.testing.assert_allclose(arms.left, DEFAULT_ARMS.left, atol=1e-6)
    np.testing.assert_allclose(arms.right, DEFAULT_ARMS.right, atol=1e-6)
    assert np.isfinite(arms.condition_number)


def test_calibration_monte_carlo_with_force_noise():
    # each measured force component perturbed by 1 % of itself, 50 independent trials
    worst = 0.0
    for trial in range(50):
        rng = np.random.default_rng(100 + trial)
        noisy = []
        for s in synth_calibration(40, NoiseConfig.zero(), seed=100 + trial):
            l, r = s.left_wrench, s.right_wrench
            noisy.append(CalibrationSample(Wrench(l.force * (1 + 0.01 * rng.normal(size=3)), l.torque, LEFT),
                                           Wrench(r.force * (1 + 0.01 * rng.normal(size=3)), r.torque, RIGHT),
                                           s.contact_point))
        arms = calibrate_lever_arms(noisy)
        worst = max(worst, np.abs(arms.left - DEFAULT_ARMS.left).max(), np.abs(arms.right - DEFAULT_ARMS.right).max())
    assert worst < 0.5


def test_calibration_rank_errors():
    samples = synth_calibration(3, NoiseConfig.zero(), seed=1)
    with pytest.raises(CalibrationError, match="rank"):
        calibrate_lever_arms(samples)
    # many samples, one force direction and collinear points: deficient design
    F = np.array([0.0, 0.0, 20.0])
    same = []
    for z in np.linspace(-40, -20, 8):
        p = np.array([0.0, 0.0, z])
        l, r = synthesize_wrenches(F, p, DEFAULT_ARMS, 0.5)
        same.append(CalibrationSample(l, r, p))
    with pytest.raises(CalibrationError, match="unobservable"):
        calibrate_lever_arms(same)


def test_calibration_residual_non_increasing_on_model_data():
    samples = synth_calibration(40, NoiseConfig.zero(), seed=5)
    prev = np.inf
    for n in (6, 10, 20, 40):
        r = float(line_residuals(samples[:n], calibrate_lever_arms(samples[:n])).max())
        assert r <= max(prev, 1e-9) + 1e-12
        prev = r


def test_samples_csv_round_trip(tmp_path):
    samples = synth_calibration(7, NoiseConfig(), seed=2)
    path = tmp_path / "s.csv"
    write_samples_csv(path, samples)
    back = load_samples_csv(path)
    assert len(back) == 7
    for a, b in zip(samples, back):
        np.testing.assert_array_equal(a.left_wrench.force, b.left_wrench.force)
        np.testing.assert_array_equal(a.right_wrench.torque, b.right_wrench.torque)
        np.testing.assert_array_equal(a.contact_point, b.contact_point)


def test_samples_csv_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("fLx,fLy\n1,2\n")
    with pytest.raises(ValueError, match="missing columns"):
        load_samples_csv(path)


# --------------------------------------------------------------------------- contact point

FLAT = Prism(rectangle(0, 0, 40, 40), 0.0, 20.0)


def test_contact_point_bottom_face():
    np.testing.assert_allclose(estimate_contact_point((0, 0, 1), (0, -10, 0), FLAT), (10, 0, 0), atol=1e-12)


def test_contact_point_face_at_z_zero_downward_load():
    body = Prism(rectangle(0, 0, 40, 40), -20.0, 0.0)
    np.testing.assert_allclose(estimate_contact_point((0, 0, -1), (0, 10, 0), body), (10, 0, 0), atol=1e-12)


def test_contact_point_bottom_face_downward_load_from_above():
    # same line of action pushed the other way enters through the top face
    np.testing.assert_allclose(estimate_contact_point((0, 0, -1), (0, 10, 0), FLAT), (10, 0, 20), atol=1e-12)


def test_contact_point_face_centroid_zero_moment():
    body = Prism(rectangle(0, 0, 40, 40), -10.0, 10.0)
    np.testing.assert_allclose(estimate_contact_point((-2, 0, 0), (0, 0, 0), body), (20, 0, 0), atol=1e-12)


def test_contact_point_below_threshold_is_no_contact():
    assert estimate_contact_point((0.01, 0, 0), (0, 0, 0), FLAT) is None


def test_contact_point_line_misses_body():
    with pytest.raises(InconsistentMeasurement):
        estimate_contact_point((0, 0, 1), np.cross((100, 0, 0), (0, 0, 1)), FLAT)


def test_contact_point_round_trip_noiseless():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        point, force = synth_contact(CAL_BLOCK, rng, magnitude=rng.uniform(0.5, 20))
        left, right = synthesize_wrenches(force, point, DEFAULT_ARMS, load_share(point, DEFAULT_ARMS))
        est = estimate_contact_point(net_force(left, right), resultant_torque(left, right, DEFAULT_ARMS), CAL_BLOCK)
        worst = max(worst, float(np.linalg.norm(est - point)))
    assert worst < 1e-6


def test_contact_point_calibration_grade_noise():
    arms = calibrate_lever_arms(synth_calibration(60, NoiseConfig(), seed=1))
    errs = []
    for s in synth_calibration(500, NoiseConfig(), seed=99):
        F = net_force(s.left_wrench, s.right_wrench)
        errs.append(np.linalg.norm(estimate_contact_point(F, resultant_torque(s.left_wrench, s.right_wrench, arms),
                                                          CAL_BLOCK) - s.contact_point))
    assert max(errs) < 0.5


# --------------------------------------------------------------------------- markers

GRID = np.array([[x, y, z] for x in (-4, 0, 4) for y in (-4, 0, 4) for z in (0.0, 1.0)])


def test_kabsch_identity():
    R, t = kabsch_registration(MarkerField(GRID, GRID))
    np.testing.assert_allclose(R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(t, 0, atol=1e-12)


def test_kabsch_construct_and_recover():
    R0, t0 = rot_z(30), np.array([1.0, 2.0, 0.0])
    displaced = (GRID - t0) @ R0  # p = R0 p' + t0
    R, t = kabsch_registration(MarkerField(GRID, displaced))
    np.testing.assert_allclose(R, R0, atol=1e-9)
    np.testing.assert_allclose(t, t0, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_kabsch_random_rigid_and_proper(seed):
    rng = np.random.default_rng(seed)
    R0, t0 = random_rotation(rng), rng.normal(0, 5, 3)
    p = rng.normal(0, 5, (6, 3))
    R, t = kabsch_registration(MarkerField(p, (p - t0) @ R0))
    np.testing.assert_allclose(R, R0, atol=1e-9)
    np.testing.assert_allclose(t, t0, atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_kabsch_reflection_adversarial():
    mirrored = GRID * np.array([1, 1, -1])
    R, _ = kabsch_registration(MarkerField(GRID, mirrored))
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_kabsch_noise_residual():
    rng = np.random.default_rng(4)
    sigma = 0.01
    rms = []
    for _ in range(200):
        q = GRID + rng.normal(0, sigma, GRID.shape)
        R, t = kabsch_registration(MarkerField(GRID, q))
        rms.append(np.sqrt(np.mean(np.sum((GRID - (q @ R.T + t)) ** 2, axis=1))))
    assert max(rms) <= 3 * sigma


def test_markers_collinear_rejected():
    line = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]])
    with pytest.raises(ValueError, match="collinear"):
        MarkerField(line, line)


def test_in_hand_transform_examples():
    np.testing.assert_allclose(in_hand_transform(MarkerField(GRID, GRID)), np.eye(4), atol=1e-12)
    T = in_hand_transform(MarkerField(GRID, GRID + [0.5, 0, 0]))
    np.testing.assert_allclose(T[:3, 3], (0.5, 0, 0), atol=1e-12)
    np.testing.assert_allclose(T[:3, :3], np.eye(3), atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_in_hand_transform_composition(seed):
    rng = np.random.default_rng(seed)
    R0, t0 = random_rotation(rng), rng.normal(0, 1, 3)
    fixed = np.eye(4)
    fixed[:3, :3], fixed[:3, 3] = random_rotation(rng), rng.normal(0, 10, 3)
    motion = np.eye(4)
    motion[:3, :3], motion[:3, 3] = R0, t0
    T = in_hand_transform(MarkerField(GRID, GRID @ R0.T + t0), fixed)
    np.testing.assert_allclose(T, motion @ fixed, atol=1e-9)


def test_lever_arms_to_dict():
    d = LeverArms([1, 2, 3], [4, 5, 6]).to_dict()
    assert d == {"left": [1.0, 2.0, 3.0], "right": [4.0, 5.0, 6.0]}
