import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from glmb_im.gaussian import GaussianDensity
from glmb_im.models import (
    BirthModel,
    HybridObservation,
    SensorModel,
    SurvivalModel,
    birth_components,
    border_mask,
    calibrate_template_sigma,
    expected_object_patch,
    hybrid_phi,
    image_snr_loglik,
    initial_template,
    load_mask_pgm,
    log_detection_snr,
    paper_birth_model,
    read_pgm,
    survival_probability,
    update_reference_template,
    write_pgm,
)
from glmb_im.rfs import LabeledGaussianTrack, TrackLabel
from glmb_im.simulator import render_image


def track_at(x, y, birth=0):
    return LabeledGaussianTrack(TrackLabel(birth, 0), np.array([x, 0.0, y, 0.0]), np.eye(4))


PRIOR = GaussianDensity(np.array([20.0, 0.5, 20.0, -0.5]), np.diag([2.0, 1.0, 2.0, 1.0]))


def test_border_mask_hard_and_ramp():
    hard = border_mask(100, 100, 10)
    assert hard[50, 50] == 1.0 and hard[5, 50] == 0.0 and hard[50, 95] == 0.0
    assert hard[10, 10] == 1.0 and hard[9, 50] == 0.0
    ramp = border_mask(100, 100, 10, edge=0.5, ramp=True)
    assert ramp[0, 50] == 0.5 and ramp[50, 50] == 1.0
    assert 0.5 < ramp[5, 50] < 1.0


def test_survival_age_zero_is_half_mask():
    s = SurvivalModel(border_mask(100, 100, 10), 0.1)
    assert survival_probability(track_at(50, 50, birth=4), 4, s) == 0.5
    assert survival_probability(track_at(5, 50, birth=4), 4, s) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 99), st.floats(0, 99), st.floats(0.01, 2.0))
def test_survival_monotone_and_bounded(x, y, gamma):
    mask = border_mask(100, 100, 10, edge=0.3, ramp=True)
    s = SurvivalModel(mask, gamma)
    b = s.mask_at(np.array([x, y]))[0]
    vals = [survival_probability(track_at(x, y), k, s) for k in range(101)]
    assert np.all(np.diff(vals) >= 0)
    assert max(vals) <= b
    assert vals[0] == pytest.approx(0.5 * b)


def test_survival_off_image_and_errors():
    s = SurvivalModel(np.ones((10, 10)), 0.1)
    assert survival_probability(track_at(-5, 3), 10, s) == 0.0
    with pytest.raises(ValueError):
        survival_probability(track_at(3, 3, birth=5), 2, s)
    assert survival_probability(track_at(3, 3), 7, SurvivalModel(constant=0.98)) == 0.98


def test_survival_integrated_on_flat_mask_matches_mean():
    s_mean = SurvivalModel(np.full((50, 50), 0.7), 0.1)
    s_int = SurvivalModel(np.full((50, 50), 0.7), 0.1, integrate=True)
    t = track_at(25, 25)
    assert survival_probability(t, 3, s_int) == pytest.approx(survival_probability(t, 3, s_mean))


def test_pgm_roundtrip(tmp_path):
    mask = border_mask(40, 30, 5, edge=0.25)
    path = tmp_path / "mask.pgm"
    write_pgm(path, mask, maxval=1.0)
    back = load_mask_pgm(path)
    np.testing.assert_allclose(back, mask, atol=1e-4)
    img, maxval = read_pgm(path)
    assert img.shape == (30, 40) and maxval == 65535


def test_ascii_pgm(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P2\n# comment\n3 2\n4\n0 1 2\n3 4 4\n")
    img, maxval = read_pgm(path)
    np.testing.assert_array_equal(img, [[0, 1, 2], [3, 4, 4]])
    assert maxval == 4


def test_detection_snr_oracle():
    sensor = SensorModel()
    z = np.array([21.0, 18.0])
    log_ratio, post = log_detection_snr(z, PRIOR, sensor)
    S = sensor.H @ PRIOR.cov @ sensor.H.T + sensor.Sigma
    ref = multivariate_normal(sensor.H @ PRIOR.mean, S).logpdf(z) - np.log(10 / 1e4)
    assert log_ratio == pytest.approx(ref, abs=1e-10)
    assert post.cov[0, 0] < PRIOR.cov[0, 0]


def test_image_snr_template_match_gives_base_distance():
    sensor = SensorModel(template_sigma=5.0)
    tmpl = expected_object_patch(sensor)
    image = np.full((20, 20), 2.0)
    image[9:12, 9:12] = tmpl
    mu = sensor.noise_power
    d0 = np.sum((tmpl - mu) ** 2 + mu * mu)
    state = np.array([10.0, 0, 10.0, 0])
    assert image_snr_loglik(state, image, tmpl, sensor) == pytest.approx(d0 / 25.0)


def test_image_snr_pure_noise_is_zero_mean():
    sensor = SensorModel()
    tmpl = expected_object_patch(sensor)
    rng = np.random.default_rng(0)
    vals = []
    for _ in range(1000):
        img = render_image([], 10.0, 9, 9, seed=int(rng.integers(2**32))).pixels
        vals.append(image_snr_loglik(np.array([4.0, 0, 4.0, 0]), img, tmpl, sensor))
    vals = np.asarray(vals)
    assert abs(vals.mean()) < 3 * vals.std(ddof=1) / np.sqrt(len(vals))


def test_image_snr_border_clipping_renormalises():
    sensor = SensorModel()
    tmpl = expected_object_patch(sensor)
    rng = np.random.default_rng(2)
    corner, inner = [], []
    for _ in range(2000):
        img = render_image([], 10.0, 12, 12, seed=int(rng.integers(2**32))).pixels
        corner.append(image_snr_loglik(np.array([0.0, 0, 0.0, 0]), img, tmpl, sensor))
        inner.append(image_snr_loglik(np.array([6.0, 0, 6.0, 0]), img, tmpl, sensor))
    assert np.all(np.isfinite(corner))
    se = np.std(corner, ddof=1) / np.sqrt(len(corner))
    assert abs(np.mean(corner)) < 4 * se


def test_image_snr_rejects_zero_template():
    with pytest.raises(ValueError):
        image_snr_loglik(np.zeros(4), np.ones((5, 5)), np.zeros((3, 3)), SensorModel())


def test_template_sigma_calibration_monte_carlo():
    sensor = SensorModel(template_sigma=calibrate_template_sigma(SensorModel(), 3.0))
    tmpl = expected_object_patch(sensor)
    rng = np.random.default_rng(4)
    vals = []
    for _ in range(1500):
        p = np.array([10.0, 10.0]) + rng.uniform(-0.5, 0.5, 2)
        img = render_image([p], 10.0, 21, 21, seed=int(rng.integers(2**32))).pixels
        vals.append(image_snr_loglik(np.array([p[0], 0, p[1], 0]), img, tmpl, sensor))
    se = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert abs(np.mean(vals) - 3.0) < 4 * se


def test_hybrid_phi_limits():
    obs = HybridObservation(np.full((40, 40), 2.0), np.array([[20.0, 20.0]]))
    tmpl = expected_object_patch(SensorModel())
    log_phi, _ = hybrid_phi(0, PRIOR, obs, SensorModel(P_D=1.0), tmpl)
    assert log_phi == -np.inf
    log_phi, _ = hybrid_phi(1, PRIOR, obs, SensorModel(P_D=0.0), tmpl)
    assert log_phi == -np.inf
    flat = SensorModel(use_image=False)
    log_phi, post = hybrid_phi(0, PRIOR, obs, flat, tmpl)
    assert log_phi == pytest.approx(np.log(0.02))
    np.testing.assert_array_equal(post.mean, PRIOR.mean)
    np.testing.assert_array_equal(post.cov, PRIOR.cov)


def test_hybrid_phi_detection_branch():
    sensor = SensorModel()
    obs = HybridObservation(np.full((40, 40), 2.0), np.array([[22.0, 19.0]]))
    log_phi, post = hybrid_phi(1, PRIOR, obs, sensor)
    ref, _ = log_detection_snr(obs.detections[0], PRIOR, sensor)
    assert log_phi == pytest.approx(np.log(0.98) + ref)


def test_template_update_rules():
    sensor = SensorModel()
    tmpl = np.zeros((3, 3))
    image = np.ones((10, 10))
    state = np.array([5.0, 0, 5.0, 0])
    assert update_reference_template(tmpl, image, state, False, 0.1, sensor) is tmpl
    np.testing.assert_allclose(update_reference_template(tmpl, image, state, True, 0.1, sensor), 0.1)
    fixed = np.ones((3, 3))
    np.testing.assert_allclose(update_reference_template(fixed, image, state, True, 0.1, sensor), fixed)


def test_initial_template_modes():
    sensor = SensorModel()
    image = np.arange(100.0).reshape(10, 10)
    np.testing.assert_allclose(initial_template(sensor), expected_object_patch(sensor))
    got = initial_template(sensor, image, np.array([4.0, 0, 6.0, 0]), mode="image")
    np.testing.assert_allclose(got, image[5:8, 3:6])


def test_paper_birth_components():
    births = birth_components(7, paper_birth_model(), SensorModel())
    assert len(births) == 5
    means = [b[2].mean.tolist() for b in births]
    assert means == [[5, 0, 5, 0], [5, 0, 25, 0], [5, 0, 90, 0], [90, 0, 30, 0], [80, 0, 90, 0]]
    assert all(b[1] == 0.03 for b in births)
    assert [b[0] for b in births] == [TrackLabel(7, i) for i in range(5)]
    np.testing.assert_array_equal(births[0][2].cov, np.diag([3.0, 2, 3, 2]))


def test_adaptive_birth_on_weak_detections():
    base = paper_birth_model()
    adaptive = BirthModel(base.static_components, adaptive_enabled=True)
    prev = HybridObservation(np.full((100, 100), 2.0), np.array([[50.0, 50.0], [10.0, 60.0]]))
    births = birth_components(3, adaptive, SensorModel(), prev, np.array([0.0, 0.9]))
    assert len(births) == 6
    np.testing.assert_array_equal(births[-1][2].mean, [50, 0, 50, 0])
    none = birth_components(3, adaptive, SensorModel(), HybridObservation(np.zeros((5, 5)), np.zeros((0, 2))))
    assert len(none) == 5
