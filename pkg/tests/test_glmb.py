import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glmb_im.battery import random_instance, small_model
from glmb_im.gaussian import GaussianDensity
from glmb_im.glmb import (
    GlmbFilter,
    allocate_trials,
    build_eta,
    enumerate_gammas,
    exact_update_oracle,
    gibbs_chain,
    gibbs_sample,
    init_gamma,
    is_positive_one_to_one,
    joint_predict_update,
)
from glmb_im.models import BirthComponent, BirthModel, HybridObservation, SurvivalModel, expected_object_patch
from glmb_im.rfs import (
    GlmbComponent,
    GlmbDensity,
    LabeledGaussianTrack,
    TrackLabel,
    captured_mass,
    estimate_multi_bernoulli,
    l1_distance,
    normalize,
)
from glmb_im.simulator import render_image
from oracles import reference_standard_update

seeds = st.integers(0, 2**32 - 1)


def single_track_density(model, x=15.0, y=15.0, frame=5):
    t = LabeledGaussianTrack(TrackLabel(1, 0), np.array([x, 0.0, y, 0.0]), np.eye(4))
    return GlmbDensity([GlmbComponent.from_tracks([t], 0.0)], frame)


def test_eta_row_flat_survival():
    model = small_model(use_image=False).standard_variant(0.98)
    dens = single_track_density(model)
    obs = HybridObservation(np.full((30, 30), 2.0), np.array([[15.0, 15.0]]))
    table = build_eta(dens.components[0], obs, model, k=5)
    row = table.rows[0].log_eta
    assert row[0] == pytest.approx(np.log(0.02))
    assert row[1] == pytest.approx(np.log(0.98) + np.log(1 - model.sensor.P_D))
    assert row[2] > row[1]


def test_birth_row_columns():
    model = small_model(use_image=False)
    births = [(TrackLabel(6, 0), 0.1, GaussianDensity(np.array([10.0, 0, 10, 0]), np.eye(4)), None)]
    obs = HybridObservation(np.full((30, 30), 2.0), np.zeros((0, 2)))
    table = build_eta(GlmbComponent((), 0.0, ()), obs, model, births, k=5)
    np.testing.assert_allclose(table.rows[0].log_eta, [np.log(0.9), np.log(0.1 * (1 - model.sensor.P_D))])


def test_enumerate_gammas_counts():
    # P rows over {-1, 0} plus distinct detections: sum_k C(M,k) P!/(P-k)! 2^(P-k)
    for P, M in [(0, 3), (1, 0), (2, 2), (3, 2)]:
        got = list(enumerate_gammas(P, M))
        expect = sum(
            len(list(itertools.permutations(range(M), k))) * len(list(itertools.combinations(range(P), k))) * 2 ** (P - k)
            for k in range(min(P, M) + 1)
        )
        assert len(got) == expect == len(set(got))
        assert all(is_positive_one_to_one(g) for g in got)


def test_init_gamma_is_one_to_one():
    log_eta = np.log(np.array([[0.1, 0.1, 5.0, 0.1], [0.1, 0.1, 4.0, 3.0], [0.5, 0.1, 9.0, 0.1]]))
    g = init_gamma(log_eta)
    assert is_positive_one_to_one(g)
    assert g[2] == 1 and g[0] != 1


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_gibbs_never_violates_one_to_one(seed):
    rng = np.random.default_rng(seed)
    P, M = int(rng.integers(1, 6)), int(rng.integers(0, 5))
    log_eta = rng.normal(0, 2, (P, M + 2))
    log_eta[rng.random((P, M + 2)) < 0.2] = -np.inf
    log_eta[:, 1] = np.where(np.isinf(log_eta[:, 1]), 0.0, log_eta[:, 1])
    chain = gibbs_chain(init_gamma(log_eta), 200, log_eta, rng)
    assert all(is_positive_one_to_one(g) for g in chain)
    assert np.all(chain >= -1) and np.all(chain <= M)


def test_gibbs_chain_first_sample_is_init():
    log_eta = np.zeros((2, 4))
    chain = gibbs_chain(np.array([1, -1]), 5, log_eta, np.random.default_rng(0))
    assert chain.shape == (5, 2)
    np.testing.assert_array_equal(chain[0], [1, -1])
    with pytest.raises(ValueError):
        gibbs_chain(np.array([1, 1]), 5, log_eta, np.random.default_rng(0))


def test_gibbs_two_rows_matches_exact_joint():
    log_eta = np.log(np.array([[0.2, 0.3, 0.5, 0.4], [0.1, 0.6, 0.2, 0.9]]))
    states = list(enumerate_gammas(2, 2))
    probs = np.array([np.exp(sum(log_eta[i, g + 1] for i, g in enumerate(s))) for s in states])
    probs /= probs.sum()
    chain = gibbs_chain(np.array([-1, -1]), 40001, log_eta, np.random.default_rng(3))[1:]
    counts = {s: 0 for s in states}
    for g in chain:
        counts[tuple(g)] += 1
    freq = np.array([counts[s] for s in states]) / len(chain)
    np.testing.assert_allclose(freq, probs, atol=0.015)


def test_gibbs_sample_unique():
    log_eta = np.zeros((2, 3))
    out = gibbs_sample(np.array([0, 0]), 500, log_eta, np.random.default_rng(1))
    keys = [g.tobytes() for g in out]
    assert len(keys) == len(set(keys)) <= len(list(enumerate_gammas(2, 1)))


def test_allocate_trials_keeps_every_live_component():
    counts = allocate_trials(np.array([0.999, 1e-6, 1e-20]), 10, np.random.default_rng(0))
    assert counts[1] >= 1 and counts[2] == 0
    assert counts.sum() >= 10


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_image_factor_one_reduces_to_standard_glmb(seed):
    inst = random_instance(np.random.default_rng(seed), use_image=False)
    model = replace(inst.model, cov_cap=1e9, survival=SurvivalModel(constant=0.93))
    exact = exact_update_oracle(inst.density, inst.observation, model, inst.births, inst.templates)
    ref = reference_standard_update(inst.density, inst.observation, model, inst.births)
    got = {}
    for comp, w in zip(exact.components, exact.weights):
        got[tuple(sorted((t.label, t.assoc) for t in comp.tracks))] = w
    assert set(got) == {k for k, v in ref.items() if v > 0}
    for k, v in got.items():
        assert v == pytest.approx(ref[k], abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_no_detection_probability_leaves_only_missed(seed):
    inst = random_instance(np.random.default_rng(seed))
    model = replace(inst.model, sensor=replace(inst.model.sensor, P_D=0.0))
    post = joint_predict_update(inst.density, inst.observation, model, inst.births, 1000,
                                np.random.default_rng(seed), inst.templates, min_weight=0.0)
    assert all(t.assoc == 0 for comp in post.components for t in comp.tracks)
    label_sets = [comp.labels for comp in post.components]
    assert len(label_sets) == len(set(label_sets))


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_joint_update_is_normalized_glmb(seed):
    inst = random_instance(np.random.default_rng(seed))
    post = joint_predict_update(inst.density, inst.observation, inst.model, inst.births, 50,
                                np.random.default_rng(seed), inst.templates)
    assert post.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert len(post) <= 50
    for comp in post.components:
        assert len(set(comp.labels)) == len(comp.labels)
    assert normalize(post).weights == pytest.approx(post.weights, abs=1e-12)


def test_gibbs_update_close_to_oracle():
    rng = np.random.default_rng(11)
    inst = random_instance(rng)
    exact = exact_update_oracle(inst.density, inst.observation, inst.model, inst.births, inst.templates)
    approx = joint_predict_update(inst.density, inst.observation, inst.model, inst.births, 10**6, rng,
                                  inst.templates, min_weight=0.0, trials=5000)
    assert l1_distance(approx, exact) < 0.05
    assert captured_mass(approx, exact) > 0.99


def test_filter_tracks_a_single_object():
    model = small_model(size=40, use_image=True)
    f = GlmbFilter(model, 50, np.random.default_rng(0))
    sensor = model.sensor
    rng = np.random.default_rng(1)
    birth = BirthModel((BirthComponent(0.1, GaussianDensity(np.array([10.0, 0, 20, 0]), np.diag([3.0, 2, 3, 2]))),))
    f.model = replace(model, birth=birth)
    for k in range(1, 16):
        pos = np.array([10.0 + 1.0 * k, 20.0])
        img = render_image([pos], 10.0, 40, 40, seed=int(rng.integers(2**32))).pixels
        f.step(HybridObservation(img, (pos + rng.normal(0, 0.5, 2))[None]))
    assert f.frame == 15
    est = estimate_multi_bernoulli(f.density, 0.5)
    assert len(est) == 1
    assert np.linalg.norm(est[0].position - [25.0, 20.0]) < 3.0
    assert f.last_diagnostics.components_after_prune <= 50
    assert est[0].label in f.templates
    assert f.templates[est[0].label].shape == expected_object_patch(sensor).shape
