"""Randomised small update instances for checking the truncated recursion.

Each instance has at most three existing labels, two births and four
detections on a small image, so the exhaustive update stays cheap.
"""

from dataclasses import dataclass

import numpy as np

from .gaussian import GaussianDensity
from .glmb import exact_update_oracle, joint_predict_update
from .models import (
    BirthModel,
    HybridObservation,
    MotionModel,
    ScenarioModel,
    SensorModel,
    SurvivalModel,
    border_mask,
    expected_object_patch,
)
from .rfs import GlmbComponent, GlmbDensity, LabeledGaussianTrack, TrackLabel, captured_mass, l1_distance, normalize
from .simulator import render_image


@dataclass
class Instance:
    density: GlmbDensity
    observation: HybridObservation
    model: ScenarioModel
    births: list
    templates: dict


def small_model(size=30, use_image=True, P_D=0.9, clutter_rate=2.0, template_sigma=10.3):
    sensor = SensorModel(
        P_D=P_D, clutter_rate=clutter_rate, clutter_region_area=float(size * size),
        template_sigma=template_sigma, use_image=use_image,
    )
    mask = border_mask(size, size, margin=3, edge=0.5, ramp=True)
    return ScenarioModel(MotionModel(), BirthModel(), SurvivalModel(mask, 0.1), sensor, (size, size))


def random_instance(rng, size=30, max_existing=3, n_births=2, max_detections=4, use_image=True):
    """A random prior GLMB, births and hybrid observation.

    The prior mixes up to four label subsets of the existing labels with
    Dirichlet weights; detections sit near some predicted tracks plus
    uniform clutter.
    """
    model = small_model(size, use_image)
    k = int(rng.integers(3, 10))
    n_exist = int(rng.integers(0, max_existing + 1))
    tracks = []
    for i in range(n_exist):
        mean = np.array([rng.uniform(5, size - 5), rng.normal(0, 1), rng.uniform(5, size - 5), rng.normal(0, 1)])
        cov = np.diag(rng.uniform([1, 0.5, 1, 0.5], [4, 1.5, 4, 1.5]))
        label = TrackLabel(int(rng.integers(0, k)), i)
        tracks.append(LabeledGaussianTrack(label, mean, cov))
    n_comp = int(rng.integers(1, 5)) if n_exist else 1
    comps = {}
    for _ in range(n_comp):
        keep = [t for t in tracks if rng.random() < 0.7]
        comps[tuple(t.label for t in keep)] = keep
    weights = rng.dirichlet(np.ones(len(comps)))
    density = normalize(GlmbDensity(
        [GlmbComponent.from_tracks(ts, np.log(w)) for ts, w in zip(comps.values(), weights)], k,
    ))
    births = []
    for b in range(n_births):
        mean = np.array([rng.uniform(3, size - 3), 0.0, rng.uniform(3, size - 3), 0.0])
        dens = GaussianDensity(mean, np.diag([3.0, 2.0, 3.0, 2.0]))
        births.append((TrackLabel(k + 1, b), float(rng.uniform(0.02, 0.3)), dens, expected_object_patch(model.sensor)))
    F = model.motion.F
    objects = [(F @ t.mean)[[0, 2]] for t in tracks if rng.random() < 0.8]
    objects = [np.clip(p, 1, size - 2) for p in objects]
    image = render_image(objects, 10.0, size, size, seed=int(rng.integers(2**32))).pixels
    M = int(rng.integers(0, max_detections + 1))
    dets = [p + rng.normal(0, 0.7, 2) for p in objects[:M]]
    while len(dets) < M:
        dets.append(rng.uniform(0, size, 2))
    obs = HybridObservation(image, np.array(dets).reshape(-1, 2))
    templates = {t.label: expected_object_patch(model.sensor) for t in tracks}
    return Instance(density, obs, model, births, templates)


def compare(instance, trials, rng, H_max=None):
    """``(L1 distance, captured exact mass)`` of a Gibbs update vs the oracle."""
    exact = exact_update_oracle(instance.density, instance.observation, instance.model,
                                instance.births, instance.templates)
    approx = joint_predict_update(
        instance.density, instance.observation, instance.model, instance.births,
        H_max=H_max or 10**6, rng=rng, templates=instance.templates, min_weight=0.0, trials=trials,
    )
    return l1_distance(approx, exact), captured_mass(approx, exact)


def run_battery(n=50, trials=10**4, seed=0):
    """Per-instance ``(L1, mass)`` pairs over ``n`` random instances."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        inst = random_instance(rng)
        out.append(compare(inst, trials, rng))
    return out

