"""Independent reference computations shared by the test modules."""

import itertools

from scipy.stats import multivariate_normal


def reference_standard_update(density, observation, model, births):
    """Textbook standard-GLMB update by enumeration, independent of the eta code."""
    sensor, motion = model.sensor, model.motion
    P_S = model.survival.constant
    kappa = sensor.clutter_rate / sensor.clutter_region_area
    Z = observation.detections
    out = {}

    def predicted(t):
        return motion.F @ t.mean, motion.F @ t.cov @ motion.F.T + motion.Q

    for comp, w in zip(density.components, density.weights):
        rows = [(t.label, *predicted(t), P_S) for t in comp.tracks]
        rows += [(l, d.mean, d.cov, r) for l, r, d, _ in births]
        for g in itertools.product(range(-1, len(Z) + 1), repeat=len(rows)):
            positive = [j for j in g if j >= 1]
            if len(positive) != len(set(positive)):
                continue
            weight = w
            key = []
            for (label, m, P, p_exist), j in zip(rows, g):
                if j == -1:
                    weight *= 1 - p_exist
                    continue
                key.append((label, j))
                if j == 0:
                    weight *= p_exist * (1 - sensor.P_D)
                else:
                    S = sensor.H @ P @ sensor.H.T + sensor.Sigma
                    q = multivariate_normal(sensor.H @ m, S).pdf(Z[j - 1])
                    weight *= p_exist * sensor.P_D * q / kappa
            key = tuple(sorted(key))
            out[key] = out.get(key, 0.0) + weight
    total = sum(out.values())
    return {k: v / total for k, v in out.items()}
