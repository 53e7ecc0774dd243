"""Joint prediction/update GLMB recursion with Gibbs-sampled truncation.

Each prior component ``h`` is expanded through an eta table whose rows are
the component's labels followed by the birth labels, and whose columns are
the association indices ``-1`` (dead / not born), ``0`` (alive, image
updated) and ``1..M`` (alive, assigned detection ``j``).  Rows depend only on
the track density, so they are cached per track object and shared across
components.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .gaussian import GaussianDensity, NumericError, predict
from .models import birth_components, hybrid_phi_all, survival_probability, update_reference_template
from .rfs import (
    DegenerateDensityError,
    GlmbComponent,
    GlmbDensity,
    LabeledGaussianTrack,
    normalize,
    prune_and_merge,
    track_density,
)

log = logging.getLogger(__name__)


@dataclass(eq=False)
class EtaRow:
    label: object
    log_eta: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    template: np.ndarray = None
    is_birth: bool = False
    failed: bool = False
    _posteriors: dict = field(default_factory=dict, repr=False)

    def posterior(self, j):
        """Track density for association ``j >= 0`` (cached, so shared)."""
        trk = self._posteriors.get(j)
        if trk is None:
            trk = LabeledGaussianTrack(self.label, self.means[j], self.covs[j], self.template, j)
            self._posteriors[j] = trk
        return trk


@dataclass(eq=False)
class EtaTable:
    rows: list

    @property
    def log_eta(self):
        if not self.rows:
            return np.zeros((0, 2))
        return np.vstack([r.log_eta for r in self.rows])

    @property
    def shape(self):
        return self.log_eta.shape


def _failed_row(label, M, dim, template, is_birth):
    row = np.full(M + 2, -np.inf)
    row[0] = 0.0
    return EtaRow(label, row, np.zeros((M + 1, dim)), np.tile(np.eye(dim), (M + 1, 1, 1)), template, is_birth, True)


def existing_row(track, k, observation, model, template=None):
    """Eta row for a track alive at frame ``k`` (predicted to ``k + 1``)."""
    M = observation.num_detections
    template = track.template if template is None else template
    try:
        ps = survival_probability(track, k, model.survival, model.ut)
        pred = predict(track.gaussian, model.motion.F, model.motion.Q, cap=model.cov_cap)
        log_phi, means, covs = hybrid_phi_all(pred, observation, model.sensor, template, model.ut)
    except NumericError as exc:
        log.warning("eta row for %r failed: %s", track.label, exc)
        return _failed_row(track.label, M, len(track.mean), template, False)
    row = np.empty(M + 2)
    with np.errstate(divide="ignore"):
        row[0] = np.log1p(-ps) if ps < 1.0 else -np.inf
        row[1:] = (np.log(ps) if ps > 0.0 else -np.inf) + log_phi
    return EtaRow(track.label, row, means, covs, template)


def birth_row(label, r_B, density, template, observation, model):
    M = observation.num_detections
    try:
        log_phi, means, covs = hybrid_phi_all(density, observation, model.sensor, template, model.ut)
    except NumericError as exc:
        log.warning("birth row for %r failed: %s", label, exc)
        return _failed_row(label, M, density.dim, template, True)
    row = np.empty(M + 2)
    row[0] = math.log1p(-r_B)
    row[1:] = math.log(r_B) + log_phi
    return EtaRow(label, row, means, covs, template, is_birth=True)


class RowCache:
    """Per-frame cache of eta rows keyed by track object identity."""

    def __init__(self, k, observation, model, births, templates=None):
        self.k = k
        self.observation = observation
        self.model = model
        self.templates = templates or {}
        self.birth_rows = [birth_row(l, r, d, t, observation, model) for l, r, d, t in births]
        self._rows = {}
        self._keep = []

    def row(self, track):
        key = id(track)
        hit = self._rows.get(key)
        if hit is None:
            hit = existing_row(track, self.k, self.observation, self.model, self.templates.get(track.label))
            self._rows[key] = hit
            self._keep.append(track)  # pin the object so its id stays unique
        return hit

    def table(self, component):
        return EtaTable([self.row(t) for t in component.tracks] + list(self.birth_rows))


def build_eta(component, observation, model, births=(), k=0, templates=None, cache=None):
    """Eta table for one prior component at frame ``k``."""
    if cache is None:
        cache = RowCache(k, observation, model, births, templates)
    return cache.table(component)


def _linear_rows(log_eta):
    """Row-wise rescaled linear weights; a row's scale does not affect sampling."""
    out = []
    for row in np.asarray(log_eta, dtype=float):
        top = row.max()
        if top == -np.inf:
            out.append([0.0] * len(row))
        else:
            out.append(np.exp(row - top).tolist())
    return out


def _as_log_eta(eta):
    return eta.log_eta if isinstance(eta, EtaTable) else np.asarray(eta, dtype=float)


def init_gamma(eta):
    """Greedy start: rows by descending best score take their best free column."""
    log_eta = _as_log_eta(eta)
    P, C = log_eta.shape
    gamma = np.full(P, -1, dtype=int)
    taken = set()
    order = np.argsort(-log_eta.max(axis=1), kind="stable") if C else range(P)
    for i in order:
        row = log_eta[i]
        for c in np.argsort(-row, kind="stable").tolist():
            j = c - 1
            if j >= 1 and j in taken:
                continue
            if row[c] == -np.inf and c != 0:
                continue
            gamma[i] = j
            if j >= 1:
                taken.add(j)
            break
    return gamma


def is_positive_one_to_one(gamma):
    pos = [g for g in gamma if g >= 1]
    return len(pos) == len(set(pos))


def gibbs_chain(init, num_samples, eta, rng):
    """Run the systematic-scan Gibbs sampler and return every sample.

    Row ``t`` of the ``(num_samples, P)`` result is ``gamma^(t)``; row 0 is
    ``init``.  Each coordinate is drawn from its eta row with the positive
    columns held by the other coordinates masked out; columns -1 and 0 are
    never masked.
    """
    log_eta = _as_log_eta(eta)
    P = log_eta.shape[0]
    M = log_eta.shape[1] - 2
    gamma = [int(g) for g in init]
    if not is_positive_one_to_one(gamma):
        raise ValueError("initial vector violates the positive 1-1 constraint")
    out = np.empty((max(num_samples, 1), P), dtype=int)
    out[0] = gamma
    if num_samples <= 1 or P == 0:
        return out[: max(num_samples, 1)]
    rows = _linear_rows(log_eta)
    taken = [0] * (M + 1)
    for g in gamma:
        if g >= 1:
            taken[g] += 1
    draws = rng.random((num_samples - 1) * P).tolist()
    pos = 0
    cols = range(M + 2)
    for t in range(1, num_samples):
        for n in range(P):
            cur = gamma[n]
            if cur >= 1:
                taken[cur] -= 1
            row = rows[n]
            total = row[0] + row[1]
            for c in range(2, M + 2):
                if not taken[c - 1]:
                    total += row[c]
            u = draws[pos] * total
            pos += 1
            new = cur
            if total > 0.0:
                acc = 0.0
                for c in cols:
                    if c >= 2 and taken[c - 1]:
                        continue
                    w = row[c]
                    if w <= 0.0:
                        continue
                    acc += w
                    new = c - 1
                    if u < acc:
                        break
            gamma[n] = new
            if new >= 1:
                taken[new] += 1
        out[t] = gamma
    return out


def gibbs_sample(init, num_samples, eta, rng):
    """Distinct Gibbs samples (first-seen order); no burn-in is discarded."""
    chain = gibbs_chain(init, num_samples, eta, rng)
    seen = {}
    for g in chain:
        seen.setdefault(g.tobytes(), g)
    return list(seen.values())


def enumerate_gammas(P, M):
    """All positive 1-1 vectors in ``{-1..M}^P`` (generator)."""

    def rec(i, used, prefix):
        if i == P:
            yield tuple(prefix)
            return
        for j in range(-1, M + 1):
            if j >= 1 and j in used:
                continue
            prefix.append(j)
            if j >= 1:
                used.add(j)
            yield from rec(i + 1, used, prefix)
            prefix.pop()
            if j >= 1:
                used.discard(j)

    yield from rec(0, set(), [])


@dataclass
class StepDiagnostics:
    frame: int
    prior_components: int
    samples: int = 0
    distinct_samples: int = 0
    hypotheses_before_merge: int = 0
    components_after_merge: int = 0
    components_after_prune: int = 0

    @property
    def distinct_ratio(self):
        return self.distinct_samples / self.samples if self.samples else 0.0


class _Accumulator:
    """Collects hypotheses keyed by (row, association) pairs and merges them."""

    def __init__(self):
        self.index = {}
        self.tracks = []
        self.log_weights = []
        self.count = 0
        self._row_ids = {}

    def _rid(self, row):
        rid = self._row_ids.get(id(row))
        if rid is None:
            rid = self._row_ids[id(row)] = len(self._row_ids)
        return rid

    def add(self, table, gamma, log_w):
        if log_w == -np.inf:
            return
        self.count += 1
        rows = table.rows
        key = tuple(sorted((self._rid(rows[i]), int(g)) for i, g in enumerate(gamma) if g >= 0))
        at = self.index.get(key)
        if at is None:
            self.index[key] = len(self.tracks)
            self.tracks.append([rows[i].posterior(int(g)) for i, g in enumerate(gamma) if g >= 0])
            self.log_weights.append(log_w)
        else:
            self.log_weights[at] = float(np.logaddexp(self.log_weights[at], log_w))

    def components(self):
        return [GlmbComponent.from_tracks(t, w) for t, w in zip(self.tracks, self.log_weights)]


def _hypothesis_log_weight(log_w_h, log_eta, gamma):
    return log_w_h + float(sum(log_eta[i, g + 1] for i, g in enumerate(gamma)))


def allocate_trials(weights, H_max, rng, min_weight=1e-15):
    """Multinomial trial counts, with at least one trial per live component."""
    weights = np.asarray(weights, dtype=float)
    counts = rng.multinomial(H_max, weights / weights.sum())
    counts[(counts == 0) & (weights > min_weight)] = 1
    return counts


def joint_predict_update(
    density, observation, model, births, H_max=200, rng=None, templates=None,
    min_weight=1e-15, trials=None, return_diagnostics=False,
):
    """One joint prediction/update step of the GLMB filter.

    ``births`` lists ``(label, r_B, GaussianDensity, template)`` for the new
    frame.  ``trials`` overrides the total Gibbs trial budget (defaults to
    ``H_max``) while ``H_max`` still caps the output component count.
    """
    rng = np.random.default_rng() if rng is None else rng
    k = density.frame
    cache = RowCache(k, observation, model, births, templates)
    weights = density.weights
    counts = allocate_trials(weights, H_max if trials is None else trials, rng, min_weight)
    acc = _Accumulator()
    diag = StepDiagnostics(frame=k + 1, prior_components=len(density))
    for comp, T_h in zip(density.components, counts):
        if T_h <= 0:
            continue
        table = cache.table(comp)
        log_eta = table.log_eta
        if len(table.rows) == 0:
            acc.add(table, (), comp.log_weight)
            continue
        g0 = init_gamma(log_eta)
        samples = gibbs_sample(g0, int(T_h), log_eta, rng)
        diag.samples += int(T_h)
        diag.distinct_samples += len(samples)
        for g in samples:
            acc.add(table, g, _hypothesis_log_weight(comp.log_weight, log_eta, g))
    diag.hypotheses_before_merge = acc.count
    comps = acc.components()
    diag.components_after_merge = len(comps)
    if not comps:
        raise DegenerateDensityError("every sampled hypothesis has zero weight")
    out = prune_and_merge(GlmbDensity(comps, k + 1), H_max, min_weight)
    diag.components_after_prune = len(out)
    log.debug(
        "frame %d: %d prior comps, %d samples (%d distinct), %d merged, %d kept",
        diag.frame, diag.prior_components, diag.samples, diag.distinct_samples,
        diag.components_after_merge, diag.components_after_prune,
    )
    return (out, diag) if return_diagnostics else out


ORACLE_MAX_ROWS = 8
ORACLE_MAX_DETECTIONS = 6


def exact_update_oracle(density, observation, model, births, templates=None):
    """Exhaustive joint prediction/update (no truncation), for small instances."""
    M = observation.num_detections
    if M > ORACLE_MAX_DETECTIONS:
        raise ValueError(f"oracle refuses {M} detections (max {ORACLE_MAX_DETECTIONS})")
    for comp in density.components:
        if comp.cardinality + len(births) > ORACLE_MAX_ROWS:
            raise ValueError(f"oracle refuses more than {ORACLE_MAX_ROWS} rows")
    k = density.frame
    cache = RowCache(k, observation, model, births, templates)
    acc = _Accumulator()
    for comp in density.components:
        table = cache.table(comp)
        log_eta = table.log_eta
        for g in enumerate_gammas(len(table.rows), M):
            acc.add(table, g, _hypothesis_log_weight(comp.log_weight, log_eta, g))
    comps = acc.components()
    if not comps:
        raise DegenerateDensityError("every hypothesis has zero weight")
    return normalize(GlmbDensity(comps, k + 1))


def association_summary(density, num_detections):
    """Per-label and per-detection marginal association probabilities.

    Returns ``(label -> array over j = 0..M, per-detection array (M,))``; the
    per-label entry j is the weight of components whose density for that
    label came from association ``j``.
    """
    per_label = {}
    per_det = np.zeros(num_detections)
    for comp, w in zip(density.components, density.weights):
        for t in comp.tracks:
            arr = per_label.get(t.label)
            if arr is None:
                arr = per_label[t.label] = np.zeros(num_detections + 1)
            if 0 <= t.assoc <= num_detections:
                arr[t.assoc] += w
            if t.assoc >= 1:
                per_det[t.assoc - 1] += w
    return per_label, per_det


class GlmbFilter:
    """Stateful wrapper: births, joint update and template maintenance."""

    def __init__(self, model, H_max=200, rng=None, min_weight=1e-15,
                 template_alpha=0.1, confident=0.5, template_mode="model"):
        self.model = model
        self.H_max = H_max
        self.rng = np.random.default_rng() if rng is None else rng
        self.min_weight = min_weight
        self.template_alpha = template_alpha
        self.confident = confident
        self.template_mode = template_mode
        self.density = GlmbDensity.empty(0)
        self.templates = {}
        self.prev_observation = None
        self.det_assoc = None
        self.last_diagnostics = None

    @property
    def frame(self):
        return self.density.frame

    def step(self, observation):
        k1 = self.frame + 1
        births = birth_components(
            k1, self.model.birth, self.model.sensor, self.prev_observation, self.det_assoc,
            self.template_mode,
        )
        density, diag = joint_predict_update(
            self.density, observation, self.model, births, self.H_max, self.rng,
            self.templates, self.min_weight, return_diagnostics=True,
        )
        self.last_diagnostics = diag
        birth_templates = {label: tmpl for label, _, _, tmpl in births}
        per_label, per_det = association_summary(density, observation.num_detections)
        templates = {}
        for label in density.labels():
            tmpl = self.templates.get(label)
            if tmpl is None:
                tmpl = birth_templates.get(label)
            if tmpl is None:
                continue
            conf = per_label.get(label)
            confident = conf is not None and len(conf) > 1 and conf[1:].max() >= self.confident
            if confident and self.model.sensor.use_image:
                mix = track_density(density, label)
                tmpl = update_reference_template(
                    tmpl, observation.image, mix.mean, True, self.template_alpha, self.model.sensor
                )
            templates[label] = tmpl
        self.templates = templates
        self.density = density
        self.prev_observation = observation
        self.det_assoc = per_det
        return density
