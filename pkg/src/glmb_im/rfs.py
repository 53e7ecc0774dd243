"""Labeled multi-object state and the GLMB density container.

Component weights are kept in the log domain; linear weights appear only at
extraction time (cardinality, existence, estimators).
"""

from dataclasses import dataclass, field
from functools import total_ordering

import numpy as np
from scipy.special import logsumexp

from .gaussian import GaussianDensity


class DegenerateDensityError(ValueError):
    """All component weights are zero (log weight -inf)."""


@total_ordering
@dataclass(frozen=True)
class TrackLabel:
    birth_time: int
    birth_index: int

    def __post_init__(self):
        if self.birth_time < 0 or self.birth_index < 0:
            raise ValueError("label fields must be non-negative")

    def __lt__(self, other):
        if not isinstance(other, TrackLabel):
            return NotImplemented
        return (self.birth_time, self.birth_index) < (other.birth_time, other.birth_index)

    def as_tuple(self):
        return (self.birth_time, self.birth_index)

    def __repr__(self):
        return f"L{self.birth_time}.{self.birth_index}"


@dataclass(frozen=True, eq=False)
class LabeledGaussianTrack:
    """One track hypothesis density.

    ``assoc`` records the association index that produced this density
    (-1 for an unassociated prior, 0 for an image update, j >= 1 for
    detection j); it is bookkeeping for template and birth heuristics, not
    part of the density.
    """

    label: TrackLabel
    mean: np.ndarray
    cov: np.ndarray
    template: np.ndarray = None
    assoc: int = -1

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    @property
    def gaussian(self):
        return GaussianDensity(self.mean, self.cov)

    @property
    def position(self):
        return self.mean[[0, 2]]

    def content_key(self):
        return (self.label.as_tuple(), self.mean.tobytes(), self.cov.tobytes())


@dataclass(frozen=True)
class GlmbComponent:
    labels: tuple
    log_weight: float
    tracks: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        tracks = tuple(self.tracks)
        if len(set(labels)) != len(labels):
            raise ValueError("component labels must be distinct")
        if len(tracks) != len(labels) or any(t.label != l for t, l in zip(tracks, labels)):
            raise ValueError("tracks must match labels one-to-one and in order")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "tracks", tracks)

    @classmethod
    def from_tracks(cls, tracks, log_weight):
        tracks = sorted(tracks, key=lambda t: t.label)
        return cls(tuple(t.label for t in tracks), float(log_weight), tuple(tracks))

    @property
    def cardinality(self):
        return len(self.labels)

    def track(self, label):
        for t in self.tracks:
            if t.label == label:
                return t
        raise KeyError(label)

    def key(self):
        return tuple(t.content_key() for t in self.tracks)


@dataclass(frozen=True)
class GlmbDensity:
    components: tuple
    frame: int = 0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    @classmethod
    def empty(cls, frame=0):
        return cls((GlmbComponent((), 0.0, ()),), frame)

    def __len__(self):
        return len(self.components)

    @property
    def log_weights(self):
        return np.array([c.log_weight for c in self.components], dtype=float)

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def labels(self):
        seen = set()
        for c in self.components:
            seen.update(c.labels)
        return sorted(seen)


def normalize(density):
    lw = density.log_weights
    if len(lw) == 0 or not np.any(np.isfinite(lw)):
        raise DegenerateDensityError("degenerate density: no component has positive weight")
    total = logsumexp(lw)
    comps = [
        GlmbComponent(c.labels, float(w), c.tracks)
        for c, w in zip(density.components, lw - total)
    ]
    return GlmbDensity(comps, density.frame)


def cardinality_distribution(density):
    """Probability of each cardinality 0..max |I| over the components."""
    card = np.array([c.cardinality for c in density.components], dtype=int)
    pmf = np.zeros(card.max() + 1 if len(card) else 1)
    np.add.at(pmf, card, density.weights)
    return pmf


def existence_probabilities(density):
    """Map each label to the total weight of components containing it."""
    out = {}
    for c, w in zip(density.components, density.weights):
        for label in c.labels:
            out[label] = out.get(label, 0.0) + w
    return out


def track_existence(density, label):
    return existence_probabilities(density).get(label, 0.0)


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    @property
    def mean(self):
        return self.weights @ self.means

    @property
    def cov(self):
        m = self.mean
        dev = self.means - m
        spread = np.einsum("i,ij,ik->jk", self.weights, dev, dev)
        return np.einsum("i,ijk->jk", self.weights, self.covs) + spread


def track_density(density, label):
    """Existence-normalised mixture of ``label``'s Gaussians, or ``None``."""
    ws, ms, Ps = [], [], []
    for c, w in zip(density.components, density.weights):
        for t in c.tracks:
            if t.label == label:
                ws.append(w)
                ms.append(t.mean)
                Ps.append(t.cov)
                break
    r = float(np.sum(ws))
    if r <= 0.0:
        return None
    return GaussianMixture(np.asarray(ws) / r, np.asarray(ms), np.asarray(Ps))


@dataclass(frozen=True)
class Estimate:
    label: TrackLabel
    mean: np.ndarray
    existence: float

    @property
    def position(self):
        return self.mean[[0, 2]]


def estimate_multi_bernoulli(density, threshold=0.5):
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    acc = {}
    for c, w in zip(density.components, density.weights):
        for t in c.tracks:
            r, m = acc.get(t.label, (0.0, 0.0))
            acc[t.label] = (r + w, m + w * t.mean)
    return [
        Estimate(label, m / r, r)
        for label, (r, m) in sorted(acc.items())
        if r > threshold
    ]


def estimate_mme(density):
    """Highest-weight component at the MAP cardinality (ties: smallest label set)."""
    pmf = cardinality_distribution(density)
    n_star = int(np.argmax(pmf))
    best = None
    for c in density.components:
        if c.cardinality != n_star:
            continue
        if best is None or c.log_weight > best.log_weight or (
            c.log_weight == best.log_weight and c.labels < best.labels
        ):
            best = c
    if best is None:
        return []
    exist = existence_probabilities(density)
    return [Estimate(t.label, t.mean.copy(), exist[t.label]) for t in best.tracks]


def merge_duplicates(components):
    """Sum the weights of components with equal label sets and track densities."""
    groups = {}
    for c in components:
        groups.setdefault(c.key(), []).append(c)
    merged = []
    for members in groups.values():
        head = members[0]
        lw = head.log_weight if len(members) == 1 else float(
            logsumexp([m.log_weight for m in members])
        )
        merged.append(GlmbComponent(head.labels, lw, head.tracks))
    return merged


def prune_and_merge(density, max_components=200, min_weight=1e-15):
    comps = merge_duplicates(density.components)
    lw = np.array([c.log_weight for c in comps])
    lw = lw - logsumexp(lw)
    keep = np.flatnonzero(lw >= np.log(min_weight)) if min_weight > 0 else np.arange(len(comps))
    if len(keep) == 0:
        keep = np.array([int(np.argmax(lw))])
    # Stable ordering: descending weight, then canonical label order.
    keep = sorted(keep, key=lambda i: (-lw[i], tuple(l.as_tuple() for l in comps[i].labels)))
    keep = keep[:max_components]
    out = [GlmbComponent(comps[i].labels, float(lw[i]), comps[i].tracks) for i in keep]
    return normalize(GlmbDensity(out, density.frame))


def l1_distance(a, b):
    """L1 distance between the component weights of two normalised GLMBs.

    Components are identified by label set and track densities; a component
    missing from one side contributes its full weight.
    """
    wa = {}
    for c, w in zip(a.components, a.weights):
        wa[c.key()] = wa.get(c.key(), 0.0) + w
    wb = {}
    for c, w in zip(b.components, b.weights):
        wb[c.key()] = wb.get(c.key(), 0.0) + w
    keys = set(wa) | set(wb)
    return float(sum(abs(wa.get(k, 0.0) - wb.get(k, 0.0)) for k in keys))


def captured_mass(approx, exact):
    """Exact-posterior mass of the components present in ``approx``."""
    present = {c.key() for c in approx.components}
    return float(sum(w for c, w in zip(exact.components, exact.weights) if c.key() in present))


def snapshot(density, run=None, variant=None):
    """JSON-ready per-frame record of a density."""
    rec = {"frame": density.frame}
    if run is not None:
        rec["run"] = run
    if variant is not None:
        rec["variant"] = variant
    rec["components"] = [
        {
            "labels": [list(l.as_tuple()) for l in c.labels],
            "weight": float(np.exp(c.log_weight)),
            "tracks": [
                {
                    "label": list(t.label.as_tuple()),
                    "mean": [float(v) for v in t.mean],
                    "cov_diag": [float(v) for v in np.diag(t.cov)],
                }
                for t in c.tracks
            ],
        }
        for c in density.components
    ]
    return rec
