"""Ground truth, radar-style TBD image rendering and a hard-threshold detector."""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .models import MotionModel
from .rfs import TrackLabel


@dataclass(frozen=True)
class TruthTrack:
    label: TrackLabel
    birth: int
    death: int
    initial_state: tuple
    process_noise: bool = False

    def __post_init__(self):
        if not self.birth < self.death:
            raise ValueError(f"track {self.label}: birth must precede death")


@dataclass(frozen=True)
class SnrSchedule:
    """Vertical half-plane SNR split that alternates every ``period`` frames.

    Frames ``[0, period)`` put ``high_db`` on the left half, the next block
    swaps sides, and so on; ``period <= 0`` disables swapping.
    """

    high_db: float = 10.0
    low_db: float = 7.0
    period: int = 25
    split: float = 0.5

    def field(self, frame, width, height):
        left_high = self.period <= 0 or (frame // self.period) % 2 == 0
        cols = np.arange(width)
        left = cols < self.split * width
        row = np.where(left == left_high, self.high_db, self.low_db)
        return np.broadcast_to(row, (height, width)).copy()

    def at(self, frame, x, width):
        left_high = self.period <= 0 or (frame // self.period) % 2 == 0
        left = int(np.rint(x)) < self.split * width
        return self.high_db if left == left_high else self.low_db


@dataclass(frozen=True)
class TruthScenario:
    tracks: tuple
    width: int = 100
    height: int = 100
    duration: int = 100
    snr: SnrSchedule = field(default_factory=SnrSchedule)
    sigma_v: float = 1.0
    T_s: float = 1.0

    def __post_init__(self):
        for t in self.tracks:
            if t.death > self.duration + 1:
                raise ValueError(f"track {t.label}: death after scenario end")
            x, y = t.initial_state[0], t.initial_state[2]
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"track {t.label}: initial position outside the image")


@dataclass(frozen=True)
class TruthFrame:
    frame: int
    labels: tuple
    states: np.ndarray
    clipped: tuple = ()

    @property
    def positions(self):
        return self.states[:, [0, 2]] if len(self.states) else np.zeros((0, 2))


def default_scenario():
    """Five staggered tracks starting at the static birth means.

    The birth/death schedule is a reconstruction: objects enter over frames
    1-40, cross in the middle of the scene and two leave before the end.
    """
    spec = [
        ((1, 0), 1, 101, (5.0, 0.85, 5.0, 0.75)),
        ((10, 0), 10, 101, (5.0, 0.9, 25.0, 0.45)),
        ((20, 0), 20, 86, (5.0, 0.95, 90.0, -0.7)),
        ((30, 0), 30, 101, (90.0, -0.9, 30.0, 0.55)),
        ((40, 0), 40, 96, (80.0, -0.55, 90.0, -0.95)),
    ]
    tracks = tuple(
        TruthTrack(TrackLabel(*lab), b, d, s) for lab, b, d, s in spec
    )
    return TruthScenario(tracks)


def generate_truth(scenario, seed=None):
    """Per-frame labelled states for frames ``1..duration``.

    A track is present on frames ``birth <= k < death``.  Positions leaving
    the image are clipped to the border and reported in ``clipped``.
    """
    rng = np.random.default_rng(seed)
    motion = MotionModel(scenario.T_s, scenario.sigma_v)
    F, Q = motion.F, motion.Q
    g = np.array([[scenario.T_s**2 / 2, 0], [scenario.T_s, 0], [0, scenario.T_s**2 / 2], [0, scenario.T_s]])
    states = {}
    for trk in scenario.tracks:
        x = np.asarray(trk.initial_state, dtype=float)
        seq = {trk.birth: x.copy()}
        for k in range(trk.birth + 1, trk.death):
            x = F @ x
            if trk.process_noise:
                x = x + g @ (scenario.sigma_v * rng.standard_normal(2))
            seq[k] = x.copy()
        states[trk.label] = seq
    frames = []
    for k in range(1, scenario.duration + 1):
        labels, rows, clipped = [], [], []
        for trk in scenario.tracks:
            s = states[trk.label].get(k)
            if s is None:
                continue
            s = s.copy()
            cx = min(max(s[0], 0.0), scenario.width - 1.0)
            cy = min(max(s[2], 0.0), scenario.height - 1.0)
            if cx != s[0] or cy != s[2]:
                clipped.append(trk.label)
                s[0], s[2] = cx, cy
            labels.append(trk.label)
            rows.append(s)
        frames.append(TruthFrame(k, tuple(labels), np.array(rows).reshape(-1, 4), tuple(clipped)))
    return frames


@dataclass(frozen=True)
class RenderedFrame:
    pixels: np.ndarray
    truth: TruthFrame = None

    def checksum(self):
        return hashlib.sha256(np.ascontiguousarray(self.pixels).tobytes()).hexdigest()


def amplitude_for_snr(snr_db, sigma_n=1.0):
    """Amplitude ``A`` with ``10 log10(A^2 / (2 sigma_n^2)) = snr_db``."""
    return float(np.sqrt(2.0 * sigma_n**2 * 10.0 ** (snr_db / 10.0)))


def render_image(positions, snr_db, width=100, height=100, seed=None, sigma_n=1.0,
                 R=1.0, S=1.0, support=3, noise=True, truth=None):
    """Power image ``|sum A h + w|^2`` for objects at ``positions`` (x, y).

    ``snr_db`` is a scalar, a per-object sequence, or a ``(height, width)``
    field sampled at each object's nearest cell.  Each object contributes to
    cells within ``support`` cells of its position.
    """
    rng = np.random.default_rng(seed)
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    field_ = np.zeros((height, width), dtype=complex)
    snr = np.asarray(snr_db, dtype=float)
    for n, (px, py) in enumerate(positions):
        if snr.ndim == 2:
            r = int(np.clip(np.rint(py), 0, height - 1))
            c = int(np.clip(np.rint(px), 0, width - 1))
            s_db = snr[r, c]
        elif snr.ndim == 1:
            s_db = snr[n]
        else:
            s_db = float(snr)
        amp = amplitude_for_snr(s_db, sigma_n)
        c0, c1 = max(int(np.floor(px - support)), 0), min(int(np.ceil(px + support)), width - 1)
        r0, r1 = max(int(np.floor(py - support)), 0), min(int(np.ceil(py + support)), height - 1)
        if c0 > c1 or r0 > r1:
            continue
        cols = np.arange(c0, c1 + 1)
        rows = np.arange(r0, r1 + 1)
        dc = cols[None, :] - px
        dr = rows[:, None] - py
        inside = dc**2 + dr**2 <= support**2
        h = np.exp(-(dc**2) / (2 * R) - dr**2 / (2 * S)) * inside
        field_[r0 : r1 + 1, c0 : c1 + 1] += amp * h
    if noise:
        w = sigma_n * (rng.standard_normal((height, width)) + 1j * rng.standard_normal((height, width)))
        field_ = field_ + w
    return RenderedFrame(np.abs(field_) ** 2, truth)


def render_truth_frame(truth_frame, scenario, seed=None, sigma_n=1.0):
    snr = scenario.snr.field(truth_frame.frame, scenario.width, scenario.height)
    return render_image(truth_frame.positions, snr, scenario.width, scenario.height, seed, sigma_n,
                        truth=truth_frame)


_EIGHT = np.ones((3, 3), dtype=int)


def detect(frame, threshold):
    """Power-weighted centroids (x, y) of 8-connected above-threshold clusters."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    pixels = frame.pixels if isinstance(frame, RenderedFrame) else np.asarray(frame, dtype=float)
    mask = pixels > threshold
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return np.zeros((0, 2))
    idx = np.arange(1, n + 1)
    rc = np.array(ndimage.center_of_mass(pixels, labels, idx)).reshape(-1, 2)
    return rc[:, ::-1].copy()


def threshold_for_clutter(clutter_rate, width=100, height=100, sigma_n=1.0):
    """Threshold whose per-cell exceedance on pure noise gives ``clutter_rate``.

    Background power is exponential with mean ``2 sigma_n^2``.  Clusters of
    adjacent false cells make the realised cluster count slightly lower.
    """
    p = clutter_rate / (width * height)
    return float(-2.0 * sigma_n**2 * np.log(p))


def occlusion_frames(truth_frames, distance=3.0):
    """Frames in which two objects are closer than ``distance`` pixels."""
    out = set()
    for tf in truth_frames:
        pos = tf.positions
        if len(pos) < 2:
            continue
        d = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
        iu = np.triu_indices(len(pos), 1)
        if np.any(d[iu] < distance):
            out.add(tf.frame)
    return out


def low_snr_frames(truth_frames, scenario):
    """Frames in which any object sits in the low-SNR region."""
    out = set()
    for tf in truth_frames:
        for x in tf.positions[:, 0]:
            if scenario.snr.at(tf.frame, x, scenario.width) < scenario.snr.high_db:
                out.add(tf.frame)
                break
    return out
