"""Scenario-level probabilistic models.

Covers motion, LMB birth, the age/scene dependent survival probability,
the detection and image signal-to-noise ratios and the hybrid per-track
factor that switches between them, plus reference-template handling.
"""

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .gaussian import GaussianDensity, UtConfig, kalman_update, kalman_update_many, sigma_points, unscented_update
from .rfs import TrackLabel


def _frozen(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MotionModel:
    T_s: float = 1.0
    sigma_v: float = 1.0

    @cached_property
    def F(self):
        return _frozen(np.kron(np.eye(2), np.array([[1.0, self.T_s], [0.0, 1.0]])))

    @cached_property
    def Q(self):
        # Piecewise-constant white acceleration: rank-deficient but PSD.
        g = np.array([[self.T_s**2 / 2.0], [self.T_s]])
        return _frozen(self.sigma_v**2 * np.kron(np.eye(2), g @ g.T))


@dataclass(frozen=True)
class BirthComponent:
    r_B: float
    density: GaussianDensity


@dataclass(frozen=True)
class BirthModel:
    static_components: tuple = ()
    adaptive_enabled: bool = False
    adaptive_r_B: float = 0.03
    adaptive_cov: np.ndarray = field(default_factory=lambda: np.diag([3.0, 2.0, 3.0, 2.0]))
    weak_association: float = 0.5

    def __post_init__(self):
        for c in self.static_components:
            if not 0.0 < c.r_B < 1.0:
                raise ValueError("birth probabilities must lie in (0, 1)")


def paper_birth_model(r_B=0.03):
    """The five static LMB birth components of the simulated TBD scenario."""
    cov = np.diag([3.0, 2.0, 3.0, 2.0])
    means = ([5, 0, 5, 0], [5, 0, 25, 0], [5, 0, 90, 0], [90, 0, 30, 0], [80, 0, 90, 0])
    return BirthModel(tuple(BirthComponent(r_B, GaussianDensity(np.array(m, float), cov)) for m in means))


def border_mask(width, height, margin=10, inner=1.0, edge=0.0, ramp=False):
    """Scene mask that is ``inner`` in the interior and ``edge`` near the border.

    With ``ramp`` the value rises linearly from ``edge`` at the outermost
    pixel to ``inner`` at ``margin`` pixels from the border.
    """
    xs = np.arange(width)
    ys = np.arange(height)
    dx = np.minimum(xs, width - 1 - xs)
    dy = np.minimum(ys, height - 1 - ys)
    dist = np.minimum.outer(dy, dx).astype(float)
    if ramp and margin > 0:
        frac = np.clip(dist / margin, 0.0, 1.0)
        return edge + (inner - edge) * frac
    return np.where(dist < margin, edge, inner).astype(float)


def read_pgm(path):
    """Read a binary (P5) or ASCII (P2) PGM image as a float array."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        arr = np.frombuffer(data[pos + 1 :], dtype=dtype, count=width * height)
    elif magic == b"P2":
        arr = np.array(data[pos:].split()[: width * height], dtype=float)
    else:
        raise ValueError(f"unsupported PGM magic {magic!r}")
    return arr.reshape(height, width).astype(float), maxval


def write_pgm(path, image, maxval=None):
    """Write a non-negative array as a 16-bit binary PGM, scaled to ``maxval``."""
    image = np.asarray(image, dtype=float)
    top = image.max() if maxval is None else maxval
    scaled = np.zeros_like(image) if top <= 0 else np.clip(image / top, 0, 1) * 65535
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode())
        fh.write(np.round(scaled).astype(">u2").tobytes())


def load_mask_pgm(path):
    img, maxval = read_pgm(path)
    return np.clip(img / maxval, 0.0, 1.0)


@dataclass(frozen=True)
class SurvivalModel:
    """Survival probability ``b(x) / (1 + exp(-gamma * age))``.

    ``constant`` short-circuits to a fixed probability (standard GLMB).
    ``integrate`` switches ``b`` evaluation from the track mean to the
    sigma-point average over the track density.
    """

    scene_mask: np.ndarray = None
    gamma: float = 0.1
    constant: float = None
    integrate: bool = False

    def __post_init__(self):
        if self.constant is None:
            if self.scene_mask is None:
                raise ValueError("scene mask required for the age-dependent model")
            mask = np.asarray(self.scene_mask, dtype=float)
            if mask.min() < 0.0 or mask.max() > 1.0:
                raise ValueError("scene mask values must lie in [0, 1]")
            if self.gamma <= 0.0:
                raise ValueError("gamma must be positive")
            object.__setattr__(self, "scene_mask", mask)

    def mask_at(self, positions):
        """Nearest-pixel mask lookup; positions off the image map to 0."""
        pos = np.atleast_2d(positions)
        h, w = self.scene_mask.shape
        cols = np.rint(pos[:, 0]).astype(int)
        rows = np.rint(pos[:, 1]).astype(int)
        inside = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
        out = np.zeros(len(pos))
        out[inside] = self.scene_mask[rows[inside], cols[inside]]
        return out

    def mask_value(self, x, y):
        """Scalar form of :meth:`mask_at`."""
        h, w = self.scene_mask.shape
        c, r = round(x), round(y)
        return float(self.scene_mask[r, c]) if 0 <= c < w and 0 <= r < h else 0.0


def sigmoid_age(age, gamma):
    return 1.0 / (1.0 + np.exp(-gamma * age))


def survival_probability(track, k, survival, ut=UtConfig()):
    """Probability that ``track`` (at frame ``k``) survives to frame ``k + 1``."""
    if survival.constant is not None:
        return float(survival.constant)
    age = k - track.label.birth_time
    if age < 0:
        raise ValueError("frame precedes the track's birth")
    if survival.integrate:
        pts, wm, _ = sigma_points(GaussianDensity(track.mean, track.cov), ut)
        b = float(wm @ survival.mask_at(pts[:, [0, 2]]))
    else:
        b = survival.mask_value(float(track.mean[0]), float(track.mean[2]))
    return b / (1.0 + math.exp(-survival.gamma * age))


@dataclass(frozen=True)
class SensorModel:
    P_D: float = 0.98
    clutter_rate: float = 10.0
    clutter_region_area: float = 100.0 * 100.0
    H: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]]))
    Sigma: np.ndarray = field(default_factory=lambda: np.diag([16.0, 16.0]))
    template_sigma: float = 11.0
    patch_size: int = 3
    noise_power: float = 2.0
    snr_db: float = 10.0
    psf_R: float = 1.0
    psf_S: float = 1.0
    use_image: bool = True

    def __post_init__(self):
        if not 0.0 <= self.P_D <= 1.0:
            raise ValueError("P_D must lie in [0, 1]")
        if self.clutter_rate <= 0 or self.clutter_region_area <= 0:
            raise ValueError("clutter intensity must be positive")
        if self.patch_size % 2 != 1:
            raise ValueError("patch size must be odd")

    @property
    def clutter_intensity(self):
        return self.clutter_rate / self.clutter_region_area

    @property
    def log_clutter_intensity(self):
        return float(np.log(self.clutter_intensity))


@dataclass(frozen=True)
class HybridObservation:
    image: np.ndarray
    detections: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "image", np.asarray(self.image, dtype=float))
        det = np.asarray(self.detections, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "detections", det)

    @property
    def num_detections(self):
        return len(self.detections)


@dataclass(frozen=True)
class ScenarioModel:
    motion: MotionModel
    birth: BirthModel
    survival: SurvivalModel
    sensor: SensorModel
    image_shape: tuple = (100, 100)
    cov_cap: float = 10.0
    ut: UtConfig = UtConfig()

    def standard_variant(self, P_S=0.98):
        """Same model with the image factor forced to 1 and constant survival."""
        return replace(
            self,
            sensor=replace(self.sensor, use_image=False),
            survival=SurvivalModel(constant=P_S),
        )


def log_detection_snr(z, prior, sensor):
    """``log <prior, g_D(z|.)> - log kappa`` and the Kalman posterior."""
    post, ll = kalman_update(prior, z, sensor.H, sensor.Sigma)
    return ll - sensor.log_clutter_intensity, post


# Kept for callers that want the spec-level name.
detection_snr = log_detection_snr


def expected_object_patch(sensor, offset=(0.0, 0.0)):
    """Mean pixel power of a ``patch_size`` patch around an object.

    ``offset`` is the object's sub-pixel displacement (x, y) from the patch
    centre cell; the amplitude follows the sensor's nominal SNR.
    """
    half = sensor.patch_size // 2
    d = np.arange(-half, half + 1, dtype=float)
    dc = d[None, :] - offset[0]
    dr = d[:, None] - offset[1]
    amp2 = 10.0 ** (sensor.snr_db / 10.0) * sensor.noise_power
    return amp2 * np.exp(-(dc**2) / sensor.psf_R - dr**2 / sensor.psf_S) + sensor.noise_power


def _patch_offsets(patch_size):
    half = patch_size // 2
    d = np.arange(-half, half + 1)
    return np.meshgrid(d, d, indexing="ij")  # (row offsets, col offsets)


def extract_patches(image, positions, patch_size):
    """Patches centred on the nearest cells to ``positions`` (N, 2 as x, y).

    Returns ``(N, p, p)`` values and a validity mask for the clipped border.
    """
    pos = np.atleast_2d(positions)
    h, w = image.shape
    dr, dc = _patch_offsets(patch_size)
    rows = np.rint(pos[:, 1]).astype(int)[:, None, None] + dr
    cols = np.rint(pos[:, 0]).astype(int)[:, None, None] + dc
    valid = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    vals = image[np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1)]
    return np.where(valid, vals, 0.0), valid


def image_snr_loglik_many(states, image, template, sensor):
    """Vectorised :func:`image_snr_loglik` over the rows of ``states``."""
    template = np.asarray(template, dtype=float)
    if not np.any(template):
        raise ValueError("invalid template: all zero")
    states = np.atleast_2d(states)
    patches, valid = extract_patches(image, states[:, [0, 2]], sensor.patch_size)
    n_valid = valid.sum(axis=(1, 2))
    dist2 = np.sum(np.where(valid, (patches - template) ** 2, 0.0), axis=(1, 2))
    mu = sensor.noise_power
    base = np.sum(np.where(valid, (template - mu) ** 2 + mu * mu, 0.0), axis=(1, 2))
    full = template.size
    scale = np.where(n_valid > 0, full / np.maximum(n_valid, 1), 0.0)
    return scale * (base - dist2) / sensor.template_sigma**2


def image_snr_loglik(state, image, template, sensor):
    """``log g_T(patch|x) - log g_T(patch|empty)`` for one state.

    The no-object likelihood uses the expected squared distance between the
    template and a pure-noise patch (exponential pixel power with mean
    ``noise_power``), so the ratio averages to 1 on background.
    """
    return float(image_snr_loglik_many(np.asarray(state)[None, :], image, template, sensor)[0])


def hybrid_phi(j, prior, observation, sensor, template=None, ut=UtConfig(), cap=None):
    """Integrated hybrid factor ``log <prior, phi^(j)>`` and the updated density.

    ``j >= 1`` scores detection ``j`` (1-based); ``j == 0`` is a mis-detection
    scored by the image SNR on the local patch (or by 1 when the sensor
    ignores images).
    """
    with np.errstate(divide="ignore"):
        if j >= 1:
            log_ratio, post = log_detection_snr(observation.detections[j - 1], prior, sensor)
            return float(np.log(sensor.P_D)) + log_ratio, post
        log_miss = float(np.log1p(-sensor.P_D)) if sensor.P_D < 1 else -np.inf
    if not sensor.use_image or template is None:
        return log_miss, prior
    post, log_int = unscented_update(
        prior,
        lambda pts: image_snr_loglik_many(pts, observation.image, template, sensor),
        ut,
        cap=cap,
        vectorized=True,
    )
    return log_miss + log_int, post


def hybrid_phi_all(prior, observation, sensor, template=None, ut=UtConfig(), cap=None):
    """All columns j = 0..M of :func:`hybrid_phi` for one predicted track.

    Returns ``log_phi (M+1,)``, posterior means ``(M+1, n)`` and covariances
    ``(M+1, n, n)``.
    """
    M = observation.num_detections
    log_phi = np.empty(M + 1)
    means = np.empty((M + 1, prior.dim))
    covs = np.empty((M + 1, prior.dim, prior.dim))
    log_phi[0], post0 = hybrid_phi(0, prior, observation, sensor, template, ut, cap)
    means[0], covs[0] = post0.mean, post0.cov
    if M:
        m, P, ll = kalman_update_many(prior, observation.detections, sensor.H, sensor.Sigma)
        with np.errstate(divide="ignore"):
            log_pd = np.log(sensor.P_D)
        log_phi[1:] = log_pd + ll - sensor.log_clutter_intensity
        means[1:] = m
        covs[1:] = P
    return log_phi, means, covs


def update_reference_template(template, image, state, confident, alpha=0.1, sensor=None, patch_size=None):
    """Blend the observed patch at ``state`` into ``template`` when confident.

    Clipped border pixels keep their previous template value.
    """
    if not confident:
        return template
    size = patch_size if patch_size is not None else (sensor.patch_size if sensor else template.shape[0])
    patch, valid = extract_patches(image, np.asarray(state)[[0, 2]][None, :], size)
    patch, valid = patch[0], valid[0]
    blended = (1.0 - alpha) * template + alpha * patch
    return np.where(valid, blended, template)


def initial_template(sensor, image=None, mean=None, mode="model"):
    """Reference template for a new track.

    ``mode="model"`` uses the expected object patch under the tracker's
    nominal SNR; ``mode="image"`` copies the patch at ``mean`` from ``image``.
    """
    if mode == "image" and image is not None and mean is not None:
        patch, valid = extract_patches(image, np.asarray(mean)[[0, 2]][None, :], sensor.patch_size)
        tmpl = np.where(valid[0], patch[0], sensor.noise_power)
        if np.any(tmpl):
            return tmpl
    return expected_object_patch(sensor)


def birth_components(k, birth, sensor, prev_observation=None, assoc_summary=None, template_mode="model"):
    """Birth tracks for frame ``k``: the static LMB plus optional adaptive terms.

    Adaptive components sit on previous-frame detections whose association
    probability to existing tracks is below ``birth.weak_association``.
    Returns a list of ``(TrackLabel, r_B, GaussianDensity, template)``.
    """
    out = []
    image = prev_observation.image if prev_observation is not None else None
    for idx, comp in enumerate(birth.static_components):
        tmpl = initial_template(sensor, image, comp.density.mean, template_mode)
        out.append((TrackLabel(k, idx), comp.r_B, comp.density, tmpl))
    if birth.adaptive_enabled and prev_observation is not None:
        det = prev_observation.detections
        assoc = np.zeros(len(det)) if assoc_summary is None else np.asarray(assoc_summary, float)
        nxt = len(out)
        for z, a in zip(det, assoc):
            if a >= birth.weak_association:
                continue
            mean = np.array([z[0], 0.0, z[1], 0.0])
            dens = GaussianDensity(mean, np.asarray(birth.adaptive_cov, float))
            tmpl = initial_template(sensor, image, mean, template_mode)
            out.append((TrackLabel(k, nxt), birth.adaptive_r_B, dens, tmpl))
            nxt += 1
    return out


def calibrate_template_sigma(sensor, target_nats=3.0, grid=11):
    """Template-likelihood width giving ``target_nats`` mean log image SNR.

    Averages over uniform sub-pixel object offsets with the template fixed at
    the centred expected patch; pixel power is modelled as a non-central
    exponential (variance ``mu^2 + 2 mu P`` for signal power ``P``).
    """
    tmpl = expected_object_patch(sensor)
    mu = sensor.noise_power
    base = np.sum((tmpl - mu) ** 2 + mu * mu)
    offs = (np.arange(grid) + 0.5) / grid - 0.5
    gains = []
    for ox in offs:
        for oy in offs:
            mean = expected_object_patch(sensor, (ox, oy))
            sig = mean - mu
            dist2 = np.sum((mean - tmpl) ** 2 + mu * mu + 2 * mu * sig)
            gains.append(base - dist2)
    return float(np.sqrt(np.mean(gains) / target_nats))
