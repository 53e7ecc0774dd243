"""Experiment configuration: JSON schema, defaults and model construction.

Every key is optional; unknown or ill-typed keys raise :class:`ConfigError`
naming the dotted path of the offending key.
"""

import copy
import json
import os

import numpy as np

from .gaussian import GaussianDensity, UtConfig
from .models import (
    BirthComponent,
    BirthModel,
    MotionModel,
    ScenarioModel,
    SensorModel,
    SurvivalModel,
    border_mask,
    load_mask_pgm,
)
from .ospa import OspaParams
from .rfs import TrackLabel
from .simulator import SnrSchedule, TruthScenario, TruthTrack

SEED_ENV = "GLMB_IM_SEED"
VARIANTS = ("glmb", "glmb-im")


class ConfigError(ValueError):
    """Malformed configuration; ``key`` is the dotted path of the culprit."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


# Template width from calibrate_template_sigma(SensorModel(), 10.0): about
# +10 nats of image evidence at a 10 dB object centre.
DEFAULT_TEMPLATE_SIGMA = 5.64

DEFAULTS = {
    "seed": 0,
    "runs": 20,
    "h_max": 200,
    "workers": 1,
    "scenario": {
        "width": 100,
        "height": 100,
        "duration": 100,
        "sigma_n": 1.0,
        "threshold": 12.0,
        "snr": {"high_db": 10.0, "low_db": 7.0, "period": 25, "split": 0.5},
        "tracks": [
            {"label": [1, 0], "birth": 1, "death": 101, "state": [5.0, 0.85, 5.0, 0.75]},
            {"label": [10, 0], "birth": 10, "death": 101, "state": [5.0, 0.9, 25.0, 0.45]},
            {"label": [20, 0], "birth": 20, "death": 86, "state": [5.0, 0.95, 90.0, -0.7]},
            {"label": [30, 0], "birth": 30, "death": 101, "state": [90.0, -0.9, 30.0, 0.55]},
            {"label": [40, 0], "birth": 40, "death": 96, "state": [80.0, -0.55, 90.0, -0.95]},
        ],
    },
    "filter": {
        "T_s": 1.0,
        "sigma_v": 1.0,
        "P_D": 0.98,
        "clutter_rate": 10.0,
        "detection_std": 4.0,
        "r_B": 0.03,
        "birth_means": [[5, 0, 5, 0], [5, 0, 25, 0], [5, 0, 90, 0], [90, 0, 30, 0], [80, 0, 90, 0]],
        "birth_cov_diag": [3.0, 2.0, 3.0, 2.0],
        "adaptive_birth": False,
        "gamma": 0.1,
        "mask": {"margin": 10, "inner": 0.95, "edge": 0.5, "ramp": True, "path": None},
        "integrate_survival": False,
        "standard_P_S": 0.98,
        "template_sigma": DEFAULT_TEMPLATE_SIGMA,
        "patch_size": 3,
        "model_snr_db": 10.0,
        "template_alpha": 0.1,
        "confident": 0.5,
        "template_init": "model",
        "cov_cap": 4.0,
        "ut": {"alpha": 1.0, "beta": 2.0, "kappa": 1.0},
        "min_weight": 1e-15,
        "existence_threshold": 0.5,
    },
    "ospa": {"c": 20.0, "p": 1.0},
    "occlusion_distance": 3.0,
}


def _merge(base, override, path):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown key")
        ref = base[key]
        if isinstance(ref, dict):
            if not isinstance(value, dict):
                raise ConfigError(where, "expected an object")
            out[key] = _merge(ref, value, where)
        else:
            out[key] = _check_type(ref, value, where)
    return out


def _check_type(ref, value, where):
    if ref is None or isinstance(ref, str):
        if value is not None and not isinstance(value, str):
            raise ConfigError(where, "expected a string")
        return value
    if isinstance(ref, bool):
        if not isinstance(value, bool):
            raise ConfigError(where, "expected true or false")
        return value
    if isinstance(ref, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(where, "expected an integer")
        return value
    if isinstance(ref, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, "expected a number")
        return float(value)
    if isinstance(ref, list):
        if not isinstance(value, list):
            raise ConfigError(where, "expected a list")
        return copy.deepcopy(value)
    return value


def _require(cond, key, message):
    if not cond:
        raise ConfigError(key, message)


def validate(cfg):
    """Range checks that need more than a type test."""
    sc, fl = cfg["scenario"], cfg["filter"]
    _require(cfg["runs"] >= 1, "runs", "must be at least 1")
    _require(cfg["h_max"] >= 1, "h_max", "must be at least 1")
    _require(cfg["workers"] >= 1, "workers", "must be at least 1")
    _require(0 <= cfg["seed"] < 2**64, "seed", "must be an unsigned 64-bit integer")
    for key in ("width", "height", "duration"):
        _require(sc[key] >= 1, f"scenario.{key}", "must be positive")
    _require(sc["threshold"] > 0, "scenario.threshold", "must be positive")
    _require(sc["sigma_n"] > 0, "scenario.sigma_n", "must be positive")
    for i, trk in enumerate(sc["tracks"]):
        where = f"scenario.tracks[{i}]"
        _require(isinstance(trk, dict), where, "expected an object")
        extra = set(trk) - {"label", "birth", "death", "state", "process_noise"}
        _require(not extra, f"{where}.{min(extra) if extra else ''}", "unknown key")
        for key in ("label", "birth", "death", "state"):
            _require(key in trk, f"{where}.{key}", "missing")
        _require(len(trk["label"]) == 2, f"{where}.label", "expected [birth_time, index]")
        _require(len(trk["state"]) == 4, f"{where}.state", "expected 4 numbers")
    _require(0.0 <= fl["P_D"] <= 1.0, "filter.P_D", "must lie in [0, 1]")
    _require(fl["clutter_rate"] > 0, "filter.clutter_rate", "must be positive")
    _require(fl["detection_std"] > 0, "filter.detection_std", "must be positive")
    _require(0.0 < fl["r_B"] < 1.0, "filter.r_B", "must lie in (0, 1)")
    _require(fl["gamma"] > 0, "filter.gamma", "must be positive")
    _require(0.0 < fl["standard_P_S"] <= 1.0, "filter.standard_P_S", "must lie in (0, 1]")
    _require(fl["template_sigma"] > 0, "filter.template_sigma", "must be positive")
    _require(fl["patch_size"] % 2 == 1, "filter.patch_size", "must be odd")
    _require(fl["template_init"] in ("model", "image"), "filter.template_init", "expected 'model' or 'image'")
    _require(0.0 < fl["existence_threshold"] < 1.0, "filter.existence_threshold", "must lie in (0, 1)")
    _require(0.0 < fl["ut"]["alpha"] <= 1.0, "filter.ut.alpha", "must lie in (0, 1]")
    for i, m in enumerate(fl["birth_means"]):
        _require(len(m) == 4, f"filter.birth_means[{i}]", "expected 4 numbers")
    _require(len(fl["birth_cov_diag"]) == 4, "filter.birth_cov_diag", "expected 4 numbers")
    _require(cfg["ospa"]["c"] > 0, "ospa.c", "must be positive")
    _require(cfg["ospa"]["p"] >= 1, "ospa.p", "must be at least 1")
    return cfg


def load_config(source=None):
    """Defaults overlaid with a dict, a JSON string path, or ``None``."""
    if source is None:
        override = {}
    elif isinstance(source, dict):
        override = source
    else:
        try:
            with open(source) as fh:
                override = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(override, dict):
        raise ConfigError("<root>", "expected an object")
    return validate(_merge(DEFAULTS, override, ""))


def resolve_seed(cfg, flag=None, environ=None):
    """Seed precedence: command-line flag, then environment, then config."""
    environ = os.environ if environ is None else environ
    if flag is not None:
        return int(flag)
    raw = environ.get(SEED_ENV)
    if raw not in (None, ""):
        try:
            seed = int(raw)
        except ValueError:
            raise ConfigError(SEED_ENV, "expected an integer") from None
        if not 0 <= seed < 2**64:
            raise ConfigError(SEED_ENV, "must be an unsigned 64-bit integer")
        return seed
    return int(cfg["seed"])


def build_scenario(cfg):
    """Truth scenario; tracks outliving a shortened ``duration`` are cut at its end."""
    sc = cfg["scenario"]
    end = sc["duration"] + 1
    tracks = tuple(
        TruthTrack(
            TrackLabel(*t["label"]), t["birth"], min(t["death"], end), tuple(float(v) for v in t["state"]),
            bool(t.get("process_noise", False)),
        )
        for t in sc["tracks"]
        if t["birth"] < end
    )
    snr = SnrSchedule(**sc["snr"])
    try:
        return TruthScenario(tracks, sc["width"], sc["height"], sc["duration"], snr,
                             cfg["filter"]["sigma_v"], cfg["filter"]["T_s"])
    except ValueError as exc:
        raise ConfigError("scenario.tracks", str(exc)) from exc


def build_model(cfg, variant="glmb-im"):
    """Filter model for ``variant``; the two variants share everything else."""
    if variant not in VARIANTS:
        raise ConfigError("variant", f"expected one of {', '.join(VARIANTS)}")
    sc, fl = cfg["scenario"], cfg["filter"]
    cov = np.diag(np.asarray(fl["birth_cov_diag"], dtype=float))
    birth = BirthModel(
        tuple(BirthComponent(fl["r_B"], GaussianDensity(np.asarray(m, float), cov)) for m in fl["birth_means"]),
        adaptive_enabled=fl["adaptive_birth"],
        adaptive_r_B=fl["r_B"],
        adaptive_cov=cov,
    )
    mk = fl["mask"]
    if mk["path"]:
        mask = load_mask_pgm(mk["path"])
        if mask.shape != (sc["height"], sc["width"]):
            raise ConfigError("filter.mask.path", "mask size differs from the image size")
    else:
        mask = border_mask(sc["width"], sc["height"], mk["margin"], mk["inner"], mk["edge"], mk["ramp"])
    survival = SurvivalModel(mask, fl["gamma"], integrate=fl["integrate_survival"])
    var = fl["detection_std"] ** 2
    sensor = SensorModel(
        P_D=fl["P_D"],
        clutter_rate=fl["clutter_rate"],
        clutter_region_area=float(sc["width"] * sc["height"]),
        Sigma=np.diag([var, var]),
        template_sigma=fl["template_sigma"],
        patch_size=fl["patch_size"],
        noise_power=2.0 * sc["sigma_n"] ** 2,
        snr_db=fl["model_snr_db"],
    )
    ut = UtConfig(fl["ut"]["alpha"], fl["ut"]["beta"], fl["ut"]["kappa"])
    model = ScenarioModel(
        MotionModel(fl["T_s"], fl["sigma_v"]), birth, survival, sensor,
        (sc["height"], sc["width"]), fl["cov_cap"], ut,
    )
    if variant == "glmb":
        model = model.standard_variant(fl["standard_P_S"])
    return model


def ospa_params(cfg):
    return OspaParams(cfg["ospa"]["c"], cfg["ospa"]["p"])
