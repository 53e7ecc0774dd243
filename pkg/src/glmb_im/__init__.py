"""Labeled multi-object tracking with a hybrid detection/image likelihood."""

from .config import ConfigError, build_model, build_scenario, load_config
from .experiment import RunReport, run_monte_carlo, run_seeds, simulate_run
from .glmb import GlmbFilter, exact_update_oracle, gibbs_sample, joint_predict_update
from .models import HybridObservation, ScenarioModel, SensorModel
from .ospa import OspaParams, ospa
from .rfs import GlmbDensity, TrackLabel, estimate_mme, estimate_multi_bernoulli

__version__ = "0.1.0"
