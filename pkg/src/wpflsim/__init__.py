"""Deterministic simulator for privacy-preserving personalized federated
learning over lossy OFDMA links: quantization-assisted Gaussian privacy,
bit-level channel corruption, min-max fair scheduling and coefficient
adjustment, plus evaluable convergence-bound calculators."""

from .channel import RadioConfig, realize_round, transmit
from .coeffs import BoundConstants, minimize_phi
from .dpq import (PrivacySpec, QuantizerSpec, clip_model, delta_q_of_sigma,
                  gaussian_tail, mechanism_mq, search_sigma)
from .engine import ExperimentContext, RoundRecord, run_experiment
from .experiment import ExperimentConfig, build_context, load_config

__all__ = [
    "RadioConfig", "realize_round", "transmit",
    "BoundConstants", "minimize_phi",
    "PrivacySpec", "QuantizerSpec", "clip_model", "delta_q_of_sigma",
    "gaussian_tail", "mechanism_mq", "search_sigma",
    "ExperimentContext", "RoundRecord", "run_experiment",
    "ExperimentConfig", "build_context", "load_config",
]

__version__ = "0.1.0"
