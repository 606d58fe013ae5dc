#!/usr/bin/env python3
"""Compare all scheduling policies on common seeds and channel draws.

Writes per-round CSV and a JSON summary under results/policy_comparison/.
"""

from pathlib import Path

from wpflsim.channel import RadioConfig
from wpflsim.cli import cmd_compare
from wpflsim.engine import POLICIES
from wpflsim.experiment import (DataConfig, ExperimentConfig, ModelConfig,
                                PrivacyConfig, RunConfig)

CFG = ExperimentConfig(
    data=DataConfig(n_samples=2000, input_dim=16, n_classes=10,
                    separation=3.0, feature_scale=2.2, labels_per_client=2),
    model=ModelConfig(kind="mlr", clip_c=20.0, tau_max=0.01),
    radio=RadioConfig(bs_power_dbm=-30.0),
    privacy=PrivacyConfig(epsilon_q=1.0, delta_q=5e-3, t0=20, r_bits=16,
                          q_sample=0.1),
    run=RunConfig(seeds=(0, 1, 2, 3, 4), eps_p_div=35.0),
)

if __name__ == "__main__":
    cmd_compare(CFG, list(POLICIES), Path("results/policy_comparison"))
