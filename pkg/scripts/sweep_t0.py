#!/usr/bin/env python3
"""Final metrics of the proposed policy across upload budgets t0."""

from pathlib import Path

from wpflsim.cli import cmd_sweep_t0
from wpflsim.experiment import DataConfig, ExperimentConfig, RunConfig

CFG = ExperimentConfig(
    data=DataConfig(separation=3.0, feature_scale=2.2),
    run=RunConfig(seeds=(0, 1, 2), max_rounds=200),
)

if __name__ == "__main__":
    cmd_sweep_t0(CFG, [5, 10, 15, 20, 25, 30], Path("results/sweep_t0"))
