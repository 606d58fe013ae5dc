"""Command-line entry points: calibrate, run, compare, sweep-t0.

Round-level results go to CSV (one row per round), aggregate results to a
deterministic JSON summary. Policy comparisons run every policy on the same
seeds; channel realizations are seed-keyed, so the per-round channel digests
must agree across policies (logged and checked).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .dpq import PrivacySpec, delta_plain_gaussian_of_sigma, delta_q_of_sigma
from .engine import DP_MODES, POLICIES, RoundRecord, run_experiment
from .errors import InfeasiblePrivacyError, WpflError
from .experiment import (ExperimentConfig, build_context, calibrate_sigma,
                         load_config)


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _summarize(records_by_seed: dict) -> dict:
    finals = {seed: recs[-1] for seed, recs in records_by_seed.items() if recs}
    return {
        "final_mean_acc": float(np.mean([r.mean_acc for r in finals.values()])),
        "final_max_test_loss": float(np.mean([r.max_test_loss for r in finals.values()])),
        "final_jain": float(np.mean([r.jain for r in finals.values()])),
        "rounds": {str(s): len(recs) for s, recs in records_by_seed.items()},
        "per_seed": {
            str(s): {"mean_acc": r.mean_acc, "max_test_loss": r.max_test_loss,
                     "jain": r.jain}
            for s, r in finals.items()
        },
        "bound_trajectories": {
            str(s): [{"round": r.round, "theta_l": r.theta_l, "phi_max": r.phi_max,
                      "bound_decay": r.bound_decay, "bound_tail": r.bound_tail}
                     for r in recs]
            for s, recs in records_by_seed.items()
        },
    }


def cmd_calibrate(cfg: ExperimentConfig, t0_list, dp_mode: str, out_dir: Path) -> list:
    """Noise-scale calibration table over a list of round budgets."""
    delta_fn = (delta_q_of_sigma if dp_mode == "quantization_assisted"
                else delta_plain_gaussian_of_sigma)
    rows = []
    for t0 in t0_list:
        try:
            sigma = calibrate_sigma(cfg.privacy, cfg.model.clip_c, dp_mode, t0=t0)
            spec = PrivacySpec(
                epsilon_q=cfg.privacy.epsilon_q, delta_q_target=cfg.privacy.delta_q,
                t0=t0, clip_c=cfg.model.clip_c, r_bits=cfg.privacy.r_bits,
                q_sample=cfg.privacy.q_sample)
            achieved = delta_fn(spec, sigma)
            rows.append([t0, f"{sigma:.10g}", f"{achieved:.10g}", "ok"])
        except InfeasiblePrivacyError as exc:
            rows.append([t0, "", "", f"infeasible: {exc}"])
    _write_csv(out_dir / "calibration.csv", ["t0", "sigma_dp", "achieved_delta", "status"], rows)
    for row in rows:
        print("t0={} sigma={} delta={} [{}]".format(*row))
    return rows


def _run_one(cfg: ExperimentConfig, seed: int, policy: str, dp_mode: str):
    ctx = build_context(cfg, seed, policy=policy, dp_mode=dp_mode)
    records, _ = run_experiment(ctx)
    return records


def cmd_run(cfg: ExperimentConfig, out_dir: Path, policy: str | None = None,
            dp_mode: str | None = None) -> dict:
    policy = policy or cfg.run.policy
    dp_mode = dp_mode or cfg.run.dp_mode
    records_by_seed = {}
    for seed in cfg.run.seeds:
        records = _run_one(cfg, seed, policy, dp_mode)
        records_by_seed[seed] = records
        _write_csv(out_dir / f"run_{policy}_{dp_mode}_seed{seed}.csv",
                   RoundRecord.CSV_FIELDS, [r.csv_row() for r in records])
    summary = {"policy": policy, "dp_mode": dp_mode,
               "seeds": list(cfg.run.seeds), **_summarize(records_by_seed)}
    _write_json(out_dir / f"summary_{policy}_{dp_mode}.json", summary)
    print(f"run: policy={policy} dp_mode={dp_mode} "
          f"final_acc={summary['final_mean_acc']:.4f} jain={summary['final_jain']:.4f}")
    return summary


def cmd_compare(cfg: ExperimentConfig, policies, out_dir: Path,
                dp_mode: str | None = None) -> dict:
    """Run several policies on identical seeds and channel draws."""
    dp_mode = dp_mode or cfg.run.dp_mode
    all_rows = []
    per_policy = {}
    digests = {}
    for policy in policies:
        records_by_seed = {}
        for seed in cfg.run.seeds:
            records = _run_one(cfg, seed, policy, dp_mode)
            records_by_seed[seed] = records
            all_rows.extend(r.csv_row() for r in records)
            for r in records:
                digests.setdefault((seed, r.round), set()).add(r.channel_digest)
        per_policy[policy] = _summarize(records_by_seed)
    crn_ok = all(len(v) == 1 for v in digests.values())
    _write_csv(out_dir / "compare_rounds.csv", RoundRecord.CSV_FIELDS, all_rows)
    summary = {"dp_mode": dp_mode, "policies": list(policies),
               "common_random_numbers_verified": crn_ok,
               "per_policy": per_policy}
    _write_json(out_dir / "compare_summary.json", summary)
    for policy in policies:
        s = per_policy[policy]
        print(f"compare: {policy:15s} acc={s['final_mean_acc']:.4f} "
              f"max_loss={s['final_max_test_loss']:.4f} jain={s['final_jain']:.4f}")
    print(f"compare: common random numbers verified: {crn_ok}")
    return summary


def cmd_sweep_t0(cfg: ExperimentConfig, t0_list, out_dir: Path,
                 policy: str | None = None, dp_mode: str | None = None) -> list:
    policy = policy or cfg.run.policy
    dp_mode = dp_mode or cfg.run.dp_mode
    rows = []
    for t0 in t0_list:
        finals = []
        for seed in cfg.run.seeds:
            ctx = build_context(cfg, seed, policy=policy, dp_mode=dp_mode, t0=t0)
            records, _ = run_experiment(ctx)
            finals.append(records[-1])
        rows.append([t0,
                     float(np.mean([r.mean_acc for r in finals])),
                     float(np.mean([r.max_test_loss for r in finals])),
                     float(np.mean([r.jain for r in finals]))])
        print(f"sweep-t0: t0={t0} acc={rows[-1][1]:.4f} jain={rows[-1][3]:.4f}")
    _write_csv(out_dir / "sweep_t0.csv",
               ["t0", "mean_acc", "max_test_loss", "jain"], rows)
    return rows


def _parse_int_list(text: str):
    return [int(tok) for tok in text.replace(",", " ").split()]


def _add_common(parser, suppress=False):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="config file (INI sections or JSON)")
    parser.add_argument("--out", default=d, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, action="append", default=d,
                        help="seed (repeatable; overrides config seeds)")
    parser.add_argument("--policy", choices=POLICIES, default=d)
    parser.add_argument("--dp-mode", choices=DP_MODES, default=d)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wpflsim")
    _add_common(parser)
    sub = parser.add_subparsers(dest="command", required=True)
    cal = sub.add_parser("calibrate", help="noise-scale calibration over t0 values")
    cal.add_argument("--t0-list", default="5,10,15,20,25,30")
    run_p = sub.add_parser("run", help="run the configured experiment")
    cmp_p = sub.add_parser("compare", help="run several policies on common seeds")
    cmp_p.add_argument("--policies", default=",".join(POLICIES))
    sweep = sub.add_parser("sweep-t0", help="final metrics across t0 values")
    sweep.add_argument("--t0-list", default="5,10,15,20,25,30")
    # the common flags are also accepted after the subcommand
    for p in (cal, run_p, cmp_p, sweep):
        _add_common(p, suppress=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed:
            cfg = ExperimentConfig(**{**_cfg_kwargs(cfg),
                                      "run": _replace(cfg.run, seeds=tuple(args.seed))})
        out_dir = Path(args.out or cfg.out_dir)
        dp_mode = args.dp_mode or cfg.run.dp_mode
        if args.command == "calibrate":
            cmd_calibrate(cfg, _parse_int_list(args.t0_list), dp_mode, out_dir)
        elif args.command == "run":
            cmd_run(cfg, out_dir, policy=args.policy, dp_mode=args.dp_mode)
        elif args.command == "compare":
            cmd_compare(cfg, [p.strip() for p in args.policies.split(",") if p.strip()],
                        out_dir, dp_mode=args.dp_mode)
        elif args.command == "sweep-t0":
            cmd_sweep_t0(cfg, _parse_int_list(args.t0_list), out_dir,
                         policy=args.policy, dp_mode=args.dp_mode)
        return 0
    except (WpflError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _replace(obj, **kw):
    import dataclasses
    return dataclasses.replace(obj, **kw)


def _cfg_kwargs(cfg: ExperimentConfig) -> dict:
    return dict(data=cfg.data, model=cfg.model, radio=cfg.radio,
                privacy=cfg.privacy, run=cfg.run, out_dir=cfg.out_dir)


if __name__ == "__main__":
    sys.exit(main())
