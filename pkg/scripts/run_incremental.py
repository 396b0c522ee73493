#!/usr/bin/env python3
"""Incremental-search experiment: cost per relevant photo vs the baselines."""

import argparse
import sys

from theia.corpus import CorpusSpec
from theia.experiments import UserPolicy, run_incremental_experiment

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--devices", type=int, default=85)
    ap.add_argument("--photos-per-device", type=int, default=36)
    ap.add_argument("--locality", type=float, default=0.8)
    ap.add_argument("--target", type=int, default=30)
    ap.add_argument("--policy", default="oracle-feedback",
                    choices=["oracle-feedback", "mark-none", "threshold-marker"])
    ap.add_argument("--out", default="reports")
    args = ap.parse_args()
    spec = CorpusSpec(args.devices, args.photos_per_device, args.locality, seed=args.seed)
    report = run_incremental_experiment(
        spec, UserPolicy(args.policy, target_relevant=args.target), seed=args.seed, out=args.out
    )
    t, b = report["totals"], report["baselines"]
    print(f"status={report['status']} submissions={t['submissions']} cost={t['total_cost']}")
    print(f"cost/relevant: {t['cost_per_relevant']:.2f}  single-pass: {b['single_pass_per_relevant']:.2f}  lower-bound: {b['lower_bound_per_relevant']:.2f}")
    print(f"resubmission success rate: {t['resubmission_success_rate']:.3f}")
    sys.exit(0 if report["ok"] else 1)
