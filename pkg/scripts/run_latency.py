#!/usr/bin/env python3
"""Latency experiment: first-result latency and inter-result intervals."""

import argparse
import sys

from theia.experiments import run_latency_experiment

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int, default=15)
    ap.add_argument("--wall-clock", action="store_true")
    ap.add_argument("--out", default="reports")
    args = ap.parse_args()
    report = run_latency_experiment(
        seed=args.seed, trials=args.trials, wall_clock=args.wall_clock, out=args.out
    )
    for row in report["table"]:
        print(f"{row['query']:10s} fleet={row['fleet']}  "
              f"first={row['first_result_virtual_ms']['median']} ms  "
              f"interval={row['inter_result_virtual_ms']['median']} ms")
    print("ok:", report["ok"], report["failures"] or "")
    sys.exit(0 if report["ok"] else 1)
