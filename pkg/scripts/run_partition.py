#!/usr/bin/env python3
"""Partitioned-search benchmark: energy and time per (query, link, strategy)."""

import argparse
import sys

from theia.experiments import run_partition_experiment

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--photos", type=int, default=100)
    ap.add_argument("--out", default="reports")
    args = ap.parse_args()
    report = run_partition_experiment(seed=args.seed, photos=args.photos, out=args.out)
    for row in report["table"]:
        print(f"{row['query']:7s} {row['profile']:4s} {row['strategy']:11s} "
              f"energy={row['energy_mj']:11.1f} mJ  time={row['time_s']:8.2f} s  results={row['results']}")
    print("ok:", report["ok"], report["failures"] or "")
    sys.exit(0 if report["ok"] else 1)
