#!/usr/bin/env python3
"""Dynamic-partition experiment: adapt to an injected network delay."""

import argparse
import sys

from theia.experiments import run_dynamic_experiment

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--inject-at", type=int, default=50)
    ap.add_argument("--remove-at", type=int, default=100)
    ap.add_argument("--extra-rtt-ms", type=float, default=1000.0)
    ap.add_argument("--out", default="reports")
    args = ap.parse_args()
    report = run_dynamic_experiment(
        seed=args.seed, inject_at=args.inject_at, remove_at=args.remove_at,
        extra_rtt_ms=args.extra_rtt_ms, out=args.out,
    )
    print(f"baseline={report['baseline_offload_index']} shifted_at={report['shifted_at_photo']} "
          f"restored_at={report['restored_at_photo']} ok={report['ok']}")
    sys.exit(0 if report["ok"] else 1)
