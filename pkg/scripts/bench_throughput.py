#!/usr/bin/env python3
"""Synaptic event throughput benchmark.

Runs the scaled balanced random network in its asynchronous-irregular
configuration, counts delivered synaptic events and reports events per wall
second plus the speedup against biological real time, next to the published
reference systems.
"""

import argparse
import sys
from pathlib import Path

from wafersim.pipeline import run_pipeline, scaled_brunel_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--duration", type=float, default=2000.0,
                    help="biological time in ms")
    ap.add_argument("--g", type=float, default=6.0)
    ap.add_argument("--eta", type=float, default=4.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", type=Path, default=Path("bench_out"))
    args = ap.parse_args()

    config = scaled_brunel_config(g=args.g, eta=args.eta, seed=args.seed,
                                  duration=args.duration)
    result = run_pipeline(config, args.out_dir)
    print(result.throughput.render_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
