#!/usr/bin/env python3
"""Benchmark all kernel versions on the three shipped layer shapes.

Writes bench_results.csv and roofline.json next to this script (or to
--out-dir) and prints a per-version summary with speedups over the unfused
recurrence reference.
"""
import argparse
import os
from pathlib import Path

from polykan.perf import (
    KERNEL_VERSIONS,
    paper_configs,
    run_bench,
    write_bench_csv,
    write_roofline_json,
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--warmups", type=int, default=3)
    ap.add_argument("--workers", type=int,
                    default=int(os.environ.get("POLYKAN_WORKERS", "1")))
    ap.add_argument("--out-dir", default=str(Path(__file__).parent))
    args = ap.parse_args()

    configs = paper_configs()
    results = run_bench(configs, list(KERNEL_VERSIONS), reps=args.reps,
                        warmups=args.warmups, workers=args.workers)
    out = Path(args.out_dir)
    write_bench_csv(results, out / "bench_results.csv")
    write_roofline_json(configs, out / "roofline.json")

    for config in configs:
        rows = [r for r in results if r.config == config]
        base = next(r for r in rows if r.version == "reference-recurrence")
        print(f"\nconfig (B={config.batch}, D_in={config.d_in}, "
              f"D_out={config.d_out}, d={config.degree}):")
        for r in rows:
            speedup = r.samples_per_s / base.samples_per_s
            print(f"  {r.version:<22} fwd {r.fwd_ms:9.3f} ms  bwd {r.bwd_ms:9.3f} ms  "
                  f"{r.samples_per_s:10.1f} samples/s  ({speedup:5.2f}x)")
    print(f"\nwrote {out / 'bench_results.csv'} and {out / 'roofline.json'}")


if __name__ == "__main__":
    main()
