"""Run both benchmark suites and the workspace report, then print a summary.

Usage: python3 scripts/run_benchmarks.py [--models-dir models] [--out results]
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from deltagrasp import cli


def _rows(path: Path) -> list[dict]:
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--models-dir", default="models")
    p.add_argument("--out", default="results")
    p.add_argument("--timing", action="store_true")
    args = p.parse_args(argv)
    out = Path(args.out)
    common = ["--models-dir", args.models_dir, "--out", str(out)] + (["--timing"] if args.timing else [])
    codes = {
        "bench-incline": cli.main(["bench-incline", "--save-runs", *common]),
        "bench-pickplace": cli.main(["bench-pickplace", *common]),
        "workspace-report": cli.main(["workspace-report", *common]),
    }
    print("angle  T_full  T_cube   dt    z_full  z_cube")
    for r in _rows(out / "incline.csv"):
        if r["T_full"] and r["T_cube"]:
            print(f"{float(r['angle_deg']):5.0f} {float(r['T_full']):7.2f} {float(r['T_cube']):7.2f} {float(r['dt']):+6.2f}"
                  f"  {float(r['range_z_full']):.3f}   {float(r['range_z_cube']):.3f}")
    print("seed  cost_full  cost_cube  reduction")
    for r in _rows(out / "pickplace.csv"):
        if r["reduction"]:
            cf = f"{float(r['cost_full']):9.3f}" if r.get("cost_full") else " " * 9
            cc = f"{float(r['cost_cube']):9.3f}" if r.get("cost_cube") else " " * 9
            print(f"{r['seed']:>4}  {cf}  {cc}  {100 * float(r['reduction']):6.1f}%")
    rep = json.loads((out / "workspace_report.json").read_text())
    print(f"workspace volume {rep['V_mc_cm3']:.0f} cm3, cube {rep['V_cube_cm3']:.0f} cm3, "
          f"ratio {rep['ratio_mc_over_cube']:.2f}")
    print("exit codes:", codes)
    return max(codes.values())


if __name__ == "__main__":
    sys.exit(main())
