#!/usr/bin/env python3
"""Print a compact elevation/loss/scintillation table for one pass.

Reads the budget and turbulence CSVs produced by ``simulate-pass`` and
prints a row per sample at a chosen stride.  No plotting dependencies;
pipe the output into your tool of choice.
"""
import argparse
import csv
from pathlib import Path


def load(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--stride", type=int, default=15)
    args = ap.parse_args()

    budget = load(args.run_dir / "budget.csv")
    turb = {row["t_s"]: row for row in load(args.run_dir / "turbulence.csv")}

    print(f"{'t_s':>7} {'elev_deg':>8} {'range_km':>9} {'eta_dB':>8} "
          f"{'sigma_I^2':>9} {'f_G_Hz':>8}")
    for row in budget[::args.stride]:
        t = turb[row["t_s"]]
        print(f"{float(row['t_s']):7.1f} {float(row['elev_deg']):8.2f} "
              f"{float(row['range_m']) / 1e3:9.1f} "
              f"{float(row['eta_static_db']):8.2f} "
              f"{float(t['psi']):9.4f} {float(t['f_greenwood_hz']):8.1f}")


if __name__ == "__main__":
    main()
