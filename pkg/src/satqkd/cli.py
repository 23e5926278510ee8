"""Pipeline driver: simulate a pass, reconcile it, report key lengths.

Commands write into one output directory and maintain a manifest with
the config hash, stage seeds, package versions, and a checksum per
output file.  All stages are seeded, so rerunning any of them leaves
every byte unchanged.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, config_hash, load_config
from .detection import (INT_VACUUM, SiftedData, assign_metadata, read_sifted,
                        sample_clicks, window_click_probability,
                        write_detection_csv, write_sifted)
from .keyrate import DecoyObservations, decoy_bounds, skl
from .ldpc import CodeLibrary
from .passlink import ConfigError, pass_profile, static_budget, write_pass_csv
from .reconcile import Strategy, run_pass, write_block_csv
from .scintseries import read_trace, synthesize, write_decimated_csv, write_trace
from .turbulence import pass_turbulence, write_turbulence_csv

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_INTERNAL = 0, 2, 3, 4

# canonical strategy labels; (e) is the baseline all deltas refer to
STRATEGY_LABELS = ("a", "b", "c", "d", "e", "f", "g", "h")
STRATEGY_TABLE = {
    "a": ("NoLLR", "no llr vector", "NoLLR", "MeanCapacity"),
    "b": ("Randomized", "baseline with bit-position randomization",
          "Randomized", "MeanCapacity"),
    "c": ("NoisyLLR", "noisy llr estimation", "NoisyLLR", "MeanCapacity"),
    "d": ("FullLLR-MeanQBER", "full llr, mean-QBER code selection",
          "FullLLR", "MeanQBER"),
    "e": ("FullLLR", "full llr, mean-capacity code selection (baseline)",
          "FullLLR", "MeanCapacity"),
    "f": ("ThreeLevel", "three llr levels for signal/decoy/vacuum",
          "ThreeLevel", "MeanCapacity"),
    "g": ("TwoLevelNoVacuum", "two llr levels, vacuum events excluded",
          "TwoLevelNoVacuum", "MeanCapacity"),
    "h": ("FullLLRNoVacuum", "full llr, vacuum events excluded",
          "FullLLRNoVacuum", "MeanCapacity"),
}


def resolve_strategy(name: str) -> str:
    """Map a label letter or strategy name onto the label letter."""
    low = name.strip().lower()
    if low in STRATEGY_TABLE:
        return low
    for label, (sname, _, _, _) in STRATEGY_TABLE.items():
        if low == sname.lower():
            return label
    valid = ", ".join(f"{k}={v[0]}" for k, v in STRATEGY_TABLE.items())
    raise ConfigError(f"unknown strategy {name!r}; valid: {valid}")


def strategy_for(label: str, rc: RunConfig) -> Strategy:
    _, _, mode, selection = STRATEGY_TABLE[label]
    return Strategy(llr_mode=mode, selection=selection,
                    noise_sigma=rc.reconcile.noise_sigma)


def fmt(x) -> str:
    return "%.9g" % float(x)


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def update_manifest(rc: RunConfig, out: str, stage: str, files) -> None:
    path = os.path.join(out, "manifest.json")
    manifest = {}
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    manifest["config_sha256"] = config_hash(rc)
    manifest["seed"] = rc.seed
    manifest["stage_seeds"] = rc.stage_seeds
    manifest["scale"] = rc.scale
    manifest["versions"] = {"satqkd": __version__,
                            "numpy": np.__version__,
                            "python": ".".join(map(str, sys.version_info[:3]))}
    stages = manifest.setdefault("stages", {})
    stages[stage] = {"files": {name: _sha256(os.path.join(out, name))
                               for name in sorted(files)}}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate_pass(rc: RunConfig, out: str) -> int:
    link = rc.effective_link()
    scfg = rc.effective_scint()
    samples = pass_profile(link)
    static_budget(samples, link, rc.attenuation)
    states = pass_turbulence(samples, rc.turbulence, link)
    series = synthesize(states, scfg, rc.stage_seeds["scint"])

    os.makedirs(out, exist_ok=True)
    write_pass_csv(os.path.join(out, "budget.csv"), samples)
    write_turbulence_csv(os.path.join(out, "turbulence.csv"), states)
    write_trace(os.path.join(out, "scint.bin"), series)
    write_decimated_csv(os.path.join(out, "scint_decimated.csv"), series)
    update_manifest(rc, out, "simulate-pass",
                    ["budget.csv", "turbulence.csv", "scint.bin",
                     "scint_decimated.csv"])
    print(f"simulate-pass: {len(samples)} link samples, "
          f"{len(series)} scintillation samples, "
          f"mean {fmt(series.samples.mean()) if len(series) else 'n/a'}")
    return EXIT_OK


def read_static_budget(path) -> np.ndarray:
    """Linear static transmittance per second from the budget CSV."""
    vals = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        col = header.index("eta_static_db")
        for line in fh:
            vals.append(10.0 ** (float(line.split(",")[col]) / 10.0))
    return np.asarray(vals)


def _empty_sifted() -> SiftedData:
    zeros3 = np.zeros(3, dtype=np.int64)
    return SiftedData(slots=np.zeros(0, dtype=np.uint64),
                      intensity=np.zeros(0, dtype=np.uint8),
                      alice_bits=np.zeros(0, dtype=np.uint8),
                      errors=np.zeros(0, dtype=np.uint8),
                      q=np.zeros(0), total_slots=0, total_clicks=0,
                      z_clicks_by_int=zeros3, z_errors_by_int=zeros3.copy(),
                      x_clicks_by_int=zeros3.copy(),
                      x_errors_by_int=zeros3.copy())


def cmd_simulate_qkd(rc: RunConfig, out: str) -> int:
    budget_path = os.path.join(out, "budget.csv")
    trace_path = os.path.join(out, "scint.bin")
    if not (os.path.exists(budget_path) and os.path.exists(trace_path)):
        print("simulate-qkd: missing channel traces; run simulate-pass first",
              file=sys.stderr)
        return EXIT_MISSING
    det = rc.effective_detector()
    scfg = rc.effective_scint()
    eta_static = read_static_budget(budget_path)
    series = read_trace(trace_path)
    if len(series) != eta_static.size * scfg.sample_rate_hz:
        raise ConfigError("budget.csv and scint.bin disagree on pass length")
    # one scintillation sample per detection window
    eta_win = np.repeat(eta_static, scfg.sample_rate_hz) * series.samples

    if eta_win.size == 0:
        sift = _empty_sifted()
        click_slots = np.zeros(0, dtype=np.int64)
    else:
        p = window_click_probability(eta_win, det)
        click_slots = sample_clicks(p, det, rc.stage_seeds["clicks"])
        sift = assign_metadata(click_slots, eta_win, det,
                               rc.stage_seeds["meta"])
    n_sift = len(sift)
    mean_q = float(sift.q.mean()) if n_sift else 0.0
    vac_frac = float((sift.intensity == INT_VACUUM).mean()) if n_sift else 0.0
    write_sifted(os.path.join(out, "sifted.bin"), sift)
    write_detection_csv(os.path.join(out, "qkd_summary.csv"), sift,
                        click_slots, det, eta_static.size)

    slots = sift.total_slots
    pk = det.intensity_probs
    pz = det.p_z
    obs = {
        "total_slots": slots,
        "total_clicks": sift.total_clicks,
        "sifted_len": n_sift,
        "mean_qber": mean_q,
        "vacuum_fraction": vac_frac,
        "sent_z": [int(np.ceil(slots * p * pz * pz)) for p in pk],
        "sent_x": [int(np.ceil(slots * p * (1 - pz) ** 2)) for p in pk],
        "clicks_z": sift.z_clicks_by_int.tolist(),
        "errors_z": sift.z_errors_by_int.tolist(),
        "clicks_x": sift.x_clicks_by_int.tolist(),
        "errors_x": sift.x_errors_by_int.tolist(),
    }
    with open(os.path.join(out, "observations.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(obs, fh, indent=2, sort_keys=True)
        fh.write("\n")
    update_manifest(rc, out, "simulate-qkd",
                    ["sifted.bin", "qkd_summary.csv", "observations.json"])
    print(f"simulate-qkd: {sift.total_clicks} clicks, {n_sift} sifted bits, "
          f"mean QBER {fmt(mean_q)}, vacuum fraction {fmt(vac_frac)}")
    return EXIT_OK


def load_sifted(out: str) -> SiftedData | None:
    path = os.path.join(out, "sifted.bin")
    if not os.path.exists(path):
        return None
    return read_sifted(path)


def _reconcile_one(rc: RunConfig, out: str, label: str,
                   library: CodeLibrary) -> dict:
    key = load_sifted(out)
    if key is None:
        raise FileNotFoundError("missing sifted data; run simulate-qkd first")
    rp = rc.reconcile
    report = run_pass(key, strategy_for(label, rc), library,
                      n_block=rp.n_block, seed=rc.stage_seeds["reconcile"],
                      f_margin=rp.f_margin, f_cap=rp.f_cap,
                      max_iters=rp.max_iters, patience=rp.patience)
    write_block_csv(os.path.join(out, f"blocks_{label}.csv"), report)
    fs = [o.f for o in report.outcomes if o.success]
    agg = {
        "label": label,
        "strategy": STRATEGY_TABLE[label][0],
        "description": STRATEGY_TABLE[label][1],
        "n_blocks": report.n_blocks,
        "n_success": report.n_success,
        "mean_rate": report.mean_rate,
        "sifted_bits": report.sifted_bits,
        "reconciled_bits": report.reconciled_bits,
        "corrected_bits": report.corrected_bits,
        "leakage_bits": report.leakage_bits,
        "scrap_bits": report.scrap_bits,
        "excluded_bits": report.excluded_bits,
        "f_mean": float(np.mean(fs)) if fs else None,
        "f_min": float(np.min(fs)) if fs else None,
        "f_max": float(np.max(fs)) if fs else None,
    }
    with open(os.path.join(out, f"reconcile_{label}.json"), "w",
              encoding="utf-8", newline="\n") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    update_manifest(rc, out, f"reconcile-{label}",
                    [f"blocks_{label}.csv", f"reconcile_{label}.json"])
    return agg


def cmd_reconcile(rc: RunConfig, out: str, name: str) -> int:
    label = resolve_strategy(name)
    try:
        agg = _reconcile_one(rc, out, label, CodeLibrary())
    except FileNotFoundError as exc:
        print(f"reconcile: {exc}", file=sys.stderr)
        return EXIT_MISSING
    print(f"reconcile ({label}) {agg['strategy']}: "
          f"{agg['n_success']}/{agg['n_blocks']} blocks, "
          f"mean rate {fmt(agg['mean_rate'])}, "
          f"leakage {agg['leakage_bits']} bits")
    return EXIT_OK


def _skl_for(rc: RunConfig, obs_raw: dict, agg: dict, factor: int) -> dict:
    det = rc.detector
    sec = rc.security

    def bounds_at(mult: int):
        o = DecoyObservations(
            np.asarray(obs_raw["sent_z"]) * mult,
            np.asarray(obs_raw["clicks_z"]) * mult,
            np.asarray(obs_raw["errors_z"]) * mult,
            np.asarray(obs_raw["sent_x"]) * mult,
            np.asarray(obs_raw["clicks_x"]) * mult,
            np.asarray(obs_raw["errors_x"]) * mult)
        return decoy_bounds(o, sec, det.intensities, det.intensity_probs)

    b1 = bounds_at(1)
    native = skl(b1, float(agg["leakage_bits"]), sec)
    bf = bounds_at(factor)
    equiv = skl(bf, float(agg["leakage_bits"]) * factor, sec)
    return {
        "label": agg["label"],
        "strategy": agg["strategy"],
        "f_mean": agg["f_mean"], "f_min": agg["f_min"], "f_max": agg["f_max"],
        "leakage_bits": agg["leakage_bits"],
        "skl_native": native.length_bits,
        "phi_x1_native": native.phi_x1_upper,
        "skl_scale1": equiv.length_bits,
        "s_z0_scale1": equiv.s_z0_lower,
        "s_z1_scale1": equiv.s_z1_lower,
        "phi_x1_scale1": equiv.phi_x1_upper,
    }


def _print_skl_table(rows: list[dict]) -> None:
    base = next((r for r in rows if r["label"] == "e"), None)
    print("label  strategy            skl_scale1      delta_vs_e   f_mean   f_range")
    for r in rows:
        delta = ""
        if base is not None and base["skl_scale1"] > 0 and r["label"] != "e":
            delta = fmt(100.0 * (r["skl_scale1"] - base["skl_scale1"])
                        / base["skl_scale1"]) + "%"
        frange = ""
        if r["f_mean"] is not None:
            frange = f"[{fmt(r['f_min'])}, {fmt(r['f_max'])}]"
        print(f"({r['label']})   {r['strategy']:<19} "
              f"{fmt(r['skl_scale1']):>14}  {delta:>10}   "
              f"{fmt(r['f_mean']) if r['f_mean'] is not None else '':>7}  {frange}")


def _write_skl_report(rc: RunConfig, out: str, aggs: list[dict]) -> list[dict]:
    with open(os.path.join(out, "observations.json"), encoding="utf-8") as fh:
        obs_raw = json.load(fh)
    factor = round(1.0 / rc.scale)
    rows = [_skl_for(rc, obs_raw, agg, factor) for agg in aggs]
    report = {"scale": rc.scale, "scale1_factor": factor,
              "bound_recipe": ("two-decoy finite-key bounds with Hoeffding "
                               "concentration, vacuum treated exactly, "
                               "eps_sec split across 21 terms "
                               "(Lim et al., Phys. Rev. A 89, 022307)"),
              "strategies": rows}
    with open(os.path.join(out, "skl_report.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    update_manifest(rc, out, "skl-report", ["skl_report.json"])
    return rows


def cmd_skl_report(rc: RunConfig, out: str) -> int:
    if not os.path.exists(os.path.join(out, "observations.json")):
        print("skl-report: missing observations.json; run simulate-qkd first",
              file=sys.stderr)
        return EXIT_MISSING
    aggs = []
    for label in STRATEGY_LABELS:
        path = os.path.join(out, f"reconcile_{label}.json")
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                aggs.append(json.load(fh))
    if not aggs:
        print("skl-report: no reconcile outputs found; run reconcile first",
              file=sys.stderr)
        return EXIT_MISSING
    rows = _write_skl_report(rc, out, aggs)
    _print_skl_table(rows)
    return EXIT_OK


def cmd_sweep(rc: RunConfig, out: str) -> int:
    # one seeded realization shared by every strategy: the channel and
    # detection stages run once, reconciliation fans out over labels
    if not os.path.exists(os.path.join(out, "scint.bin")):
        code = cmd_simulate_pass(rc, out)
        if code:
            return code
    if load_sifted(out) is None:
        code = cmd_simulate_qkd(rc, out)
        if code:
            return code
    library = CodeLibrary()
    aggs = [_reconcile_one(rc, out, label, library)
            for label in STRATEGY_LABELS]
    rows = _write_skl_report(rc, out, aggs)
    _print_skl_table(rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satqkd",
        description="decoy-state BB84 satellite downlink simulation pipeline")
    parser.add_argument("command",
                        choices=["simulate-pass", "simulate-qkd", "reconcile",
                                 "skl-report", "sweep-strategies"])
    parser.add_argument("--config", metavar="PATH",
                        help="flat dotted-key config file")
    parser.add_argument("--seed", type=int, metavar="U64",
                        help="master seed (replaces per-stage seed overrides)")
    parser.add_argument("--scale", type=float, metavar="F",
                        help="rate scale factor in (0, 1]")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--strategy", metavar="NAME",
                        help="strategy label a-h or name (reconcile only)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config and not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        rc = load_config(args.config) if args.config else RunConfig()
        overrides = {}
        if args.seed is not None:
            overrides.update(seed=args.seed, seed_scint=None, seed_clicks=None,
                             seed_meta=None, seed_reconcile=None)
        if args.scale is not None:
            overrides["scale"] = args.scale
        if args.out is not None:
            overrides["out_dir"] = args.out
        if overrides:
            import dataclasses
            rc = dataclasses.replace(rc, **overrides)
        # construct the scaled views up front so bad combinations are
        # reported as config errors before anything touches the disk
        rc.effective_link(), rc.effective_scint(), rc.effective_detector()
        out = rc.out_dir

        if args.command == "simulate-pass":
            return cmd_simulate_pass(rc, out)
        if args.command == "simulate-qkd":
            return cmd_simulate_qkd(rc, out)
        if args.command == "reconcile":
            if not args.strategy:
                raise ConfigError("reconcile needs --strategy")
            return cmd_reconcile(rc, out, args.strategy)
        if args.command == "skl-report":
            return cmd_skl_report(rc, out)
        return cmd_sweep(rc, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:   # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
