"""Command-line entry point: ``stopnet <subcommand> --config run.json --out DIR``.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure.
Every subcommand writes ``resolved_config.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import parallel
from .asti import (entropy_exit_baseline, exit_histogram, snell_gap, static_exit_baseline, sweep,
                   trace)
from .drift import check_drift_condition
from .dynamics import ResidualNet, generate_dataset, read_dataset_csv, rollout_inputs, write_dataset_csv
from .errors import ConfigError, DivergenceError, StopnetError, UsageError
from .hjb import solve as hjb_solve
from .hjb import summary as hjb_summary
from .reward import UtilitySpec
from .snell import solve_batch
from .train import train as run_training

REPORT_INPUTS = ("snell_summary.json", "drift_report.json", "asti_sweep.csv", "asti_histogram.csv")


def _num(v):
    """Shortest round-tripping text for a float; ints stay ints."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([x if isinstance(x, str) else _num(x) for x in r])


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- shared setup -------------------------------------------------------------

def _setup(args):
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = cfgmod.load(args.config, seed_override=args.seed)
    out = args.out or cfg.output_dir
    if out is None:
        raise UsageError("no output directory: pass --out or set output_dir")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump(cfg, out / "resolved_config.json")
    return cfg, out


def _dataset(cfg, path, split):
    if path is not None:
        return read_dataset_csv(path)
    return generate_dataset(cfg.data.spec(cfg.seed, split))


def _load_net(path, cfg):
    if path is None:
        raise UsageError("--weights is required")
    net = ResidualNet.load(path)
    if net.n_classes != cfg.data.n_classes or net.d_in != cfg.data.d_in:
        raise ConfigError("weights do not match the configured data shape")
    return net


def _spec(net, cfg):
    return UtilitySpec.for_net(net, cfg.reward.kind, cfg.reward.ce_clamp)


def _floats(text, name):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"{name} must be a comma-separated list of numbers") from exc
    if not vals:
        raise UsageError(f"{name} is empty")
    return vals


# --- subcommands --------------------------------------------------------------

def cmd_gen_data(args):
    cfg, out = _setup(args)
    X, y = generate_dataset(cfg.data.spec(cfg.seed, "train"))
    write_dataset_csv(out / "train.csv", X, y)
    if cfg.data.n_val > 0:
        Xv, yv = generate_dataset(cfg.data.spec(cfg.seed, "val"))
        write_dataset_csv(out / "val.csv", Xv, yv)


def cmd_train(args):
    cfg, out = _setup(args)
    X, y = _dataset(cfg, args.data, "train")
    Xv, yv = _dataset(cfg, args.val_data, "val") if (args.val_data or cfg.data.n_val) else (None, None)
    try:
        net, log = run_training(cfg.train, cfg.model, X, y, Xv, yv)
    except DivergenceError as exc:
        if exc.last_good is not None:
            exc.last_good.save(out / "weights.last_good.json")
        raise
    net.save(out / "weights.json")
    _write_csv(out / "train_log.csv",
               ["epoch", "total", "task", "intermediate", "depth_penalty", "val_accuracy"],
               [(e, log.total[e], log.task[e], log.intermediate[e], log.depth_penalty[e],
                 log.val_accuracy[e]) for e in range(log.epochs)])
    last = log.epochs - 1
    _write_csv(out / "norm_profile.csv", ["layer", "mean_residual_norm", "mean_sq_residual_norm"],
               [(l, log.mean_residual_norm[last][l], log.mean_sq_residual_norm[last][l])
                for l in range(net.depth)])


def cmd_snell(args):
    cfg, out = _setup(args)
    net = _load_net(args.weights, cfg)
    X, y = _dataset(cfg, args.data, "val")
    c = cfg.reward.cost_c
    spec = _spec(net, cfg)
    batch = rollout_inputs(net, X, y)
    u, _, env, tau = solve_batch(batch, spec, c, cfg.snell.tie_tol)
    idx = np.arange(len(tau))
    g_tau = u[idx, tau]
    _write_csv(out / "snell_samples.csv", ["input_id", "tau_star", "U0", "g_at_tau"],
               [(int(i), int(t), env[i, 0], g_tau[i]) for i, t in zip(batch.input_ids, tau)])
    n = len(tau)

    def se(v):
        return float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    _write_json(out / "snell_summary.json", {
        "value": float(env[:, 0].mean()),
        "mean_tau": float(tau.mean()),
        "se_value": se(env[:, 0]),
        "se_tau": se(tau.astype(np.float64)),
        "mean_g_at_tau": float(g_tau.mean()),
        "n": n,
        "c": c,
        "utility": cfg.reward.kind,
        "depth": net.depth,
    })


def cmd_check_drift(args):
    cfg, out = _setup(args)
    net = _load_net(args.weights, cfg)
    X, y = _dataset(cfg, args.data, "val")
    l0 = args.L0 if args.L0 is not None else cfg.drift.l0
    batch = rollout_inputs(net, X, y)
    rep = check_drift_condition(batch, _spec(net, cfg), cfg.reward.cost_c, l0, cfg.drift.l0_fraction)
    _write_json(out / "drift_report.json", rep.to_dict())
    _write_csv(out / "drift_layers.csv", ["layer", "mean_residual_norm", "mean_drift"],
               [(l, rep.mean_residual_norm[l], rep.mean_drift[l]) for l in range(net.depth)])


def cmd_asti_sweep(args):
    cfg, out = _setup(args)
    net = _load_net(args.weights, cfg)
    if cfg.reward.kind != "confidence":
        raise ConfigError("asti-sweep needs reward.kind == 'confidence'")
    X, y = _dataset(cfg, args.data, "val")
    c_values = _floats(args.c_values, "--c-values") if args.c_values else list(cfg.asti.c_values)
    baselines = [b for b in (args.baselines or "static,entropy").split(",") if b]
    unknown = set(baselines) - {"static", "entropy", "none"}
    if unknown:
        raise UsageError(f"unknown baselines {sorted(unknown)}")
    tr = trace(net, X, y)
    rows = sweep(net, X, y, c_values, tr=tr)
    if "static" in baselines:
        layers = cfg.asti.static_layers or range(1, net.depth + 1)
        rows += [static_exit_baseline(net, X, y, int(e), tr=tr) for e in layers]
    if "entropy" in baselines:
        rows += [entropy_exit_baseline(net, X, y, t, tr=tr) for t in cfg.asti.entropy_thresholds]
    _write_csv(out / "asti_sweep.csv", ["c_or_threshold", "method", "mean_depth", "mean_macs", "accuracy"],
               [(r.param, r.method, r.mean_depth, r.mean_macs, r.accuracy) for r in rows])
    hist_c = cfg.asti.hist_c if cfg.asti.hist_c is not None else sorted(c_values)[len(c_values) // 2]
    counts = exit_histogram(net, X, hist_c, tr=tr)
    _write_csv(out / "asti_histogram.csv", ["tau", "count"],
               [(t + 1, int(k)) for t, k in enumerate(counts)])
    _write_json(out / "asti_summary.json", {
        "hist_c": float(hist_c),
        "full_depth_accuracy": float(np.mean(tr.predictions[:, -1] == tr.labels)),
        "snell_gap": [snell_gap(tr, c) for c in c_values],
    })


def cmd_hjb(args):
    cfg, out = _setup(args)
    sol = hjb_solve(cfg.hjb)
    rows = []
    for i, t in enumerate(sol.t):
        for j, h in enumerate(sol.h):
            rows.append((t, h, sol.value[i, j], "S" if sol.stop[i, j] else "C"))
    _write_csv(out / "hjb_value.csv", ["t", "h", "V", "region"], rows)
    _write_csv(out / "hjb_boundary.csv", ["t", "h_threshold"],
               [(t, b) for t, pts in sol.boundary for b in pts])
    _write_json(out / "hjb_summary.json", hjb_summary(sol))


def cmd_report(args):
    run = Path(args.run_dir)
    missing = [name for name in REPORT_INPUTS if not (run / name).is_file()]
    if missing:
        raise UsageError(f"run directory {run} is missing: {', '.join(missing)}")
    snell = json.loads((run / "snell_summary.json").read_text())
    drift = json.loads((run / "drift_report.json").read_text())
    sweep_rows = _read_csv(run / "asti_sweep.csv")
    hist = _read_csv(run / "asti_histogram.csv")
    pareto = [{"c_or_threshold": float(r["c_or_threshold"]), "method": r["method"],
               "mean_depth": float(r["mean_depth"]), "mean_macs": float(r["mean_macs"]),
               "accuracy": float(r["accuracy"])} for r in sweep_rows]
    histogram = [{"tau": int(r["tau"]), "count": int(r["count"])} for r in hist]
    total = sum(h["count"] for h in histogram)
    asti_depth = sum(h["tau"] * h["count"] for h in histogram) / total if total else float("nan")
    # the one-step rule always computes at least one block; the optimal index may be 0
    floor_gap = snell["mean_tau"] < 1.0 <= asti_depth
    doc = {
        "value": snell["value"],
        "mean_tau": snell["mean_tau"],
        "tau_bound": drift["tau_bound"],
        "condition_holds": drift["condition_holds"],
        "pareto_rows": pareto,
        "histogram": histogram,
        "asti_histogram_mean_depth": asti_depth,
        "discrepancy": {
            "expected": bool(floor_gap),
            "note": ("optimal stopping index can be 0 while adaptive inference exits at depth >= 1"
                     if floor_gap else ""),
        },
    }
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", doc)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "snell": cmd_snell,
    "check-drift": cmd_check_drift,
    "asti-sweep": cmd_asti_sweep,
    "hjb": cmd_hjb,
    "report": cmd_report,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    common.add_argument("--seed", type=int, help="override the config seed")

    p = argparse.ArgumentParser(prog="stopnet", description="Residual networks as optimal stopping problems.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write train/val dataset CSVs")
    t = sub.add_parser("train", parents=[common], help="train a residual stack")
    t.add_argument("--data", help="training CSV (default: generate from config)")
    t.add_argument("--val-data", help="validation CSV (default: generate from config)")
    for name, hlp in [("snell", "optimal stopping depths and value"),
                      ("check-drift", "drift condition and depth bound"),
                      ("asti-sweep", "adaptive-depth cost sweep and baselines")]:
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--weights", help="weights JSON")
        s.add_argument("--data", help="dataset CSV (default: generated validation split)")
        if name == "check-drift":
            s.add_argument("--L0", type=int, help="override the selected L_0")
        if name == "asti-sweep":
            s.add_argument("--c-values", help="comma-separated costs")
            s.add_argument("--baselines", help="comma list from static,entropy,none")
    sub.add_parser("hjb", parents=[common], help="solve the continuous-depth stopping problem")
    r = sub.add_parser("report", parents=[common], help="merge outputs of a run directory")
    r.add_argument("run_dir")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        parallel.set_threads(args.threads)
        COMMANDS[args.command](args)
    except StopnetError as exc:
        print(f"stopnet {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"stopnet {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
