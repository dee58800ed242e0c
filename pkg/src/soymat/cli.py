"""Command-line entry point: ``soymat {synth,run,baseline,gradcheck,replay}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentPlan, augment_dataset
from .baseline import DEFAULT_FRAC, DEFAULT_ROBUST_ITERS, DEFAULT_THRESHOLD, GRID_THRESHOLDS, threshold_grid_search
from .evaluation import CNN, LOESS, compare, decision_report, evaluate, loess_predictions, loess_report
from .ingest import (SCHEDULES, assemble_series, extract_snips, load_orthomosaics, parse_plot_boundaries,
                     read_ground_truth, select_flights)
from .manifest import MANIFEST_NAME, REPLAY_NAME, RunManifest
from .metrics import MetricsReport
from .neural import gradcheck
from .neural.network import NetworkConfig
from .neural.serialize import save_params
from .report import grid_table_csv, scatter_svg
from .synthetic import SynthConfig, configs_from_dict, generate_environment, write_environment
from .training import TrainConfig, TrainingDiverged, split, train, write_trace

log = logging.getLogger("soymat")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- dataset

def load_dataset(directory, require_truth=False):
    """Plot series for every environment in a dataset directory.

    Layout: ``orthomosaics/<env>_<day>.png``, ``boundaries/*.json`` and an
    optional ``ground_truth.csv``.
    """
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    orthos = load_orthomosaics(root / "orthomosaics")
    if not orthos:
        raise DataError(f"{root}/orthomosaics holds no <env>_<day>.png files")
    boundary_files = sorted((root / "boundaries").glob("*.json"))
    if not boundary_files:
        raise DataError(f"{root}/boundaries holds no JSON files")
    boundaries = [b for p in boundary_files for b in parse_plot_boundaries(p)]
    gt_path = root / "ground_truth.csv"
    truth = read_ground_truth(gt_path) if gt_path.exists() else []
    series = assemble_series(extract_snips(orthos, boundaries), truth)
    if require_truth:
        missing = [s.key for s in series if s.rm_day is None]
        if missing:
            raise DataError(f"{len(missing)} plots lack ground truth, e.g. {missing[0]}")
    return series


def _input_paths(directory):
    root = Path(directory)
    paths = [root / "orthomosaics", root / "boundaries", root / "ground_truth.csv"]
    return [str(p) for p in paths if p.exists()]


# ---------------------------------------------------------------- commands

def cmd_synth(args, manifest):
    if args.config:
        data = json.loads(Path(args.config).read_text())
        manifest.record_inputs([args.config])
    elif args.preset:
        data = {"preset": args.preset, "scale": args.scale}
    else:
        data = SynthConfig().to_dict()
    try:
        cfgs = configs_from_dict(data, seed=args.seed)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid synthetic config: {exc}") from exc
    out = Path(args.out)
    gt = out / "ground_truth.csv"
    if gt.exists():
        gt.unlink()
    for k, cfg in enumerate(cfgs):
        try:
            orthos, bounds, truths = generate_environment(cfg)
        except ValueError as exc:
            raise DataError(f"environment {cfg.environment_id}: {exc}") from exc
        write_environment(out, orthos, bounds, truths, append_truth=k > 0)
        log.info("wrote %s: %d plots x %d flights", cfg.environment_id, cfg.n_plots, len(orthos))
    manifest.configs["synthetic"] = [c.to_dict() for c in cfgs]
    return EXIT_OK


def _schedules(arg):
    return list(SCHEDULES) if arg == "all" else [arg]


def _loess_cfg(args):
    return {"threshold": None if args.grid else args.threshold, "grid": bool(args.grid),
            "grid_thresholds": list(GRID_THRESHOLDS), "frac": DEFAULT_FRAC,
            "robust_iters": DEFAULT_ROBUST_ITERS}


def _write_scatters(out, tag, series, pred):
    by_env = {}
    for s, p in zip(series, pred):
        by_env.setdefault(s.environment_id, []).append((p, s.rm_day))
    for env, pairs in sorted(by_env.items()):
        p, g = zip(*pairs)
        scatter_svg(out / f"scatter_{tag}_{env}.svg", p, g, title=f"{tag} {env}")


def _write_split(path, parts):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["environment", "plot_id", "partition"])
        rows = [(env, pid, name) for name, ids in parts.items() for env, pid in ids]
        w.writerows(sorted(rows))


def _loess_block(out, schedule, test, args, report, preds):
    if args.grid:
        rep, grid = loess_report(test, schedule, "test")
        grid_table_csv(out / f"loess_grid_{schedule}.csv", grid)
        thr = {env: grid.best_threshold(env, "mae") for env in grid.table}
        pred = np.array([loess_predictions([s], thr[s.environment_id])[0] for s in test])
    else:
        rep, _ = loess_report(test, schedule, "test", threshold=args.threshold)
        pred = loess_predictions(test, args.threshold)
    report.extend(rep)
    _write_scatters(out, f"{LOESS}_{schedule}", test, pred)
    preds[(LOESS, schedule)] = list(zip(test, pred))


def cmd_run(args, manifest):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    need_cnn = args.method in ("cnn", "both")
    try:
        series = load_dataset(args.dataset, require_truth=True)
    except (ValueError, OSError) as exc:
        raise DataError(str(exc)) from exc
    manifest.record_inputs(_input_paths(args.dataset))
    sp = split(series, args.seed, test_fraction=args.test_fraction, val_fraction=args.val_fraction)
    _write_split(out / "split.csv", {"train": sp.train_ids, "val": sp.val_ids, "test": sp.test_ids})
    train_cfg = TrainConfig(epochs=args.epochs, seed=args.seed, precision=args.precision,
                            lr=args.lr, decay=args.decay, batch_size=args.batch_size,
                            deterministic=args.deterministic)
    plan = AugmentPlan(fraction=args.augment, seed=args.seed)
    manifest.configs.update({
        "train": train_cfg.to_dict(),
        "split": {"test_fraction": args.test_fraction, "val_fraction": args.val_fraction},
        "augment": plan.__dict__ if args.augment else None,
        "loess": _loess_cfg(args) if args.method != "cnn" else None,
        "method": args.method, "schedules": _schedules(args.schedule),
    })
    cnn_report, loess_rep = MetricsReport(), MetricsReport()
    preds = {}
    for schedule in _schedules(args.schedule):
        try:
            chosen = [select_flights(s, schedule) for s in series]
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        tr, va, te = sp.partition(chosen)
        if need_cnn:
            cfg = NetworkConfig(time_steps=SCHEDULES[schedule])
            tr_in = augment_dataset(tr, plan) if args.augment else tr
            log.info("%s: training on %d plots (%d val, %d test)", schedule, len(tr), len(va), len(te))
            try:
                params, trace = train(cfg, tr_in, va, train_cfg)
            except TrainingDiverged as exc:
                raise CheckFailed(str(exc)) from exc
            manifest.configs[f"network_{schedule}"] = cfg.to_dict()
            write_trace(out / f"loss_trace_{schedule}.csv", trace)
            save_params(out / f"weights_{schedule}", cfg, params)
            for part, data in (("train", tr), ("val", va), ("test", te)):
                if data:
                    rep, pred = evaluate(cfg, params, data, schedule, part)
                    cnn_report.extend(rep)
                    if part == "test":
                        _write_scatters(out, f"{CNN}_{schedule}", data, pred)
                        preds[(CNN, schedule)] = list(zip(data, pred))
        if args.method in ("loess", "both"):
            _loess_block(out, schedule, te, args, loess_rep, preds)
    full = MetricsReport().extend(cnn_report).extend(loess_rep)
    full.to_csv(out / "metrics.csv")
    full.to_json(out / "metrics.json")
    if args.method == "both":
        compare(cnn_report, loess_rep).to_csv(out / "comparison.csv")
    method = CNN if need_cnn else LOESS
    dec = decision_report({s: p for (m, s), p in preds.items() if m == method},
                          margin=args.schedule_margin)
    dec.to_csv(out / "decisions.csv")
    with open(out / "decision_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["environment", "schedule", "within_2_days", "recommended_schedule"])
        for env, s, frac, rec in dec.summary_rows():
            w.writerow([env, s, f"{frac:.4f}", rec])
    return EXIT_OK


def cmd_baseline(args, manifest):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        series = load_dataset(args.dataset, require_truth=True)
    except (ValueError, OSError) as exc:
        raise DataError(str(exc)) from exc
    manifest.record_inputs(_input_paths(args.dataset))
    manifest.configs["loess"] = _loess_cfg(args)
    report = MetricsReport()
    for schedule in _schedules(args.schedule):
        chosen = [select_flights(s, schedule) for s in series]
        if args.grid:
            grid = threshold_grid_search(chosen, GRID_THRESHOLDS)
            grid_table_csv(out / f"loess_grid_{schedule}.csv", grid)
            rep, _ = loess_report(chosen, schedule, "all", grid=grid)
        else:
            rep, _ = loess_report(chosen, schedule, "all", threshold=args.threshold)
            _write_scatters(out, f"{LOESS}_{schedule}", chosen, loess_predictions(chosen, args.threshold))
        report.extend(rep)
    report.to_csv(out / "metrics.csv")
    report.to_json(out / "metrics.json")
    return EXIT_OK


def cmd_gradcheck(args, manifest):
    res = gradcheck.run_all(samples=args.samples, seed=args.seed, fault=2.0 if args.inject_fault else 1.0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = list(res.lines())
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    manifest.configs["gradcheck"] = {"network": gradcheck.SMALL_CONFIG.to_dict(), "samples": args.samples,
                                     "eps": 1e-5, "tolerance": res.tolerance, "fault": bool(args.inject_fault)}
    if not res.passed:
        raise CheckFailed(f"max relative error {res.max_error:.3e} >= {res.tolerance:g}")
    return EXIT_OK


def _swap_out(argv, new_out):
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        out.append(a)
    return out + ["--out", str(new_out)]


def cmd_replay(args, manifest):
    try:
        old = RunManifest.read(args.manifest)
    except (OSError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read manifest: {exc}") from exc
    if old.command == "replay":
        raise UsageError("cannot replay a replay")
    for path, digest in old.inputs.items():
        if not os.path.exists(path):
            raise DataError(f"recorded input {path} is missing")
        current = RunManifest("check", []).record_inputs([path]).inputs[path]
        if current != digest:
            raise DataError(f"recorded input {path} changed since the original run")
    code = main(_swap_out(old.argv, args.out))
    if code != EXIT_OK:
        return code
    new = RunManifest.read(args.out)
    tables = sorted(p for p in old.outputs if p.endswith(".csv"))
    diff = [p for p in tables if new.outputs.get(p) != old.outputs[p]]
    manifest.configs["replay"] = {"source": str(args.manifest), "compared": tables, "differing": diff}
    print(f"replayed {old.command}: {len(tables) - len(diff)}/{len(tables)} tables identical")
    if diff:
        raise CheckFailed(f"tables differ from the original run: {', '.join(diff)}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="soymat", description="Soybean relative-maturity estimation from UAV time series.")
    p.add_argument("--version", action="version", version=f"soymat {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, seed_default=0):
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    s = sub.add_parser("synth", help="render a synthetic field trial")
    common(s, seed_default=None)
    s.add_argument("--config", help="JSON config (one environment, a list, or a preset)")
    s.add_argument("--preset", choices=["trials"], help="six-environment layout")
    s.add_argument("--scale", type=float, default=1.0, help="plot-count scale for --preset")

    def run_like(sp):
        sp.add_argument("dataset", help="directory with orthomosaics/, boundaries/, ground_truth.csv")
        sp.add_argument("--schedule", choices=["weekly", "biweekly", "all"], default="all")
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="fixed LOESS GLI threshold")
        g.add_argument("--grid", action="store_true", help="search the 0.01..0.09 threshold grid")

    r = sub.add_parser("run", help="train and/or evaluate on a dataset")
    common(r)
    run_like(r)
    r.add_argument("--method", choices=["cnn", "loess", "both"], default="both")
    r.add_argument("--epochs", type=int, default=300)
    r.add_argument("--precision", type=int, choices=[32, 64], default=32)
    r.add_argument("--deterministic", action="store_true", help="single-threaded numerics")
    r.add_argument("--batch-size", type=int, default=64)
    r.add_argument("--lr", type=float, default=1e-3)
    r.add_argument("--decay", type=float, default=0.1, help="inverse-time decay per update")
    r.add_argument("--test-fraction", type=float, default=0.15)
    r.add_argument("--val-fraction", type=float, default=0.10)
    r.add_argument("--augment", type=float, default=0.0, help="fraction of training images to perturb")
    r.add_argument("--schedule-margin", type=float, default=0.05,
                   help="bi-weekly is recommended within this fraction of the weekly hit rate")

    b = sub.add_parser("baseline", help="LOESS threshold baseline on every plot")
    common(b)
    run_like(b)

    g = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    common(g)
    g.add_argument("--samples", type=int, default=30, help="entries checked per tensor")
    g.add_argument("--inject-fault", action="store_true", help="double the analytic gradients")

    rp = sub.add_parser("replay", help="re-run a recorded command and compare its tables")
    rp.add_argument("manifest", help="manifest.json or the directory holding it")
    rp.add_argument("--out", required=True)
    rp.add_argument("-v", "--verbose", action="store_true")
    return p


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "baseline": cmd_baseline,
            "gradcheck": cmd_gradcheck, "replay": cmd_replay}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("soymat: a command is required (synth, run, baseline, gradcheck, replay)")
        if args.command == "run" and args.epochs < 0:
            raise UsageError("--epochs must be non-negative")
        if args.command == "replay" and not os.path.exists(args.manifest):
            raise DataError(f"manifest {args.manifest} not found")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"soymat: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    manifest = RunManifest(args.command, argv, getattr(args, "seed", None))
    code = EXIT_OK
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](args, manifest)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"soymat: data error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    except CheckFailed as exc:
        print(f"soymat: check failed: {exc}", file=sys.stderr)
        code = EXIT_CHECK
    except OSError as exc:
        print(f"soymat: {exc}", file=sys.stderr)
        code = EXIT_DATA
    if os.path.isdir(args.out):
        # a replay leaves the re-run's own manifest in place beside its record
        manifest.write(args.out, REPLAY_NAME if args.command == "replay" else MANIFEST_NAME)
    return code
