"""Command-line entry point: ``wbclassify <subcommand> [flags]``.

The single-scene stages chain through files in one directory::

    wbclassify synth    --out-dir run/          # scene.json, received.iq
    wbclassify recover  --out-dir run/          # measurements.json, spectrum.iq
    wbclassify features --out-dir run/          # features.csv
    wbclassify train    --out-dir run/          # model.json (trains on simulated trials)
    wbclassify eval     --out-dir run/          # evaluation.json
    wbclassify sweep-compression --out-dir out/ --jobs 4

On failure the exit code is nonzero and stderr carries one JSON object
``{"error": <type>, "message": <text>, "command": <subcommand>}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from . import classifiers as clf
from .features import (detect_segments, estimate_psd, extract_features, match_labels,
                       read_features_csv, write_features_csv)
from .frontend import MeasurementRecord, acquire, build_sensing_matrix, prefilter
from .recovery import RecoveryOperator, SolverOptions, SpectrumEstimate, recover
from .scene import TimeSeries, WidebandScene, add_awgn, compose_scene, random_scene

EXIT_USAGE = 2
EXIT_FAILURE = 1

SCENE_FILE = "scene.json"
SIGNAL_FILE = "received.iq"
MEASUREMENT_FILE = "measurements.json"
SPECTRUM_FILE = "spectrum.iq"
FEATURES_FILE = "features.csv"
MODEL_FILE = "model.json"
EVAL_FILE = "evaluation.json"


class CliError(Exception):
    """Raised for user-facing failures; carries a short machine-readable kind."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _load_config(args) -> bench.ExperimentConfig:
    if args.config is None:
        cfg = bench.ExperimentConfig()
    else:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise CliError("io", f"cannot read config: {exc}") from exc
        try:
            cfg = bench.ExperimentConfig.from_json(text)
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise CliError("config", f"malformed config: {exc}") from exc
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "solver", None):
        overrides["solver"] = args.solver
    if getattr(args, "classifier", None):
        overrides["classifiers"] = (args.classifier,)
    return replace(cfg, **overrides) if overrides else cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise CliError("missing-input", f"{path} not found; run `{stage}` first")
    return path


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _seed(cfg: bench.ExperimentConfig) -> int:
    return bench.trial_seed(cfg.master_seed, 0.0, 0, "cli")


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> dict:
    cfg = _load_config(args)
    out = _out_dir(args)
    seed = _seed(cfg)
    scene_seed, noise_seed = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    scene = random_scene(cfg.scene, int(scene_seed))
    snr = cfg.fixed_snr_db if args.snr is None else args.snr
    r = compose_scene(scene)
    if scene.emitters and not math.isinf(snr):
        r = add_awgn(r, snr, int(noise_seed))
    (out / SCENE_FILE).write_text(scene.to_json())
    r.save(out / SIGNAL_FILE)
    return {"scene": str(out / SCENE_FILE), "signal": str(out / SIGNAL_FILE),
            "n_emitters": len(scene.emitters), "snr_db": snr}


def cmd_recover(args) -> dict:
    cfg = _load_config(args)
    out = _out_dir(args)
    scene = WidebandScene.from_json(_need(out / SCENE_FILE, "synth").read_text())
    r = TimeSeries.load(_need(out / SIGNAL_FILE, "synth"))
    if cfg.use_prefilter:
        r = prefilter(r, cfg.band)
    ratio = cfg.fixed_ratio if args.ratio is None else args.ratio
    if not 0.5 <= ratio <= 1.0:
        raise CliError("config", f"compression ratio {ratio} outside [0.5, 1.0]")
    n = len(r)
    m = min(n, int(math.ceil(ratio * n - 1e-9)))
    sensing = build_sensing_matrix(m, n, cfg.sensing_kind, _seed(cfg))
    gains = bench.channel_diagonal(scene)
    record = acquire(sensing, r, scene_ref=str(scene.seed), channel_gains=gains)
    record.save(out / MEASUREMENT_FILE)
    opts = SolverOptions(tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
    est = recover(record, RecoveryOperator(sensing, gains), cfg.solver, opts)
    est.save(out / SPECTRUM_FILE)
    return {"spectrum": str(out / SPECTRUM_FILE), "solver": est.solver.value, "converged": est.converged,
            "iterations": est.iterations, "residual_norm": est.residual_norm, "measurements": m}


def cmd_features(args) -> dict:
    cfg = _load_config(args)
    out = _out_dir(args)
    est = SpectrumEstimate.load(_need(out / SPECTRUM_FILE, "recover"))
    psd = estimate_psd(est, band=cfg.band, smooth_bins=cfg.smooth_bins)
    segs = detect_segments(psd, cfg.threshold_factor, cfg.min_gap_bins)
    rows = [extract_features(psd, s, cfg.bw_method, normalize_amax=cfg.normalize_amax) for s in segs]
    if (out / SCENE_FILE).exists():
        rows = match_labels(rows, WidebandScene.from_json((out / SCENE_FILE).read_text()))
    write_features_csv(rows, out / FEATURES_FILE)
    return {"features": str(out / FEATURES_FILE), "segments": len(segs), "rows": len(rows)}


def _simulated_rows(cfg: bench.ExperimentConfig, first: int, count: int, n_jobs: int):
    jobs = [(cfg.fixed_ratio, cfg.fixed_snr_db, bench.trial_seed(cfg.master_seed, cfg.fixed_ratio, i, "cli"))
            for i in range(first, first + count)]
    return [row for t in bench.run_trials(cfg, jobs, n_jobs) for row in t.rows]


def _dataset(rows) -> clf.Dataset:
    rows = [r for r in rows if r.label is not None]
    if not rows:
        raise CliError("data", "no labelled feature rows")
    return clf.Dataset.from_features(rows, bench.CLASSES)


def cmd_train(args) -> dict:
    cfg = _load_config(args)
    out = _out_dir(args)
    name = cfg.classifiers[0]
    if args.features:
        rows = [r for p in args.features for r in read_features_csv(_need(Path(p), "features"))]
    else:
        rows = _simulated_rows(cfg, 0, cfg.train_trials, args.jobs)
    data = _dataset(rows)
    model = bench.train_classifier(name, data, cfg, _seed(cfg))
    (out / MODEL_FILE).write_text(model.to_json())
    return {"model": str(out / MODEL_FILE), "classifier": name, "training_rows": len(data)}


def _load_model(path: Path):
    text = _need(path, "train").read_text()
    fmt = json.loads(text).get("format")
    if fmt == "wbclassify.forest":
        return clf.ForestModel.from_json(text)
    if fmt == "wbclassify.nbc":
        return clf.NaiveBayesModel.from_json(text)
    raise CliError("model", f"unrecognised model format {fmt!r}")


def cmd_eval(args) -> dict:
    cfg = _load_config(args)
    out = _out_dir(args)
    model = _load_model(Path(args.model) if args.model else out / MODEL_FILE)
    if args.features:
        rows = [r for p in args.features for r in read_features_csv(_need(Path(p), "features"))]
    else:
        rows = _simulated_rows(cfg, cfg.train_trials, cfg.test_trials, args.jobs)
    result = bench.evaluate(model, _dataset(rows))
    _write_json(out / EVAL_FILE, result.to_dict())
    return {"evaluation": str(out / EVAL_FILE),
            "rates": {k.value: bench._num(v) for k, v in result.rates.items()}}


def _cmd_sweep(args, fn) -> dict:
    cfg = _load_config(args)
    out = _out_dir(args)
    try:
        report = fn(cfg, n_jobs=args.jobs)
    except bench.InsufficientClassesError as exc:
        raise CliError("insufficient-classes", str(exc)) from exc
    files = bench.emit_report(report, out)
    return {"files": [str(p) for p in files], "points": len(report.points)}


def cmd_sweep_compression(args) -> dict:
    return _cmd_sweep(args, bench.sweep_compression)


def cmd_sweep_snr(args) -> dict:
    return _cmd_sweep(args, bench.sweep_snr)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment configuration JSON file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out-dir", default=".", help="directory for inputs and outputs")
    common.add_argument("--solver", choices=("bp", "lasso", "omp"))
    common.add_argument("--classifier", choices=("rf", "nbc"))
    common.add_argument("--jobs", type=int, default=1, help="worker processes for trials")
    common.add_argument("-v", "--verbose", action="store_true", help="log solver diagnostics")

    parser = _Parser(prog="wbclassify", description="Wide-band compressive spectrum classification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="draw a scene and its noisy received signal")
    p.add_argument("--snr", type=float, help="SNR in dB (default: config fixed_snr_db)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("recover", parents=[common], help="compressively sample and recover the spectrum")
    p.add_argument("--ratio", type=float, help="M/N (default: config fixed_ratio)")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("features", parents=[common], help="detect emitters and extract features")
    p.set_defaults(func=cmd_features)

    for name, func, help_ in (("train", cmd_train, "train a classifier"),
                              ("eval", cmd_eval, "evaluate a trained classifier")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--features", action="append",
                       help="feature CSV (repeatable); default simulates trials from the config")
        if name == "eval":
            p.add_argument("--model", help=f"model JSON (default: <out-dir>/{MODEL_FILE})")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep-compression", parents=[common], help="rates versus M/N")
    p.set_defaults(func=cmd_sweep_compression)
    p = sub.add_parser("sweep-snr", parents=[common], help="rates versus SNR")
    p.set_defaults(func=cmd_sweep_snr)
    return parser


def _fail(kind: str, message: str, command: str | None, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "command": command}) + "\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        if args.jobs < 1:
            raise CliError("usage", "--jobs must be at least 1")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
        summary = args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), command, EXIT_USAGE if exc.kind == "usage" else EXIT_FAILURE)
    except OSError as exc:
        return _fail("io", str(exc), command, EXIT_FAILURE)
    except ValueError as exc:
        return _fail("invalid", str(exc), command, EXIT_FAILURE)
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
