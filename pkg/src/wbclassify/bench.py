"""Monte Carlo experiments: the full receive chain per trial, and sweeps over
compression ratio and SNR with per-class correct-classification rates.

A trial is one random scene pushed through
compose -> AWGN -> pre-filter -> compressive acquisition -> recovery ->
PSD -> segment detection -> features, with labels attached by matching
segments to the ground-truth emitters.  Within a sweep point the first
``train_trials`` trials train the classifiers and the rest test them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import classifiers as clf
from .features import (FeatureVector, detect_segments, estimate_psd, extract_features,
                       match_labels)
from .frontend import SensingKind, acquire, build_sensing_matrix, prefilter
from .recovery import RecoveryOperator, Solver, SolverOptions, recover
from .scene import (ModulationKind, SceneConfig, ServiceAllocation, WidebandScene, add_awgn, compose_scene,
                    random_scene)

CLASSES = tuple(ModulationKind)


# Symbol-rate ranges per modulation, carriers anywhere in the band.  The
# signal is real-valued, so every emitter also occupies its mirror image
# and undersampling costs recovery accuracy.
DEFAULT_SERVICES = {
    ModulationKind.BASK: ServiceAllocation(((0.0, 100e6),), (3.0e6, 6.0e6)),
    ModulationKind.BPSK: ServiceAllocation(((0.0, 100e6),), (5.0e6, 8.0e6)),
    ModulationKind.QPSK: ServiceAllocation(((0.0, 100e6),), (2.5e6, 4.5e6)),
    ModulationKind.QAM32: ServiceAllocation(((0.0, 100e6),), (3.0e6, 5.5e6)),
}


def default_scene_config(n_samples: int = 4096) -> SceneConfig:
    return SceneConfig(n_samples=n_samples, real_valued=True, services=dict(DEFAULT_SERVICES))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs; serialisable to and from JSON."""

    band_upper_hz: float = 100e6
    n_samples: int = 4096
    scene: SceneConfig = field(default_factory=default_scene_config)
    compression_ratios: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    snrs_db: tuple[float, ...] = (-6.0, -3.0, 0.0, 3.0, 6.0, 9.0)
    fixed_snr_db: float = 5.0
    fixed_ratio: float = 0.5
    n_trials: int = 1500
    train_trials: int = 1200
    test_trials: int = 300
    master_seed: int = 2018
    solver: str = "bp"
    classifiers: tuple[str, ...] = ("rf", "nbc")
    sensing_kind: str = SensingKind.RANDOM_SUBSAMPLE.value
    use_prefilter: bool = True
    solver_tol: float = 1e-6
    solver_max_iter: int = 2000
    threshold_factor: float = 4.0
    min_gap_bins: int = 10
    smooth_bins: int = 15
    bw_method: str = "power"
    normalize_amax: bool = True
    forest: clf.TreeConfig = field(default_factory=clf.TreeConfig)
    pooled_training: bool = False

    def __post_init__(self):
        if self.train_trials + self.test_trials != self.n_trials:
            raise ValueError("train_trials + test_trials must equal n_trials")
        for r in (*self.compression_ratios, self.fixed_ratio):
            if not 0.5 <= r <= 1.0:
                raise ValueError(f"compression ratio {r} outside [0.5, 1.0]")
        if self.scene.n_samples != self.n_samples or self.scene.band_upper_hz != self.band_upper_hz:
            object.__setattr__(self, "scene", replace(self.scene, n_samples=self.n_samples,
                                                      band_upper_hz=self.band_upper_hz))
        for c in self.classifiers:
            if c not in ("rf", "nbc"):
                raise ValueError(f"unknown classifier {c!r}")
        Solver(self.solver.upper())

    @property
    def band(self) -> tuple[float, float]:
        return (0.0, self.band_upper_hz)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scene"] = self.scene.to_dict()
        d["forest"] = asdict(self.forest)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        n = d.get("n_samples", cls.n_samples)
        if "scene" in d:
            d["scene"] = SceneConfig.from_dict(d["scene"])
        else:
            d["scene"] = default_scene_config(n)
        if "forest" in d:
            d["forest"] = clf.TreeConfig(**d["forest"])
        for key in ("compression_ratios", "snrs_db", "classifiers"):
            if key in d:
                d[key] = tuple(d[key])
        if "n_trials" in d and "train_trials" not in d and "test_trials" not in d:
            d["train_trials"] = int(round(0.8 * d["n_trials"]))
            d["test_trials"] = d["n_trials"] - d["train_trials"]
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def trial_seed(master_seed: int, axis_value: float, trial_index: int, axis: str = "") -> int:
    """64-bit seed from a hash of (master seed, axis, axis value, trial index)."""
    key = f"{int(master_seed)}|{axis}|{float(axis_value)!r}|{int(trial_index)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass
class TrialResult:
    rows: list[FeatureVector]
    n_emitters: int
    n_segments: int
    converged: bool
    iterations: int
    timings: dict[str, float] = field(default_factory=dict, compare=False)


def channel_diagonal(scene: WidebandScene) -> np.ndarray:
    """Per-bin known channel: each emitter's gain over its occupied bins, 1 elsewhere.

    Mirror images of a real-valued scene see the conjugate gain.
    """
    n = scene.n_samples
    g = np.ones(n, dtype=complex)
    f = np.fft.fftfreq(n, 1.0 / scene.sample_rate_hz)
    for e in scene.emitters:
        lo, hi = e.occupied_band
        g[(f >= lo) & (f <= hi)] = e.channel_gain
        if scene.real_valued:
            g[(f >= -hi) & (f <= -lo)] = np.conj(e.channel_gain)
    return g


def run_trial(config: ExperimentConfig, ratio: float, snr_db: float, seed: int) -> TrialResult:
    """One scene through the whole receive chain; deterministic in ``seed``."""
    timings: dict[str, float] = {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    s_scene, s_noise, s_sense = np.random.SeedSequence(seed).generate_state(3, dtype=np.uint64)
    scene = random_scene(config.scene, int(s_scene))
    r = compose_scene(scene)
    if scene.emitters and not (math.isinf(snr_db) and snr_db > 0):
        r = add_awgn(r, snr_db, int(s_noise))
    lap("synth")
    if config.use_prefilter:
        r = prefilter(r, config.band)
    lap("prefilter")
    n = config.n_samples
    m = min(n, int(math.ceil(ratio * n - 1e-9)))
    sensing = build_sensing_matrix(m, n, config.sensing_kind, int(s_sense))
    gains = channel_diagonal(scene)
    record = acquire(sensing, r, scene_ref=str(seed), snr_db=snr_db, channel_gains=gains)
    lap("acquire")
    opts = SolverOptions(tol=config.solver_tol, max_iter=config.solver_max_iter)
    est = recover(record, RecoveryOperator(sensing, gains), config.solver, opts)
    lap("recover")
    psd = estimate_psd(est, band=config.band, smooth_bins=config.smooth_bins)
    segs = detect_segments(psd, config.threshold_factor, config.min_gap_bins)
    feats = [extract_features(psd, s, config.bw_method, normalize_amax=config.normalize_amax) for s in segs]
    rows = match_labels(feats, scene)
    lap("features")
    return TrialResult(rows, len(scene.emitters), len(segs), est.converged, est.iterations, timings)


def _run_trial_args(args):
    return run_trial(*args)


def run_trials(config: ExperimentConfig, jobs: list[tuple[float, float, int]], n_jobs: int = 1) -> list[TrialResult]:
    """Run ``(ratio, snr_db, seed)`` jobs, in order; parallelism never changes the output."""
    args = [(config, r, s, seed) for r, s, seed in jobs]
    if n_jobs <= 1:
        return [run_trial(*a) for a in args]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_trial_args, args, chunksize=8))


# ---------------------------------------------------------------- reporting types

def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # clamp so rounding never leaves the point estimate outside its interval
    return (max(0.0, min(p, centre - half)), min(1.0, max(p, centre + half)))


@dataclass
class ClassifierResult:
    confusion: np.ndarray
    rates: dict
    intervals: dict
    support: dict

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "rates": {k.value: _num(v) for k, v in self.rates.items()},
            "intervals": {k.value: [_num(a), _num(b)] for k, (a, b) in self.intervals.items()},
            "support": {k.value: int(v) for k, v in self.support.items()},
        }


def _num(x):
    x = float(x)
    return None if math.isnan(x) else x


@dataclass
class SweepPoint:
    axis_value: float
    results: dict  # classifier name -> ClassifierResult
    n_train_rows: int
    n_test_rows: int
    mean_segments: float
    missed: int
    nonconverged: int

    def to_dict(self) -> dict:
        return {
            "axis_value": self.axis_value,
            "results": {k: v.to_dict() for k, v in sorted(self.results.items())},
            "n_train_rows": self.n_train_rows,
            "n_test_rows": self.n_test_rows,
            "mean_segments": self.mean_segments,
            "missed": self.missed,
            "nonconverged": self.nonconverged,
        }


@dataclass
class SweepReport:
    axis: str
    points: list[SweepPoint]
    config: ExperimentConfig
    timing: dict = field(default_factory=dict)

    @property
    def axis_values(self) -> list[float]:
        return [p.axis_value for p in self.points]

    def rate(self, classifier: str, kind: ModulationKind, axis_value: float) -> float:
        for p in self.points:
            if p.axis_value == axis_value:
                return p.results[classifier].rates[kind]
        raise KeyError(axis_value)

    def interval(self, classifier: str, kind: ModulationKind, axis_value: float) -> tuple[float, float]:
        for p in self.points:
            if p.axis_value == axis_value:
                return p.results[classifier].intervals[kind]
        raise KeyError(axis_value)

    def to_dict(self) -> dict:
        return {
            "format": "wbclassify.sweep",
            "version": 1,
            "axis": self.axis,
            "classes": [c.value for c in CLASSES],
            "points": [p.to_dict() for p in self.points],
            "config": self.config.to_dict(),
        }


# ---------------------------------------------------------------- training / evaluation

class InsufficientClassesError(ValueError):
    pass


def train_classifier(name: str, data: clf.Dataset, config: ExperimentConfig, seed: int):
    counts = np.bincount(data.y, minlength=len(data.classes))
    if np.count_nonzero(counts) < 2:
        raise InsufficientClassesError("training data holds fewer than two classes")
    if name == "rf":
        return clf.train_forest(data, config.forest, seed)
    # a class seen once has no variance estimate; it is left out (zero prior)
    keep = counts[data.y] >= 2
    if np.count_nonzero(counts >= 2) < 2:
        raise InsufficientClassesError("naive Bayes needs two classes with at least two training rows")
    return clf.train_nbc(clf.Dataset(data.X[keep], data.y[keep], data.classes))


def evaluate(model, data: clf.Dataset) -> ClassifierResult:
    pred = model.predict(data.X) if len(data) else np.zeros(0, dtype=int)
    truth = [CLASSES[i] for i in data.y]
    mat, rates = clf.confusion_matrix(truth, [CLASSES[i] for i in pred], CLASSES)
    support = {c: int(mat[i].sum()) for i, c in enumerate(CLASSES)}
    intervals = {c: wilson_interval(int(mat[i, i]), support[c]) for i, c in enumerate(CLASSES)}
    return ClassifierResult(mat, rates, intervals, support)


def _rows_to_dataset(rows: Sequence[FeatureVector]) -> clf.Dataset:
    if not rows:
        return clf.Dataset(np.zeros((0, 4)), np.zeros(0, dtype=int), CLASSES)
    return clf.Dataset.from_features(rows, CLASSES)


def _sweep(config: ExperimentConfig, axis: str, values: Sequence[float], n_jobs: int) -> SweepReport:
    t_start = time.perf_counter()
    jobs, index = [], []
    for v in values:
        ratio, snr = (v, config.fixed_snr_db) if axis == "compression_ratio" else (config.fixed_ratio, v)
        for i in range(config.n_trials):
            jobs.append((ratio, snr, trial_seed(config.master_seed, v, i, axis)))
            index.append((v, i))
    results = run_trials(config, jobs, n_jobs)
    t_trials = time.perf_counter() - t_start

    per_point = {v: [] for v in values}
    for (v, i), res in zip(index, results):
        per_point[v].append(res)

    stage = {}
    for res in results:
        for k, t in res.timings.items():
            stage[k] = stage.get(k, 0.0) + t

    def split(trials):
        train = [row for t in trials[:config.train_trials] if t.converged for row in t.rows]
        test = [row for t in trials[config.train_trials:] for row in t.rows]
        return train, test

    pooled = None
    if config.pooled_training:
        pooled = _rows_to_dataset([row for v in values for row in split(per_point[v])[0]])

    points = []
    t_fit = time.perf_counter()
    for v in values:
        trials = per_point[v]
        train_rows, test_rows = split(trials)
        train = pooled if pooled is not None else _rows_to_dataset(train_rows)
        test = _rows_to_dataset(test_rows)
        seed = trial_seed(config.master_seed, v, -1, axis + ":classifier")
        res = {name: evaluate(train_classifier(name, train, config, seed), test) for name in config.classifiers}
        test_trials = trials[config.train_trials:]
        missed = sum(t.n_emitters - len(t.rows) for t in test_trials)
        points.append(SweepPoint(
            float(v), res, len(train), len(test),
            float(np.mean([t.n_segments for t in trials])) if trials else 0.0,
            int(missed), int(sum(not t.converged for t in trials)),
        ))
    stage["classify"] = time.perf_counter() - t_fit
    stage["trials_wall"] = t_trials
    return SweepReport(axis, points, config, stage)


def sweep_compression(config: ExperimentConfig, n_jobs: int = 1) -> SweepReport:
    """Classification rates versus M/N at ``config.fixed_snr_db``."""
    return _sweep(config, "compression_ratio", config.compression_ratios, n_jobs)


def sweep_snr(config: ExperimentConfig, n_jobs: int = 1) -> SweepReport:
    """Classification rates versus SNR at ``config.fixed_ratio``."""
    return _sweep(config, "snr_db", config.snrs_db, n_jobs)


# ---------------------------------------------------------------- emission

RATES_HEADER = ["axis", "axis_value", "classifier", "class", "rate", "ci_low", "ci_high", "n_test"]
LONG_HEADER = ["axis", "axis_value", "classifier", "class", "metric", "value"]


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def rates_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RATES_HEADER)
    for p in report.points:
        for name in sorted(p.results):
            r = p.results[name]
            for c in CLASSES:
                lo, hi = r.intervals[c]
                w.writerow([report.axis, _fmt(p.axis_value), name, c.value, _fmt(r.rates[c]), _fmt(lo), _fmt(hi),
                            r.support[c]])
    return buf.getvalue()


def long_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LONG_HEADER)
    for p in report.points:
        for name in sorted(p.results):
            r = p.results[name]
            for c in CLASSES:
                lo, hi = r.intervals[c]
                for metric, val in (("rate", r.rates[c]), ("ci_low", lo), ("ci_high", hi), ("n_test", r.support[c])):
                    w.writerow([report.axis, _fmt(p.axis_value), name, c.value, metric, _fmt(val)])
    return buf.getvalue()


def report_json(report: SweepReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def emit_report(report: SweepReport, out_dir: str | Path, formats: Sequence[str] = ("csv", "json", "long")) -> list[Path]:
    """Write the report files; identical reports give identical bytes.

    Wall-clock stage timings are not reproducible, so they go to a
    separate ``timing.json`` that sits outside that guarantee.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = report.axis
    written = []
    writers = {"csv": (f"{stem}_rates.csv", rates_csv), "json": (f"{stem}_report.json", report_json),
               "long": (f"{stem}_long.csv", long_csv)}
    for fmt in formats:
        name, fn = writers[fmt]
        path = out / name
        path.write_text(fn(report), encoding="utf-8", newline="")
        written.append(path)
    if report.timing:
        t = out / f"{stem}_timing.json"
        t.write_text(json.dumps(report.timing, indent=2, sort_keys=True))
        written.append(t)
    return written
