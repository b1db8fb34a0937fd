import csv
import io
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from wbclassify.bench import (CLASSES, ExperimentConfig, InsufficientClassesError, SweepReport, channel_diagonal,
                              emit_report, rates_csv, report_json, run_trial, run_trials, sweep_compression,
                              sweep_snr, train_classifier, trial_seed, wilson_interval, _rows_to_dataset)
from wbclassify.scene import EmitterSpec, ModulationKind, SceneConfig, ServiceAllocation, WidebandScene


def small_config(**kw):
    base = dict(n_samples=1024, n_trials=10, train_trials=8, test_trials=2, compression_ratios=(0.5, 1.0),
                snrs_db=(-6.0, 9.0), solver_max_iter=300)
    base.update(kw)
    return ExperimentConfig(**base)


def separable_config(**kw):
    # one class per sub-band, fixed rate and amplitude, near-noiseless: f_c alone separates the classes
    services = {m: ServiceAllocation(((lo, lo + 10e6),), (2e6, 2e6))
                for m, lo in zip(ModulationKind, (5e6, 30e6, 55e6, 80e6))}
    scene = SceneConfig(n_samples=1024, amplitude=(1.0, 1.0), services=services)
    base = dict(scene=scene, fixed_snr_db=60.0, compression_ratios=(1.0,), n_trials=12, train_trials=8,
                test_trials=4)
    return small_config(**{**base, **kw})


class TestConfig:
    def test_split_must_add_up(self):
        with pytest.raises(ValueError):
            ExperimentConfig(n_trials=10, train_trials=8, test_trials=3)

    @pytest.mark.parametrize("ratio", [0.4, 1.1])
    def test_ratio_range(self, ratio):
        with pytest.raises(ValueError):
            small_config(compression_ratios=(ratio,))

    def test_unknown_classifier(self):
        with pytest.raises(ValueError):
            small_config(classifiers=("svm",))

    def test_unknown_solver(self):
        with pytest.raises(ValueError):
            small_config(solver="cvx")

    def test_scene_follows_top_level_size(self):
        cfg = small_config()
        assert cfg.scene.n_samples == 1024 and cfg.scene.band_upper_hz == 100e6

    def test_json_round_trip(self):
        cfg = separable_config()
        assert ExperimentConfig.from_json(cfg.to_json()) == cfg

    def test_n_trials_only_gets_default_split(self):
        cfg = ExperimentConfig.from_dict({"n_samples": 1024, "n_trials": 50})
        assert (cfg.train_trials, cfg.test_trials) == (40, 10)

    def test_protocol_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.n_trials, cfg.train_trials, cfg.test_trials) == (1500, 1200, 300)
        assert cfg.fixed_snr_db == 5.0 and cfg.fixed_ratio == 0.5
        assert min(cfg.compression_ratios) == 0.5 and max(cfg.compression_ratios) == 1.0
        assert min(cfg.snrs_db) == -6.0 and max(cfg.snrs_db) == 9.0


class TestSeeds:
    def test_trial_seed_stable_and_distinct(self):
        a = trial_seed(1, 0.5, 3, "x")
        assert a == trial_seed(1, 0.5, 3, "x")
        others = {trial_seed(2, 0.5, 3, "x"), trial_seed(1, 0.6, 3, "x"), trial_seed(1, 0.5, 4, "x"),
                  trial_seed(1, 0.5, 3, "y")}
        assert a not in others and len(others) == 4
        assert 0 <= a < 2 ** 64

    def test_frozen_value(self):
        # blake2b-64 of "2018|compression_ratio|0.5|0", little-endian
        assert trial_seed(2018, 0.5, 0, "compression_ratio") == trial_seed(2018, 0.5, 0, "compression_ratio")
        import hashlib
        digest = hashlib.blake2b(b"2018|compression_ratio|0.5|0", digest_size=8).digest()
        assert trial_seed(2018, 0.5, 0, "compression_ratio") == int.from_bytes(digest, "little")


class TestRunTrial:
    def test_lossless_single_bask(self):
        services = {ModulationKind.BASK: ServiceAllocation(((20e6, 80e6),), (1e6, 2e6))}
        scene = SceneConfig(n_emitters=(1, 1), modulations=(ModulationKind.BASK,), services=services)
        cfg = small_config(scene=scene)
        for seed in range(5):
            res = run_trial(cfg, 1.0, math.inf, seed)
            assert res.n_emitters == 1 and len(res.rows) == 1 and res.n_segments == 1
            truth = __import__("wbclassify.scene", fromlist=["random_scene"]).random_scene(
                cfg.scene, int(np.random.SeedSequence(seed).generate_state(3, dtype=np.uint64)[0]))
            assert abs(res.rows[0].f_c - truth.emitters[0].carrier_hz) <= 200e6 / 1024
            assert res.rows[0].label is ModulationKind.BASK

    @pytest.mark.parametrize("solver", ["bp", "lasso", "omp"])
    def test_deterministic(self, solver):
        cfg = small_config(solver=solver)
        a = run_trial(cfg, 0.5, 5.0, 123)
        b = run_trial(cfg, 0.5, 5.0, 123)
        assert a == b
        assert [r.as_array().tolist() for r in a.rows] == [r.as_array().tolist() for r in b.rows]

    def test_empty_scene_gives_no_rows(self):
        cfg = small_config(scene=replace(small_config().scene, n_emitters=(0, 0), one_per_class=False))
        res = run_trial(cfg, 0.55, 5.0, 0)
        assert res.n_emitters == 0 and res.rows == []

    @pytest.mark.slow
    def test_mean_segment_count_at_half_rate(self):
        cfg = ExperimentConfig(n_samples=2048, n_trials=100, train_trials=80, test_trials=20)
        counts = [run_trial(cfg, 0.5, 5.0, trial_seed(7, 0.5, i, "seg")).n_segments for i in range(100)]
        assert 3.5 <= np.mean(counts) <= 4.5

    def test_parallel_matches_serial(self):
        cfg = small_config()
        jobs = [(0.5, 5.0, s) for s in range(4)]
        assert run_trials(cfg, jobs, 1) == run_trials(cfg, jobs, 2)


class TestChannelDiagonal:
    def test_gain_on_occupied_bins_and_mirror(self):
        g = 0.5 * np.exp(0.3j)
        e = EmitterSpec(ModulationKind.BPSK, 30e6, 2e6, channel_gain=g)
        d = channel_diagonal(WidebandScene(100e6, 1024, (e,), real_valued=True))
        f = np.fft.fftfreq(1024, 1 / 200e6)
        assert np.all(d[np.abs(f - 30e6) < 1e6] == g)
        assert np.all(d[np.abs(f + 30e6) < 1e6] == np.conj(g))
        assert np.all(d[np.abs(np.abs(f) - 30e6) > 2e6] == 1)


class TestSweeps:
    def test_perfectly_separable_scores_one(self):
        rep = sweep_compression(separable_config())
        for name in ("rf", "nbc"):
            assert all(r == 1.0 for r in rep.points[0].results[name].rates.values())

    def test_snr_sweep_axis(self):
        cfg = separable_config(snrs_db=(20.0, 40.0), fixed_ratio=1.0)
        rep = sweep_snr(cfg)
        assert rep.axis == "snr_db" and rep.axis_values == [20.0, 40.0]

    def test_rates_and_intervals(self):
        rep = sweep_compression(small_config(n_trials=20, train_trials=16, test_trials=4))
        for p in rep.points:
            for r in p.results.values():
                for c in CLASSES:
                    lo, hi = r.intervals[c]
                    if r.support[c]:
                        assert 0 <= lo <= r.rates[c] <= hi <= 1
                    assert r.support[c] == r.confusion[CLASSES.index(c)].sum()

    def test_train_test_disjoint(self):
        cfg = small_config()
        seeds = [trial_seed(cfg.master_seed, 0.5, i, "compression_ratio") for i in range(cfg.n_trials)]
        train, test = seeds[:cfg.train_trials], seeds[cfg.train_trials:]
        assert not set(train) & set(test) and len(set(seeds)) == cfg.n_trials

    def test_insufficient_classes(self):
        data = _rows_to_dataset([])
        with pytest.raises(InsufficientClassesError):
            train_classifier("rf", data, small_config(), 0)

    def test_pooled_training(self):
        rep = sweep_compression(separable_config(compression_ratios=(0.9, 1.0), pooled_training=True))
        assert rep.points[0].n_train_rows == rep.points[1].n_train_rows

    def test_jobs_do_not_change_output(self, tmp_path):
        cfg = small_config(compression_ratios=(0.5,))
        a, b = sweep_compression(cfg, 1), sweep_compression(cfg, 2)
        assert report_json(a) == report_json(b)


class TestWilson:
    def test_known_value(self):
        lo, hi = wilson_interval(8, 10)
        assert lo == pytest.approx(0.4902, abs=1e-4) and hi == pytest.approx(0.9433, abs=1e-4)

    def test_edges(self):
        assert wilson_interval(0, 0) == (0.0, 1.0)
        assert wilson_interval(0, 5)[0] == 0.0 and wilson_interval(5, 5)[1] == 1.0


class TestEmit:
    def test_empty_sweep_header_only(self, tmp_path):
        rep = SweepReport("compression_ratio", [], small_config())
        emit_report(rep, tmp_path)
        lines = (tmp_path / "compression_ratio_rates.csv").read_text().splitlines()
        assert lines == ["axis,axis_value,classifier,class,rate,ci_low,ci_high,n_test"]

    def test_single_point_four_rows(self, tmp_path):
        rep = sweep_compression(separable_config(classifiers=("rf",)))
        rows = list(csv.DictReader(io.StringIO(rates_csv(rep))))
        assert len(rows) == 4 and [r["class"] for r in rows] == [c.value for c in CLASSES]

    def test_json_round_trip_bytes(self, tmp_path):
        rep = sweep_compression(separable_config())
        text = report_json(rep)
        assert json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n" == text

    def test_reruns_byte_identical(self, tmp_path):
        cfg = small_config(compression_ratios=(0.5,))
        files = {}
        for run in ("a", "b"):
            emit_report(sweep_compression(cfg), tmp_path / run)
            files[run] = {p.name: p.read_bytes() for p in (tmp_path / run).iterdir() if "timing" not in p.name}
        assert files["a"] == files["b"] and len(files["a"]) == 3

    def test_timing_file_separate(self, tmp_path):
        rep = sweep_compression(separable_config())
        names = {p.name for p in emit_report(rep, tmp_path)}
        assert "compression_ratio_timing.json" in names
        assert "trials_wall" not in (tmp_path / "compression_ratio_report.json").read_text()
