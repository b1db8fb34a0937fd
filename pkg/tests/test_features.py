import math

import numpy as np
import pytest

from wbclassify.features import (FeatureVector, PsdEstimate, SupportSegment, detect_segments, estimate_psd,
                                 extract_features, match_labels, read_features_csv, smoothed_bins,
                                 write_features_csv)
from wbclassify.recovery import Solver, SpectrumEstimate, dft
from wbclassify.scene import ROLLOFF, EmitterSpec, ModulationKind, WidebandScene, compose_scene

FS = 200e6


def noise_spectrum(n, sigma2, seed):
    rng = np.random.default_rng(seed)
    return np.sqrt(sigma2 / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def scene_psd(emitters, n=4096, smooth=1):
    scene = WidebandScene(100e6, n, tuple(emitters), seed=3)
    spec = dft(compose_scene(scene).samples)
    return scene, estimate_psd(spec, scene.bin_hz, band=(0, 100e6), smooth_bins=smooth)


class TestEstimatePsd:
    def test_one_hot(self):
        s = np.zeros(64, dtype=complex)
        s[9] = 3 - 4j
        psd = estimate_psd(s, bin_hz=1.0)
        expect = np.zeros(64)
        expect[9] = 25.0
        assert np.array_equal(psd.bins, expect)

    def test_sum_equals_norm(self):
        s = noise_spectrum(512, 2.0, 0)
        psd = estimate_psd(s, bin_hz=1.0)
        assert abs(psd.bins.sum() - np.linalg.norm(s) ** 2) < 1e-9

    def test_accepts_spectrum_estimate(self):
        est = SpectrumEstimate(np.ones(8, dtype=complex), 0.0, 1, Solver.BP, True, 80.0)
        psd = estimate_psd(est)
        assert psd.bin_hz == 10.0

    def test_raw_array_needs_bin_hz(self):
        with pytest.raises(ValueError):
            estimate_psd(np.ones(8))

    @pytest.mark.parametrize("smooth", [1, 15])
    def test_noise_floor_within_25_percent(self, smooth):
        sigma2 = 0.37
        for seed in range(100):
            psd = estimate_psd(noise_spectrum(4096, sigma2, seed), bin_hz=1.0, smooth_bins=smooth)
            assert abs(psd.noise_floor / sigma2 - 1) <= 0.25

    def test_floor_robust_to_zeroed_bins(self):
        # an l1 solution may zero a third of the bins and keep the energy elsewhere
        rng = np.random.default_rng(1)
        s = noise_spectrum(4096, 1.0, 2)
        keep = rng.random(4096) > 1 / 3
        s = np.where(keep, s * np.sqrt(1.5), 0)
        raw = estimate_psd(s, bin_hz=1.0).noise_floor
        smooth = estimate_psd(s, bin_hz=1.0, smooth_bins=15).noise_floor
        assert abs(smooth - 1) < 0.1
        assert raw < smooth

    def test_smooth_bins_validated(self):
        with pytest.raises(ValueError):
            estimate_psd(np.ones(8), 1.0, smooth_bins=0)

    def test_smoothing_preserves_total(self):
        psd = estimate_psd(noise_spectrum(256, 1.0, 3), 1.0, smooth_bins=7)
        assert smoothed_bins(psd).sum() == pytest.approx(psd.bins.sum(), rel=1e-12)
        assert np.array_equal(smoothed_bins(psd, 1), psd.bins)


class TestDetectSegments:
    def test_false_alarms_smoothed_threshold_5(self):
        empty = sum(
            not detect_segments(estimate_psd(noise_spectrum(4096, 1.0, seed), 1.0, smooth_bins=15), 5.0)
            for seed in range(100))
        assert empty >= 95

    def test_false_alarm_rate_raw_matches_tail(self):
        # exponential bin power: P(bin > 5 * mean) = exp(-5); min_gap 1 keeps runs apart
        n, trials = 4096, 100
        counts = []
        for seed in range(trials):
            psd = estimate_psd(noise_spectrum(n, 1.0, seed), 1.0)
            psd = PsdEstimate(psd.bins, 1.0, 1.0)
            counts.append(sum(s.width for s in detect_segments(psd, 5.0, min_gap_bins=0)))
        expect = n * math.exp(-5)
        sd = math.sqrt(expect / trials)
        assert abs(np.mean(counts) - expect) < 4 * sd

    def test_single_tone(self):
        s = 0.01 * noise_spectrum(1024, 1.0, 0)
        s[300] = 10
        segs = detect_segments(estimate_psd(s, 1.0, smooth_bins=15))
        assert len(segs) == 1 and segs[0].lo_bin <= 300 <= segs[0].hi_bin and segs[0].peak_bin == 300

    def test_two_emitters(self):
        bpsk = EmitterSpec(ModulationKind.BPSK, 20e6, 2e6)
        qpsk = EmitterSpec(ModulationKind.QPSK, 60e6, 3e6)
        _, psd = scene_psd([bpsk, qpsk])
        psd = PsdEstimate(psd.bins, psd.bin_hz, 1e-6 * psd.bins.max(), psd.band_bins)
        segs = detect_segments(psd, 4.0, min_gap_bins=3)
        assert len(segs) == 2
        for seg, e in zip(segs, (bpsk, qpsk)):
            assert seg.peak_bin == seg.lo_bin + int(np.argmax(psd.bins[seg.lo_bin:seg.hi_bin + 1]))
            assert abs(psd.frequency(seg.peak_bin) - e.carrier_hz) <= e.occupied_bw_hz / 2

    def test_gap_merging(self):
        bins = np.zeros(40)
        bins[[10, 11, 14, 15, 30]] = 100
        psd = PsdEstimate(bins, 1.0, 1.0)
        assert [(s.lo_bin, s.hi_bin) for s in detect_segments(psd, 4.0, 3)] == [(10, 15), (30, 30)]
        assert len(detect_segments(psd, 4.0, 2)) == 3

    def test_completeness_and_order(self):
        rng = np.random.default_rng(5)
        bins = rng.exponential(1.0, 2000)
        psd = PsdEstimate(bins, 1.0, 1.0)
        segs = detect_segments(psd, 2.0, 2)
        covered = np.zeros(2000, dtype=int)
        for s in segs:
            covered[s.lo_bin:s.hi_bin + 1] += 1
        assert covered.max() <= 1
        assert np.all(covered[bins > 2.0] == 1)
        assert all(a.hi_bin < b.lo_bin for a, b in zip(segs, segs[1:]))

    def test_band_restriction(self):
        bins = np.zeros(64)
        bins[[5, 50]] = 100
        psd = PsdEstimate(bins, 1.0, 1.0, band_bins=np.arange(33))
        assert [s.peak_bin for s in detect_segments(psd)] == [5]

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            detect_segments(PsdEstimate(np.ones(4), 1.0, 1.0), 1.0)

    def test_segment_invariant(self):
        with pytest.raises(ValueError):
            SupportSegment(3, 5, 7)


class TestExtractFeatures:
    def test_tone_at_30_mhz(self):
        n = 4096
        bin_hz = FS / n
        t = np.arange(n) / FS
        # 30 MHz is not a multiple of FS / 2**k; the single-bin tone sits on the nearest bin
        f = round(30e6 / bin_hz) * bin_hz
        s = dft(np.exp(2j * np.pi * f * t))
        psd = estimate_psd(s, bin_hz)
        psd = PsdEstimate(psd.bins, bin_hz, 1e-9)
        seg = detect_segments(psd, 1e6)[0]
        fv = extract_features(psd, seg)
        assert abs(fv.f_c - 30e6) <= bin_hz / 2
        assert fv.bw == bin_hz

    def test_two_bin_centroid(self):
        bins = np.zeros(32)
        bins[[10, 12]] = 4.0
        fv = extract_features(PsdEstimate(bins, 2.0, 1.0), SupportSegment(10, 12, 10))
        assert fv.f_c == 22.0

    def test_single_bin_bw_floor(self):
        bins = np.zeros(16)
        bins[4] = 1
        assert extract_features(PsdEstimate(bins, 5.0, 0.1), SupportSegment(4, 4, 4)).bw == 5.0

    def test_negative_frequency_bins(self):
        bins = np.zeros(16)
        bins[14] = 1
        assert extract_features(PsdEstimate(bins, 1.0, 0.1), SupportSegment(14, 14, 14)).f_c == -2.0

    @pytest.mark.parametrize("rate", [2e6, 4e6, 8e6])
    def test_rrc_bpsk_bandwidth(self, rate):
        e = EmitterSpec(ModulationKind.BPSK, 40e6, rate)
        _, psd = scene_psd([e], n=8192)
        lo = int((40e6 - 1.5 * rate) / psd.bin_hz)
        hi = int((40e6 + 1.5 * rate) / psd.bin_hz)
        seg = SupportSegment(lo, hi, lo + int(np.argmax(psd.bins[lo:hi + 1])))
        fv = extract_features(PsdEstimate(psd.bins, psd.bin_hz, 1.0), seg)
        assert abs(fv.bw / ((1 + ROLLOFF) * rate) - 1) <= 0.15

    def test_3db_bandwidth_option(self):
        bins = np.array([0, 1, 3, 4, 3, 1, 0], dtype=float)
        fv = extract_features(PsdEstimate(bins, 1.0, 1.0), SupportSegment(0, 6, 3), bw_method="3db")
        assert fv.bw == 3.0
        with pytest.raises(ValueError):
            extract_features(PsdEstimate(bins, 1.0, 1.0), SupportSegment(0, 6, 3), bw_method="bogus")

    def test_unnormalised_amax(self):
        bins = np.array([0, 2, 8, 2, 0], dtype=float)
        fv = extract_features(PsdEstimate(bins, 1.0, 4.0), SupportSegment(1, 3, 2), normalize_amax=False)
        assert fv.a_max == 8.0

    def test_segment_outside_psd(self):
        with pytest.raises(ValueError):
            extract_features(PsdEstimate(np.ones(4), 1.0, 1.0), SupportSegment(2, 5, 3))

    @pytest.mark.parametrize("c", [0.1, 3.0, 17.0])
    def test_scale_covariance(self, c):
        e = EmitterSpec(ModulationKind.QPSK, 25e6, 3e6)
        _, psd = scene_psd([e])
        seg = SupportSegment(400, 620, 400 + int(np.argmax(psd.bins[400:621])))
        base = extract_features(PsdEstimate(psd.bins, psd.bin_hz, 1.0), seg, normalize_amax=False)
        scaled_psd = estimate_psd(c * dft(compose_scene(WidebandScene(100e6, 4096, (e,), seed=3)).samples),
                                  psd.bin_hz)
        scaled = extract_features(PsdEstimate(scaled_psd.bins, psd.bin_hz, 1.0), seg, normalize_amax=False)
        assert scaled.f_c == pytest.approx(base.f_c, rel=1e-12)
        assert scaled.e_t == pytest.approx(c ** 2 * base.e_t, rel=1e-12)
        assert scaled.a_max == pytest.approx(c ** 2 * base.a_max, rel=1e-12)

    def test_invariants_on_noisy_scene(self):
        emitters = [EmitterSpec(ModulationKind.BPSK, 15e6, 2e6), EmitterSpec(ModulationKind.QAM32, 70e6, 3e6)]
        scene = WidebandScene(100e6, 4096, tuple(emitters), noise_psd=1e-9, seed=1)
        psd = estimate_psd(dft(compose_scene(scene).samples), scene.bin_hz, (0, 100e6), smooth_bins=9)
        segs = detect_segments(psd)
        assert len(segs) == 2
        for seg in segs:
            fv = extract_features(psd, seg)
            lo_f, hi_f = psd.frequency(seg.lo_bin), psd.frequency(seg.hi_bin)
            assert fv.bw > 0 and lo_f <= fv.f_c <= hi_f
            assert fv.e_t >= fv.a_max * psd.noise_floor * psd.bin_hz * (1 - 1e-12)
            assert fv.e_t >= psd.bins[seg.peak_bin] * psd.bin_hz

    def test_segment_count_matches_emitters_noiseless(self):
        emitters = [EmitterSpec(k, f, 2e6) for k, f in zip(ModulationKind, (10e6, 35e6, 60e6, 85e6))]
        _, psd = scene_psd(emitters, smooth=9)
        psd = PsdEstimate(psd.bins, psd.bin_hz, 1e-4 * psd.bins.max(), psd.band_bins, 9)
        assert len(detect_segments(psd)) == 4


class TestLabelsAndCsv:
    def test_match_labels(self):
        emitters = (EmitterSpec(ModulationKind.BPSK, 20e6, 2e6), EmitterSpec(ModulationKind.QPSK, 60e6, 2e6))
        scene = WidebandScene(100e6, 1024, emitters)
        feats = [FeatureVector(60.5e6, 1, 1, 1), FeatureVector(45e6, 1, 1, 1), FeatureVector(20.2e6, 1, 1, 1),
                 FeatureVector(19.9e6, 1, 1, 1)]
        out = match_labels(feats, scene)
        assert [(f.f_c, f.label) for f in out] == [(60.5e6, ModulationKind.QPSK), (19.9e6, ModulationKind.BPSK)]

    def test_csv_round_trip(self, tmp_path):
        rows = [FeatureVector(1.5e7, 2.7e6, 31.25, 0.1 + 0.2, ModulationKind.QAM32),
                FeatureVector(-3.0, 1.0, 2.0, 3.0)]
        write_features_csv(rows, tmp_path / "f.csv")
        assert (tmp_path / "f.csv").read_text().splitlines()[0] == "f_c_hz,bw_hz,a_max,e_t,label"
        assert read_features_csv(tmp_path / "f.csv") == rows
