"""Per-emitter spectral features from a recovered spectrum.

Each detected emitter yields four numbers: centre frequency (power
centroid), occupied bandwidth (99 % power by default, or 3 dB), peak
power over the noise floor, and integrated power ("energy").
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import gamma

from .recovery import SpectrumEstimate
from .scene import ModulationKind, WidebandScene

FEATURE_NAMES = ("f_c_hz", "bw_hz", "a_max", "e_t")


@dataclass(frozen=True)
class PsdEstimate:
    bins: np.ndarray
    bin_hz: float
    noise_floor: float
    band_bins: np.ndarray | None = None  # indices considered for detection
    smooth_bins: int = 1  # moving-average width used for the floor and detection

    def frequency(self, k) -> np.ndarray:
        n = len(self.bins)
        k = np.asarray(k)
        return np.where(k < (n + 1) // 2, k, k - n) * self.bin_hz


@dataclass(frozen=True)
class SupportSegment:
    lo_bin: int
    hi_bin: int
    peak_bin: int

    def __post_init__(self):
        if not self.lo_bin <= self.peak_bin <= self.hi_bin:
            raise ValueError("segment requires lo_bin <= peak_bin <= hi_bin")

    @property
    def width(self) -> int:
        return self.hi_bin - self.lo_bin + 1


@dataclass(frozen=True)
class FeatureVector:
    f_c: float
    bw: float
    a_max: float
    e_t: float
    label: ModulationKind | None = None

    def as_array(self) -> np.ndarray:
        return np.array([self.f_c, self.bw, self.a_max, self.e_t])


def band_bins(n: int, sample_rate_hz: float, band: tuple[float, float]) -> np.ndarray:
    """Indices of DFT bins whose (non-negative) frequency lies in ``band``."""
    f = np.arange(n // 2 + 1) * sample_rate_hz / n
    lo, hi = band
    return np.flatnonzero((f >= lo) & (f <= hi))


def estimate_psd(s_hat: SpectrumEstimate | np.ndarray, bin_hz: float | None = None,
                 band: tuple[float, float] | None = None, smooth_bins: int = 1) -> PsdEstimate:
    """Periodogram of the recovered spectrum with a median noise-floor estimate.

    For complex Gaussian noise the bin power is exponential, whose median
    is ``ln 2`` times its mean; the floor is the median over the ``band``
    bins (all bins when ``band`` is None) divided by ``ln 2``.

    With ``smooth_bins = w > 1`` the median is taken over a ``w``-bin
    moving average instead and divided by the median of a unit-mean
    Gamma(w) variable (``ln 2`` again when ``w = 1``).  An l1 recovery
    below the Nyquist rate leaves many bins exactly zero with the noise
    energy concentrated in the rest, which drags the raw median far
    below the true floor; the local average is immune to that.
    """
    if smooth_bins < 1:
        raise ValueError("smooth_bins must be at least 1")
    if isinstance(s_hat, SpectrumEstimate):
        spec = s_hat.s_hat
        bin_hz = s_hat.bin_hz if bin_hz is None else bin_hz
    else:
        spec = np.asarray(s_hat)
        if bin_hz is None:
            raise ValueError("bin_hz required for a raw spectrum")
    bins = np.abs(spec) ** 2
    idx = None
    if band is not None:
        idx = band_bins(len(bins), bin_hz * len(bins), band)
    level = _moving_average(bins, smooth_bins)
    pool = level if idx is None else level[idx]
    if not len(pool):
        floor = 0.0
    elif smooth_bins == 1:
        floor = float(np.median(pool) / np.log(2))
    else:
        floor = float(np.median(pool) / gamma.median(smooth_bins, scale=1.0 / smooth_bins))
    return PsdEstimate(bins, float(bin_hz), floor, idx, int(smooth_bins))


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x
    kernel = np.zeros(len(x))
    half = width // 2
    kernel[np.arange(-half, width - half) % len(x)] = 1.0 / width
    return np.real(np.fft.ifft(np.fft.fft(x) * np.fft.fft(kernel)))


def smoothed_bins(psd: PsdEstimate, width: int | None = None) -> np.ndarray:
    """Centred circular moving average of the bin powers (``psd.smooth_bins`` wide by default)."""
    return _moving_average(psd.bins, psd.smooth_bins if width is None else width)


def detect_segments(psd: PsdEstimate, threshold_factor: float = 4.0, min_gap_bins: int = 3,
                    smooth_bins: int | None = None) -> list[SupportSegment]:
    """Maximal runs of bins above ``threshold_factor * noise_floor``.

    Runs separated by fewer than ``min_gap_bins`` quiet bins are merged.
    The comparison uses the PSD averaged over ``smooth_bins`` (default:
    the width the floor was estimated with), which suppresses isolated
    noise peaks and periodogram dips inside an emitter.  Detection only
    looks at ``psd.band_bins`` when set (contiguous index range assumed).
    """
    if not threshold_factor > 1:
        raise ValueError("threshold_factor must exceed 1")
    idx = np.arange(len(psd.bins)) if psd.band_bins is None else psd.band_bins
    if len(idx) == 0:
        return []
    level = smoothed_bins(psd, smooth_bins)[idx]
    above = level > threshold_factor * psd.noise_floor
    if psd.noise_floor <= 0:
        above &= level > 0
    runs: list[list[int]] = []
    k = 0
    while k < len(idx):
        if above[k]:
            start = k
            while k + 1 < len(idx) and above[k + 1]:
                k += 1
            if runs and start - runs[-1][1] - 1 < min_gap_bins:
                runs[-1][1] = k
            else:
                runs.append([start, k])
        k += 1
    segs = []
    for a, b in runs:
        lo, hi = int(idx[a]), int(idx[b])
        peak = lo + int(np.argmax(psd.bins[lo:hi + 1]))
        segs.append(SupportSegment(lo, hi, peak))
    return segs


def _occupied_bw(p: np.ndarray, bin_hz: float, method: str, fraction: float) -> float:
    if method == "3db":
        above = np.flatnonzero(p >= p.max() / 2)
        return float((above[-1] - above[0] + 1) * bin_hz)
    if method != "power":
        raise ValueError(f"unknown bandwidth method {method!r}")
    total = p.sum()
    if total <= 0:
        return bin_hz
    tail = (1 - fraction) / 2
    cum = np.cumsum(p) / total
    lo = int(np.searchsorted(cum, tail, side="left"))
    hi = int(np.searchsorted(cum, 1 - tail, side="left"))
    hi = min(hi, len(p) - 1)
    return float((hi - lo + 1) * bin_hz)


def extract_features(psd: PsdEstimate, seg: SupportSegment, bw_method: str = "power",
                     bw_fraction: float = 0.99, normalize_amax: bool = True) -> FeatureVector:
    """Centroid frequency, occupied bandwidth, normalised peak and energy of one segment."""
    if seg.hi_bin >= len(psd.bins) or seg.lo_bin < 0:
        raise ValueError("segment outside the PSD")
    k = np.arange(seg.lo_bin, seg.hi_bin + 1)
    p = psd.bins[k]
    f = psd.frequency(k)
    total = p.sum()
    f_c = float(np.dot(p, f) / total) if total > 0 else float(f[seg.peak_bin - seg.lo_bin])
    bw = max(_occupied_bw(p, psd.bin_hz, bw_method, bw_fraction), psd.bin_hz)
    peak = float(psd.bins[seg.peak_bin])
    if normalize_amax:
        a_max = peak / psd.noise_floor if psd.noise_floor > 0 else np.inf
    else:
        a_max = peak
    e_t = float(total * psd.bin_hz)
    return FeatureVector(f_c, bw, float(a_max), e_t)


def match_labels(features: Sequence[FeatureVector], scene: WidebandScene) -> list[FeatureVector]:
    """Attach ground-truth modulations; unmatched segments are dropped.

    A segment matches the nearest emitter whose carrier lies within half
    that emitter's occupied bandwidth of the segment centroid.  Each
    emitter is claimed at most once (closest segment wins).
    """
    pairs = []
    for i, fv in enumerate(features):
        for j, e in enumerate(scene.emitters):
            d = abs(fv.f_c - e.carrier_hz)
            if d <= e.occupied_bw_hz / 2:
                pairs.append((d, i, j))
    used_f, used_e, out = set(), set(), {}
    for d, i, j in sorted(pairs):
        if i in used_f or j in used_e:
            continue
        used_f.add(i)
        used_e.add(j)
        fv = features[i]
        out[i] = FeatureVector(fv.f_c, fv.bw, fv.a_max, fv.e_t, scene.emitters[j].modulation)
    return [out[i] for i in sorted(out)]


def write_features_csv(rows: Iterable[FeatureVector], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["f_c_hz", "bw_hz", "a_max", "e_t", "label"])
        for r in rows:
            w.writerow([repr(r.f_c), repr(r.bw), repr(r.a_max), repr(r.e_t), r.label.value if r.label else ""])


def read_features_csv(path: str | Path) -> list[FeatureVector]:
    with open(path, newline="") as fh:
        return [
            FeatureVector(float(r["f_c_hz"]), float(r["bw_hz"]), float(r["a_max"]), float(r["e_t"]),
                          ModulationKind(r["label"]) if r["label"] else None)
            for r in csv.DictReader(fh)
        ]
