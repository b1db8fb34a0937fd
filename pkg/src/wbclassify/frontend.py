"""Compressive acquisition: sensing matrices, the noise pre-filter and ``z = Θ r``."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .scene import TimeSeries, is_real


class SensingKind(enum.Enum):
    RANDOM_SUBSAMPLE = "RandomSubsample"
    BERNOULLI = "Bernoulli"


@dataclass(frozen=True)
class SensingMatrix:
    """An ``M x N`` sensing operator, fully determined by ``(kind, M, N, seed)``.

    Only the row indices (random subsampling) or the sign pattern
    (Bernoulli) are materialised, lazily.
    """

    rows: int
    cols: int
    kind: SensingKind = SensingKind.RANDOM_SUBSAMPLE
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.rows <= self.cols:
            raise ValueError(f"need 1 <= M <= N, got M={self.rows}, N={self.cols}")

    @cached_property
    def selected_indices(self) -> np.ndarray | None:
        if self.kind is not SensingKind.RANDOM_SUBSAMPLE:
            return None
        if self.rows == self.cols:
            return np.arange(self.cols)
        rng = np.random.default_rng([self.seed, 11])
        return np.sort(rng.choice(self.cols, size=self.rows, replace=False))

    @cached_property
    def signs(self) -> np.ndarray | None:
        if self.kind is not SensingKind.BERNOULLI:
            return None
        rng = np.random.default_rng([self.seed, 13])
        return np.where(rng.integers(0, 2, size=(self.rows, self.cols)) == 1, 1.0, -1.0)

    def dense(self) -> np.ndarray:
        if self.kind is SensingKind.BERNOULLI:
            return self.signs / np.sqrt(self.rows)
        out = np.zeros((self.rows, self.cols))
        out[np.arange(self.rows), self.selected_indices] = 1.0
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[0] != self.cols:
            raise ValueError(f"expected length {self.cols}, got {x.shape[0]}")
        if self.kind is SensingKind.RANDOM_SUBSAMPLE:
            return x[self.selected_indices]
        return (self.signs @ x) / np.sqrt(self.rows)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        if y.shape[0] != self.rows:
            raise ValueError(f"expected length {self.rows}, got {y.shape[0]}")
        if self.kind is SensingKind.RANDOM_SUBSAMPLE:
            out = np.zeros((self.cols,) + y.shape[1:], dtype=np.result_type(y, float))
            out[self.selected_indices] = y
            return out
        return (self.signs.T @ y) / np.sqrt(self.rows)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "M": self.rows, "N": self.cols, "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d: dict) -> "SensingMatrix":
        return cls(int(d["M"]), int(d["N"]), SensingKind(d["kind"]), int(d["seed"]))


def build_sensing_matrix(M: int, N: int, kind: SensingKind | str = SensingKind.RANDOM_SUBSAMPLE,
                         seed: int = 0) -> SensingMatrix:
    return SensingMatrix(int(M), int(N), SensingKind(kind), int(seed))


@dataclass(frozen=True)
class MeasurementRecord:
    z: np.ndarray
    sensing: SensingMatrix
    scene_ref: str = ""
    snr_db: float = float("inf")
    sample_rate_hz: float = 0.0
    channel_gains: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.z) != self.sensing.rows:
            raise ValueError("measurement length does not match sensing rows")

    def save(self, path: str | Path) -> None:
        """JSON metadata at ``path`` plus interleaved little-endian float64 payload at ``path.bin``."""
        path = Path(path)
        payload = np.empty(2 * len(self.z), dtype="<f8")
        payload[0::2] = self.z.real
        payload[1::2] = self.z.imag
        Path(str(path) + ".bin").write_bytes(payload.tobytes())
        meta = {
            "sensing": self.sensing.to_dict(),
            "scene_ref": self.scene_ref,
            "snr_db": None if np.isinf(self.snr_db) else float(self.snr_db),
            "sample_rate_hz": float(self.sample_rate_hz),
            "n_measurements": len(self.z),
        }
        if self.channel_gains is not None:
            g = np.asarray(self.channel_gains)
            meta["channel_gains"] = [g.real.tolist(), g.imag.tolist()]
        path.write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "MeasurementRecord":
        path = Path(path)
        meta = json.loads(path.read_text())
        iq = np.frombuffer(Path(str(path) + ".bin").read_bytes(), dtype="<f8")
        gains = None
        if "channel_gains" in meta:
            re, im = meta["channel_gains"]
            gains = np.asarray(re) + 1j * np.asarray(im)
        snr = meta.get("snr_db")
        return cls(
            z=iq[0::2] + 1j * iq[1::2],
            sensing=SensingMatrix.from_dict(meta["sensing"]),
            scene_ref=meta.get("scene_ref", ""),
            snr_db=float("inf") if snr is None else float(snr),
            sample_rate_hz=float(meta.get("sample_rate_hz", 0.0)),
            channel_gains=gains,
        )


def acquire(sensing: SensingMatrix, r: TimeSeries, scene_ref: str = "",
            snr_db: float = float("inf"), channel_gains=None) -> MeasurementRecord:
    """Compressed samples ``z = Θ r``."""
    if len(r.samples) != sensing.cols:
        raise ValueError(f"time series length {len(r.samples)} != sensing cols {sensing.cols}")
    return MeasurementRecord(sensing.apply(r.samples), sensing, scene_ref, snr_db,
                             r.sample_rate_hz, channel_gains)


def prefilter_mask(n: int, sample_rate_hz: float, band: tuple[float, float],
                   taper_fraction: float = 0.05) -> np.ndarray:
    """FFT-domain band-pass gain: flat inside ``band``, raised-cosine skirts outside.

    The skirt is ``taper_fraction`` of the band width wide (at least one
    bin) and sits entirely outside the pass band.  Frequencies are handled
    circularly, so a band touching ``fs/2`` tapers into the negative edge.
    """
    lo, hi = band
    if not hi > lo:
        raise ValueError("empty pre-filter band")
    if lo < 0 or hi > sample_rate_hz / 2 + 1e-9:
        raise ValueError("pre-filter band must lie within [0, fs/2]")
    f = np.fft.fftfreq(n, 1.0 / sample_rate_hz) % sample_rate_hz
    width = max(taper_fraction * (hi - lo), sample_rate_hz / n)
    below = (lo - f) % sample_rate_hz
    above = (f - hi) % sample_rate_hz
    inside = (f >= lo - 1e-9) & (f <= hi + 1e-9)
    dist = np.where(inside, 0.0, np.minimum(below, above))
    return np.where(dist < width, 0.5 * (1 + np.cos(np.pi * dist / width)), 0.0)


def prefilter(r: TimeSeries, band: tuple[float, float], taper_fraction: float = 0.05) -> TimeSeries:
    """Band-pass ``r`` to ``band`` (Hz) by masking its DFT.

    A real input gets the mirrored mask as well and stays real.
    """
    n = len(r.samples)
    mask = prefilter_mask(n, r.sample_rate_hz, band, taper_fraction)
    real = is_real(r)
    if real:
        mask = np.maximum(mask, mask[-np.arange(n) % n])
    out = np.fft.ifft(np.fft.fft(r.samples) * mask)
    return TimeSeries(out.real + 0j if real else out, r.sample_rate_hz)
