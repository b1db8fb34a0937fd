"""Wide-band scene synthesis.

A scene is a handful of narrow-band emitters (BASK, BPSK, QPSK, 32-QAM),
each root-raised-cosine shaped and shifted to its own carrier, summed
through known flat channels with optional AWGN.  Everything is complex
baseband sampled at ``2 * band_upper_hz``, so the monitored band
``[0, band_upper_hz]`` is the positive half of the sampled spectrum.
A scene may instead be ``real_valued``: the composite is then the real
pass-band signal ``sqrt(2) * Re(.)`` (stored with zero imaginary part),
whose spectrum carries a mirror image of every emitter in the negative
half.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

ROLLOFF = 0.35
RRC_SPAN = 8  # pulse truncation, in symbols on each side
MAX_OCCUPANCY = 0.3


class ModulationKind(enum.Enum):
    """Supported modulations, declared in tie-break order."""

    BASK = "BASK"
    BPSK = "BPSK"
    QPSK = "QPSK"
    QAM32 = "QAM32"

    @property
    def order(self) -> int:
        return list(ModulationKind).index(self)

    @property
    def size(self) -> int:
        return len(constellation(self))

    @property
    def bits_per_symbol(self) -> int:
        return int(round(math.log2(self.size)))


def _qam32() -> np.ndarray:
    levels = np.array([-5, -3, -1, 1, 3, 5], dtype=float)
    i, q = np.meshgrid(levels, levels, indexing="ij")
    pts = (i + 1j * q).ravel()
    pts = pts[~((np.abs(pts.real) == 5) & (np.abs(pts.imag) == 5))]
    return pts


_CONSTELLATIONS = {
    ModulationKind.BASK: np.array([0.0, 1.0], dtype=complex),
    ModulationKind.BPSK: np.array([1.0, -1.0], dtype=complex),
    ModulationKind.QPSK: np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4))),
    ModulationKind.QAM32: _qam32(),
}


def constellation(kind: ModulationKind) -> np.ndarray:
    """Unit-average-energy constellation points for ``kind``."""
    pts = _CONSTELLATIONS[kind]
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


@dataclass(frozen=True)
class EmitterSpec:
    modulation: ModulationKind
    carrier_hz: float
    symbol_rate_hz: float
    amplitude: float = 1.0
    channel_gain: complex = 1.0 + 0.0j

    @property
    def occupied_bw_hz(self) -> float:
        return (1.0 + ROLLOFF) * self.symbol_rate_hz

    @property
    def occupied_band(self) -> tuple[float, float]:
        half = self.occupied_bw_hz / 2
        return (self.carrier_hz - half, self.carrier_hz + half)

    def to_dict(self) -> dict:
        g = complex(self.channel_gain)
        return {
            "modulation": self.modulation.value,
            "carrier_hz": float(self.carrier_hz),
            "symbol_rate_hz": float(self.symbol_rate_hz),
            "amplitude": float(self.amplitude),
            "channel_gain": [g.real, g.imag],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmitterSpec":
        g = d.get("channel_gain", [1.0, 0.0])
        return cls(
            modulation=ModulationKind(d["modulation"]),
            carrier_hz=float(d["carrier_hz"]),
            symbol_rate_hz=float(d["symbol_rate_hz"]),
            amplitude=float(d.get("amplitude", 1.0)),
            channel_gain=complex(g[0], g[1]),
        )


@dataclass(frozen=True)
class WidebandScene:
    band_upper_hz: float
    n_samples: int
    emitters: tuple[EmitterSpec, ...] = ()
    noise_psd: float = 0.0
    seed: int = 0
    real_valued: bool = False

    def __post_init__(self):
        object.__setattr__(self, "emitters", tuple(self.emitters))
        validate_scene(self)

    @property
    def sample_rate_hz(self) -> float:
        return 2.0 * self.band_upper_hz

    @property
    def bin_hz(self) -> float:
        return self.sample_rate_hz / self.n_samples

    def occupied_bins(self) -> int:
        """DFT bins covered by emitters, mirror images included for real scenes."""
        one_sided = sum(math.ceil(e.occupied_bw_hz / self.bin_hz) for e in self.emitters)
        return int(one_sided * (2 if self.real_valued else 1))

    def to_json(self) -> str:
        doc = {
            "band_upper_hz": float(self.band_upper_hz),
            "n_samples": int(self.n_samples),
            "emitters": [e.to_dict() for e in self.emitters],
            "noise_psd": float(self.noise_psd),
            "seed": int(self.seed),
            "real_valued": bool(self.real_valued),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WidebandScene":
        d = json.loads(text)
        return cls(
            band_upper_hz=float(d["band_upper_hz"]),
            n_samples=int(d["n_samples"]),
            emitters=tuple(EmitterSpec.from_dict(e) for e in d.get("emitters", [])),
            noise_psd=float(d.get("noise_psd", 0.0)),
            seed=int(d.get("seed", 0)),
            real_valued=bool(d.get("real_valued", False)),
        )


def validate_scene(scene: WidebandScene) -> None:
    n = scene.n_samples
    if n < 2 or n & (n - 1):
        raise ValueError(f"n_samples must be a power of two, got {n}")
    if scene.band_upper_hz <= 0:
        raise ValueError("band_upper_hz must be positive")
    if scene.noise_psd < 0:
        raise ValueError("noise_psd must be non-negative")
    for e in scene.emitters:
        if e.amplitude <= 0:
            raise ValueError("emitter amplitude must be positive")
        if e.symbol_rate_hz <= 0:
            raise ValueError("symbol rate must be positive")
        lo, hi = e.occupied_band
        if not (0 < e.carrier_hz < scene.band_upper_hz) or lo < 0 or hi > scene.band_upper_hz:
            raise ValueError(
                f"emitter band [{lo:.4g}, {hi:.4g}] Hz outside [0, {scene.band_upper_hz:.4g}] Hz"
            )
    if scene.occupied_bins() > MAX_OCCUPANCY * n:
        raise ValueError("emitters occupy more than 30% of the spectrum")


@dataclass(frozen=True)
class TimeSeries:
    samples: np.ndarray
    sample_rate_hz: float

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def save(self, path: str | Path) -> None:
        """Write interleaved little-endian float64 I/Q plus a JSON sidecar."""
        path = Path(path)
        iq = np.empty(2 * len(self.samples), dtype="<f8")
        iq[0::2] = self.samples.real
        iq[1::2] = self.samples.imag
        path.write_bytes(iq.tobytes())
        sidecar = {"sample_rate_hz": float(self.sample_rate_hz), "n_samples": len(self.samples)}
        Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "TimeSeries":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        iq = np.frombuffer(path.read_bytes(), dtype="<f8")
        if len(iq) != 2 * meta["n_samples"]:
            raise ValueError("I/Q payload length does not match sidecar")
        return cls(iq[0::2] + 1j * iq[1::2], float(meta["sample_rate_hz"]))


def rrc_pulse(t: np.ndarray, symbol_period: float, rolloff: float = ROLLOFF) -> np.ndarray:
    """Root-raised-cosine pulse, normalised so that its energy equals one symbol period."""
    x = np.asarray(t, dtype=float) / symbol_period
    b = rolloff
    out = np.empty_like(x)
    at_zero = np.abs(x) < 1e-12
    at_sing = np.abs(np.abs(x) - 1.0 / (4 * b)) < 1e-9
    reg = ~(at_zero | at_sing)
    xr = x[reg]
    num = np.sin(np.pi * xr * (1 - b)) + 4 * b * xr * np.cos(np.pi * xr * (1 + b))
    den = np.pi * xr * (1 - (4 * b * xr) ** 2)
    out[reg] = num / den
    out[at_zero] = 1 - b + 4 * b / np.pi
    out[at_sing] = (b / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
    )
    return out


def symbols_needed(symbol_rate_hz: float, n_samples: int, sample_rate_hz: float) -> int:
    """Symbols required so that every output sample sees a full pulse span."""
    n_periods = n_samples * symbol_rate_hz / sample_rate_hz
    return int(math.ceil(n_periods)) + 2 * RRC_SPAN + 1


def modulate_nb(
    spec: EmitterSpec,
    symbols: Sequence[int],
    n_samples: int,
    sample_rate_hz: float,
) -> TimeSeries:
    """Pulse-shape a symbol-index sequence and move it to ``spec.carrier_hz``.

    Symbol ``k`` is centred at ``t = (k - RRC_SPAN) / symbol_rate``, so the
    first ``RRC_SPAN`` symbols only feed pulse tails into the window.  A
    sequence shorter than :func:`symbols_needed` is repeated cyclically.
    The channel gain is not applied here.
    """
    pts = constellation(spec.modulation)
    idx = np.asarray(symbols, dtype=int)
    if idx.size == 0:
        raise ValueError("empty symbol sequence")
    if idx.min() < 0 or idx.max() >= len(pts):
        raise ValueError(f"symbol index outside 0..{len(pts) - 1} for {spec.modulation.value}")
    half_bw = spec.occupied_bw_hz / 2
    if abs(spec.carrier_hz) + half_bw > sample_rate_hz / 2:
        raise ValueError("occupied band exceeds the grid Nyquist frequency")
    if n_samples * spec.symbol_rate_hz / sample_rate_hz < 8:
        raise ValueError("grid shorter than 8 symbol periods")

    n_sym = symbols_needed(spec.symbol_rate_hz, n_samples, sample_rate_hz)
    idx = np.resize(idx, n_sym)
    a = pts[idx]
    period = 1.0 / spec.symbol_rate_hz
    t = np.arange(n_samples) / sample_rate_hz
    env = np.zeros(n_samples, dtype=complex)
    for k in range(n_sym):
        centre = (k - RRC_SPAN) * period
        lo = max(0, int(math.floor((centre - RRC_SPAN * period) * sample_rate_hz)))
        hi = min(n_samples, int(math.ceil((centre + RRC_SPAN * period) * sample_rate_hz)) + 1)
        if lo >= hi or a[k] == 0:
            continue
        env[lo:hi] += a[k] * rrc_pulse(t[lo:hi] - centre, period)
    carrier = np.exp(2j * np.pi * spec.carrier_hz * t)
    return TimeSeries(spec.amplitude * env * carrier, sample_rate_hz)


def emitter_symbols(scene: WidebandScene, index: int) -> np.ndarray:
    """Deterministic random symbol stream for emitter ``index`` of ``scene``."""
    e = scene.emitters[index]
    rng = np.random.default_rng([scene.seed, index, 1])
    n_sym = symbols_needed(e.symbol_rate_hz, scene.n_samples, scene.sample_rate_hz)
    return rng.integers(0, e.modulation.size, size=n_sym)


def emitter_waveform(scene: WidebandScene, index: int) -> TimeSeries:
    """Noiseless received contribution of one emitter (channel applied)."""
    e = scene.emitters[index]
    ts = modulate_nb(e, emitter_symbols(scene, index), scene.n_samples, scene.sample_rate_hz)
    return TimeSeries(e.channel_gain * ts.samples, ts.sample_rate_hz)


def compose_scene(scene: WidebandScene) -> TimeSeries:
    """Sum all emitters through their channels and add AWGN of PSD ``noise_psd``.

    Real-valued scenes take ``sqrt(2) * Re`` of the sum, which keeps each
    emitter's power, and get real noise.
    """
    out = np.zeros(scene.n_samples, dtype=complex)
    for i in range(len(scene.emitters)):
        out += emitter_waveform(scene, i).samples
    if scene.real_valued:
        out = np.sqrt(2.0) * out.real + 0j
    if scene.noise_psd > 0:
        var = scene.noise_psd * scene.sample_rate_hz
        rng = np.random.default_rng([scene.seed, 0, 2])
        out += _noise(rng, scene.n_samples, var, scene.real_valued)
    return TimeSeries(out, scene.sample_rate_hz)


def is_real(ts: TimeSeries) -> bool:
    """True when every sample has a zero imaginary part."""
    return not np.any(np.imag(ts.samples))


def _noise(rng: np.random.Generator, n: int, variance: float, real: bool = False) -> np.ndarray:
    if real:
        return np.sqrt(variance) * rng.standard_normal(n) + 0j
    w = rng.standard_normal((n, 2)) @ np.array([1.0, 1j])
    return np.sqrt(variance / 2) * w


def add_awgn(ts: TimeSeries, snr_db: float, rng_seed: int) -> TimeSeries:
    """Add Gaussian noise at ``snr_db`` relative to the input power.

    The noise is circular complex, or real when the input is real (every
    imaginary part zero) so that a real pass-band signal stays real.
    ``snr_db = inf`` returns the input unchanged.
    """
    if len(ts) == 0:
        raise ValueError("empty time series")
    if math.isinf(snr_db) and snr_db > 0:
        return TimeSeries(ts.samples.copy(), ts.sample_rate_hz)
    p_sig = ts.power
    if p_sig <= 0:
        raise ValueError("cannot set a finite SNR on a zero-power signal")
    var = p_sig / 10 ** (snr_db / 10)
    noise = _noise(np.random.default_rng(rng_seed), len(ts), var, is_real(ts))
    return TimeSeries(ts.samples + noise, ts.sample_rate_hz)


@dataclass(frozen=True)
class ServiceAllocation:
    """Where one modulation is allowed to live: carrier sub-bands and rate range."""

    bands_hz: tuple[tuple[float, float], ...]
    symbol_rate_hz: tuple[float, float]

    def to_dict(self) -> dict:
        return {"bands_hz": [list(b) for b in self.bands_hz], "symbol_rate_hz": list(self.symbol_rate_hz)}

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceAllocation":
        return cls(tuple(tuple(map(float, b)) for b in d["bands_hz"]), tuple(map(float, d["symbol_rate_hz"])))


@dataclass(frozen=True)
class SceneConfig:
    """Parameters for :func:`random_scene`.

    Symbol rates come from ``symbol_rate_hz``, unless ``bit_rate_hz`` is
    set, in which case a bit rate is drawn and divided by the modulation's
    bits per symbol.  ``services`` optionally restricts each modulation to
    its own carrier sub-bands and symbol-rate range; modulations absent
    from it draw carriers anywhere in the band.
    """

    band_upper_hz: float = 100e6
    n_samples: int = 4096
    n_emitters: tuple[int, int] = (4, 4)
    modulations: tuple[ModulationKind, ...] = tuple(ModulationKind)
    one_per_class: bool = True
    symbol_rate_hz: tuple[float, float] = (0.5e6, 2.0e6)
    bit_rate_hz: tuple[float, float] | None = None
    amplitude: tuple[float, float] = (0.5, 1.5)
    allow_overlap: bool = False
    guard_hz: float = 1e6
    random_phase: bool = False
    noise_psd: float = 0.0
    real_valued: bool = False
    services: dict = field(default_factory=dict)
    max_attempts: int = 200

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modulations"] = [m.value for m in self.modulations]
        d["services"] = {m.value: s.to_dict() for m, s in self.services.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        if "modulations" in d:
            d["modulations"] = tuple(ModulationKind(m) for m in d["modulations"])
        if "services" in d:
            d["services"] = {
                ModulationKind(k): ServiceAllocation.from_dict(v) for k, v in d["services"].items()
            }
        for key in ("n_emitters", "symbol_rate_hz", "bit_rate_hz", "amplitude"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def _intervals_clear(band, taken, guard):
    lo, hi = band
    return all(hi + guard <= a or lo - guard >= b for a, b in taken)


def random_scene(config: SceneConfig, rng_seed: int) -> WidebandScene:
    """Draw a random scene satisfying every :class:`WidebandScene` invariant.

    Raises ``ValueError`` when the requested emitters cannot be placed.
    """
    rng = np.random.default_rng([rng_seed, 7])
    n_lo, n_hi = config.n_emitters
    if config.one_per_class:
        mods = list(config.modulations)
        count = len(mods)
    else:
        count = int(rng.integers(n_lo, n_hi + 1))
        mods = [config.modulations[i] for i in rng.integers(0, len(config.modulations), count)]
    fs = 2 * config.band_upper_hz
    bin_hz = fs / config.n_samples
    min_rate = 8 * fs / config.n_samples

    emitters: list[EmitterSpec] = []
    taken: list[tuple[float, float]] = []
    used_bins = 0
    images = 2 if config.real_valued else 1
    for mod in mods:
        svc = config.services.get(mod)
        if svc:
            r_lo, r_hi = svc.symbol_rate_hz
        elif config.bit_rate_hz is not None:
            r_lo, r_hi = (b / mod.bits_per_symbol for b in config.bit_rate_hz)
        else:
            r_lo, r_hi = config.symbol_rate_hz
        r_lo = max(r_lo, min_rate)
        if r_lo > r_hi:
            raise ValueError("symbol-rate range too low for at least 8 symbols per window")
        bands = svc.bands_hz if svc else ((0.0, config.band_upper_hz),)
        widths = np.array([b[1] - b[0] for b in bands])
        for _ in range(config.max_attempts):
            rate = rng.uniform(r_lo, r_hi)
            half = (1 + ROLLOFF) * rate / 2
            b_lo, b_hi = bands[rng.choice(len(bands), p=widths / widths.sum())]
            c_lo = max(b_lo, half + bin_hz)
            c_hi = min(b_hi, config.band_upper_hz - half - bin_hz)
            if c_lo >= c_hi:
                continue
            fc = rng.uniform(c_lo, c_hi)
            occ = (fc - half, fc + half)
            bins = used_bins + images * math.ceil(2 * half / bin_hz)
            if bins <= MAX_OCCUPANCY * config.n_samples and (
                    config.allow_overlap or _intervals_clear(occ, taken, config.guard_hz)):
                used_bins = bins
                break
        else:
            raise ValueError(f"could not place a {mod.value} emitter after {config.max_attempts} attempts")
        amp = rng.uniform(*config.amplitude)
        gain = np.exp(2j * np.pi * rng.uniform()) if config.random_phase else 1.0 + 0.0j
        emitters.append(EmitterSpec(mod, float(fc), float(rate), float(amp), complex(gain)))
        taken.append(occ)

    scene = WidebandScene(config.band_upper_hz, config.n_samples, (), config.noise_psd, int(rng_seed),
                          config.real_valued)
    try:
        return replace(scene, emitters=tuple(emitters))
    except ValueError as exc:
        raise ValueError(f"infeasible scene config: {exc}") from exc
