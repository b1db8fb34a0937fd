"""Spectrum recovery from compressed time samples.

The measurement model is ``z = Θ F⁻¹ H s`` with ``F`` the unitary DFT,
``H`` a known diagonal channel and ``Θ`` the sensing matrix.  Three
solvers are provided:

* :func:`solve_bp`    -- basis pursuit, ``min ||s||₁ s.t. A s = z`` (ADMM)
* :func:`solve_lasso` -- ``min ||s||₁ + λ ||z - A s||₂²`` (ADMM).  Note that
  λ multiplies the *data* term, so larger λ means a tighter fit.
* :func:`solve_omp`   -- orthogonal matching pursuit
"""

from __future__ import annotations

import csv
import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .frontend import MeasurementRecord, SensingKind, SensingMatrix

log = logging.getLogger(__name__)

DENSE_LIMIT = 512


def _check_pow2(n: int) -> None:
    if n < 1 or n & (n - 1):
        raise ValueError(f"transform length must be a power of two, got {n}")


def dft(x, direction: str = "forward") -> np.ndarray:
    """Unitary DFT (``1/sqrt(N)`` scaling both ways) along the first axis."""
    x = np.asarray(x, dtype=complex)
    _check_pow2(x.shape[0])
    if direction == "forward":
        return np.fft.fft(x, axis=0, norm="ortho")
    if direction == "inverse":
        return np.fft.ifft(x, axis=0, norm="ortho")
    raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")


class RecoveryOperator:
    """Matrix-free ``A = Θ F⁻¹ diag(g)`` mapping an N-bin spectrum to M samples."""

    def __init__(self, sensing: SensingMatrix, channel_gains=None):
        n = sensing.cols
        _check_pow2(n)
        self.sensing = sensing
        self.dft_size = n
        g = np.ones(n, dtype=complex) if channel_gains is None else np.asarray(channel_gains, dtype=complex)
        if g.shape != (n,):
            raise ValueError(f"channel_gains must have length {n}")
        self.channel_gains = g
        self._unit_gain = bool(np.allclose(np.abs(g), 1.0, rtol=0, atol=1e-14))
        self._chol: dict[float, tuple] = {}

    @classmethod
    def for_record(cls, record: MeasurementRecord) -> "RecoveryOperator":
        return cls(record.sensing, record.channel_gains)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.sensing.rows, self.dft_size)

    def forward(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s)
        g = self.channel_gains if s.ndim == 1 else self.channel_gains[:, None]
        return self.sensing.apply(dft(g * s, "inverse"))

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        g = self.channel_gains if y.ndim == 1 else self.channel_gains[:, None]
        return np.conj(g) * dft(self.sensing.adjoint(y), "forward")

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        n = self.dft_size
        t = np.arange(n)[:, None]
        # inverse-DFT columns e^{2πi k n / N}/√N, scaled by the channel
        cols = np.exp(2j * np.pi * t * idx[None, :] / n) / np.sqrt(n) * self.channel_gains[idx]
        return self.sensing.apply(cols)

    def dense(self) -> np.ndarray:
        if self.dft_size > DENSE_LIMIT:
            raise ValueError(f"dense operator only available for N <= {DENSE_LIMIT}")
        return self.columns(np.arange(self.dft_size))

    def _gram(self) -> np.ndarray:
        n = self.dft_size
        c = np.fft.ifft(np.abs(self.channel_gains) ** 2)  # first column of the circulant F⁻¹|g|²F
        if self.sensing.kind is SensingKind.RANDOM_SUBSAMPLE:
            sel = self.sensing.selected_indices
            return c[(sel[:, None] - sel[None, :]) % n]
        phi_t = self.sensing.dense().T
        circ_phi_t = np.fft.ifft(np.fft.fft(c)[:, None] * np.fft.fft(phi_t, axis=0), axis=0)
        return self.sensing.dense() @ circ_phi_t

    def gram_solve(self, r: np.ndarray, shift: float = 0.0) -> np.ndarray:
        """Solve ``(A Aᴴ + shift·I) y = r``."""
        if self._unit_gain and self.sensing.kind is SensingKind.RANDOM_SUBSAMPLE:
            return r / (1.0 + shift)
        key = float(shift)
        if key not in self._chol:
            g = self._gram()
            g = 0.5 * (g + g.conj().T) + shift * np.eye(g.shape[0])
            self._chol[key] = cho_factor(g)
        return cho_solve(self._chol[key], r)

    def min_norm_solution(self, z: np.ndarray) -> np.ndarray:
        return self.adjoint(self.gram_solve(z))

    def project(self, v: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Euclidean projection of ``v`` onto ``{s : A s = z}``."""
        return v - self.adjoint(self.gram_solve(self.forward(v) - z))


class Solver(enum.Enum):
    BP = "BP"
    LASSO = "LASSO"
    OMP = "OMP"


@dataclass(frozen=True)
class SolverOptions:
    lam: float | None = None  # None -> 10 / ||z||²
    tol: float = 1e-6
    max_iter: int = 2000
    omp_sparsity: int = 64
    polish: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.omp_sparsity < 1:
            raise ValueError("omp_sparsity must be at least 1")


@dataclass
class SpectrumEstimate:
    s_hat: np.ndarray
    residual_norm: float
    iterations: int
    solver: Solver
    converged: bool
    sample_rate_hz: float = 0.0
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def bin_hz(self) -> float:
        return self.sample_rate_hz / len(self.s_hat)

    def frequencies(self) -> np.ndarray:
        return np.fft.fftfreq(len(self.s_hat), 1.0 / self.sample_rate_hz)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_hz", "re", "im", "magnitude"])
            for f, v in zip(self.frequencies(), self.s_hat):
                w.writerow([repr(float(f)), repr(float(v.real)), repr(float(v.imag)), repr(float(abs(v)))])

    def save(self, path: str | Path) -> None:
        """Interleaved little-endian float64 spectrum at ``path`` plus a JSON sidecar."""
        path = Path(path)
        iq = np.empty(2 * len(self.s_hat), dtype="<f8")
        iq[0::2] = self.s_hat.real
        iq[1::2] = self.s_hat.imag
        path.write_bytes(iq.tobytes())
        meta = {
            "n_bins": len(self.s_hat),
            "sample_rate_hz": self.sample_rate_hz,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "solver": self.solver.value,
            "converged": self.converged,
        }
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "SpectrumEstimate":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        iq = np.frombuffer(path.read_bytes(), dtype="<f8")
        return cls(iq[0::2] + 1j * iq[1::2], meta["residual_norm"], meta["iterations"],
                   Solver(meta["solver"]), meta["converged"], meta["sample_rate_hz"])


def _check_dims(z: MeasurementRecord, op: RecoveryOperator) -> np.ndarray:
    b = np.asarray(z.z, dtype=complex)
    if b.shape != (op.shape[0],):
        raise ValueError(f"measurement length {b.shape[0]} does not match operator rows {op.shape[0]}")
    return b


def soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    """Complex soft-thresholding: shrink magnitudes by ``t``, keep phases."""
    mag = np.abs(v)
    scale = np.maximum(1.0 - t / np.maximum(mag, 1e-300), 0.0)
    return v * scale


def _log_diag(est: SpectrumEstimate) -> None:
    if log.isEnabledFor(logging.DEBUG):
        log.debug(json.dumps({"solver": est.solver.value, "iterations": est.iterations,
                              "residual_norm": est.residual_norm, "converged": est.converged}))


def _admm(b, op, opts, x_update, rho):
    n = op.dft_size
    z = np.zeros(n, dtype=complex)
    u = np.zeros(n, dtype=complex)
    x = z
    converged = False
    it = 0
    history = []
    for it in range(1, opts.max_iter + 1):
        x = x_update(z - u, rho)
        z_old = z
        z = soft_threshold(x + u, 1.0 / rho)
        u = u + x - z
        r_pri = np.linalg.norm(x - z)
        r_dual = rho * np.linalg.norm(z - z_old)
        history.append(float(r_pri))
        scale = max(np.linalg.norm(x), np.linalg.norm(z), 1e-300)
        if r_pri <= opts.tol * scale and r_dual <= opts.tol * max(rho * np.linalg.norm(u), 1e-300):
            converged = True
            break
        if it % 10 == 0:
            if r_pri > 10 * r_dual:
                rho *= 2.0
                u = u / 2.0
            elif r_dual > 10 * r_pri:
                rho /= 2.0
                u = u * 2.0
    return x, z, it, converged, history


def _polish(b, op, x, z, max_support):
    """Least-squares refit on the support of ``z``; kept only if exactly feasible and no worse in ℓ1."""
    mag = np.abs(z)
    if not mag.any():
        return None
    support = np.flatnonzero(mag > 1e-6 * mag.max())
    if len(support) > max_support:
        return None
    cols = op.columns(support)
    coef, *_ = np.linalg.lstsq(cols, b, rcond=None)
    if np.linalg.norm(cols @ coef - b) > 1e-11 * max(np.linalg.norm(b), 1e-300):
        return None
    cand = np.zeros(op.dft_size, dtype=complex)
    cand[support] = coef
    if np.abs(cand).sum() > np.abs(x).sum() * (1 + 1e-9):
        return None
    return cand


def solve_bp(z: MeasurementRecord, op: RecoveryOperator, opts: SolverOptions = SolverOptions()) -> SpectrumEstimate:
    """Basis pursuit by ADMM with an exact affine projection step.

    The returned spectrum is the projected iterate, so it satisfies
    ``A s = z`` to rounding error even when ADMM has not converged.
    """
    b = _check_dims(z, op)
    m, n = op.shape
    if not np.any(b):
        est = SpectrumEstimate(np.zeros(n, dtype=complex), 0.0, 0, Solver.BP, True, z.sample_rate_hz)
        _log_diag(est)
        return est
    x0 = op.min_norm_solution(b)
    if m == n:
        # the feasible set is a single point
        est = SpectrumEstimate(x0, float(np.linalg.norm(b - op.forward(x0))), 1, Solver.BP, True,
                               z.sample_rate_hz)
        _log_diag(est)
        return est
    rho = 10.0 / np.abs(x0).max()
    x, zz, it, converged, history = _admm(b, op, opts, lambda v, _rho: op.project(v, b), rho)
    s_hat = x
    if opts.polish:
        cand = _polish(b, op, x, zz, min(m // 2, 256))
        if cand is not None:
            s_hat = cand
            converged = True
    res = float(np.linalg.norm(b - op.forward(s_hat)))
    if res > opts.tol * np.linalg.norm(b):
        converged = False
    est = SpectrumEstimate(s_hat, res, it, Solver.BP, converged, z.sample_rate_hz, history)
    _log_diag(est)
    return est


def default_lambda(b: np.ndarray) -> float:
    return 10.0 / max(float(np.vdot(b, b).real), 1e-300)


def solve_lasso(z: MeasurementRecord, op: RecoveryOperator, opts: SolverOptions = SolverOptions()) -> SpectrumEstimate:
    """``min ||s||₁ + λ ||z - A s||₂²`` by ADMM; λ weights the data-fidelity term."""
    b = _check_dims(z, op)
    n = op.dft_size
    lam = default_lambda(b) if opts.lam is None else opts.lam
    if lam == 0 or not np.any(b):
        est = SpectrumEstimate(np.zeros(n, dtype=complex), float(np.linalg.norm(b)), 0, Solver.LASSO, True,
                               z.sample_rate_hz)
        _log_diag(est)
        return est
    atb = op.adjoint(b)
    if 2 * lam * np.abs(atb).max() <= 1:
        # zero satisfies the subgradient optimality condition
        est = SpectrumEstimate(np.zeros(n, dtype=complex), float(np.linalg.norm(b)), 0, Solver.LASSO, True,
                               z.sample_rate_hz)
        _log_diag(est)
        return est

    def x_update(v, rho):
        q = 2 * lam * atb + rho * v
        return (q - op.adjoint(op.gram_solve(op.forward(q), shift=rho / (2 * lam)))) / rho

    rho = 10.0 / np.abs(op.min_norm_solution(b)).max()
    _, s_hat, it, converged, history = _admm(b, op, opts, x_update, rho)
    res = float(np.linalg.norm(b - op.forward(s_hat)))
    est = SpectrumEstimate(s_hat, res, it, Solver.LASSO, converged, z.sample_rate_hz, history)
    _log_diag(est)
    return est


def lasso_objective(s: np.ndarray, b: np.ndarray, op: RecoveryOperator, lam: float) -> float:
    r = b - op.forward(s)
    return float(np.abs(s).sum() + lam * np.vdot(r, r).real)


def solve_omp(z: MeasurementRecord, op: RecoveryOperator, opts: SolverOptions = SolverOptions()) -> SpectrumEstimate:
    """Orthogonal matching pursuit with a least-squares refit after every atom.

    ``history`` holds the residual norm after each iteration (first entry
    is ``||z||``).  Stopping at the sparsity budget is a normal exit, so
    the estimate is always flagged converged.
    """
    b = _check_dims(z, op)
    m, n = op.shape
    bnorm = np.linalg.norm(b)
    support: list[int] = []
    cols = np.empty((m, 0), dtype=complex)
    coef = np.zeros(0, dtype=complex)
    resid = b.copy()
    history = [float(bnorm)]
    done = bool(bnorm == 0)
    it = 0
    while not done and it < min(opts.omp_sparsity, m):
        it += 1
        corr = np.abs(op.adjoint(resid))
        corr[support] = -1.0
        j = int(np.argmax(corr))
        support.append(j)
        cols = np.hstack([cols, op.columns([j])])
        coef, *_ = np.linalg.lstsq(cols, b, rcond=None)
        resid = b - cols @ coef
        history.append(float(np.linalg.norm(resid)))
        done = history[-1] <= opts.tol * bnorm
    s_hat = np.zeros(n, dtype=complex)
    s_hat[support] = coef
    res = float(np.linalg.norm(b - op.forward(s_hat)))
    est = SpectrumEstimate(s_hat, res, it, Solver.OMP, True, z.sample_rate_hz, history)
    _log_diag(est)
    return est


SOLVERS = {Solver.BP: solve_bp, Solver.LASSO: solve_lasso, Solver.OMP: solve_omp}


def recover(z: MeasurementRecord, op: RecoveryOperator | None = None, solver: Solver | str = Solver.BP,
            opts: SolverOptions = SolverOptions()) -> SpectrumEstimate:
    op = RecoveryOperator.for_record(z) if op is None else op
    return SOLVERS[Solver(solver.upper() if isinstance(solver, str) else solver)](z, op, opts)
