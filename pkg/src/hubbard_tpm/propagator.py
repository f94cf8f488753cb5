"""Finite-time propagation of the thermally occupied eigenstates of H_0.

Every retained eigenvector |n> of H_0 is integrated through
i d|psi>/dt = H(t)|psi> from t = 0 to tau.  Each step applies one or two
exponentials of an instantaneous Hamiltonian, each evaluated with a Chebyshev
expansion whose spectral window comes from Weyl bounds on
H_static + s * H_drive (the drive is diagonal, so the bounds are exact
consequences of the H_0 spectrum and the extreme drive values).

The step count is doubled until no transition probability (or, without a
final eigenbasis, no amplitude) changes by more than ``tol_observable``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import jv

from ._kernels import cheb_series
from .hamiltonian import HubbardParams
from .spectral import SpectralDecomposition, ThermalEnsemble, gibbs_weights

SCHEMES = ("midpoint", "cf4", "rk4")

_SQ3 = math.sqrt(3.0)
_CF4_NODES = (0.5 - _SQ3 / 6, 0.5 + _SQ3 / 6)
_CF4_A = ((3 + 2 * _SQ3) / 12, (3 - 2 * _SQ3) / 12)


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PropagationConfig:
    """Integrator settings.

    ``dt`` is the initial step; ``None`` picks one from the spectral width
    (about 1.5 / radius, capped at tau / 4).  The step count is then doubled
    until observables change by less than ``tol_observable``.
    """

    scheme: str = "cf4"
    dt: float | None = None
    tol_unitary: float = 1e-10
    tol_observable: float = 1e-8
    weight_cutoff: float = 1e-12
    batch_size: int = 32
    max_halvings: int = 8
    cheb_tol: float = 1e-15
    threads: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.tol_unitary > 0 and self.tol_observable > 0):
            raise ValueError("tolerances must be positive")
        if not 0 <= self.weight_cutoff < 1:
            raise ValueError("weight_cutoff must lie in [0, 1)")
        if self.batch_size < 1 or self.threads < 1:
            raise ValueError("batch_size and threads must be >= 1")


@dataclass
class PropagatedSet:
    indices: np.ndarray
    vectors: np.ndarray
    weights: np.ndarray
    discarded_weight: float
    n_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    matvecs: int = 0
    norm_drift: float = 0.0

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]


class _Drive:
    """Off-diagonal CSR part plus static/drive diagonals of H(s)."""

    def __init__(self, H_static, H_drive, eig_lo: float, eig_hi: float):
        H_static = sparse.csr_matrix(H_static)
        H_drive = sparse.csr_matrix(H_drive)
        if (H_drive - sparse.diags(H_drive.diagonal())).count_nonzero():
            raise ValueError("drive operator must be diagonal")
        self.full_static = H_static
        self.d_static = H_static.diagonal().astype(float)
        self.d_drive = H_drive.diagonal().astype(float)
        off = (H_static - sparse.diags(self.d_static)).tocsr()
        off.eliminate_zeros()
        off.sort_indices()
        self.indptr = off.indptr.astype(np.int64)
        self.indices = off.indices.astype(np.int64)
        self.data = off.data.astype(float)
        self.eig_lo, self.eig_hi = eig_lo, eig_hi
        self.drive_lo = float(self.d_drive.min()) if len(self.d_drive) else 0.0
        self.drive_hi = float(self.d_drive.max()) if len(self.d_drive) else 0.0
        self.H_drive = H_drive

    def window(self, s: float) -> tuple[float, float]:
        """Interval containing the spectrum of H_static + s H_drive."""
        if s >= 0:
            lo, hi = self.eig_lo + s * self.drive_lo, self.eig_hi + s * self.drive_hi
        else:
            lo, hi = self.eig_lo + s * self.drive_hi, self.eig_hi + s * self.drive_lo
        pad = 1e-7 * (1.0 + hi - lo)
        return lo - pad, hi + pad

    def matvec(self, psi: np.ndarray, s: float) -> np.ndarray:
        return self.full_static @ psi + s * (self.d_drive[:, None] * psi)


def _cheb_coefficients(x: float, tol: float) -> np.ndarray:
    """(2 - delta_k0) (-i)^k J_k(x), truncated once |J_k(x)| falls below tol."""
    kmax = int(x + 20 + 4 * x ** (1 / 3)) + 1
    k = np.arange(kmax + 1)
    bessel = jv(k, x)
    tail = np.abs(bessel) < tol
    tail &= k > x
    n = int(np.argmax(tail)) + 1 if tail.any() else kmax + 1
    coef = bessel[:n] * (-1j) ** k[:n]
    coef[1:] *= 2.0
    return coef


def expm_action(drive: _Drive, s: float, weight: float, psi: np.ndarray, tol: float) -> tuple[np.ndarray, int]:
    """exp(-i * weight * (H_static + s H_drive)) @ psi and the number of matvecs."""
    lo, hi = drive.window(s)
    c = 0.5 * (hi + lo)
    r = max(0.5 * (hi - lo), 1e-12)
    coef = _cheb_coefficients(r * weight, tol)
    x0 = np.ascontiguousarray(psi).view(np.float64)
    acc = np.empty_like(x0)
    dshift = drive.d_static + s * drive.d_drive - c
    cheb_series(drive.indptr, drive.indices, drive.data, dshift, 1.0 / r,
                np.ascontiguousarray(coef.real), np.ascontiguousarray(coef.imag), x0, acc)
    out = acc.view(np.complex128)
    out *= np.exp(-1j * c * weight)
    return out, len(coef) - 1


def _evolve(drive: _Drive, psi: np.ndarray, tau: float, n_steps: int, scheme: str, tol: float):
    h = tau / n_steps
    matvecs = 0
    psi = np.ascontiguousarray(psi, dtype=np.complex128)
    for step in range(n_steps):
        t = step * h
        if scheme == "midpoint":
            psi, k = expm_action(drive, (t + 0.5 * h) / tau, h, psi, tol)
            matvecs += k
        elif scheme == "cf4":
            t1, t2 = t + _CF4_NODES[0] * h, t + _CF4_NODES[1] * h
            # right factor first: weights (a1, a2) on (H(t1), H(t2)); each pair sums to 1/2
            for w1, w2 in (_CF4_A, _CF4_A[::-1]):
                s_eff = (w1 * t1 + w2 * t2) / ((w1 + w2) * tau)
                psi, k = expm_action(drive, s_eff, h * (w1 + w2), psi, tol)
                matvecs += k
        else:
            psi = _rk4_step(drive, psi, t, h, tau)
            matvecs += 4
    return psi, matvecs


def _rk4_step(drive: _Drive, psi, t, h, tau):
    def f(tt, y):
        return -1j * drive.matvec(y, tt / tau)

    k1 = f(t, psi)
    k2 = f(t + h / 2, psi + h / 2 * k1)
    k3 = f(t + h / 2, psi + h / 2 * k2)
    k4 = f(t + h, psi + h * k3)
    return psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def default_steps(drive: _Drive, tau: float) -> int:
    lo, hi = drive.window(1.0)
    lo0, hi0 = drive.window(0.0)
    radius = 0.25 * ((hi - lo) + (hi0 - lo0))
    return max(4, math.ceil(tau * radius / 1.5))


def propagate(spec0: SpectralDecomposition, H_static, H_drive, params: HubbardParams,
              cfg: PropagationConfig | None = None, ensemble0: ThermalEnsemble | None = None,
              spec_f: SpectralDecomposition | None = None) -> PropagatedSet:
    """Evolve every eigenvector of H_0 with p_n >= weight_cutoff up to tau.

    When ``spec_f`` is given, convergence is judged on |<m|psi_n>|^2 directly;
    otherwise on the amplitude bound 2|d psi| + |d psi|^2, which dominates it.
    """
    cfg = cfg or PropagationConfig()
    if ensemble0 is None:
        ensemble0 = gibbs_weights(spec0, params.beta)
    p = ensemble0.weights
    keep = np.flatnonzero(p >= cfg.weight_cutoff)
    discarded = float(p.sum() - p[keep].sum())
    V0 = spec0.eigenvectors[:, keep].astype(np.complex128)
    if params.tau == 0:
        return PropagatedSet(keep, V0, p[keep], discarded, np.zeros(len(keep), dtype=int))

    drive = _Drive(H_static, H_drive, float(spec0.eigenvalues[0]), float(spec0.eigenvalues[-1]))
    if cfg.dt is not None:
        n0 = max(1, math.ceil(params.tau / cfg.dt - 1e-9))
    else:
        n0 = default_steps(drive, params.tau)
    Vf = spec_f.eigenvectors if spec_f is not None else None

    def change(a, b):
        if Vf is not None:
            pa = np.abs(Vf.T @ a) ** 2
            pb = np.abs(Vf.T @ b) ** 2
            return float(np.abs(pa - pb).max())
        d = np.linalg.norm(a - b, axis=0).max()
        return float(2 * d + d * d)

    def run_batch(cols):
        block = V0[:, cols]
        n = n0
        coarse, mv = _evolve(drive, block, params.tau, n, cfg.scheme, cfg.cheb_tol)
        total = mv
        for _ in range(cfg.max_halvings):
            n *= 2
            fine, mv = _evolve(drive, block, params.tau, n, cfg.scheme, cfg.cheb_tol)
            total += mv
            if change(coarse, fine) < cfg.tol_observable:
                return fine, n, total
            coarse = fine
        raise PropagationError(
            f"no convergence to {cfg.tol_observable:g} after {cfg.max_halvings} halvings "
            f"({n} steps, scheme {cfg.scheme})")

    batches = [np.arange(i, min(i + cfg.batch_size, len(keep))) for i in range(0, len(keep), cfg.batch_size)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(run_batch, batches))
    else:
        results = [run_batch(b) for b in batches]

    vectors = np.empty_like(V0)
    n_steps = np.empty(len(keep), dtype=int)
    matvecs = 0
    for cols, (vec, n, mv) in zip(batches, results):
        vectors[:, cols] = vec
        n_steps[cols] = n
        matvecs += mv * len(cols)
    drift = float(np.abs(np.linalg.norm(vectors, axis=0) - 1.0).max()) if len(keep) else 0.0
    if drift > cfg.tol_unitary:
        raise PropagationError(f"norm drift {drift:.3e} exceeds tol_unitary {cfg.tol_unitary:g}")
    return PropagatedSet(keep, vectors, p[keep], discarded, n_steps, matvecs, drift)
