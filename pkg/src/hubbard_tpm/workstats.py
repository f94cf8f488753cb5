"""Two-point-measurement work statistics.

P(W) = sum_{n,m} p_n^0 p_{m|n} delta(W - (eps_m^f - eps_n^0))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .propagator import PropagatedSet
from .spectral import SpectralDecomposition

MERGE_TOL = 1e-9
PROB_FLOOR = 1e-14


@dataclass
class TransitionTable:
    """Rows are retained initial eigenstates n, columns final eigenstates m."""

    eps0: np.ndarray
    eps_f: np.ndarray
    weights0: np.ndarray
    probs: np.ndarray
    indices: np.ndarray
    discarded_weight: float

    @property
    def row_sums(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    def pair_weights(self) -> np.ndarray:
        return self.weights0[:, None] * self.probs

    def pair_work(self) -> np.ndarray:
        return self.eps_f[None, :] - self.eps0[self.indices][:, None]


@dataclass
class WorkDistribution:
    support: np.ndarray
    probs: np.ndarray
    merge_tol: float
    raw_pair_count: int
    dropped_mass: float = 0.0
    total_pairs: int = 0

    def __len__(self) -> int:
        return len(self.support)

    def rows(self):
        return zip(self.support.tolist(), self.probs.tolist())


def transition_matrix(prop: PropagatedSet, spec_f: SpectralDecomposition,
                      spec0: SpectralDecomposition | None = None, eps0: np.ndarray | None = None) -> TransitionTable:
    """p_{m|n} = |<m|psi_n(tau)>|^2 for every retained n."""
    if prop.dim != spec_f.dim:
        raise ValueError("propagated vectors and final eigenbasis have different dimensions")
    if eps0 is None:
        if spec0 is None:
            raise ValueError("need initial energies (spec0 or eps0)")
        eps0 = spec0.eigenvalues
    amps = spec_f.eigenvectors.T @ prop.vectors
    probs = (amps.real ** 2 + amps.imag ** 2).T
    return TransitionTable(np.asarray(eps0), spec_f.eigenvalues, prop.weights, probs,
                           prop.indices, prop.discarded_weight)


def build_distribution(table: TransitionTable, merge_tol: float = MERGE_TOL,
                       prob_floor: float = PROB_FLOOR) -> WorkDistribution:
    """Accumulate pair weights on W = eps_m - eps_n, merging values closer than merge_tol.

    Pairs below ``prob_floor`` are dropped and the rest renormalised; the lost
    mass (including weight discarded before propagation) is recorded.
    """
    if merge_tol < 0 or prob_floor < 0:
        raise ValueError("merge_tol and prob_floor must be non-negative")
    w = table.pair_weights().ravel()
    W = table.pair_work().ravel()
    # every (n, m) pair of the full spectrum, including rows skipped before propagation
    n_pairs = len(table.eps0) * len(table.eps_f)
    keep = w > prob_floor
    raw = int(keep.sum())
    dropped = float(w[~keep].sum()) + table.discarded_weight
    w, W = w[keep], W[keep]
    order = np.argsort(W, kind="stable")
    W, w = W[order], w[order]
    if len(W) == 0:
        raise ValueError("no transition survives the probability floor")
    # a new cluster starts wherever the gap to the previous value exceeds merge_tol
    starts = np.concatenate(([0], np.flatnonzero(np.diff(W) > merge_tol) + 1))
    mass = np.add.reduceat(w, starts)
    centre = np.add.reduceat(w * W, starts) / mass
    mass = mass / mass.sum()
    return WorkDistribution(centre, mass, merge_tol, raw, dropped, total_pairs=n_pairs)


def mean(dist: WorkDistribution) -> float:
    return float(np.dot(dist.probs, dist.support))


def central_moment(dist: WorkDistribution, k: int) -> float:
    mu = mean(dist)
    return float(np.dot(dist.probs, (dist.support - mu) ** k))


def standardized_skewness(dist: WorkDistribution) -> float:
    var = central_moment(dist, 2)
    if var <= 0:
        return float("nan")
    return central_moment(dist, 3) / var ** 1.5


def jarzynski_estimator(dist: WorkDistribution, beta: float) -> float:
    """<exp(-beta W)>, accumulated in the log domain."""
    return float(np.exp(logsumexp(-beta * dist.support, b=dist.probs)))


def jarzynski_residual(dist: WorkDistribution, beta: float, delta_F: float) -> float:
    """|<exp(-beta W)> exp(beta dF) - 1|."""
    log_avg = logsumexp(-beta * dist.support, b=dist.probs)
    return float(abs(np.expm1(log_avg + beta * delta_F)))


def mean_energy_crosscheck(table: TransitionTable, spec0: SpectralDecomposition,
                           H_final, prop: PropagatedSet) -> tuple[float, float]:
    """TPM mean work against Tr(H_f rho_tau) - Tr(H_0 rho_0).

    The second value never touches the final eigenbasis: it applies H_f to the
    propagated vectors in the occupation basis.
    """
    p = table.weights0
    norm = p.sum()
    tpm = float(np.sum(table.pair_weights() * table.pair_work()) / norm)
    psi = prop.vectors
    hf = np.einsum("ij,ij->j", psi.conj(), H_final @ psi).real
    unitary = float(np.dot(p, hf) / norm - np.dot(p, spec0.eigenvalues[prop.indices]) / norm)
    return tpm, unitary
