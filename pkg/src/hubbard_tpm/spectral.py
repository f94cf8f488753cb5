"""Dense eigendecomposition and Gibbs-state bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.special import logsumexp

MAX_DENSE_DIM = 4900


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


@dataclass(frozen=True)
class ThermalEnsemble:
    weights: np.ndarray
    log_Z: float
    beta: float

    def density_matrix(self, spec: SpectralDecomposition) -> np.ndarray:
        V = spec.eigenvectors
        return (V * self.weights) @ V.T


def decompose(H, max_dim: int = MAX_DENSE_DIM) -> SpectralDecomposition:
    """Full eigendecomposition of a real symmetric operator (sparse or dense)."""
    dense = H.toarray() if sparse.issparse(H) else np.asarray(H, dtype=float)
    n = dense.shape[0]
    if dense.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {dense.shape}")
    if n > max_dim:
        raise ValueError(f"dimension {n} exceeds dense cap {max_dim}")
    if not np.array_equal(dense, dense.T):
        asym = np.abs(dense - dense.T).max()
        if asym > 1e-12 * max(1.0, np.abs(dense).max()):
            raise ValueError(f"operator is not symmetric (max asymmetry {asym:.3e})")
        dense = 0.5 * (dense + dense.T)
    try:
        evals, evecs = scipy.linalg.eigh(dense, driver="evd", overwrite_a=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed to converge: {exc}") from exc
    return SpectralDecomposition(evals, evecs)


def gibbs_weights(spec: SpectralDecomposition, beta: float) -> ThermalEnsemble:
    if not beta > 0:
        raise ValueError("beta must be positive")
    x = -beta * spec.eigenvalues
    log_Z = float(logsumexp(x))
    w = np.exp(x - log_Z)
    return ThermalEnsemble(w / w.sum(), log_Z, beta)


def free_energy_difference(spec0: SpectralDecomposition, spec_f: SpectralDecomposition, beta: float) -> float:
    """Delta F = -(log Z_f - log Z_0) / beta."""
    if spec0.dim != spec_f.dim:
        raise ValueError("decompositions live on different sectors")
    return -(float(logsumexp(-beta * spec_f.eigenvalues)) - float(logsumexp(-beta * spec0.eigenvalues))) / beta


def degenerate_blocks(eigenvalues: np.ndarray, tol: float = 1e-9) -> list[slice]:
    """Runs of (ascending) eigenvalues closer than ``tol``, longer than one."""
    blocks, start = [], 0
    for i in range(1, len(eigenvalues) + 1):
        if i == len(eigenvalues) or eigenvalues[i] - eigenvalues[i - 1] > tol:
            if i - start > 1:
                blocks.append(slice(start, i))
            start = i
    return blocks


def min_gap(eigenvalues: np.ndarray) -> float:
    if len(eigenvalues) < 2:
        return float("inf")
    return float(np.diff(eigenvalues).min())


def resolve_symmetry(spec: SpectralDecomposition, op, tol: float = 1e-9) -> tuple[SpectralDecomposition, np.ndarray]:
    """Rotate degenerate eigenvectors so they also diagonalise a commuting ``op``.

    Returns the rotated decomposition and the ``op`` eigenvalue of each column.
    """
    V = spec.eigenvectors.copy()
    OV = np.asarray(op @ V)
    labels = np.einsum("ij,ij->j", V, OV)
    for block in degenerate_blocks(spec.eigenvalues, tol):
        Vb = V[:, block]
        sub = Vb.T @ OV[:, block]
        w, R = np.linalg.eigh(0.5 * (sub + sub.T))
        V[:, block] = Vb @ R
        labels[block] = w
    return SpectralDecomposition(spec.eigenvalues, V), labels
