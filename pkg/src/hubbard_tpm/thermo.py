"""Entropy production, trace distances and fluctuation-dissipation diagnostics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .propagator import PropagatedSet
from .spectral import SpectralDecomposition, ThermalEnsemble, degenerate_blocks, gibbs_weights, resolve_symmetry

MAX_DISCARDED = 1e-9


@dataclass
class DensityMatrix:
    matrix: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def purity(self) -> float:
        m = self.matrix
        return float(np.vdot(m, m).real)

    def eigenvalues(self) -> np.ndarray:
        return scipy.linalg.eigvalsh(self.matrix, driver="evd")

    def check(self, tol: float = 1e-10) -> None:
        m = self.matrix
        if abs(self.trace() - 1) > tol:
            raise ValueError(f"trace {self.trace()} differs from 1")
        if np.abs(m - m.conj().T).max() > tol:
            raise ValueError("matrix is not Hermitian")


@dataclass
class ThermoRecord:
    mean_work: float
    variance: float
    skew3: float
    skew_std: float
    delta_F: float
    sigma: float
    dissipation: float
    d_eq: float
    d_adiab: float
    fdr_ratio: float
    lr_gap: float

    def to_dict(self) -> dict:
        return asdict(self)


def evolved_state(prop: PropagatedSet, spec0: SpectralDecomposition | None = None,
                  ensemble0: ThermalEnsemble | None = None) -> DensityMatrix:
    """rho_tau = sum_n p_n |psi_n(tau)><psi_n(tau)| over the retained set."""
    if prop.discarded_weight > MAX_DISCARDED:
        raise ValueError(
            f"discarded initial weight {prop.discarded_weight:.2e} exceeds {MAX_DISCARDED:g}; "
            "lower weight_cutoff for state-level quantities")
    p = prop.weights if ensemble0 is None else ensemble0.weights[prop.indices]
    psi = prop.vectors
    rho = (psi * (p / p.sum())) @ psi.conj().T
    return DensityMatrix(0.5 * (rho + rho.conj().T))


def equilibrium_state(spec: SpectralDecomposition, beta: float) -> DensityMatrix:
    ens = gibbs_weights(spec, beta)
    return DensityMatrix(ens.density_matrix(spec).astype(np.complex128))


def von_neumann_entropy(rho: DensityMatrix) -> float:
    lam = np.clip(rho.eigenvalues(), 0.0, None)
    lam = lam[lam > 0]
    return float(-np.sum(lam * np.log(lam)))


def energy_expectation(rho: DensityMatrix, spec: SpectralDecomposition) -> float:
    """Tr(H rho) with H = V diag(eps) V^T."""
    V = spec.eigenvectors
    pops = np.einsum("im,im->m", V, (rho.matrix @ V).real)
    return float(np.dot(spec.eigenvalues, pops))


def entropy_production(rho_tau: DensityMatrix, spec_f: SpectralDecomposition, beta: float) -> float:
    """S(rho_tau || rho_eq) = -S(rho_tau) + beta Tr(H_f rho_tau) + log Z_f."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    log_Z = gibbs_weights(spec_f, beta).log_Z
    return -von_neumann_entropy(rho_tau) + beta * energy_expectation(rho_tau, spec_f) + log_Z


def relative_entropy(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Tr rho (ln rho - ln sigma) from eigendecompositions; sigma must be full rank."""
    lr, vr = scipy.linalg.eigh(rho.matrix)
    ls, vs = scipy.linalg.eigh(sigma.matrix)
    if ls.min() <= 0:
        raise ValueError("sigma is singular")
    lr = np.clip(lr, 0.0, None)
    safe = np.where(lr > 0, lr, 1.0)
    term1 = float(np.sum(lr * np.log(safe)))
    log_sigma = (vs * np.log(ls)) @ vs.conj().T
    term2 = float(np.trace(rho.matrix @ log_sigma).real)
    return term1 - term2


def trace_distance(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    if rho.dim != sigma.dim:
        raise ValueError("density matrices have different dimensions")
    diff = rho.matrix - sigma.matrix
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.abs(scipy.linalg.eigvalsh(diff, driver="evd")).sum())


def adiabatic_reference(ensemble0: ThermalEnsemble, spec_f: SpectralDecomposition,
                        degeneracy_tol: float = 1e-9) -> DensityMatrix:
    """Initial Gibbs populations transported to final eigenstates by energy rank."""
    V = spec_f.eigenvectors
    rho = (V * ensemble0.weights) @ V.T
    blocks = degenerate_blocks(spec_f.eigenvalues, degeneracy_tol)
    meta = {"degenerate_final_levels": len(blocks) > 0,
            "degenerate_blocks": [(b.start, b.stop) for b in blocks]}
    return DensityMatrix(rho.astype(np.complex128), meta)


def adiabatic_reference_resolved(ensemble0: ThermalEnsemble, spec0: SpectralDecomposition,
                                 spec_f: SpectralDecomposition, conserved,
                                 degeneracy_tol: float = 1e-9) -> DensityMatrix:
    """Energy-rank transport restricted to each eigenspace of a conserved operator.

    Levels of different symmetry sectors may cross along the ramp without
    mixing, so ranks are only compared between states carrying the same label
    (for example the same total spin).  The conserved operator must have
    integer eigenvalues, as S^2 = S(S+1) does.
    """
    rot0, lab0 = resolve_symmetry(spec0, conserved, degeneracy_tol)
    rotf, labf = resolve_symmetry(spec_f, conserved, degeneracy_tol)
    key0, keyf = np.rint(lab0), np.rint(labf)
    if max(np.abs(lab0 - key0).max(), np.abs(labf - keyf).max()) > 1e-6:
        raise ValueError("conserved-operator labels are not integers; mixed near-degenerate levels?")
    if sorted(key0.tolist()) != sorted(keyf.tolist()):
        raise ValueError("initial and final spectra carry different symmetry labels")
    weights = np.empty(spec_f.dim)
    for k in np.unique(key0):
        src = np.flatnonzero(key0 == k)
        dst = np.flatnonzero(keyf == k)
        weights[dst] = ensemble0.weights[src]
    V = rotf.eigenvectors
    rho = (V * weights) @ V.T
    blocks = degenerate_blocks(spec_f.eigenvalues, degeneracy_tol)
    meta = {"degenerate_final_levels": len(blocks) > 0, "sectors": len(np.unique(key0))}
    return DensityMatrix(rho.astype(np.complex128), meta)


def fdr_ratio(sigma: float, variance: float, beta: float) -> float:
    """2 <Sigma> / (beta^2 Var W); NaN when the variance vanishes."""
    if not variance > 0:
        return float("nan")
    return 2.0 * sigma / (beta * beta * variance)


def linear_response_gap(mean_work: float, delta_F: float, variance: float, beta: float) -> float:
    """<W> - dF - beta Var(W) / 2."""
    return mean_work - delta_F - 0.5 * beta * variance
