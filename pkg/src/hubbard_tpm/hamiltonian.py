"""Driven Hubbard chain operators on a fixed sector.

    H(t) = -J sum_{j,s} (c+_{j,s} c_{j+1,s} + h.c.) + U sum_j n_{j,up} n_{j,down}
           + (t / tau) sum_j Delta_j (n_{j,up} + n_{j,down})

with the linear ramp Delta_j = A * j / (L - 1) on 1-based sites j = 1..L, so
the potential drop across the chain at t = tau is exactly A.

Operators are real ``scipy.sparse.csr_matrix`` objects.  All energies are in
units of J, times in units of 1/J.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .basis import DOWN, SPINS, UP, SectorBasis, apply_hop, apply_string, half_filled_sector

SparseOperator = sparse.csr_matrix


@dataclass(frozen=True)
class HubbardParams:
    L: int
    U: float = 0.0
    tau: float = 0.0
    J: float = 1.0
    A: float = 10.0
    beta: float = 0.4

    def __post_init__(self):
        if self.L < 2 or self.L % 2:
            raise ValueError(f"L must be an even integer >= 2, got {self.L}")
        if not self.J > 0:
            raise ValueError("J must be positive")
        if self.U < 0:
            raise ValueError("U must be non-negative")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    def site_potentials(self) -> np.ndarray:
        """Final-time potential Delta_j on internal sites 0..L-1."""
        return ramp_profile(self.L, self.A)

    def to_dict(self) -> dict:
        return asdict(self)


def ramp_profile(L: int, A: float) -> np.ndarray:
    if L < 2:
        raise ValueError("the linear ramp needs at least two sites")
    j = np.arange(1, L + 1, dtype=float)
    return A * j / (L - 1)


def _check_basis(basis: SectorBasis, params: HubbardParams) -> None:
    if basis.L != params.L:
        raise ValueError(f"basis has L={basis.L} but params have L={params.L}")


def build_hopping(basis: SectorBasis, J: float = 1.0) -> SparseOperator:
    """-J times the nearest-neighbour hopping, assembled from ``apply_hop``."""
    rows, cols, vals = [], [], []
    for col, state in enumerate(basis.states):
        for spin in SPINS:
            for j in range(basis.L - 1):
                for direction in ("right", "left"):
                    res = apply_hop(state, basis.L, j, spin, direction)
                    if res is None:
                        continue
                    new, sign = res
                    rows.append(basis.index_of(new))
                    cols.append(col)
                    vals.append(-J * sign)
    n = basis.dim
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def double_occupancy_counts(basis: SectorBasis) -> np.ndarray:
    """Number of doubly occupied sites per basis state."""
    n_up, n_down = basis.occupations()
    return (n_up * n_down).sum(axis=1)


def drive_diagonal(basis: SectorBasis, A: float) -> np.ndarray:
    n_up, n_down = basis.occupations()
    return (n_up + n_down) @ ramp_profile(basis.L, A)


def build_static(basis: SectorBasis, params: HubbardParams) -> SparseOperator:
    _check_basis(basis, params)
    hopping = build_hopping(basis, params.J)
    return _static_from_parts(hopping, double_occupancy_counts(basis), params.U)


def _static_from_parts(hopping: SparseOperator, docc: np.ndarray, U: float) -> SparseOperator:
    H = hopping + sparse.diags(U * docc, format="csr")
    H.sort_indices()
    return H.tocsr()


def build_drive(basis: SectorBasis, params: HubbardParams) -> SparseOperator:
    _check_basis(basis, params)
    return sparse.diags(drive_diagonal(basis, params.A), format="csr")


def final_hamiltonian(H_static: SparseOperator, H_drive: SparseOperator) -> SparseOperator:
    return (H_static + H_drive).tocsr()


def hamiltonian_at(t: float, params: HubbardParams, H_static: SparseOperator, H_drive: SparseOperator,
                   final: bool = False) -> SparseOperator:
    """H(t) = H_static + (t / tau) H_drive.

    For ``tau == 0`` only the endpoints exist: ``t = 0`` gives H_0, and
    ``final=True`` gives H_f.  The final Hamiltonian is always built by the
    same expression so it is bitwise independent of tau.
    """
    tau = params.tau
    if final or (tau > 0 and t == tau):
        return final_hamiltonian(H_static, H_drive)
    if tau == 0:
        if t != 0:
            raise ValueError("sudden quench: only t = 0 (or final=True) is defined")
        return H_static.copy()
    if not 0 <= t <= tau:
        raise ValueError(f"t={t} outside [0, tau={tau}]")
    return (H_static + (t / tau) * H_drive).tocsr()


@dataclass(frozen=True)
class SectorOperators:
    """U-independent pieces of a half-filled chain, cached per (L, J, A)."""

    basis: SectorBasis
    hopping: SparseOperator
    docc: np.ndarray
    drive: SparseOperator
    spin_squared: SparseOperator

    def static(self, U: float) -> SparseOperator:
        return _static_from_parts(self.hopping, self.docc, U)


@lru_cache(maxsize=8)
def sector_operators(L: int, J: float = 1.0, A: float = 10.0) -> SectorOperators:
    basis = half_filled_sector(L)
    params = HubbardParams(L=L, J=J, A=A)
    return SectorOperators(
        basis=basis,
        hopping=build_hopping(basis, J),
        docc=double_occupancy_counts(basis),
        drive=build_drive(basis, params),
        spin_squared=build_total_spin_squared(basis),
    )


def build_total_spin_squared(basis: SectorBasis) -> SparseOperator:
    """S^2 = sum_ij [Sz_i Sz_j + (S+_i S-_j + S-_i S+_j) / 2] on the sector."""
    L = basis.L
    rows, cols, vals = [], [], []
    for col, state in enumerate(basis.states):
        sz = [0.5 * (((state.up >> j) & 1) - ((state.down >> j) & 1)) for j in range(L)]
        rows.append(col)
        cols.append(col)
        vals.append(sum(sz) ** 2)
        for i in range(L):
            for j in range(L):
                # S+_i S-_j = c+_{i up} c_{i down} c+_{j down} c_{j up}, plus its mirror
                for ops in (((i, UP, 1), (i, DOWN, 0), (j, DOWN, 1), (j, UP, 0)),
                            ((i, DOWN, 1), (i, UP, 0), (j, UP, 1), (j, DOWN, 0))):
                    res = apply_string(state, L, ops)
                    if res is None:
                        continue
                    new, sign = res
                    rows.append(basis.index_of(new))
                    cols.append(col)
                    vals.append(0.5 * sign)
    n = basis.dim
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
