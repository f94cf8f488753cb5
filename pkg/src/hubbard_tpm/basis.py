"""Fixed-particle-number Fock sector of a spinful open chain.

Sites are 0-based internally (site ``j`` here is site ``j + 1`` in the usual
1-based labelling of the chain).  A spin species is stored as an ``L``-bit
integer whose bit ``j`` is set when site ``j`` is occupied.

Fermionic operators are ordered site-major within a species with every
up-spin mode before every down-spin mode, i.e. mode index ``j`` for up and
``L + j`` for down.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

UP = "up"
DOWN = "down"
SPINS = (UP, DOWN)

MAX_SECTOR_DIM = 250_000
MAX_SITES = 14


class SectorTooLarge(ValueError):
    """Requested sector exceeds the configured dimension cap."""


@dataclass(frozen=True, order=True)
class BasisState:
    up: int
    down: int

    def bits(self, spin: str) -> int:
        return self.up if spin == UP else self.down

    def replace(self, spin: str, bits: int) -> "BasisState":
        if spin == UP:
            return BasisState(bits, self.down)
        return BasisState(self.up, bits)


def configurations(L: int, n: int) -> np.ndarray:
    """All ``L``-bit patterns with ``n`` set bits, ascending."""
    out = [sum(1 << j for j in occ) for occ in combinations(range(L), n)]
    return np.array(sorted(out), dtype=np.int64)


@dataclass(frozen=True)
class SectorBasis:
    """States of the (L, n_up, n_down) sector in lexicographic (up, down) order.

    Because the ordering is lexicographic on the pair and every up pattern is
    combined with every down pattern, the ordinal of a state factorises as
    ``i_up * n_down_configs + i_down``.
    """

    L: int
    n_up: int
    n_down: int
    up_configs: np.ndarray = field(repr=False)
    down_configs: np.ndarray = field(repr=False)
    _up_index: dict = field(repr=False, compare=False)
    _down_index: dict = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return len(self.up_configs) * len(self.down_configs)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.up_configs), len(self.down_configs)

    def __len__(self) -> int:
        return self.dim

    @property
    def states(self) -> list[BasisState]:
        return [BasisState(int(u), int(d)) for u in self.up_configs for d in self.down_configs]

    def state(self, index: int) -> BasisState:
        iu, id_ = divmod(index, len(self.down_configs))
        return BasisState(int(self.up_configs[iu]), int(self.down_configs[id_]))

    def index_of(self, state: BasisState) -> int:
        try:
            iu = self._up_index[state.up]
            id_ = self._down_index[state.down]
        except KeyError:
            raise KeyError(f"{state} is not in sector {(self.L, self.n_up, self.n_down)}") from None
        return iu * len(self.down_configs) + id_

    def __contains__(self, state: BasisState) -> bool:
        return state.up in self._up_index and state.down in self._down_index

    def occupations(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-state occupation arrays ``(n_up, n_down)`` of shape (dim, L)."""
        sites = np.arange(self.L)
        nu = (self.up_configs[:, None] >> sites) & 1
        nd = (self.down_configs[:, None] >> sites) & 1
        n_up = np.repeat(nu, len(self.down_configs), axis=0)
        n_down = np.tile(nd, (len(self.up_configs), 1))
        return n_up.astype(float), n_down.astype(float)


def enumerate_sector(L: int, n_up: int, n_down: int, max_dim: int = MAX_SECTOR_DIM) -> SectorBasis:
    if L < 1 or L > MAX_SITES:
        raise ValueError(f"L must be in [1, {MAX_SITES}], got {L}")
    if not (0 <= n_up <= L and 0 <= n_down <= L):
        raise ValueError(f"particle numbers ({n_up}, {n_down}) out of range for L={L}")
    dim = comb(L, n_up) * comb(L, n_down)
    if dim > max_dim:
        raise SectorTooLarge(f"sector dimension {dim} exceeds cap {max_dim}")
    up = configurations(L, n_up)
    down = configurations(L, n_down)
    return SectorBasis(
        L=L,
        n_up=n_up,
        n_down=n_down,
        up_configs=up,
        down_configs=down,
        _up_index={int(b): i for i, b in enumerate(up)},
        _down_index={int(b): i for i, b in enumerate(down)},
    )


def half_filled_sector(L: int, max_dim: int = MAX_SECTOR_DIM) -> SectorBasis:
    if L % 2:
        raise ValueError("half filling with Sz = 0 needs an even number of sites")
    return enumerate_sector(L, L // 2, L // 2, max_dim=max_dim)


def _mode(L: int, j: int, spin: str) -> int:
    return j if spin == UP else L + j


def _occupied_between(state: BasisState, L: int, lo: int, hi: int) -> int:
    """Number of occupied modes with index strictly between ``lo`` and ``hi``."""
    full = state.up | (state.down << L)
    mask = ((1 << hi) - 1) & ~((1 << (lo + 1)) - 1)
    return (full & mask).bit_count()


def hop(state: BasisState, L: int, src: int, dst: int, spin: str):
    """Apply c^dagger_{dst, spin} c_{src, spin}.

    Returns ``(new_state, sign)`` or ``None`` when the result vanishes.
    """
    bits = state.bits(spin)
    if not (bits >> src) & 1:
        return None
    if src == dst:
        return state, 1
    if (bits >> dst) & 1:
        return None
    a, b = _mode(L, src, spin), _mode(L, dst, spin)
    lo, hi = min(a, b), max(a, b)
    # the source mode is emptied first, so only modes strictly between count
    sign = -1 if _occupied_between(state, L, lo, hi) % 2 else 1
    return state.replace(spin, bits ^ (1 << src) ^ (1 << dst)), sign


def apply_hop(state: BasisState, L: int, j: int, spin: str, direction: str):
    """Nearest-neighbour hop across bond (j, j+1), open boundary.

    ``direction="right"`` moves a particle j -> j+1 (c^dagger_{j+1} c_j);
    ``"left"`` moves j+1 -> j (c^dagger_j c_{j+1}).
    """
    if not 0 <= j < L - 1:
        raise ValueError(f"bond index {j} outside [0, {L - 2}]")
    if spin not in SPINS:
        raise ValueError(f"unknown spin {spin!r}")
    if direction == "right":
        return hop(state, L, j, j + 1, spin)
    if direction == "left":
        return hop(state, L, j + 1, j, spin)
    raise ValueError(f"direction must be 'left' or 'right', got {direction!r}")


def double_occupancy(state: BasisState, j: int) -> int:
    return (state.up >> j) & (state.down >> j) & 1


def apply_string(state: BasisState, L: int, ops) -> tuple[BasisState, int] | None:
    """Apply a product of single-mode operators, rightmost first.

    ``ops`` is a sequence of ``(site, spin, dagger)`` tuples; the Jordan-Wigner
    sign of each factor counts occupied modes with a lower mode index.
    """
    full = state.up | (state.down << L)
    sign = 1
    for site, spin, dagger in reversed(tuple(ops)):
        mode = _mode(L, site, spin)
        occ = (full >> mode) & 1
        if occ == dagger:
            return None
        if (full & ((1 << mode) - 1)).bit_count() % 2:
            sign = -sign
        full ^= 1 << mode
    mask = (1 << L) - 1
    return BasisState(full & mask, full >> L), sign
