import numpy as np
import pytest
from scipy import sparse

import oracles
from hubbard_tpm.hamiltonian import (
    HubbardParams,
    build_drive,
    build_static,
    hamiltonian_at,
    ramp_profile,
    sector_operators,
)
from hubbard_tpm.basis import half_filled_sector
from hubbard_tpm.spectral import decompose


@pytest.mark.parametrize("L", [2, 4])
@pytest.mark.parametrize("U", [0.0, 3.0])
def test_matches_full_fock_construction(L, U):
    H0, D = oracles.sector_hamiltonian(L, U)
    ops = sector_operators(L)
    assert np.array_equal(ops.static(U).toarray(), H0)
    assert np.array_equal(ops.drive.toarray(), D)


@pytest.mark.parametrize("L", [2, 4, 6])
def test_operators_are_exactly_symmetric(L):
    ops = sector_operators(L)
    for op in (ops.static(4.0), ops.drive, ops.spin_squared):
        assert (op - op.T).count_nonzero() == 0


def test_ramp_profile():
    assert np.allclose(ramp_profile(4, 10.0), 10.0 / 3 * np.array([1, 2, 3, 4]))
    assert np.isclose(ramp_profile(6, 10.0)[-1] - ramp_profile(6, 10.0)[0], 10.0 * 5 / 5)
    with pytest.raises(ValueError):
        ramp_profile(1, 10.0)


def test_params_validation():
    for bad in (dict(L=3), dict(L=0), dict(L=4, J=0), dict(L=4, U=-1), dict(L=4, tau=-1), dict(L=4, beta=0)):
        with pytest.raises(ValueError):
            HubbardParams(**bad)


def test_build_static_and_drive_agree_with_cache():
    p = HubbardParams(L=4, U=2.5)
    basis = half_filled_sector(4)
    ops = sector_operators(4)
    assert (build_static(basis, p) - ops.static(2.5)).count_nonzero() == 0
    assert (build_drive(basis, p) - ops.drive).count_nonzero() == 0
    with pytest.raises(ValueError):
        build_static(half_filled_sector(2), p)


@pytest.fixture(scope="module")
def l4():
    ops = sector_operators(4)
    return ops.static(3.0), ops.drive


def test_endpoints(l4):
    Hs, D = l4
    p = HubbardParams(L=4, U=3.0, tau=2.0)
    assert (hamiltonian_at(0.0, p, Hs, D) - Hs).count_nonzero() == 0
    finals = [hamiltonian_at(tau, HubbardParams(L=4, U=3.0, tau=tau), Hs, D) for tau in (0.5, 1.0, 7.3)]
    finals.append(hamiltonian_at(0.0, HubbardParams(L=4, U=3.0, tau=0.0), Hs, D, final=True))
    for H in finals[1:]:
        assert np.array_equal(H.toarray(), finals[0].toarray())


def test_linearity(l4):
    Hs, D = l4
    p = HubbardParams(L=4, U=3.0, tau=2.0)
    for t in (0.3, 1.0, 1.7):
        diff = (hamiltonian_at(t, p, Hs, D) - Hs).toarray()
        assert np.allclose(diff, (t / 2.0) * D.toarray(), atol=1e-14)


def test_time_domain_errors(l4):
    Hs, D = l4
    with pytest.raises(ValueError):
        hamiltonian_at(2.5, HubbardParams(L=4, tau=2.0), Hs, D)
    with pytest.raises(ValueError):
        hamiltonian_at(0.1, HubbardParams(L=4, tau=0.0), Hs, D)


def test_null_drive_is_static():
    ops = sector_operators(4, A=0.0)
    p = HubbardParams(L=4, U=1.0, tau=1.0, A=0.0)
    Hs = ops.static(1.0)
    for t in (0.0, 0.5, 1.0):
        assert np.array_equal(hamiltonian_at(t, p, Hs, ops.drive).toarray(), Hs.toarray())


@pytest.mark.parametrize("U", [0.0, 1.0, 4.0, 10.0])
def test_dimer_spectrum(U):
    eigs = decompose(sector_operators(2).static(U)).eigenvalues
    assert np.allclose(eigs, oracles.dimer_levels(U), atol=1e-12)


@pytest.mark.parametrize("L", [2, 4, 6])
def test_free_fermion_spectrum(L):
    eigs = decompose(sector_operators(L).static(0.0)).eigenvalues
    assert np.allclose(eigs, oracles.free_fermion_levels(L), atol=1e-10)


def test_uniform_shift_moves_spectrum_rigidly():
    # adding c to every site potential shifts every level by c * N
    ops = sector_operators(4)
    N, c = 4, 0.7
    Hf = ops.static(2.0) + ops.drive
    shifted = Hf + sparse.identity(ops.basis.dim) * (c * N)
    e0 = decompose(Hf).eigenvalues
    e1 = decompose(shifted).eigenvalues
    assert np.allclose(e1 - e0, c * N, atol=1e-12)
    assert np.isclose(np.var(e1), np.var(e0))


def test_total_spin_commutes_and_has_expected_multiplets():
    for L, mult in ((2, {0: 3, 2: 1}), (4, {0: 20, 2: 15, 6: 1})):
        ops = sector_operators(L)
        S2 = ops.spin_squared.toarray()
        for H in (ops.static(3.0).toarray(), ops.drive.toarray()):
            assert np.abs(S2 @ H - H @ S2).max() < 1e-12
        w = np.rint(np.linalg.eigvalsh(S2)).astype(int)
        values, counts = np.unique(w, return_counts=True)
        assert dict(zip(values.tolist(), counts.tolist())) == mult
