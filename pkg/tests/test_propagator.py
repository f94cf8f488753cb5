import numpy as np
import pytest

import oracles
from hubbard_tpm.hamiltonian import HubbardParams, sector_operators
from hubbard_tpm.propagator import PropagationConfig, PropagationError, propagate
from hubbard_tpm.spectral import decompose, gibbs_weights


def _setup(L, U, A=10.0):
    ops = sector_operators(L, A=A)
    Hs = ops.static(U)
    return Hs, ops.drive, decompose(Hs), decompose(Hs + ops.drive)


def _probs(prop, spec_f):
    return np.abs(spec_f.eigenvectors.T @ prop.vectors) ** 2


def test_sudden_quench_is_identity():
    Hs, D, spec0, spec_f = _setup(4, 2.0)
    prop = propagate(spec0, Hs, D, HubbardParams(L=4, U=2.0, tau=0.0))
    assert np.array_equal(prop.vectors, spec0.eigenvectors[:, prop.indices].astype(complex))


def test_null_drive_is_stationary():
    Hs, D, spec0, spec_f = _setup(4, 3.0, A=0.0)
    params = HubbardParams(L=4, U=3.0, tau=2.0, A=0.0)
    prop = propagate(spec0, Hs, D, params, PropagationConfig(tol_observable=1e-10))
    overlaps = spec0.eigenvectors.T @ prop.vectors
    # psi_n(tau) = exp(-i eps_n tau) |n>
    phases = np.exp(-1j * spec0.eigenvalues[prop.indices] * params.tau)
    assert np.allclose(overlaps[prop.indices, np.arange(len(prop.indices))], phases, atol=1e-8)
    assert np.allclose(np.abs(overlaps) ** 2, np.eye(spec0.dim)[:, prop.indices], atol=1e-8)


@pytest.mark.parametrize("scheme", ["cf4", "midpoint", "rk4"])
def test_dimer_matches_rk4_oracle(scheme):
    # L=2, U=0, tau=1: transition probabilities against a dense fixed-step RK4 (dt = 1e-4)
    Hs, D, spec0, spec_f = _setup(2, 0.0)
    params = HubbardParams(L=2, U=0.0, tau=1.0)
    cfg = PropagationConfig(scheme=scheme, tol_observable=1e-8, max_halvings=14)
    prop = propagate(spec0, Hs, D, params, cfg, spec_f=spec_f)
    Uop = oracles.rk4_propagator(Hs.toarray(), D.toarray(), 1.0, 1e-4)
    ref = np.abs(spec_f.eigenvectors.T @ Uop @ spec0.eigenvectors) ** 2
    assert np.abs(_probs(prop, spec_f) - ref[:, prop.indices]).max() < 1e-7


def test_gram_matrix_and_norms():
    Hs, D, spec0, spec_f = _setup(4, 4.0)
    prop = propagate(spec0, Hs, D, HubbardParams(L=4, U=4.0, tau=2.5), spec_f=spec_f)
    G = prop.vectors.conj().T @ prop.vectors
    assert np.abs(G - np.eye(len(prop.indices))).max() < 1e-8
    assert prop.norm_drift < 1e-10
    assert np.allclose(_probs(prop, spec_f).sum(axis=0), 1, atol=1e-9)


def test_tau_continuity():
    Hs, D, spec0, spec_f = _setup(4, 3.0)
    p0 = _probs(propagate(spec0, Hs, D, HubbardParams(L=4, U=3.0, tau=0.0)), spec_f)
    p1 = _probs(propagate(spec0, Hs, D, HubbardParams(L=4, U=3.0, tau=1e-3), spec_f=spec_f), spec_f)
    assert np.abs(p0 - p1).max() < 1e-3


@pytest.mark.parametrize("U", [0.5, 5.0])
def test_adiabatic_limit_maps_by_rank(U):
    Hs, D, spec0, spec_f = _setup(2, U)
    prop = propagate(spec0, Hs, D, HubbardParams(L=2, U=U, tau=1000.0), spec_f=spec_f)
    assert np.abs(_probs(prop, spec_f) - np.eye(4)).max() < 1e-2


def test_step_halving_changes_probabilities_below_tolerance():
    Hs, D, spec0, spec_f = _setup(4, 6.0)
    params = HubbardParams(L=4, U=6.0, tau=2.5)
    cfg = PropagationConfig(tol_observable=1e-8)
    prop = propagate(spec0, Hs, D, params, cfg, spec_f=spec_f)
    n = int(prop.n_steps.max())
    finer = propagate(spec0, Hs, D, params, PropagationConfig(dt=params.tau / (2 * n), tol_observable=1e-8),
                      spec_f=spec_f)
    assert np.abs(_probs(prop, spec_f) - _probs(finer, spec_f)).max() < 1e-8


def test_schemes_agree_at_l4():
    Hs, D, spec0, spec_f = _setup(4, 2.0)
    params = HubbardParams(L=4, U=2.0, tau=1.0)
    ps = [_probs(propagate(spec0, Hs, D, params, PropagationConfig(scheme=s, tol_observable=1e-9 if s != "midpoint" else 1e-8,
                                                                       max_halvings=14), spec_f=spec_f), spec_f)
          for s in ("cf4", "midpoint", "rk4")]
    assert np.abs(ps[0] - ps[1]).max() < 1e-8
    assert np.abs(ps[0] - ps[2]).max() < 1e-8


def test_threads_do_not_change_results():
    Hs, D, spec0, spec_f = _setup(4, 2.0)
    params = HubbardParams(L=4, U=2.0, tau=1.0)
    a = propagate(spec0, Hs, D, params, PropagationConfig(batch_size=8), spec_f=spec_f)
    b = propagate(spec0, Hs, D, params, PropagationConfig(batch_size=8, threads=3), spec_f=spec_f)
    assert np.array_equal(a.vectors, b.vectors)


def test_weight_cutoff_reports_discarded_weight():
    Hs, D, spec0, spec_f = _setup(4, 2.0)
    params = HubbardParams(L=4, U=2.0, tau=0.5)
    ens = gibbs_weights(spec0, params.beta)
    cut = 1e-2
    prop = propagate(spec0, Hs, D, params, PropagationConfig(weight_cutoff=cut), ensemble0=ens)
    skipped = ens.weights < cut
    assert skipped.any()
    assert np.isclose(prop.discarded_weight, ens.weights[skipped].sum())
    assert prop.discarded_weight < cut * spec0.dim
    assert set(prop.indices) == set(np.flatnonzero(~skipped))


def test_config_validation():
    for bad in (dict(scheme="euler"), dict(dt=0.0), dict(tol_unitary=0), dict(tol_observable=-1),
                dict(weight_cutoff=1.0), dict(batch_size=0)):
        with pytest.raises(ValueError):
            PropagationConfig(**bad)


def test_non_convergence_is_an_error():
    Hs, D, spec0, spec_f = _setup(4, 2.0)
    cfg = PropagationConfig(scheme="midpoint", dt=0.5, max_halvings=1, tol_observable=1e-12)
    with pytest.raises(PropagationError):
        propagate(spec0, Hs, D, HubbardParams(L=4, U=2.0, tau=5.0), cfg, spec_f=spec_f)
