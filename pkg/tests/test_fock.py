import math

import numpy as np
import pytest

from kerrlock.errors import GuardError
from kerrlock.fock import (
    FockSpace,
    LaserSpec,
    PolaritonSpec,
    annihilation,
    apply_liouvillian,
    coherent_dm,
    creation,
    default_n_cut,
    fock_dm,
    kerr_hamiltonian,
    lindblad_dissipator,
    liouvillian_matrix,
    lock_hamiltonian,
    number,
    phase_diffused_dm,
    saturation_term,
)

rng = np.random.default_rng(20240611)


def random_rho(dim, support=None, rng=rng):
    support = dim if support is None else support
    X = rng.normal(size=(support, support)) + 1j * rng.normal(size=(support, support))
    r = X @ X.conj().T
    rho = np.zeros((dim, dim), complex)
    rho[:support, :support] = r / np.trace(r)
    return rho


def random_specs():
    return [
        LaserSpec(3.0, 1.0, 1.0, 0.1, 50.0),
        LaserSpec(0.7, 0.0, 1.3, 2.0, 0.5),
        PolaritonSpec(0.4, 0.3, 0.9, 0.2, 0.5, 1.5, 3.0),
        PolaritonSpec(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    ]


# --- ladder, Kerr and lock operators --------------------------------------


def test_fock_space_rejects_bad_cutoff():
    with pytest.raises(ValueError):
        FockSpace(0)
    with pytest.raises(ValueError):
        FockSpace(2.5)


def test_annihilation_small_cutoffs():
    np.testing.assert_array_equal(annihilation(1), [[0, 1], [0, 0]])
    assert annihilation(2)[1, 2] == pytest.approx(1.41421, abs=1e-5)


def test_number_operator():
    a = annihilation(3)
    np.testing.assert_allclose(creation(3) @ a, np.diag([0, 1, 2, 3]), atol=1e-15)
    np.testing.assert_allclose(number(3), np.diag([0, 1, 2, 3]))


def test_kerr_hamiltonian_entries():
    H = kerr_hamiltonian(5, 2.0)
    assert H[3, 3] == pytest.approx(6.0)
    H = kerr_hamiltonian(5, 7.3)
    assert H[0, 0] == 0 and H[1, 1] == 0
    # matches (U/2) a^dag a^dag a a
    a = annihilation(5)
    ad = a.conj().T
    np.testing.assert_allclose(H, 0.5 * 7.3 * ad @ ad @ a @ a, atol=1e-12)


def test_kerr_commutator_element():
    H = kerr_hamiltonian(5, 2.0)
    rho = random_rho(6)
    C = H @ rho - rho @ H
    assert C[3, 1] == pytest.approx(6.0 * rho[3, 1])


def test_lock_hamiltonian():
    np.testing.assert_array_equal(lock_hamiltonian(4, 0.0), np.zeros((5, 5)))
    np.testing.assert_allclose(lock_hamiltonian(1, 1.0), [[0, -1j], [1j, 0]])
    for n, K in ((3, 0.4), (12, 50.0)):
        H = lock_hamiltonian(n, K)
        np.testing.assert_allclose(H, H.conj().T, atol=0)


# --- dissipator and saturation -------------------------------------------


def test_dissipator_on_fock_one():
    a = annihilation(3)
    out = lindblad_dissipator(a, fock_dm(3, 1))
    expected = 2 * fock_dm(3, 1) - 2 * fock_dm(3, 0)
    np.testing.assert_allclose(out, expected, atol=1e-14)
    np.testing.assert_allclose(lindblad_dissipator(a, fock_dm(3, 0)), 0, atol=1e-15)


def test_dissipator_trace_zero_random():
    for _ in range(20):
        O = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        rho = random_rho(6)
        assert abs(np.trace(lindblad_dissipator(O, rho))) < 1e-12


def test_dissipator_shape_mismatch():
    with pytest.raises(ValueError):
        lindblad_dissipator(np.eye(3), np.eye(4))


def test_saturation_zero_and_hermitian():
    rho = random_rho(8)
    np.testing.assert_array_equal(saturation_term(7, 0.0, rho), 0)
    S = saturation_term(7, 1.7, rho)
    np.testing.assert_allclose(S, S.conj().T, atol=1e-12)


def test_saturation_on_vacuum_independent_evaluation():
    # explicit term-by-term products on a 3-level space
    n = 2
    a = np.array([[0, 1, 0], [0, 0, math.sqrt(2)], [0, 0, 0]], complex)
    ad = a.T.conj()
    rho = np.diag([1, 0, 0]).astype(complex)
    aad = a @ ad
    t1 = rho @ aad @ aad
    t2 = 3 * aad @ rho @ aad
    t3 = -4 * ad @ rho @ a @ ad @ a
    head = t1 + t2 + t3
    np.testing.assert_allclose(t1, np.diag([1, 0, 0]))
    np.testing.assert_allclose(t2, np.diag([3, 0, 0]))
    np.testing.assert_allclose(t3, np.diag([0, -4, 0]))
    by_hand = (8 / 8) * (head + head.conj().T)
    got = saturation_term(n, 8.0, rho)
    np.testing.assert_allclose(got, by_hand, atol=1e-14)
    np.testing.assert_allclose(got, np.diag([8, -8, 0]), atol=1e-14)


def test_saturation_population_rates():
    # diagonal action: B (n+1)^2 p_n - B n^2 p_{n-1}, away from the truncation edge
    p = rng.random(12)
    p[-3:] = 0
    out = np.real(np.diag(saturation_term(11, 0.9, np.diag(p).astype(complex))))
    n = np.arange(12)
    expected = 0.9 * ((n + 1) ** 2 * p - n ** 2 * np.concatenate([[0], p[:-1]]))
    np.testing.assert_allclose(out[:-1], expected[:-1], atol=1e-13)


# --- full generator ----------------------------------------------------------


def test_single_loss_channel():
    spec = LaserSpec(0.0, 0.0, 2.0)
    out = apply_liouvillian(spec, fock_dm(3, 1))
    np.testing.assert_allclose(out, -2 * fock_dm(3, 1) + 2 * fock_dm(3, 0), atol=1e-14)


def test_kerr_commutator_vanishes_on_diagonal():
    p = np.diag(rng.random(9)).astype(complex)
    with_U = apply_liouvillian(LaserSpec(0.5, 0.0, 1.0, kerr=3.0), p)
    without = apply_liouvillian(LaserSpec(0.5, 0.0, 1.0), p)
    np.testing.assert_allclose(with_U, without, atol=1e-14)


def test_polariton_gain_grows_photon_number():
    spec = PolaritonSpec(gamma1=0.1, gamma2=0.1, delta1=1.0, delta2=0.0, gamma0=0.2)
    rho = fock_dm(20, 0)
    nop = number(20)
    n0 = np.real(np.trace(rho @ nop))
    dt = 1e-3
    for _ in range(200):
        rho = rho + dt * apply_liouvillian(spec, rho)
    assert np.real(np.trace(rho @ nop)) > n0 + 0.1


@pytest.mark.parametrize("spec", random_specs())
def test_liouvillian_matrix_consistent(spec):
    dim = 8
    L = liouvillian_matrix(spec, dim - 1)
    Ls = liouvillian_matrix(spec, dim - 1, sparse=True)
    for _ in range(20):
        rho = random_rho(dim)
        ref = apply_liouvillian(spec, rho).ravel()
        assert np.max(np.abs(L @ rho.ravel() - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))
        assert np.max(np.abs(Ls @ rho.ravel() - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_liouvillian_dense_guard():
    with pytest.raises(GuardError):
        liouvillian_matrix(LaserSpec(1, 0, 1), 81)
    assert liouvillian_matrix(LaserSpec(1, 0, 1), 81, sparse=True).shape == (82 ** 2, 82 ** 2)


def test_pure_loss_null_vector_is_vacuum():
    L = liouvillian_matrix(LaserSpec(0, 0, 1.0), 6)
    np.testing.assert_allclose(L @ fock_dm(6, 0).ravel(), 0, atol=1e-15)
    ev = np.linalg.eigvals(L)
    assert np.min(np.abs(ev)) < 1e-12


@pytest.mark.parametrize("spec", [
    LaserSpec(0.6, 0.0, 1.0, 0.3, 0.8),
    LaserSpec(2.0, 0.0, 1.0),
    PolaritonSpec(0.4, 0.3, 0.9, 0.2, 0.5, 1.5, 3.0),
    PolaritonSpec(0.1, 0.2, 1.0, 0.0, 0.3, 10.0, 5.0),
])
def test_no_growing_mode_for_lindblad_specs(spec):
    for n_cut in (4, 7, 10):
        ev = np.linalg.eigvals(liouvillian_matrix(spec, n_cut))
        assert ev.real.max() <= 1e-9


def test_saturating_laser_grows_above_small_cutoffs():
    # the saturation term is not of Lindblad form: births turn negative above n = gain/saturation
    spec = LaserSpec(3.0, 1.0, 1.0)
    assert np.linalg.eigvals(liouvillian_matrix(spec, 4)).real.max() <= 1e-9
    assert np.linalg.eigvals(liouvillian_matrix(spec, 10)).real.max() > 1.0


# --- properties ----------------------------------------------------------------


def test_hermiticity_random_trials():
    local = np.random.default_rng(7)
    specs = random_specs()
    for trial in range(100):
        spec = specs[trial % len(specs)]
        rho = random_rho(9, rng=local)
        out = apply_liouvillian(spec, rho)
        assert np.max(np.abs(out - out.conj().T)) <= 1e-12 * max(1.0, np.max(np.abs(out)))


def test_trace_preserved_away_from_edge():
    local = np.random.default_rng(11)
    for spec in random_specs():
        for _ in range(10):
            rho = random_rho(16, support=10, rng=local)
            assert abs(np.trace(apply_liouvillian(spec, rho))) <= 1e-10


def test_diagonal_stays_diagonal_under_kerr():
    spec = LaserSpec(0.5, 0.0, 1.0, kerr=4.0)
    rho = np.diag(np.exp(-np.arange(15) / 2.0)).astype(complex)
    rho /= np.trace(rho)
    dt = 1e-3
    for _ in range(500):
        rho = rho + dt * apply_liouvillian(spec, rho)
    assert np.max(np.abs(rho - np.diag(np.diag(rho)))) <= 1e-12


def test_default_n_cut_and_states():
    assert default_n_cut(LaserSpec(3, 1, 1)) == math.ceil(2 + 6 * math.sqrt(2) + 10)
    rho = coherent_dm(40, 1.5 + 0.5j)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    pd = phase_diffused_dm(40, math.sqrt(2))
    assert np.allclose(pd, np.diag(np.diag(pd)))
    assert np.real(np.sum(np.arange(41) * np.diag(pd))) == pytest.approx(2.0, abs=1e-10)
