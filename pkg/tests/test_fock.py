import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bohmfermion.dirac import synthesize_values, ModeCoefficients
from bohmfermion.fock import (MAX_DIMENSION, Coupling, FockBasis, FockState, HamiltonianSpec,
                              antiparticle_density_expectation, apply_ladder, basis_state,
                              build_fock_basis, build_hamiltonian, evolve, ladder_matrix,
                              number_operator, vacuum, wavefunction)


@pytest.fixture(scope="module")
def fb():
    return build_fock_basis([0, 1], [0, 1])


def ops(fb):
    return [("b", i) for i in range(fb.n_p_modes)] + [("d", j) for j in range(fb.n_a_modes)]


def test_canonical_anticommutators(fb):
    eye = np.eye(fb.dim)
    for o1, i in ops(fb):
        A = ladder_matrix(fb, o1, i)
        assert np.array_equal(A.T, ladder_matrix(fb, o1 + "+", i))
        for o2, j in ops(fb):
            B = ladder_matrix(fb, o2, j)
            Bd = B.T
            target = eye if (o1, i) == (o2, j) else 0 * eye
            assert np.array_equal(A @ Bd + Bd @ A, target)
            assert np.array_equal(A @ B + B @ A, 0 * eye)


def test_pauli_exclusion(fb):
    s = apply_ladder(vacuum(fb), "b+", 0)
    assert apply_ladder(s, "b+", 0).norm() == 0
    assert apply_ladder(vacuum(fb), "d", 1).norm() == 0


def test_ordering_sign(fb):
    # d+_0 b+_0 |0> = - b+_0 d+_0 |0>
    s = apply_ladder(apply_ladder(vacuum(fb), "b+", 0), "d+", 0)
    t = apply_ladder(apply_ladder(vacuum(fb), "d+", 0), "b+", 0)
    assert np.allclose(s.c, -t.c)
    assert np.allclose(t.c, basis_state(fb, [0], [0]).c)


def test_number_operators(fb):
    NP = number_operator(fb, "P")
    ref = sum(ladder_matrix(fb, "b+", i) @ ladder_matrix(fb, "b", i) for i in range(2))
    assert np.allclose(NP, ref)


def test_dimension_guard():
    with pytest.raises(ValueError):
        FockBasis(list(range(15)), list(range(15)))
    small = FockBasis(list(range(30)), list(range(30)), cap=2)
    assert small.dim == 1 + 60 + 60 * 59 // 2 < MAX_DIMENSION


def test_cap_truncates(fb):
    capped = build_fock_basis([0, 1], [0, 1], 1)
    assert capped.dim == 5 and capped.sectors() == [(0, 0), (0, 1), (1, 0)]


def ham(E=(1.0, 2.0), couplings=(), kind="free"):
    return HamiltonianSpec(kind, list(E), list(E), couplings)


def test_hamiltonian_hermitian_and_rejects_bad_coupling(fb):
    H = build_hamiltonian(fb, ham(couplings=(Coupling(0, 1, 0.3 + 0.1j),), kind="quadratic-mixing"))
    assert np.array_equal(H.matrix, H.matrix.conj().T)
    with pytest.raises(ValueError):
        build_hamiltonian(fb, ham(couplings=(Coupling(0, 0, 0.3, 0.2),), kind="quadratic-mixing"))
    with pytest.raises(ValueError):
        build_hamiltonian(fb, ham(couplings=(Coupling(0, 0, 0.3),), kind="free"))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), t=st.floats(0.0, 20.0))
def test_unitarity_and_charge(fb, seed, t):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=fb.dim) + 1j * rng.normal(size=fb.dim)
    s = FockState(fb, c / np.linalg.norm(c))
    H = build_hamiltonian(fb, ham(couplings=(Coupling(0, 1, 0.7), Coupling(1, 0, 0.2j)),
                                   kind="quadratic-mixing"))
    out = evolve(s, H, t)
    assert abs(out.norm() - 1) < 1e-12
    Q = number_operator(fb, "P") - number_operator(fb, "A")
    q = lambda x: np.real(np.vdot(x, Q @ x))
    assert abs(q(out.c) - q(s.c)) < 1e-12


def test_free_moduli_constant(fb):
    rng = np.random.default_rng(3)
    c = rng.normal(size=fb.dim) + 1j * rng.normal(size=fb.dim)
    s = FockState(fb, c / np.linalg.norm(c))
    H = build_hamiltonian(fb, ham())
    for t in np.linspace(0, 10, 11):
        assert np.max(np.abs(np.abs(evolve(s, H, t).c) - np.abs(s.c))) < 1e-12


def rabi(lam, Ep, Ea, t):
    # closed form for the vacuum <-> pair two-level system
    delta = 0.5 * (Ep + Ea)
    om = np.sqrt(delta**2 + abs(lam) ** 2)
    vac = np.exp(-1j * delta * t) * (np.cos(om * t) + 1j * delta / om * np.sin(om * t))
    pair = -1j * lam / om * np.sin(om * t) * np.exp(-1j * delta * t)
    return vac, pair


@pytest.mark.parametrize("lam", [0.5, 0.3 - 0.4j])
def test_mixing_matches_rabi(lam):
    fb = build_fock_basis([0], [0])
    H = build_hamiltonian(fb, HamiltonianSpec("quadratic-mixing", [1.2], [0.8],
                                              (Coupling(0, 0, lam),)))
    for t in (0.3, 1.7, 6.0):
        s = evolve(vacuum(fb), H, t)
        vac, pair = rabi(lam, 1.2, 0.8, t)
        assert abs(s.c[fb.index(0)] - vac) < 1e-10
        assert abs(s.c[fb.index(fb.mask_of([0], [0]))] - pair) < 1e-10


def test_evolve_timestamp(fb):
    s = FockState(fb, vacuum(fb).c, 1.5)
    assert evolve(s, build_hamiltonian(fb, ham()), 2.0).t == 3.5


def test_json_round_trip(fb):
    s = basis_state(fb, [1], [0], 0.25)
    back = FockState.from_json(json.loads(json.dumps(s.to_json())))
    assert np.array_equal(back.c, s.c) and back.t == s.t
    assert back.basis.masks.tolist() == fb.masks.tolist()


def test_one_particle_wave_is_mode_sum(thin_basis):
    idx = [thin_basis.index((1, 0, 0, 1)), thin_basis.index((-2, 0, 0, -1))]
    fb = build_fock_basis(idx, [], 1)
    c = np.zeros(fb.dim, complex)
    c[fb.index(fb.mask_of([0]))] = 0.6
    c[fb.index(fb.mask_of([1]))] = 0.8j
    w = wavefunction(FockState(fb, c), thin_basis, 1, 0)
    x = np.random.default_rng(0).uniform(0, 2 * np.pi, size=(10, 1, 3))
    coeffs = ModeCoefficients.zeros(thin_basis)
    coeffs.b[idx] = [0.6, 0.8j]
    assert np.allclose(w(x, 0.4), synthesize_values(thin_basis, coeffs, x[:, 0], 0.4))


def test_two_body_wick_sign(thin_basis):
    # raw Wick value for b+_0 d+_0 |0> at slot order (x, y) is - u(x) v*(y)
    ip, ia = thin_basis.index((1, 0, 0, 1)), thin_basis.index((2, 0, 0, 1))
    fb = build_fock_basis([ip], [ia])
    w = wavefunction(basis_state(fb, [0], [0]), thin_basis, 1, 1)
    pts = np.array([[[0.3, 0, 0], [1.1, 0, 0]]])
    ux = synthesize_values(thin_basis, ModeCoefficients.from_dict(thin_basis, {(1, 0, 0, 1): 1}),
                           pts[:, 0], 0.0)
    vy = synthesize_values(thin_basis, ModeCoefficients.from_dict(thin_basis, None, {(2, 0, 0, 1): 1}),
                           pts[:, 1], 0.0).conj()
    assert np.allclose(w(pts, 0.0), -ux[:, :, None] * vy[:, None, :])


def test_positron_density_two_ways(thin_basis):
    idx = [thin_basis.index(m) for m in [(0, 0, 0, 1), (1, 0, 0, -1), (-3, 0, 0, 1)]]
    fb = build_fock_basis([], idx, 1)
    rng = np.random.default_rng(4)
    c = np.zeros(fb.dim, complex)
    c[fb.sector_indices(0, 1)] = rng.normal(size=3) + 1j * rng.normal(size=3)
    s = FockState(fb, c / np.linalg.norm(c))
    x = rng.uniform(0, 2 * np.pi, size=(30, 3))
    op, wave = antiparticle_density_expectation(s, thin_basis, x, 0.7)
    assert np.max(np.abs(op - wave)) < 1e-10 * wave.max()
    with pytest.raises(ValueError):
        antiparticle_density_expectation(vacuum(fb), thin_basis, x, 0.0)
