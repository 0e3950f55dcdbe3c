import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bohmfermion.dirac import (GAMMAS, METRIC, SIGMA, Lattice, Mode, ModeBasis, ModeCoefficients,
                               SpinorField, build_mode_basis, clifford_residual, dealiasing_ok,
                               dirac_residual, evaluate_mode, gram_matrix, project_coefficients,
                               spectral_derivative, synthesize_field)

from conftest import random_coefficients


def test_gamma_anticommutators_exact():
    g = GAMMAS.gamma
    for mu in range(4):
        for nu in range(4):
            anti = g[mu] @ g[nu] + g[nu] @ g[mu]
            assert np.array_equal(anti, 2 * METRIC[mu, nu] * np.eye(4))
    assert clifford_residual() == 0.0


def test_gamma_hermiticity_structure():
    g0 = GAMMAS.gamma[0]
    for mu in range(4):
        # gamma^0 gamma^mu^dagger gamma^0 = gamma^mu
        assert np.allclose(g0 @ GAMMAS.gamma[mu].conj().T @ g0, GAMMAS.gamma[mu])
    for a in GAMMAS.alpha:
        assert np.allclose(a, a.conj().T)


def test_pauli_algebra():
    for i in range(3):
        assert np.allclose(SIGMA[i] @ SIGMA[i], np.eye(2))


def dirac_hamiltonian(k, m):
    a = GAMMAS.alpha[1:]
    return sum(k[i] * a[i] for i in range(3)) + m * GAMMAS.gamma[0]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(-5, 5), spin=st.sampled_from([1, -1]),
       m=st.floats(0.1, 3.0))
def test_mode_spinors_are_energy_eigenvectors(n, spin, m):
    lat = Lattice.create(2 * np.pi, 32, (True, False, False))
    mb = ModeBasis(lat, m, [Mode((n, 0, 0), spin)])
    k, E = mb.k[0], mb.energy[0]
    # independent oracle: plane-wave Dirac Hamiltonian
    H = dirac_hamiltonian(k, m)
    # stored spinors carry the 1/sqrt(V) box normalization
    u, v = mb.u[0] * np.sqrt(lat.volume), mb.v[0] * np.sqrt(lat.volume)
    assert np.allclose(H @ u, E * u, atol=1e-12)
    assert np.allclose(dirac_hamiltonian(-k, m) @ v, -E * v, atol=1e-12)
    assert np.isclose(np.vdot(u, u), 1.0) and np.isclose(np.vdot(v, v), 1.0)


def test_rest_frame_spinors(lattice):
    mb = ModeBasis(lattice, 1.0, [Mode((0, 0, 0), 1)])
    root_v = np.sqrt(lattice.volume)
    assert np.allclose(mb.u[0] * root_v, [1, 0, 0, 0])
    assert np.allclose(mb.v[0] * root_v, [0, 0, 1, 0])


def test_gram_identity(basis):
    G = gram_matrix(basis)
    assert G.shape == (2 * len(basis),) * 2
    assert np.max(np.abs(G - np.eye(len(G)))) < 1e-10


def test_dirac_residual_small(basis):
    c = random_coefficients(basis, 1)
    assert dirac_residual(basis, c, 0.37) < 1e-10 * (1 + np.abs(c.b).max())


def test_coefficient_recovery(basis):
    c = random_coefficients(basis, 2)
    back = project_coefficients(synthesize_field(basis, c, 0.8), basis)
    assert np.allclose(back.b, c.b, atol=1e-12)
    assert np.allclose(back.dstar, c.dstar, atol=1e-12)


def test_dealiasing_rule():
    lat = Lattice.create(2 * np.pi, 22, (True, False, False))
    assert dealiasing_ok(lat, 5)
    assert not dealiasing_ok(Lattice.create(2 * np.pi, 21, (True, False, False)), 5)


def test_massless_zero_mode_rejected(lattice):
    with pytest.raises(ValueError):
        build_mode_basis(lattice, 0.0, 2)


def test_inactive_axis_has_single_point():
    lat = Lattice.create(2 * np.pi, 16, (True, False, True))
    assert lat.shape == (16, 1, 16)


def test_spectral_derivative_of_plane_wave(lattice):
    x = lattice.points()[..., 0]
    f = np.exp(3j * x)
    assert np.allclose(spectral_derivative(f, lattice, 0), 3j * f, atol=1e-12)


def test_mode_phase_time_dependence(basis):
    i = basis.index((2, 0, 0, 1))
    x = basis.lattice.points()
    a = evaluate_mode(basis, i, "P", x, 0.0)
    b = evaluate_mode(basis, i, "P", x, 0.5)
    assert np.allclose(b, a * np.exp(-1j * basis.energy[i] * 0.5))
    c = evaluate_mode(basis, i, "A", x, 0.5)
    assert np.allclose(c, evaluate_mode(basis, i, "A", x, 0.0) * np.exp(1j * basis.energy[i] * 0.5))


def test_json_round_trips(basis):
    mb2 = ModeBasis.from_json(json.loads(json.dumps(basis.to_json())))
    assert np.array_equal(mb2.u, basis.u) and np.array_equal(mb2.k, basis.k)
    f = synthesize_field(basis, random_coefficients(basis, 3), 0.1)
    f2 = SpinorField.from_json(json.loads(json.dumps(f.to_json())))
    assert np.array_equal(f2.values, f.values) and f2.t == f.t


def test_coefficients_from_dict(basis):
    c = ModeCoefficients.from_dict(basis, {(1, 0, 0, 1): 0.5}, {(0, 0, 0, -1): 1j})
    assert c.b[basis.index((1, 0, 0, 1))] == 0.5
    assert c.dstar[basis.index(Mode((0, 0, 0), -1))] == 1j
    with pytest.raises(ValueError):
        ModeCoefficients(np.array([np.nan + 0j]), np.array([0j]))
