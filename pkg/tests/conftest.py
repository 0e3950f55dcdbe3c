import numpy as np
import pytest

from bohmfermion.dirac import Lattice, ModeCoefficients, build_mode_basis


@pytest.fixture(scope="session")
def lattice():
    return Lattice.create(2 * np.pi, 64, (True, False, False))


@pytest.fixture(scope="session")
def basis(lattice):
    return build_mode_basis(lattice, 1.0, 5)


@pytest.fixture(scope="session")
def thin_basis():
    # unit transverse edges keep amplitudes O(1)
    lat = Lattice.create([2 * np.pi, 1.0, 1.0], 64, (True, False, False))
    return build_mode_basis(lat, 1.0, 5)


def random_coefficients(basis, seed, parts="PA"):
    rng = np.random.default_rng(seed)
    n = len(basis)
    b = (rng.normal(size=n) + 1j * rng.normal(size=n)) if "P" in parts else np.zeros(n, complex)
    d = (rng.normal(size=n) + 1j * rng.normal(size=n)) if "A" in parts else np.zeros(n, complex)
    return ModeCoefficients(b, d)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
