"""Dirac gamma algebra, periodic-box plane-wave modes and spinor fields.

Units are hbar = c = 1. The gamma matrices are in the Dirac-Pauli
representation, gamma^0 = diag(1, 1, -1, -1). Plane-wave modes live on the
reciprocal lattice ``k = 2 pi n / L`` of a periodic box and are normalized
so that the lattice quadrature of ``u^dagger u`` over the box is 1.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SIGMA = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=np.complex128,
)
METRIC = np.diag([1.0, -1.0, -1.0, -1.0])


@dataclass(frozen=True)
class GammaSet:
    """Contravariant gamma matrices ``gamma[mu]`` and the Minkowski metric."""

    gamma: np.ndarray
    metric: np.ndarray = METRIC

    @property
    def lower(self) -> np.ndarray:
        """Covariant matrices gamma_mu = eta_{mu nu} gamma^nu."""
        return np.einsum("mn,nab->mab", self.metric, self.gamma)

    @property
    def alpha(self) -> np.ndarray:
        """gamma^0 gamma^mu; ``alpha[0]`` is the identity."""
        return np.einsum("ab,mbc->mac", self.gamma[0], self.gamma)


def dirac_gammas() -> GammaSet:
    zero = np.zeros((2, 2), dtype=np.complex128)
    eye = np.eye(2, dtype=np.complex128)
    g = np.zeros((4, 4, 4), dtype=np.complex128)
    g[0] = np.block([[eye, zero], [zero, -eye]])
    for i in range(3):
        g[i + 1] = np.block([[zero, SIGMA[i]], [-SIGMA[i], zero]])
    return GammaSet(g)


GAMMAS = dirac_gammas()


def clifford_residual(gammas: GammaSet = GAMMAS) -> float:
    """Max entrywise deviation of {gamma^mu, gamma^nu} from 2 eta^{mu nu} I."""
    g = gammas.gamma
    worst = 0.0
    for mu in range(4):
        for nu in range(4):
            anti = g[mu] @ g[nu] + g[nu] @ g[mu]
            target = 2.0 * gammas.metric[mu, nu] * np.eye(4)
            worst = max(worst, float(np.max(np.abs(anti - target))))
    return worst


@dataclass(frozen=True)
class Lattice:
    """Periodic box with ``N[i]`` points along axis i.

    Inactive axes carry a single point, so no momentum is resolved there but
    the quadrature still covers the full box volume.
    """

    L: tuple[float, float, float]
    N: tuple[int, int, int]

    def __post_init__(self):
        if any(l <= 0 for l in self.L):
            raise ValueError(f"box lengths must be positive, got {self.L}")
        if any(n < 1 for n in self.N):
            raise ValueError(f"point counts must be >= 1, got {self.N}")
        if not any(n >= 2 for n in self.N):
            raise ValueError("at least one axis needs N >= 2")

    @classmethod
    def create(cls, L: float | Sequence[float] = 2 * np.pi, N: int = 64,
               active: Sequence[bool] = (True, False, False)) -> "Lattice":
        lengths = (float(L),) * 3 if np.isscalar(L) else tuple(float(x) for x in L)
        counts = tuple(int(N) if a else 1 for a in active)
        if int(N) < 2:
            raise ValueError("active axes need N >= 2")
        return cls(lengths, counts)

    @property
    def active(self) -> tuple[bool, bool, bool]:
        return tuple(n >= 2 for n in self.N)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.N

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.L) / np.asarray(self.N)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.L))

    @property
    def n_points(self) -> int:
        return int(np.prod(self.N))

    def axis(self, i: int) -> np.ndarray:
        return np.arange(self.N[i]) * self.spacing[i]

    def points(self) -> np.ndarray:
        """Grid coordinates, shape ``(N1, N2, N3, 3)``."""
        mesh = np.meshgrid(*(self.axis(i) for i in range(3)), indexing="ij")
        return np.stack(mesh, axis=-1)

    def wavenumbers(self, i: int) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.N[i], d=self.spacing[i])

    def wrap(self, x: np.ndarray) -> np.ndarray:
        return np.mod(x, np.asarray(self.L))

    def to_json(self) -> dict:
        return {"L": list(self.L), "N": list(self.N)}

    @classmethod
    def from_json(cls, d: dict) -> "Lattice":
        return cls(tuple(d["L"]), tuple(d["N"]))


def dealiasing_ok(lattice: Lattice, k_cut: int) -> bool:
    """Quadratic quantities of band-limited fields need N >= 2 (2 k_cut + 1)."""
    return all(n >= 2 * (2 * k_cut + 1) for n in lattice.N if n >= 2)


@dataclass(frozen=True)
class Mode:
    n: tuple[int, int, int]
    spin: int  # twice the spin label, +1 or -1

    @property
    def label(self) -> str:
        s = "+" if self.spin > 0 else "-"
        return f"n=({self.n[0]},{self.n[1]},{self.n[2]}),s={s}"


class ModeBasis:
    """Plane-wave solutions u_{k,s}, v_{k,s} on a lattice.

    ``u[i]`` and ``v[i]`` are the constant 4-spinors of mode ``modes[i]``
    including the ``1/sqrt(V)`` box normalization.
    """

    def __init__(self, lattice: Lattice, mass: float, modes: Sequence[Mode]):
        if mass < 0:
            raise ValueError("mass must be non-negative")
        self.lattice = lattice
        self.mass = float(mass)
        self.modes = tuple(modes)
        if not self.modes:
            raise ValueError("mode basis is empty")
        L = np.asarray(lattice.L)
        self.k = np.array([2 * np.pi * np.asarray(m.n) / L for m in self.modes])
        self.energy = np.sqrt(np.sum(self.k**2, axis=1) + self.mass**2)
        if np.any(self.energy == 0):
            raise ValueError("massless zero mode (m=0, k=0) has no spinor solution")
        norm = 1.0 / np.sqrt(lattice.volume)
        self.u = np.array([_u_spinor(k, E, self.mass, m.spin)
                           for k, E, m in zip(self.k, self.energy, self.modes)]) * norm
        self.v = np.array([_v_spinor(k, E, self.mass, m.spin)
                           for k, E, m in zip(self.k, self.energy, self.modes)]) * norm
        self._index = {m: i for i, m in enumerate(self.modes)}

    def __len__(self) -> int:
        return len(self.modes)

    def index(self, mode: Mode | tuple) -> int:
        if not isinstance(mode, Mode):
            *n, s = mode
            mode = Mode(tuple(int(x) for x in n), int(s))
        try:
            return self._index[mode]
        except KeyError:
            raise KeyError(f"mode {mode.label} not in basis") from None

    def phase(self, i: int, x: np.ndarray, t: float, kind: str = "P") -> np.ndarray:
        """e^{i(k.x - E t)} for P, its conjugate for A."""
        arg = np.tensordot(np.asarray(x, dtype=float), self.k[i], axes=([-1], [0]))
        arg = arg - self.energy[i] * t
        return np.exp(1j * arg) if kind == "P" else np.exp(-1j * arg)

    def to_json(self) -> dict:
        return {
            "lattice": self.lattice.to_json(),
            "mass": self.mass,
            "modes": [{"n": list(m.n), "spin": m.spin} for m in self.modes],
            "energy": self.energy.tolist(),
            "u": complex_to_json(self.u),
            "v": complex_to_json(self.v),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ModeBasis":
        modes = [Mode(tuple(m["n"]), int(m["spin"])) for m in d["modes"]]
        return cls(Lattice.from_json(d["lattice"]), d["mass"], modes)


def _u_spinor(k, E, m, spin):
    chi = np.array([1, 0] if spin > 0 else [0, 1], dtype=np.complex128)
    sk = np.einsum("i,iab->ab", k, SIGMA)
    lower = sk @ chi / (E + m)
    return np.sqrt((E + m) / (2 * E)) * np.concatenate([chi, lower])


def _v_spinor(k, E, m, spin):
    eta = np.array([1, 0] if spin > 0 else [0, 1], dtype=np.complex128)
    sk = np.einsum("i,iab->ab", k, SIGMA)
    upper = sk @ eta / (E + m)
    return np.sqrt((E + m) / (2 * E)) * np.concatenate([upper, eta])


def build_mode_basis(lattice: Lattice, mass: float, k_cut: int) -> ModeBasis:
    """All modes with ``|n_i| <= k_cut`` on the active axes, both spins."""
    if k_cut < 0:
        raise ValueError("k_cut must be >= 0")
    ranges = [range(-k_cut, k_cut + 1) if a else range(1) for a in lattice.active]
    modes = [Mode(tuple(n), s) for n in itertools.product(*ranges) for s in (1, -1)]
    return ModeBasis(lattice, mass, modes)


@dataclass(frozen=True)
class SpinorField:
    lattice: Lattice
    values: np.ndarray  # (N1, N2, N3, 4) complex
    t: float = 0.0

    def __post_init__(self):
        if self.values.shape != (*self.lattice.shape, 4):
            raise ValueError(f"field shape {self.values.shape} does not match lattice")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite entries")

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.lattice.cell_volume))

    def __add__(self, other: "SpinorField") -> "SpinorField":
        return SpinorField(self.lattice, self.values + other.values, self.t)

    def __sub__(self, other: "SpinorField") -> "SpinorField":
        return SpinorField(self.lattice, self.values - other.values, self.t)

    def to_json(self) -> dict:
        return {"lattice": self.lattice.to_json(), "t": self.t,
                "shape": list(self.values.shape), "values": complex_to_json(self.values)}

    @classmethod
    def from_json(cls, d: dict) -> "SpinorField":
        values = complex_from_json(d["values"]).reshape(d["shape"])
        return cls(Lattice.from_json(d["lattice"]), values, d["t"])


@dataclass(frozen=True)
class ModeCoefficients:
    """b_k and d*_k indexed like the basis modes."""

    b: np.ndarray
    dstar: np.ndarray

    @classmethod
    def zeros(cls, basis: ModeBasis) -> "ModeCoefficients":
        n = len(basis)
        return cls(np.zeros(n, complex), np.zeros(n, complex))

    @classmethod
    def from_dict(cls, basis: ModeBasis, b: dict | None = None,
                  dstar: dict | None = None) -> "ModeCoefficients":
        out = cls.zeros(basis)
        for mode, val in (b or {}).items():
            out.b[basis.index(mode)] = val
        for mode, val in (dstar or {}).items():
            out.dstar[basis.index(mode)] = val
        return out

    def __post_init__(self):
        if not (np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.dstar))):
            raise ValueError("coefficients must be finite")


def evaluate_mode(basis: ModeBasis, i: int, kind: str, x: np.ndarray, t: float) -> np.ndarray:
    """u_k e^{i(k.x - E t)} (kind P) or v_k e^{-i(k.x - E t)} (kind A) at ``x[..., 3]``."""
    spinor = basis.u[i] if kind == "P" else basis.v[i]
    return basis.phase(i, x, t, kind)[..., None] * spinor


def synthesize_values(basis: ModeBasis, coeffs: ModeCoefficients, x: np.ndarray,
                      t: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros((*x.shape[:-1], 4), dtype=np.complex128)
    for i in range(len(basis)):
        if coeffs.b[i] != 0:
            out += coeffs.b[i] * evaluate_mode(basis, i, "P", x, t)
        if coeffs.dstar[i] != 0:
            out += coeffs.dstar[i] * evaluate_mode(basis, i, "A", x, t)
    return out


def synthesize_field(basis: ModeBasis, coeffs: ModeCoefficients, t: float) -> SpinorField:
    values = synthesize_values(basis, coeffs, basis.lattice.points(), t)
    return SpinorField(basis.lattice, values, t)


def time_derivative(basis: ModeBasis, coeffs: ModeCoefficients, t: float) -> np.ndarray:
    """Analytic d psi/dt of the synthesized field on the lattice."""
    scaled = ModeCoefficients(-1j * basis.energy * coeffs.b, 1j * basis.energy * coeffs.dstar)
    return synthesize_values(basis, scaled, basis.lattice.points(), t)


def project_coefficients(field: SpinorField, basis: ModeBasis) -> ModeCoefficients:
    """Quadrature against u_k^dagger and v_k^dagger; inverts synthesize_field at t=0."""
    x = field.lattice.points()
    dV = field.lattice.cell_volume
    b = np.empty(len(basis), complex)
    d = np.empty(len(basis), complex)
    for i in range(len(basis)):
        up = evaluate_mode(basis, i, "P", x, field.t)
        vp = evaluate_mode(basis, i, "A", x, field.t)
        b[i] = dV * np.sum(up.conj() * field.values)
        d[i] = dV * np.sum(vp.conj() * field.values)
    return ModeCoefficients(b, d)


def gram_matrix(basis: ModeBasis) -> np.ndarray:
    """Quadrature overlaps of all 2M mode functions (u's then v's) at t = 0."""
    x = basis.lattice.points().reshape(-1, 3)
    cols = [evaluate_mode(basis, i, "P", x, 0.0) for i in range(len(basis))]
    cols += [evaluate_mode(basis, i, "A", x, 0.0) for i in range(len(basis))]
    W = np.stack([c.reshape(-1) for c in cols])
    return basis.lattice.cell_volume * (W.conj() @ W.T)


def spectral_derivative(values: np.ndarray, lattice: Lattice, axis: int) -> np.ndarray:
    """d/dx^axis of periodic samples whose leading three dims are the lattice."""
    if lattice.N[axis] < 2:
        return np.zeros_like(values)
    k = lattice.wavenumbers(axis)
    shape = [1] * values.ndim
    shape[axis] = -1
    ik = 1j * k.reshape(shape)
    if lattice.N[axis] % 2 == 0:
        ik = ik.copy()
        ik.flat[lattice.N[axis] // 2] = 0.0
    out = np.fft.ifft(ik * np.fft.fft(values, axis=axis), axis=axis)
    return out if np.iscomplexobj(values) else out.real


def dirac_residual(basis: ModeBasis, coeffs: ModeCoefficients, t: float,
                   gammas: GammaSet = GAMMAS) -> float:
    """Max norm of (i gamma^mu d_mu - m) psi with analytic d_t and spectral d_x."""
    psi = synthesize_field(basis, coeffs, t).values
    terms = 1j * np.einsum("ab,...b->...a", gammas.gamma[0], time_derivative(basis, coeffs, t))
    for i in range(3):
        dpsi = spectral_derivative(psi, basis.lattice, i)
        terms += 1j * np.einsum("ab,...b->...a", gammas.gamma[i + 1], dpsi)
    return float(np.max(np.abs(terms - basis.mass * psi)))


def complex_to_json(a: np.ndarray) -> list:
    """Flatten to a list of [re, im] pairs."""
    flat = np.asarray(a, dtype=np.complex128).reshape(-1)
    return np.stack([flat.real, flat.imag], axis=-1).tolist()


def complex_from_json(pairs: list) -> np.ndarray:
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return arr[:, 0] + 1j * arr[:, 1]
