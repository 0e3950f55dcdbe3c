"""Finite fermionic Fock space over a truncated mode set.

Modes are ordered globally as all particle modes followed by all antiparticle
modes. A basis state is the integer occupation mask over that ordering (bit j
set = global mode j occupied) and stands for the ket
``c+_{i1} c+_{i2} ... c+_{in} |0>`` with ``i1 < i2 < ... < in``. Ladder
operators carry the Jordan-Wigner sign ``(-1)^(occupied modes before j)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dirac import ModeBasis, complex_from_json, complex_to_json
from .trajectories import MultiWave

MAX_DIMENSION = 10**6
LADDER_OPS = ("b", "b+", "d", "d+")


class FockBasis:
    """Occupation-number states with at most one fermion per mode.

    ``particle_modes`` / ``antiparticle_modes`` are indices into a
    :class:`ModeBasis` (or plain labels when no mode basis is attached).
    """

    def __init__(self, particle_modes: Sequence[int], antiparticle_modes: Sequence[int],
                 cap: int | None = None):
        self.particle_modes = tuple(int(m) for m in particle_modes)
        self.antiparticle_modes = tuple(int(m) for m in antiparticle_modes)
        self.n_p_modes = len(self.particle_modes)
        self.n_a_modes = len(self.antiparticle_modes)
        n_modes = self.n_modes
        self.cap = n_modes if cap is None else int(cap)
        if self.cap < 0:
            raise ValueError("cap must be >= 0")
        dim = sum(math.comb(n_modes, r) for r in range(min(self.cap, n_modes) + 1))
        if dim > MAX_DIMENSION:
            raise ValueError(f"Fock dimension {dim} exceeds the guard {MAX_DIMENSION}")
        masks = sorted(sum(1 << j for j in occ)
                       for r in range(min(self.cap, n_modes) + 1)
                       for occ in itertools.combinations(range(n_modes), r))
        self.masks = np.array(masks, dtype=np.int64)
        self._index = {m: i for i, m in enumerate(masks)}
        p_bits = (1 << self.n_p_modes) - 1
        self.n_p = np.array([(m & p_bits).bit_count() for m in masks])
        self.n_a = np.array([(m >> self.n_p_modes).bit_count() for m in masks])

    @property
    def n_modes(self) -> int:
        return self.n_p_modes + self.n_a_modes

    @property
    def dim(self) -> int:
        return len(self.masks)

    def __len__(self) -> int:
        return self.dim

    def index(self, mask: int) -> int:
        return self._index[mask]

    def global_mode(self, op: str, mode: int) -> int:
        if op in ("b", "b+"):
            if not 0 <= mode < self.n_p_modes:
                raise IndexError(f"particle mode {mode} not in basis")
            return mode
        if op in ("d", "d+"):
            if not 0 <= mode < self.n_a_modes:
                raise IndexError(f"antiparticle mode {mode} not in basis")
            return self.n_p_modes + mode
        raise ValueError(f"unknown ladder operator {op!r}")

    def mask_of(self, particles: Iterable[int] = (), antiparticles: Iterable[int] = ()) -> int:
        m = 0
        for p in particles:
            m |= 1 << self.global_mode("b", p)
        for a in antiparticles:
            m |= 1 << self.global_mode("d", a)
        return m

    def occupations(self, mask: int) -> tuple[list[int], list[int]]:
        """Occupied (particle, antiparticle) local mode indices, ascending."""
        ps = [j for j in range(self.n_p_modes) if mask >> j & 1]
        ds = [j for j in range(self.n_a_modes) if mask >> (self.n_p_modes + j) & 1]
        return ps, ds

    def sectors(self) -> list[tuple[int, int]]:
        return sorted(set(zip(self.n_p.tolist(), self.n_a.tolist())))

    def sector_indices(self, n_p: int, n_a: int) -> np.ndarray:
        return np.flatnonzero((self.n_p == n_p) & (self.n_a == n_a))

    def label(self, mask: int) -> str:
        ps, ds = self.occupations(mask)
        ops = [f"b+{p}" for p in ps] + [f"d+{d}" for d in ds]
        return " ".join(ops) + " |0>" if ops else "|0>"

    def to_json(self) -> dict:
        return {"particle_modes": list(self.particle_modes),
                "antiparticle_modes": list(self.antiparticle_modes),
                "cap": self.cap, "masks": self.masks.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "FockBasis":
        return cls(d["particle_modes"], d["antiparticle_modes"], d["cap"])


def build_fock_basis(particle_modes: Sequence[int], antiparticle_modes: Sequence[int],
                     cap: int | None = None) -> FockBasis:
    return FockBasis(particle_modes, antiparticle_modes, cap)


@dataclass(frozen=True)
class FockState:
    basis: FockBasis
    c: np.ndarray
    t: float = 0.0

    def norm(self) -> float:
        return float(np.linalg.norm(self.c))

    def normalized(self) -> "FockState":
        return FockState(self.basis, self.c / self.norm(), self.t)

    def sector(self, n_p: int, n_a: int) -> np.ndarray:
        """Coefficients restricted to one (n_P, n_A) sector, zero elsewhere."""
        out = np.zeros_like(self.c)
        idx = self.basis.sector_indices(n_p, n_a)
        out[idx] = self.c[idx]
        return out

    def sector_populations(self) -> dict[tuple[int, int], float]:
        return {s: float(np.sum(np.abs(self.c[self.basis.sector_indices(*s)]) ** 2))
                for s in self.basis.sectors()}

    def to_json(self) -> dict:
        return {"basis": self.basis.to_json(), "t": self.t,
                "labels": [self.basis.label(int(m)) for m in self.basis.masks],
                "c": complex_to_json(self.c)}

    @classmethod
    def from_json(cls, d: dict) -> "FockState":
        return cls(FockBasis.from_json(d["basis"]), complex_from_json(d["c"]), d["t"])


def basis_state(basis: FockBasis, particles: Iterable[int] = (),
                antiparticles: Iterable[int] = (), t: float = 0.0) -> FockState:
    c = np.zeros(basis.dim, dtype=np.complex128)
    c[basis.index(basis.mask_of(particles, antiparticles))] = 1.0
    return FockState(basis, c, t)


def vacuum(basis: FockBasis) -> FockState:
    return basis_state(basis)


def _ladder_map(basis: FockBasis, op: str, mode: int) -> tuple[np.ndarray, np.ndarray]:
    """Target index (-1 when the result vanishes or leaves the basis) and sign per state."""
    j = basis.global_mode(op, mode)
    create = op.endswith("+")
    below = (1 << j) - 1
    targets = np.full(basis.dim, -1, dtype=np.int64)
    signs = np.zeros(basis.dim)
    for i, m in enumerate(basis.masks.tolist()):
        occupied = m >> j & 1
        if occupied == create:
            continue
        new = m ^ (1 << j)
        k = basis._index.get(new)
        if k is None:
            continue
        targets[i] = k
        signs[i] = -1.0 if (m & below).bit_count() % 2 else 1.0
    return targets, signs


def ladder_matrix(basis: FockBasis, op: str, mode: int) -> np.ndarray:
    targets, signs = _ladder_map(basis, op, mode)
    M = np.zeros((basis.dim, basis.dim))
    ok = targets >= 0
    M[targets[ok], np.flatnonzero(ok)] = signs[ok]
    return M


def apply_ladder(state: FockState, op: str, mode: int) -> FockState:
    """Fermionic ladder action; the result is unnormalized (possibly zero)."""
    targets, signs = _ladder_map(state.basis, op, mode)
    out = np.zeros_like(state.c)
    ok = targets >= 0
    np.add.at(out, targets[ok], signs[ok] * state.c[ok])
    return FockState(state.basis, out, state.t)


def number_operator(basis: FockBasis, kind: str) -> np.ndarray:
    return np.diag((basis.n_p if kind == "P" else basis.n_a).astype(float))


@dataclass(frozen=True)
class Coupling:
    """lambda b+_p d+_a + lambda_dagger d_a b_p."""

    particle: int
    antiparticle: int
    lam: complex
    lam_dagger: complex | None = None


@dataclass(frozen=True)
class HamiltonianSpec:
    kind: str  # "free" or "quadratic-mixing"
    particle_energies: Sequence[float]
    antiparticle_energies: Sequence[float]
    couplings: Sequence[Coupling] = field(default_factory=tuple)

    @classmethod
    def from_modes(cls, fock_basis: FockBasis, mode_basis: ModeBasis, kind: str = "free",
                   couplings: Sequence[Coupling] = ()) -> "HamiltonianSpec":
        return cls(kind,
                   [float(mode_basis.energy[m]) for m in fock_basis.particle_modes],
                   [float(mode_basis.energy[m]) for m in fock_basis.antiparticle_modes],
                   tuple(couplings))


@dataclass(frozen=True)
class HamiltonianMatrix:
    basis: FockBasis
    matrix: np.ndarray
    kind: str


def build_hamiltonian(basis: FockBasis, hspec: HamiltonianSpec) -> HamiltonianMatrix:
    if hspec.kind not in ("free", "quadratic-mixing"):
        raise ValueError(f"unknown Hamiltonian kind {hspec.kind!r}")
    if len(hspec.particle_energies) != basis.n_p_modes or \
            len(hspec.antiparticle_energies) != basis.n_a_modes:
        raise ValueError("energy lists do not match the Fock mode counts")
    energies = np.concatenate([hspec.particle_energies, hspec.antiparticle_energies])
    occ = (basis.masks[:, None] >> np.arange(basis.n_modes)) & 1
    H = np.diag(occ @ energies).astype(np.complex128)
    if hspec.kind == "free" and hspec.couplings:
        raise ValueError("free Hamiltonian cannot carry couplings")
    for cp in hspec.couplings:
        lam_dag = np.conj(cp.lam) if cp.lam_dagger is None else cp.lam_dagger
        if abs(lam_dag - np.conj(cp.lam)) > 1e-14:
            raise ValueError(f"non-hermitian coupling: lambda_dagger {lam_dag} != conj({cp.lam})")
        X = cp.lam * (ladder_matrix(basis, "b+", cp.particle)
                      @ ladder_matrix(basis, "d+", cp.antiparticle))
        H += X + X.conj().T
    return HamiltonianMatrix(basis, H, hspec.kind)


class Propagator:
    """exp(-i H t) from one hermitian eigendecomposition."""

    def __init__(self, H: HamiltonianMatrix):
        self.H = H
        self.w, self.V = np.linalg.eigh(H.matrix)

    def coefficients(self, c0: np.ndarray, t: float) -> np.ndarray:
        return self.V @ (np.exp(-1j * self.w * t) * (self.V.conj().T @ c0))

    def evolve(self, state: FockState, t: float) -> FockState:
        return FockState(state.basis, self.coefficients(state.c, t), state.t + t)


def evolve(state: FockState, H: HamiltonianMatrix, t: float) -> FockState:
    """c(t) = exp(-i H t) c(0); the returned timestamp is ``state.t + t``."""
    if H.basis is not state.basis and H.basis.masks.tolist() != state.basis.masks.tolist():
        raise ValueError("Hamiltonian and state use different Fock bases")
    return Propagator(H).evolve(state, t)


def _mode_values(mode_basis: ModeBasis, m: int, kind: str, x: np.ndarray,
                 t: float) -> np.ndarray:
    """u_m(x, t) for particle slots, v_m*(x, t) for antiparticle slots."""
    if kind == "P":
        return mode_basis.phase(m, x, t, "P")[..., None] * mode_basis.u[m]
    return mode_basis.phase(m, x, t, "P")[..., None] * mode_basis.v[m].conj()


def _antisymmetrized(factors: list[list[np.ndarray]]) -> np.ndarray:
    """sum_sigma sgn(sigma) (x)_i factors[i][sigma(i)], batch axis first."""
    n = len(factors)
    B = factors[0][0].shape[0]
    total = np.zeros((B,) + (4,) * n, dtype=np.complex128)
    for perm in itertools.permutations(range(n)):
        sign = _perm_sign(perm)
        term = factors[0][perm[0]]
        for i in range(1, n):
            w = factors[i][perm[i]]
            term = term[..., None] * w.reshape((B,) + (1,) * i + (4,))
        total += sign * term
    return total


def _perm_sign(perm: Sequence[int]) -> int:
    sign = 1
    p = list(perm)
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


def wavefunction(state: FockState, mode_basis: ModeBasis, n_p: int, n_a: int) -> MultiWave:
    """Free-field wave function <0| psi_P(t,x_1) ... psi_A^dagger(t,y_nA) |Psi>.

    Each basis state of the (n_P, n_A) sector contributes
    ``(-1)^(n(n-1)/2)`` times the antisymmetrized product of its particle
    mode functions u_k(x_i, t) and antiparticle functions v_k*(y_j, t); the
    sign is the raw Wick value for the slot order x_1..x_nP, y_1..y_nA. The
    state coefficients are taken at ``state.t``; mode phases run with
    ``t - state.t``.
    """
    fb = state.basis
    if n_p + n_a == 0:
        raise ValueError("wave function needs at least one corpuscle")
    if n_p + n_a > fb.cap or n_p > fb.n_p_modes or n_a > fb.n_a_modes:
        raise ValueError(f"sector ({n_p},{n_a}) is above the Fock basis cap")
    idx = fb.sector_indices(n_p, n_a)
    idx = idx[np.abs(state.c[idx]) > 0]
    if idx.size == 0:
        raise ValueError(f"state has no weight in sector ({n_p},{n_a})")
    n = n_p + n_a
    sign = -1.0 if (n * (n - 1) // 2) % 2 else 1.0
    terms = []
    for i in idx:
        ps, ds = fb.occupations(int(fb.masks[i]))
        terms.append((state.c[i], [fb.particle_modes[p] for p in ps],
                      [fb.antiparticle_modes[d] for d in ds]))
    t_ref = state.t

    def evaluate(points: np.ndarray, t: float) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        tau = t - t_ref
        out = 0.0
        for coeff, pm, am in terms:
            factors = []
            for slot in range(n_p):
                factors.append([_mode_values(mode_basis, m, "P", points[:, slot], tau)
                                for m in pm])
            p_part = _antisymmetrized(factors) if n_p else None
            factors = []
            for slot in range(n_a):
                factors.append([_mode_values(mode_basis, m, "A", points[:, n_p + slot], tau)
                                for m in am])
            a_part = _antisymmetrized(factors) if n_a else None
            if p_part is None:
                prod = a_part
            elif a_part is None:
                prod = p_part
            else:
                B = points.shape[0]
                prod = p_part.reshape(p_part.shape + (1,) * n_a) * \
                    a_part.reshape((B,) + (1,) * n_p + (4,) * n_a)
            out = out + coeff * prod
        return sign * out

    weight = float(np.sum(np.abs(state.c[idx]) ** 2))
    mean = math.factorial(n_p) * math.factorial(n_a) * weight / mode_basis.lattice.volume ** n
    return MultiWave(n_p, n_a, evaluate, mode_basis.lattice, mean)


def antiparticle_density_expectation(state: FockState, mode_basis: ModeBasis, x: np.ndarray,
                                     t: float) -> tuple[np.ndarray, np.ndarray]:
    """Positron density at ``x[..., 3]`` computed two ways.

    Returns ``(operator, wave)``: the expectation of
    ``psi_A(x) psi_A^dagger(x) = sum_kl v_k(x) v_l*(x) d+_k d_l`` evaluated with
    ladder algebra, and ``psi_A^*(x) psi_A(x)`` from the one-antiparticle wave
    function.
    """
    fb = state.basis
    outside = state.c.copy()
    outside[fb.sector_indices(0, 1)] = 0
    if np.linalg.norm(outside) > 1e-12:
        raise ValueError("only one-antiparticle states are supported")
    x = np.asarray(x, dtype=float)
    tau = t - state.t
    # one-body density matrix <d+_k d_l>
    lowered = [apply_ladder(state, "d", l).c for l in range(fb.n_a_modes)]
    rho = np.array([[np.vdot(lk, ll) for ll in lowered] for lk in lowered])
    vals = np.stack([_mode_values(mode_basis, m, "A", x, tau).conj()
                     for m in fb.antiparticle_modes])  # v_k(x, t)
    operator = np.real(np.einsum("kl,k...a,l...a->...", rho, vals, vals.conj()))
    flat = x.reshape(-1, 1, 3)
    wave = wavefunction(state, mode_basis, 0, 1).evaluate(flat, t)
    wave_density = np.sum(np.abs(wave) ** 2, axis=-1).reshape(x.shape[:-1])
    return operator, wave_density
