"""Equivariant field velocities on a bosonized Fock-space representation.

Each Fock mode is mapped to one real coordinate phi_j; occupation 0/1 of the
mode becomes the oscillator function h_0/h_1 of that coordinate. A basis
state K is represented by Psi_K(phi) = prod_j h_{occ_K(j)}(phi_j) and a Fock
state by Psi = sum_K c_K(t) Psi_K. The projected Hamiltonian acts as the
Fock matrix on span{Psi_K} and annihilates its complement.

From Psi the module builds the drift u = Re(i Psi* [H, phi] Psi) / rho, the
source J = d_t rho + div(rho u), a periodic spectral Poisson solve
lap(Phi) = -J with field E = grad(Phi), the offset e = -mean(E) and the
velocity v = u + (e + E) / rho, whose flux rho v satisfies the continuity
equation exactly.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage
import scipy.stats

from .fock import FockBasis, FockState, HamiltonianMatrix, Propagator
from .trajectories import CHUNK, KS_COEFF_1PCT, MAX_EXCLUSION, chunk_rng

MIN_HALF_WIDTH = 6.0
NODE_FACTOR = 1e-12
POISSON_SOLVABILITY = 1e-4
UNDERFLOW = 1e-300


def oscillator(q: int, x: np.ndarray) -> np.ndarray:
    """Harmonic-oscillator eigenfunction h_q, unit oscillator length, q <= 2."""
    g = np.pi ** -0.25 * np.exp(-0.5 * x**2)
    if q == 0:
        return g
    if q == 1:
        return np.sqrt(2.0) * x * g
    if q == 2:
        return (2 * x**2 - 1) / np.sqrt(2.0) * g
    raise ValueError("only h_0, h_1, h_2 are provided")


@dataclass(frozen=True)
class ConfigGrid:
    """Periodic grid on [-Lam, Lam)^n with G points per axis."""

    n: int
    Lam: float
    G: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one degree of freedom")
        if self.G < 16:
            raise ValueError("G must be >= 16")
        if self.Lam <= 0:
            raise ValueError("Lam must be positive")

    @property
    def spacing(self) -> float:
        return 2 * self.Lam / self.G

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.n

    @property
    def volume(self) -> float:
        return (2 * self.Lam) ** self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.G,) * self.n

    def axis(self) -> np.ndarray:
        return -self.Lam + self.spacing * np.arange(self.G)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.axis()] * self.n), indexing="ij")

    def points(self) -> np.ndarray:
        """Grid points flattened to shape ``(G^n, n)``."""
        return np.stack([m.reshape(-1) for m in self.mesh()], axis=-1)

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.cell_volume)

    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.G, d=self.spacing)

    def derivative(self, f: np.ndarray, axis: int) -> np.ndarray:
        k = self.wavenumbers()
        ik = 1j * k
        if self.G % 2 == 0:
            ik[self.G // 2] = 0.0
        shape = [1] * f.ndim
        shape[axis] = -1
        out = np.fft.ifft(ik.reshape(shape) * np.fft.fft(f, axis=axis), axis=axis)
        return out.real if np.isrealobj(f) else out

    def derivative_fd4(self, f: np.ndarray, axis: int) -> np.ndarray:
        h = self.spacing
        r = lambda s: np.roll(f, -s, axis=axis)
        return (-r(2) + 8 * r(1) - 8 * r(-1) + r(-2)) / (12 * h)

    def divergence(self, F: np.ndarray, method: str = "spectral") -> np.ndarray:
        d = self.derivative if method == "spectral" else self.derivative_fd4
        return sum(d(F[a], a) for a in range(self.n))

    def to_json(self) -> dict:
        return {"n": self.n, "Lam": self.Lam, "G": self.G}


class FunctionalBasis:
    """Product-oscillator images Psi_K of the Fock basis states.

    Coordinates follow the global Fock mode order (particle modes, then
    antiparticle modes). An extended product basis with occupations up to 2
    holds the image of phi_a acting on span{Psi_K}.
    """

    def __init__(self, fock_basis: FockBasis, grid: ConfigGrid):
        if grid.n != fock_basis.n_modes:
            raise ValueError(f"grid has n={grid.n} but the Fock basis has "
                             f"{fock_basis.n_modes} modes")
        if grid.Lam < MIN_HALF_WIDTH:
            raise ValueError(f"grid half-width {grid.Lam} is below {MIN_HALF_WIDTH} "
                             "oscillator lengths")
        self.fock = fock_basis
        self.grid = grid
        self.n = grid.n
        self.occ = ((fock_basis.masks[:, None] >> np.arange(self.n)) & 1).astype(int)
        self.ext_occ = np.array(list(itertools.product(range(3), repeat=self.n)), dtype=int)
        self._ext_index = {tuple(o): i for i, o in enumerate(self.ext_occ.tolist())}
        self.fock_in_ext = np.array([self._ext_index[tuple(o)] for o in self.occ.tolist()])
        self.X = np.stack([self._position_matrix(a) for a in range(self.n)])
        self._grid_values = None

    @property
    def dim(self) -> int:
        return self.fock.dim

    def values(self, points: np.ndarray, occ: np.ndarray | None = None) -> np.ndarray:
        """Psi_K at ``points[P, n]``, shape ``(dim, P)``."""
        occ = self.occ if occ is None else occ
        points = np.atleast_2d(points)
        h = np.stack([oscillator(q, points) for q in range(3)])  # (3, P, n)
        out = np.ones((occ.shape[0], points.shape[0]))
        for a in range(self.n):
            out *= h[occ[:, a], :, a]
        return out

    def grid_values(self) -> np.ndarray:
        """Psi_K on the grid, shape ``(dim, G, ..., G)``."""
        if self._grid_values is None:
            v = self.values(self.grid.points())
            self._grid_values = v.reshape((self.dim,) + self.grid.shape)
        return self._grid_values

    def multiply_phi_extended(self, coeffs_ext: np.ndarray, a: int) -> np.ndarray:
        """Extended-basis coefficients of phi_a * f (raising into h_2 as needed).

        Uses phi h_q = sqrt((q+1)/2) h_{q+1} + sqrt(q/2) h_{q-1}; components
        that would need h_3 are rejected.
        """
        out = np.zeros_like(coeffs_ext)
        for i, o in enumerate(self.ext_occ.tolist()):
            c = coeffs_ext[i]
            if c == 0:
                continue
            q = o[a]
            if q + 1 <= 2:
                up = list(o)
                up[a] = q + 1
                out[self._ext_index[tuple(up)]] += np.sqrt((q + 1) / 2) * c
            else:
                raise ValueError("phi multiplication overflows the h_2 extension")
            if q >= 1:
                dn = list(o)
                dn[a] = q - 1
                out[self._ext_index[tuple(dn)]] += np.sqrt(q / 2) * c
        return out

    def embed(self, c: np.ndarray) -> np.ndarray:
        ext = np.zeros(len(self.ext_occ), dtype=np.result_type(c, float))
        ext[self.fock_in_ext] = c
        return ext

    def project(self, coeffs_ext: np.ndarray) -> np.ndarray:
        return coeffs_ext[self.fock_in_ext]

    def _position_matrix(self, a: int) -> np.ndarray:
        cols = []
        for K in range(self.dim):
            e = np.zeros(self.dim)
            e[K] = 1.0
            cols.append(self.project(self.multiply_phi_extended(self.embed(e), a)))
        return np.array(cols).T

    def gram(self) -> np.ndarray:
        V = self.grid_values().reshape(self.dim, -1)
        return self.grid.cell_volume * (V @ V.T)

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        return np.tensordot(c, self.grid_values(), axes=(0, 0))

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        V = self.grid_values().reshape(self.dim, -1)
        return self.grid.cell_volume * (V @ f.reshape(-1))


def build_functional_basis(fock_basis: FockBasis, grid: ConfigGrid) -> FunctionalBasis:
    return FunctionalBasis(fock_basis, grid)


class ProjectedHamiltonian:
    """sum_{K,K'} |Psi_K> H_{KK'} <Psi_K'| acting on grid functions."""

    def __init__(self, H: HamiltonianMatrix, basis: FunctionalBasis):
        if H.basis.masks.tolist() != basis.fock.masks.tolist():
            raise ValueError("Hamiltonian and functional basis use different Fock bases")
        self.H = H
        self.matrix = H.matrix
        self.basis = basis

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Quadrature projection onto span{Psi_K}, H in coefficients, resynthesis."""
        a = self.basis.coefficients(f)
        return self.basis.synthesize(self.matrix @ a)

    def apply_coefficients(self, c: np.ndarray) -> np.ndarray:
        return self.matrix @ c

    def elements(self) -> np.ndarray:
        """<Psi_K | H_phi | Psi_K'> by grid quadrature."""
        V = self.basis.grid_values().reshape(self.basis.dim, -1)
        HV = np.stack([self.apply(V[k].reshape(self.basis.grid.shape)).reshape(-1)
                       for k in range(self.basis.dim)])
        return self.basis.grid.cell_volume * (V.conj() @ HV.T)


def project_H_phi(H: HamiltonianMatrix, basis: FunctionalBasis) -> ProjectedHamiltonian:
    return ProjectedHamiltonian(H, basis)


class CausalFieldModel:
    """Psi(phi, t) = sum_K c_K(t) Psi_K(phi) with exact coefficient dynamics."""

    def __init__(self, basis: FunctionalBasis, H: HamiltonianMatrix, initial: FockState):
        self.basis = basis
        self.grid = basis.grid
        self.Hphi = ProjectedHamiltonian(H, basis)
        self.H = H.matrix
        self.initial = initial
        self.propagator = Propagator(H)
        self._E_cache: dict[float, tuple] = {}

    @property
    def node_threshold(self) -> float:
        return NODE_FACTOR / self.grid.volume

    def coefficients(self, t: float) -> np.ndarray:
        return self.propagator.coefficients(self.initial.c, t - self.initial.t)

    def coefficient_rate(self, t: float) -> np.ndarray:
        return -1j * (self.H @ self.coefficients(t))

    def state(self, t: float) -> FockState:
        return FockState(self.initial.basis, self.coefficients(t), t)

    def _parts(self, V: np.ndarray, phi: np.ndarray, t: float):
        c = self.coefficients(t)
        syn = lambda a: np.tensordot(a, V, axes=(0, 0))
        psi = syn(c)
        Hc = self.H @ c
        flux = np.empty((self.basis.n,) + psi.shape)
        HPsi = syn(Hc)
        for a in range(self.basis.n):
            comm = syn(self.H @ (self.basis.X[a] @ c)) - phi[a] * HPsi
            flux[a] = np.real(1j * psi.conj() * comm)
        dpsi = syn(-1j * Hc)
        drho = 2 * np.real(psi.conj() * dpsi)
        return psi, flux, drho

    def at_points(self, phi: np.ndarray, t: float):
        """(Psi, rho u, d_t rho) at ``phi[P, n]``; rho u has shape ``(n, P)``."""
        phi = np.atleast_2d(phi)
        V = self.basis.values(phi)
        return self._parts(V, phi.T, t)

    def on_grid(self, t: float):
        V = self.basis.grid_values()
        return self._parts(V, np.stack(self.grid.mesh()), t)

    def mean_position_rate(self, t: float) -> np.ndarray:
        """d<phi_a>/dt = c^dagger i[H, X_a] c from the coefficient dynamics."""
        c = self.coefficients(t)
        out = np.empty(self.basis.n)
        for a in range(self.basis.n):
            X = self.basis.X[a]
            out[a] = np.real(np.vdot(c, 1j * (self.H @ X - X @ self.H) @ c))
        return out

    def field_spline(self, t: float):
        """Spline coefficients of e + E on the grid at time t (cached)."""
        hit = self._E_cache.get(t)
        if hit is None:
            st = field_state(self, t)
            calE = st.E + st.e.reshape((-1,) + (1,) * self.grid.n)
            coeffs = np.stack([scipy.ndimage.spline_filter(calE[a], order=3, mode="grid-wrap")
                               for a in range(self.grid.n)])
            hit = (coeffs,)
            self._E_cache[t] = hit
        return hit[0]

    def velocity(self, phi: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """v at ``phi[P, n]`` with the spline-interpolated Poisson field; returns (v, rho)."""
        psi, flux, _ = self.at_points(phi, t)
        rho = np.abs(psi) ** 2
        coeffs = self.field_spline(t)
        idx = ((phi + self.grid.Lam) / self.grid.spacing).T
        calE = np.stack([scipy.ndimage.map_coordinates(coeffs[a], idx, order=3,
                                                       mode="grid-wrap", prefilter=False)
                         for a in range(self.grid.n)])
        with np.errstate(divide="ignore", invalid="ignore"):
            v = ((flux + calE) / rho).T
        return v, rho


@dataclass
class PoissonSolution:
    phi: np.ndarray
    E: np.ndarray  # (n, G, ..., G)
    residual: float  # max |lap(Phi) + J|
    source_vanishes: bool


def poisson_solve(J: np.ndarray, grid: ConfigGrid, zero_tol: float = 0.0) -> PoissonSolution:
    """Spectral solve of lap(Phi) = -J on the periodic box, Phi zero mode set to 0.

    A source with max |J| <= ``zero_tol`` is treated as identically zero, so
    Phi and E vanish exactly.
    """
    total = grid.integrate(J)
    if abs(total) > POISSON_SOLVABILITY:
        raise ValueError(f"source integral {total:.3e} violates solvability; "
                         "unitarity broken upstream")
    if float(np.max(np.abs(J))) <= zero_tol:
        zero = np.zeros_like(J)
        return PoissonSolution(zero, np.zeros((grid.n,) + J.shape), 0.0, True)
    k = grid.wavenumbers()
    k2 = sum(np.meshgrid(*([k**2] * grid.n), indexing="ij"))
    Jh = np.fft.fftn(J)
    with np.errstate(divide="ignore", invalid="ignore"):
        Ph = np.where(k2 > 0, Jh / k2, 0.0)
    phi = np.fft.ifftn(Ph).real
    E = np.stack([grid.derivative(phi, a) for a in range(grid.n)])
    lap = grid.divergence(E)
    return PoissonSolution(phi, E, float(np.max(np.abs(lap + J))), False)


def offset_e(E: np.ndarray, grid: ConfigGrid) -> np.ndarray:
    """e = -V^{-1} integral of E, per axis."""
    return -np.array([grid.integrate(E[a]) for a in range(grid.n)]) / grid.volume


@dataclass
class CausalFieldState:
    t: float
    psi: np.ndarray
    rho: np.ndarray
    drho_dt: np.ndarray
    flux_u: np.ndarray  # rho u, (n, G.., G)
    u: np.ndarray  # masked to nan at nodes
    J: np.ndarray
    Phi: np.ndarray
    E: np.ndarray
    e: np.ndarray
    v: np.ndarray  # masked to nan at nodes
    node_mask: np.ndarray
    poisson_residual: float
    source_vanishes: bool

    @property
    def flux_v(self) -> np.ndarray:
        return self.flux_u + self.E + self.e.reshape((-1,) + (1,) * self.rho.ndim)

    def to_json(self, grid: ConfigGrid) -> dict:
        return {"t": self.t, "grid": grid.to_json(), "rho": self.rho.reshape(-1).tolist(),
                "J": self.J.reshape(-1).tolist(), "Phi": self.Phi.reshape(-1).tolist(),
                "u": np.nan_to_num(self.u).reshape(self.u.shape[0], -1).tolist(),
                "v": np.nan_to_num(self.v).reshape(self.v.shape[0], -1).tolist(),
                "E": self.E.reshape(self.E.shape[0], -1).tolist(), "e": self.e.tolist(),
                "node_mask": self.node_mask.reshape(-1).astype(int).tolist()}


def drift_u(model: CausalFieldModel, t: float):
    """(u masked at nodes, rho u, node mask) on the grid."""
    psi, flux, _ = model.on_grid(t)
    rho = np.abs(psi) ** 2
    mask = rho <= model.node_threshold
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(mask, np.nan, flux / rho)
    return u, flux, mask


def source_J(model: CausalFieldModel, t: float, method: str = "spectral") -> np.ndarray:
    _, flux, drho = model.on_grid(t)
    return drho + model.grid.divergence(flux, method)


def _zero_tol(rho: np.ndarray, H: np.ndarray) -> float:
    return 1e-12 * float(np.max(rho)) * (1.0 + float(np.max(np.abs(H))))


def field_state(model: CausalFieldModel, t: float) -> CausalFieldState:
    grid = model.grid
    psi, flux, drho = model.on_grid(t)
    rho = np.abs(psi) ** 2
    J = drho + grid.divergence(flux)
    sol = poisson_solve(J, grid, zero_tol=_zero_tol(rho, model.H))
    e = np.zeros(grid.n) if sol.source_vanishes else offset_e(sol.E, grid)
    mask = rho <= model.node_threshold
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(mask, np.nan, flux / rho)
        calE = sol.E + e.reshape((-1,) + (1,) * grid.n)
        v = np.where(mask, np.nan, u + calE / rho)
    return CausalFieldState(t, psi, rho, drho, flux, u, J, sol.phi, sol.E, e, v, mask,
                            sol.residual, sol.source_vanishes)


def velocity_v(state: CausalFieldState) -> np.ndarray:
    return state.v


def continuity_residual(state: CausalFieldState, grid: ConfigGrid,
                        method: str = "spectral") -> float:
    """max |d_t rho + div(rho v)| with rho v = rho u + e + E."""
    return float(np.max(np.abs(state.drho_dt + grid.divergence(state.flux_v, method))))


def mean_velocity(state: CausalFieldState, grid: ConfigGrid) -> np.ndarray:
    """integral of rho v per axis."""
    return np.array([grid.integrate(state.flux_v[a]) for a in range(grid.n)])


@dataclass
class FieldTrajectory:
    times: np.ndarray
    phi: np.ndarray  # (T, n)
    rho: np.ndarray  # (T,)
    node_abort: bool = False
    grid_exit: bool = False

    @property
    def completed(self) -> bool:
        return not (self.node_abort or self.grid_exit)


def _rk4_field(model: CausalFieldModel, phi0: np.ndarray, t0: float, t1: float, dt: float,
               record: bool = False):
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / n_steps
    x = np.array(phi0, dtype=float)
    alive = np.ones(x.shape[0], dtype=bool)
    exited = np.zeros(x.shape[0], dtype=bool)
    thr = model.node_threshold
    Lam = model.grid.Lam
    history = []

    def rhs(y, t):
        v, rho = model.velocity(y, t)
        bad = (rho <= thr) | ~np.all(np.isfinite(v), axis=1)
        out = np.all(np.abs(y) < Lam, axis=1)
        v[bad | ~out] = 0.0
        return v, bad, ~out

    t = t0
    _, rho = model.velocity(x, t)
    alive &= rho > thr
    if record:
        history.append((t, x.copy(), rho.copy()))
        if not alive.all():
            return x, alive, exited, history
    for _ in range(n_steps):
        k1, b1, o1 = rhs(x, t)
        k2, b2, o2 = rhs(x + 0.5 * h * k1, t + 0.5 * h)
        k3, b3, o3 = rhs(x + 0.5 * h * k2, t + 0.5 * h)
        k4, b4, o4 = rhs(x + h * k3, t + h)
        ex = o1 | o2 | o3 | o4
        exited |= ex & alive
        alive &= ~(b1 | b2 | b3 | b4 | ex)
        step = h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        step[~alive] = 0.0
        x = x + step
        t = t + h
        outside = ~np.all(np.abs(x) < Lam, axis=1)
        exited |= outside & alive
        alive &= ~outside
        _, rho = model.velocity(x, t)
        alive &= rho > thr
        if record:
            history.append((t, x.copy(), rho.copy()))
            if not alive.all():
                break
    return x, alive, exited, history


def integrate_field(model: CausalFieldModel, phi0: np.ndarray, t0: float, t1: float,
                    dt: float) -> FieldTrajectory:
    """RK4 on d phi/dt = v(phi, t) with v rebuilt at every stage time."""
    phi0 = np.asarray(phi0, dtype=float).reshape(1, -1)
    _, alive, exited, hist = _rk4_field(model, phi0, t0, t1, dt, record=True)
    return FieldTrajectory(np.array([h[0] for h in hist]), np.array([h[1][0] for h in hist]),
                           np.array([h[2][0] for h in hist]),
                           node_abort=bool(not alive[0] and not exited[0]),
                           grid_exit=bool(exited[0]))


@dataclass
class Effectivity:
    sectors: list[tuple[int, int]]
    values: np.ndarray  # (P, n_sectors), nan where indeterminate
    indeterminate: np.ndarray  # (P,) bool

    def as_dict(self, i: int = 0) -> dict[tuple[int, int], float]:
        return {s: float(self.values[i, k]) for k, s in enumerate(self.sectors)}


def effectivity(model: CausalFieldModel, phi: np.ndarray, t: float) -> Effectivity:
    """Normalized sector weights |Psi~_{nP,nA}(phi)|^2 / sum over sectors."""
    phi = np.atleast_2d(phi)
    fb = model.basis.fock
    c = model.coefficients(t)
    V = model.basis.values(phi)
    sectors = fb.sectors()
    amp = np.stack([np.abs(c[idx] @ V[idx]) ** 2  # V is (dim, P) here
                    for idx in (fb.sector_indices(*s) for s in sectors)], axis=1)
    total = amp.sum(axis=1)
    bad = total <= UNDERFLOW
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(bad[:, None], np.nan, amp / total[:, None])
    return Effectivity(sectors, vals, bad)


def sample_field(model: CausalFieldModel, M: int, t: float, seed: int) -> np.ndarray:
    """Rejection sampling of rho(t) with a unit-variance Gaussian proposal."""
    n = model.grid.n
    pts = model.grid.points()
    psi, _, _ = model.on_grid(t)
    rho = np.abs(psi.reshape(-1)) ** 2
    q = np.exp(-0.5 * np.sum(pts**2, axis=1)) / (2 * np.pi) ** (n / 2)
    bound = 1.5 * float(np.max(rho / q))
    out = np.empty((M, n))
    for c, start in enumerate(range(0, M, CHUNK)):
        m = min(CHUNK, M - start)
        rng = chunk_rng(seed, c)
        got, need = [], m
        while need > 0:
            cand = rng.standard_normal(size=(2 * need + 16, n))
            psi_c, _, _ = model.at_points(cand, t)
            r = np.abs(psi_c) ** 2
            qc = np.exp(-0.5 * np.sum(cand**2, axis=1)) / (2 * np.pi) ** (n / 2)
            if np.any(r > bound * qc):
                raise RuntimeError("rejection bound exceeded")
            keep = cand[rng.uniform(size=cand.shape[0]) * bound * qc < r]
            got.append(keep[:need])
            need -= len(got[-1])
        out[start:start + m] = np.concatenate(got)
    return out


def marginal_cdf(model: CausalFieldModel, axis: int, t: float, G_fine: int = 2048):
    """CDF of the rho(t) marginal along one axis, other axes summed on the grid."""
    grid = model.grid
    xs = -grid.Lam + np.arange(G_fine + 1) * (2 * grid.Lam / G_fine)
    others = np.stack(np.meshgrid(*([grid.axis()] * (grid.n - 1)), indexing="ij"), -1)
    others = others.reshape(-1, grid.n - 1)
    dens = np.empty(xs.size)
    for i0 in range(0, xs.size, 64):
        xb = xs[i0:i0 + 64]
        P = np.empty((xb.size, others.shape[0], grid.n))
        P[:, :, axis] = xb[:, None]
        P[:, :, [a for a in range(grid.n) if a != axis]] = others[None]
        psi, _, _ = model.at_points(P.reshape(-1, grid.n), t)
        dens[i0:i0 + 64] = (np.abs(psi) ** 2).reshape(xb.size, -1).sum(axis=1)
    h = xs[1] - xs[0]
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * h)])
    return xs, cum / cum[-1]


@dataclass
class FieldEquivarianceReport:
    ks_statistics: list[float]
    critical_value: float
    exclusion_fraction: float
    grid_exit_fraction: float
    passed: bool
    M: int
    seed: int
    t0: float
    t1: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"ks_statistics": self.ks_statistics, "critical_value": self.critical_value,
                "exclusion_fraction": self.exclusion_fraction,
                "grid_exit_fraction": self.grid_exit_fraction, "passed": self.passed,
                "M": self.M, "seed": self.seed, "t0": self.t0, "t1": self.t1, **self.extra}


def field_equivariance_test(model: CausalFieldModel, M: int, t0: float, t1: float, seed: int,
                            dt: float = 0.02, threads: int = 1,
                            ks_coeff: float = KS_COEFF_1PCT) -> FieldEquivarianceReport:
    """Transport rho(t0) samples with v and KS-compare every marginal with rho(t1)."""
    if M < 1000:
        raise ValueError("equivariance test needs M >= 1000")
    x0 = sample_field(model, M, t0, seed)
    chunks = [x0[i:i + CHUNK] for i in range(0, M, CHUNK)]

    def work(chunk):
        x, alive, exited, _ = _rk4_field(model, chunk, t0, t1, dt)
        return x, alive, exited

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            res = list(pool.map(work, chunks))
    else:
        res = [work(c) for c in chunks]
    x1 = np.concatenate([r[0] for r in res])
    alive = np.concatenate([r[1] for r in res])
    exited = np.concatenate([r[2] for r in res])
    crit = ks_coeff / np.sqrt(M)
    stats = []
    for a in range(model.grid.n):
        xs, cum = marginal_cdf(model, a, t1)
        stats.append(float(scipy.stats.kstest(
            x1[alive, a], lambda q, xs=xs, cum=cum: np.interp(q, xs, cum)).statistic))
    excl = 1.0 - float(np.mean(alive))
    return FieldEquivarianceReport(stats, crit, excl, float(np.mean(exited)),
                                   bool(max(stats) < crit and excl <= MAX_EXCLUSION),
                                   M, seed, t0, t1)
