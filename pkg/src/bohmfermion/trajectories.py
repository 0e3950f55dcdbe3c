"""Guidance velocities, trajectory integration and equivariance statistics.

A :class:`MultiWave` is evaluated at a batch of joint configurations
``points[B, n_slots, 3]`` and returns the spinor tensor
``psi[B, 4, ..., 4]`` with one spinor axis per slot, particle slots first.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.stats

from .dirac import GAMMAS, GammaSet, Lattice, ModeBasis, ModeCoefficients, synthesize_values

NODE_FACTOR = 1e-12
IMAG_TOL = 1e-10
CHUNK = 1000
KS_COEFF_1PCT = 1.63
MAX_EXCLUSION = 0.01


class NodeRegion(RuntimeError):
    """The guiding density fell to or below the node threshold."""


@dataclass(frozen=True)
class MultiWave:
    n_p: int
    n_a: int
    evaluate: Callable[[np.ndarray, float], np.ndarray]
    lattice: Lattice
    mean_density: float  # box average of j0 over configuration space

    @property
    def n_slots(self) -> int:
        return self.n_p + self.n_a

    @property
    def node_threshold(self) -> float:
        return NODE_FACTOR * self.mean_density

    def kind(self, slot: int) -> str:
        return "particle" if slot < self.n_p else "antiparticle"

    def __call__(self, points: np.ndarray, t: float) -> np.ndarray:
        return self.evaluate(points, t)


def single_corpuscle_wave(basis: ModeBasis, coeffs: ModeCoefficients, kind: str) -> MultiWave:
    """One-corpuscle guidance wave of a Dirac field part.

    ``kind='P'`` wraps psi_P = sum b_k u_k. ``kind='A'`` wraps the positron
    wave function psi_A^* with psi_A = sum d*_k v_k, so its corpuscle current
    is psi_A-bar gamma psi_A.
    """
    if kind == "P":
        c = ModeCoefficients(coeffs.b, np.zeros_like(coeffs.dstar))
        weight = np.sum(np.abs(coeffs.b) ** 2)
    elif kind == "A":
        c = ModeCoefficients(np.zeros_like(coeffs.b), coeffs.dstar)
        weight = np.sum(np.abs(coeffs.dstar) ** 2)
    else:
        raise ValueError(f"kind must be 'P' or 'A', got {kind!r}")

    def evaluate(points, t):
        vals = synthesize_values(basis, c, np.asarray(points)[:, 0], t)
        return vals if kind == "P" else vals.conj()

    n_p, n_a = (1, 0) if kind == "P" else (0, 1)
    return MultiWave(n_p, n_a, evaluate, basis.lattice, float(weight) / basis.lattice.volume)


def _on_axis(T: np.ndarray, M: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(M, T, axes=([1], [axis])), 0, axis)


def slot_currents(psi: np.ndarray, n_p: int, slot: int, gammas: GammaSet = GAMMAS) -> np.ndarray:
    """Contravariant current j^mu of one slot for a batch of spinor tensors.

    chi-bar carries gamma_0 on every particle index of psi*, chi carries
    gamma_0^T on every antiparticle index of psi. The selected slot is
    contracted with gamma^mu (gamma^mu^T for antiparticles), every other slot
    with gamma^0 (resp. its transpose), so j^0 is the positive weight
    sum |psi|^2 for all slots.
    """
    n = psi.ndim - 1
    g0 = gammas.gamma[0]
    chibar = psi.conj()
    chi = psi
    for s in range(n):
        if s < n_p:
            chibar = _on_axis(chibar, g0.T, s + 1)
        else:
            chi = _on_axis(chi, g0.T, s + 1)
    for s in range(n):
        if s == slot:
            continue
        G = g0 if s < n_p else g0.T
        chi = _on_axis(chi, G, s + 1)
    axes = tuple(range(1, n + 1))
    out = np.empty((psi.shape[0], 4))
    worst = 0.0
    for mu in range(4):
        G = gammas.gamma[mu] if slot < n_p else gammas.gamma[mu].T
        val = np.sum(chibar * _on_axis(chi, G, slot + 1), axis=axes)
        out[:, mu] = val.real
        worst = max(worst, float(np.max(np.abs(val.imag), initial=0.0)))
    scale = max(1e-300, float(np.max(np.abs(out[:, 0]), initial=0.0)))
    if worst > IMAG_TOL * max(scale, 1.0):
        raise ValueError(f"corpuscle current has imaginary residue {worst:.3e}")
    return out


def corpuscle_current(wave: MultiWave, slot: int, points: np.ndarray, t: float) -> np.ndarray:
    """j^mu of corpuscle ``slot`` (0-based) at joint configuration(s) ``points``."""
    if not 0 <= slot < wave.n_slots:
        raise IndexError(f"slot {slot} outside 0..{wave.n_slots - 1}")
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 2
    if single:
        pts = pts[None]
    psi = wave(pts, t)
    if not np.all(np.isfinite(psi)):
        raise ValueError("wave function is not finite at the requested points")
    j = slot_currents(psi, wave.n_p, slot)
    return j[0] if single else j


def _all_velocities(wave: MultiWave, pts: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    psi = wave(pts, t)
    if not np.all(np.isfinite(psi)):
        raise ValueError("wave function is not finite at the requested points")
    v = np.empty(pts.shape)
    j0 = np.empty(pts.shape[:2])
    for s in range(wave.n_slots):
        j = slot_currents(psi, wave.n_p, s)
        j0[:, s] = j[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            v[:, s] = j[:, 1:] / j[:, :1]
    return v, j0


def bohm_velocity(wave: MultiWave, slot: int, points: np.ndarray, t: float) -> np.ndarray:
    """dx_slot/dt = j/j0; raises :class:`NodeRegion` where j0 <= the node threshold."""
    j = corpuscle_current(wave, slot, points, t)
    j0 = j[..., :1]
    if np.any(j0 <= wave.node_threshold):
        raise NodeRegion(f"j0 = {float(np.min(j0)):.3e} at or below node threshold "
                         f"{wave.node_threshold:.3e}")
    return j[..., 1:] / j0


@dataclass
class Trajectory:
    times: np.ndarray  # (T,)
    positions: np.ndarray  # (T, n_slots, 3)
    j0: np.ndarray  # (T, n_slots)
    steps: np.ndarray  # (T,) step size that produced each sample, 0 for the first
    kinds: tuple[str, ...]
    node_abort: bool = False
    underflow_abort: bool = False

    @property
    def completed(self) -> bool:
        return not (self.node_abort or self.underflow_abort)

    def to_csv(self) -> str:
        lines = ["t,slot,kind,x1,x2,x3,j0"]
        for it, t in enumerate(self.times):
            for s, kind in enumerate(self.kinds):
                x = self.positions[it, s]
                lines.append(f"{t:.17g},{s},{kind},{x[0]:.17g},{x[1]:.17g},{x[2]:.17g},"
                             f"{self.j0[it, s]:.17g}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {"times": self.times.tolist(), "positions": self.positions.tolist(),
                "j0": self.j0.tolist(), "steps": self.steps.tolist(), "kinds": list(self.kinds),
                "node_abort": self.node_abort, "underflow_abort": self.underflow_abort}


def _step_count(t0: float, t1: float, dt: float) -> tuple[int, float]:
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    return n, (t1 - t0) / n


def _rk4_batch(wave: MultiWave, x0: np.ndarray, t0: float, t1: float, dt: float,
               scale: float = 1.0, record: bool = False):
    """Fixed-step RK4 on all slots jointly; samples hitting a node are frozen.

    Returns final positions, alive mask and (optionally) the recorded history.
    """
    n, h = _step_count(t0, t1, dt)
    x = np.array(x0, dtype=float)
    alive = np.ones(x.shape[0], dtype=bool)
    L = np.asarray(wave.lattice.L)
    thr = wave.node_threshold
    history = []

    def rhs(y, t):
        v, j0 = _all_velocities(wave, y, t)
        bad = np.any(j0 <= thr, axis=1) | ~np.all(np.isfinite(v), axis=(1, 2))
        v[bad] = 0.0
        return scale * v, bad, j0

    t = t0
    _, _, j0 = rhs(x, t)
    if record:
        history.append((t, x.copy(), j0.copy(), 0.0))
    alive &= ~np.any(j0 <= thr, axis=1)
    if record and not alive.all():
        return x, alive, history, False
    for _ in range(n):
        if t + h == t:
            return x, alive, history, True
        k1, b1, _ = rhs(x, t)
        k2, b2, _ = rhs(x + 0.5 * h * k1, t + 0.5 * h)
        k3, b3, _ = rhs(x + 0.5 * h * k2, t + 0.5 * h)
        k4, b4, _ = rhs(x + h * k3, t + h)
        bad = b1 | b2 | b3 | b4
        alive &= ~bad
        step = h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        step[~alive] = 0.0
        x = np.mod(x + step, L)
        t = t + h
        _, j0 = _all_velocities(wave, x, t)
        alive &= ~np.any(j0 <= thr, axis=1)
        if record:
            history.append((t, x.copy(), j0.copy(), h))
            if not alive.all():
                break
    return x, alive, history, False


def integrate(wave: MultiWave, initial: np.ndarray, t0: float, t1: float, dt: float) -> Trajectory:
    """RK4 trajectory of one joint configuration ``initial[n_slots, 3]``.

    On a node encounter the partial trajectory is returned with
    ``node_abort`` set.
    """
    x0 = wave.lattice.wrap(np.asarray(initial, dtype=float))[None]
    if x0.shape[1:] != (wave.n_slots, 3):
        raise ValueError(f"initial configuration must have shape ({wave.n_slots}, 3)")
    _, alive, hist, underflow = _rk4_batch(wave, x0, t0, t1, dt, record=True)
    return Trajectory(
        times=np.array([h[0] for h in hist]),
        positions=np.array([h[1][0] for h in hist]),
        j0=np.array([h[2][0] for h in hist]),
        steps=np.array([h[3] for h in hist]),
        kinds=tuple(wave.kind(s) for s in range(wave.n_slots)),
        node_abort=not bool(alive[0]),
        underflow_abort=underflow,
    )


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Counter-based stream for one fixed-size chunk of trajectory indices."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(chunk)]))


def _active_axes(lattice: Lattice) -> list[int]:
    return [i for i, a in enumerate(lattice.active) if a]


def marginal_density(wave: MultiWave, slot: int, t: float, G: int = 4096,
                     G_other: int = 96) -> tuple[np.ndarray, np.ndarray]:
    """Normalized density of the slot's first active coordinate on a fine periodic grid.

    Other slots are integrated out on a ``G_other`` grid per slot; inactive
    axes carry no dependence and are held at 0.
    """
    ax = _active_axes(wave.lattice)[0]
    L = wave.lattice.L[ax]
    xs = np.arange(G) * L / G
    n = wave.n_slots
    others = [s for s in range(n) if s != slot]
    og = np.arange(G_other) * L / G_other
    dens = np.zeros(G)
    grids = np.meshgrid(*([og] * len(others)), indexing="ij") if others else []
    other_pts = np.stack([g.reshape(-1) for g in grids], axis=-1) if others else np.zeros((1, 0))
    for start in range(0, G, 256):
        xb = xs[start:start + 256]
        P = np.zeros((xb.size, other_pts.shape[0], n, 3))
        P[:, :, slot, ax] = xb[:, None]
        for j, s in enumerate(others):
            P[:, :, s, ax] = other_pts[None, :, j]
        flat = P.reshape(-1, n, 3)
        j0 = slot_currents(wave(flat, t), wave.n_p, slot)[:, 0]
        dens[start:start + 256] = j0.reshape(xb.size, -1).sum(axis=1)
    dens /= np.sum(dens) * (L / G)
    return xs, dens


def _cdf_from_density(xs: np.ndarray, dens: np.ndarray, L: float):
    h = L / xs.size
    edges = np.append(xs, L)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens + np.roll(dens, -1)) * h)])
    cum /= cum[-1]
    return edges, cum


def sample_initial(wave: MultiWave, M: int, t0: float, seed: int) -> np.ndarray:
    """Draw M configurations from the j0 density at t0.

    One slot on one active axis uses the inverse CDF on a fine grid; otherwise
    rejection sampling with a grid-estimated bound. Inactive coordinates are
    uniform.
    """
    lattice = wave.lattice
    axes = _active_axes(lattice)
    L = np.asarray(lattice.L)
    n = wave.n_slots
    out = np.empty((M, n, 3))
    if n == 1 and len(axes) == 1:
        xs, dens = marginal_density(wave, 0, t0)
        edges, cum = _cdf_from_density(xs, dens, L[axes[0]])
    else:
        bound = _density_bound(wave, t0)
    for c, start in enumerate(range(0, M, CHUNK)):
        m = min(CHUNK, M - start)
        rng = chunk_rng(seed, c)
        if n == 1 and len(axes) == 1:
            x = rng.uniform(size=(m, 1, 3)) * L
            x[:, 0, axes[0]] = np.interp(rng.uniform(size=m), cum, edges)
        else:
            x = _rejection(wave, rng, m, t0, bound)
        out[start:start + m] = x
    return out


def _density_bound(wave: MultiWave, t: float) -> float:
    rng = np.random.default_rng(0)
    pts = rng.uniform(size=(20000, wave.n_slots, 3)) * np.asarray(wave.lattice.L)
    psi = wave(pts, t)
    j0 = np.sum(np.abs(psi.reshape(psi.shape[0], -1)) ** 2, axis=1)
    return 1.5 * float(np.max(j0))


def _rejection(wave, rng, m, t, bound):
    L = np.asarray(wave.lattice.L)
    got = []
    need = m
    while need > 0:
        cand = rng.uniform(size=(2 * need + 16, wave.n_slots, 3)) * L
        psi = wave(cand, t)
        j0 = np.sum(np.abs(psi.reshape(psi.shape[0], -1)) ** 2, axis=1)
        if np.any(j0 > bound):
            raise RuntimeError("rejection bound exceeded; density estimate too low")
        keep = cand[rng.uniform(size=cand.shape[0]) * bound < j0]
        got.append(keep[:need])
        need -= len(got[-1])
    return np.concatenate(got)


@dataclass
class EquivarianceReport:
    ks_statistic: float
    critical_value: float
    exclusion_fraction: float
    passed: bool
    M: int
    seed: int
    t0: float
    t1: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"ks_statistic": self.ks_statistic, "critical_value": self.critical_value,
                "exclusion_fraction": self.exclusion_fraction, "passed": self.passed,
                "M": self.M, "seed": self.seed, "t0": self.t0, "t1": self.t1, **self.extra}


def run_ensemble(wave: MultiWave, x0: np.ndarray, t0: float, t1: float, dt: float,
                 threads: int = 1, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Integrate many configurations in fixed chunks, optionally on a thread pool."""
    chunks = [x0[i:i + CHUNK] for i in range(0, len(x0), CHUNK)]

    def work(chunk):
        x, alive, _, _ = _rk4_batch(wave, chunk, t0, t1, dt, scale=scale)
        return x, alive

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    return (np.concatenate([r[0] for r in results]),
            np.concatenate([r[1] for r in results]))


def equivariance_test(wave: MultiWave, slot: int, M: int, t0: float, t1: float, seed: int,
                      dt: float = 0.01, threads: int = 1, velocity_scale: float = 1.0,
                      ks_coeff: float = KS_COEFF_1PCT) -> EquivarianceReport:
    """Sample from j0 at t0, transport with the guidance flow, KS-compare at t1.

    ``velocity_scale=0`` freezes the dynamics (negative control).
    """
    if M < 1000:
        raise ValueError("equivariance test needs M >= 1000")
    x0 = sample_initial(wave, M, t0, seed)
    x1, alive = run_ensemble(wave, x0, t0, t1, dt, threads, velocity_scale)
    excluded = 1.0 - float(np.mean(alive))
    ax = _active_axes(wave.lattice)[0]
    L = wave.lattice.L[ax]
    xs, dens = marginal_density(wave, slot, t1)
    edges, cum = _cdf_from_density(xs, dens, L)
    sample = x1[alive, slot, ax]
    ks = float(scipy.stats.kstest(sample, lambda q: np.interp(q, edges, cum)).statistic)
    crit = ks_coeff / np.sqrt(M)
    return EquivarianceReport(ks, crit, excluded,
                              bool(ks < crit and excluded <= MAX_EXCLUSION), M, seed, t0, t1)
