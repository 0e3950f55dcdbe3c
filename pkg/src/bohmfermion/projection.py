"""Particle/antiparticle projection kernels, currents and conservation checks."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dirac import (GAMMAS, GammaSet, Lattice, ModeBasis, ModeCoefficients, SpinorField,
                    evaluate_mode, spectral_derivative, synthesize_field, time_derivative)

IMAG_TOL = 1e-10
OUT_OF_BAND_TOL = 1e-8
DENSE_LIMIT = 32


class OutOfBandWarning(UserWarning):
    """The field has content outside the span of the truncated mode basis."""


class ProjectionKernel:
    """Omega(x, x') = sum_k w_k(x) w_k^dagger(x') kept in factored form.

    ``W`` has shape ``(n_modes, n_points * 4)``: each row is one mode function
    at t = 0 flattened over grid points and spinor components.
    """

    def __init__(self, basis: ModeBasis, kind: str):
        if kind not in ("P", "A"):
            raise ValueError(f"kind must be 'P' or 'A', got {kind!r}")
        self.basis = basis
        self.kind = kind
        self.lattice = basis.lattice
        x = self.lattice.points()
        self.W = np.stack([evaluate_mode(basis, i, kind, x, 0.0).reshape(-1)
                           for i in range(len(basis))])

    @property
    def rank(self) -> int:
        return self.W.shape[0]

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        return self.lattice.cell_volume * (self.W.conj() @ values.reshape(-1))

    def apply(self, values: np.ndarray) -> np.ndarray:
        """sum_x' dV Omega(x, x') psi(x') for an array shaped like the lattice field."""
        return (self.coefficients(values) @ self.W).reshape(values.shape)

    def dense(self) -> np.ndarray:
        """Matrix of Omega including the quadrature weight, for small lattices only."""
        if max(self.lattice.N) > DENSE_LIMIT:
            raise ValueError(f"dense kernels only for N <= {DENSE_LIMIT}")
        return self.lattice.cell_volume * (self.W.T @ self.W.conj())


def projection_kernel(basis: ModeBasis, kind: str) -> ProjectionKernel:
    return ProjectionKernel(basis, kind)


def extract_part(field: SpinorField, kernel: ProjectionKernel) -> SpinorField:
    if field.lattice != kernel.lattice:
        raise ValueError("field and kernel live on different lattices")
    return SpinorField(field.lattice, kernel.apply(field.values), field.t)


@dataclass(frozen=True)
class FieldSplit:
    particle: SpinorField
    antiparticle: SpinorField
    residual: float  # ||psi - psi_P - psi_A|| / ||psi||
    out_of_band: bool


def split_field(field: SpinorField, p_kernel: ProjectionKernel,
                a_kernel: ProjectionKernel) -> FieldSplit:
    """Both parts plus a completeness diagnostic; warns on out-of-band content."""
    P = extract_part(field, p_kernel)
    A = extract_part(field, a_kernel)
    norm = field.norm()
    residual = (field - P - A).norm() / norm if norm > 0 else 0.0
    flagged = residual > OUT_OF_BAND_TOL
    if flagged:
        warnings.warn(f"field has out-of-band content (relative residual {residual:.2e})",
                      OutOfBandWarning, stacklevel=2)
    return FieldSplit(P, A, residual, flagged)


@dataclass(frozen=True)
class CurrentField:
    """Contravariant j^mu = psi-bar gamma^mu psi; ``values[..., 0]`` is j_0 = j^0."""

    lattice: Lattice
    values: np.ndarray  # (N1, N2, N3, 4) real
    t: float = 0.0

    @property
    def density(self) -> np.ndarray:
        return self.values[..., 0]

    def charge(self) -> float:
        return float(np.sum(self.density) * self.lattice.cell_volume)

    def velocity(self) -> np.ndarray:
        return self.values[..., 1:] / self.values[..., :1]

    def to_json(self) -> dict:
        return {"lattice": self.lattice.to_json(), "t": self.t,
                "shape": list(self.values.shape), "values": self.values.reshape(-1).tolist()}

    def to_csv(self) -> str:
        """Rows ``x1,x2,x3,j0,j1,j2,j3`` in C order over the grid."""
        x = self.lattice.points().reshape(-1, 3)
        j = self.values.reshape(-1, 4)
        lines = ["x1,x2,x3,j0,j1,j2,j3"]
        for xi, ji in zip(x, j):
            lines.append(",".join(f"{v:.17g}" for v in (*xi, *ji)))
        return "\n".join(lines) + "\n"


def spinor_current(values: np.ndarray, gammas: GammaSet = GAMMAS) -> np.ndarray:
    """j^mu = psi^dagger gamma^0 gamma^mu psi for ``values[..., 4]``; raises on complex residue."""
    j = np.einsum("...a,mab,...b->...m", values.conj(), gammas.alpha, values)
    scale = max(1.0, float(np.max(np.abs(j.real))) if j.size else 1.0)
    residue = float(np.max(np.abs(j.imag))) if j.size else 0.0
    if residue > IMAG_TOL * scale:
        raise ValueError(f"current has imaginary residue {residue:.3e}; field or gammas corrupted")
    return j.real


def current(field: SpinorField, gammas: GammaSet = GAMMAS) -> CurrentField:
    return CurrentField(field.lattice, spinor_current(field.values, gammas), field.t)


def spatial_divergence(cur: CurrentField) -> np.ndarray:
    out = np.zeros(cur.lattice.shape)
    for i in range(3):
        out += spectral_derivative(cur.values[..., i + 1], cur.lattice, i)
    return out


def divergence_residual(fields: Sequence[CurrentField]) -> float:
    """max |d_t j0 + div j| with a central time difference at every interior sample.

    Samples must be uniformly spaced in time; the spatial divergence is spectral.
    """
    if len(fields) < 3:
        raise ValueError("need at least 3 time samples")
    times = np.array([f.t for f in fields])
    dts = np.diff(times)
    if np.any(dts <= 0) or np.max(np.abs(dts - dts[0])) > 1e-12 * max(1.0, abs(times[-1])):
        raise ValueError("time samples must be uniform and increasing")
    dt = dts[0]
    worst = 0.0
    for i in range(1, len(fields) - 1):
        dj0 = (fields[i + 1].density - fields[i - 1].density) / (2 * dt)
        worst = max(worst, float(np.max(np.abs(dj0 + spatial_divergence(fields[i])))))
    return worst


def part_coefficients(coeffs: ModeCoefficients, part: str) -> ModeCoefficients:
    if part == "P":
        return ModeCoefficients(coeffs.b, np.zeros_like(coeffs.dstar))
    if part == "A":
        return ModeCoefficients(np.zeros_like(coeffs.b), coeffs.dstar)
    if part == "full":
        return coeffs
    raise ValueError(f"unknown part {part!r}")


def analytic_continuity_residual(basis: ModeBasis, coeffs: ModeCoefficients, t: float,
                                 part: str = "full", gammas: GammaSet = GAMMAS) -> float:
    """Continuity residual with d_t j0 = 2 Re(psi^dagger d_t psi) taken from mode phases."""
    c = part_coefficients(coeffs, part)
    field = synthesize_field(basis, c, t)
    dpsi = time_derivative(basis, c, t)
    dj0 = 2 * np.real(np.sum(field.values.conj() * dpsi, axis=-1))
    div = spatial_divergence(current(field, gammas))
    return float(np.max(np.abs(dj0 + div)))


def current_series(basis: ModeBasis, coeffs: ModeCoefficients, times: Sequence[float],
                   part: str = "full") -> list[CurrentField]:
    c = part_coefficients(coeffs, part)
    return [current(synthesize_field(basis, c, t)) for t in times]
