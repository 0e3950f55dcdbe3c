"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from bohmfermion import causal_field as cf
from bohmfermion import runner, scenario
from bohmfermion.dirac import (GAMMAS, METRIC, Lattice, ModeCoefficients, build_mode_basis,
                               gram_matrix, synthesize_field, synthesize_values)
from bohmfermion.fock import (Coupling, FockState, HamiltonianSpec, antiparticle_density_expectation,
                              basis_state, build_fock_basis, build_hamiltonian, evolve, wavefunction)
from bohmfermion.projection import (analytic_continuity_residual, current_series,
                                    divergence_residual, projection_kernel, spinor_current,
                                    split_field)
from bohmfermion.trajectories import KS_COEFF_1PCT, equivariance_test, single_corpuscle_wave

from conftest import ACCEPTANCE_LINES

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def report(n, title, checks, elapsed, budget):
    """checks: list of (label, value, tol, ok). Records a line and asserts all."""
    timed = elapsed < budget
    ok = all(c[3] for c in checks) and timed
    parts = [f"{lab}={val:.3g} (tol {tol:g})" for lab, val, tol, _ in checks]
    line = (f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}; " + "; ".join(parts)
            + f"; {elapsed:.2f}s (budget {budget:g}s)")
    ACCEPTANCE_LINES.append(line)
    print(line)
    failed = [c[0] for c in checks if not c[3]] + ([] if timed else ["runtime"])
    assert ok, f"criterion {n} failed: {failed}"


def le(label, value, tol):
    return (label, float(value), tol, bool(value <= tol))


def lt(label, value, tol):
    return (label, float(value), tol, bool(value < tol))


def ge(label, value, tol):
    return (label, float(value), tol, bool(value >= tol))


def std_lattice():
    return Lattice.create(2 * np.pi, 64, (True, False, False))


def thin_lattice():
    return Lattice.create([2 * np.pi, 1.0, 1.0], 64, (True, False, False))


def rand_coeffs(mb, seed):
    rng = np.random.default_rng(seed)
    n = len(mb)
    return ModeCoefficients(rng.normal(size=n) + 1j * rng.normal(size=n),
                            rng.normal(size=n) + 1j * rng.normal(size=n))


def test_criterion_1_clifford_and_orthonormality():
    t = time.perf_counter()
    g = GAMMAS.gamma
    worst = max(np.max(np.abs(g[m] @ g[n] + g[n] @ g[m] - 2 * METRIC[m, n] * np.eye(4)))
                for m in range(4) for n in range(4))
    mb = build_mode_basis(std_lattice(), 1.0, 5)
    G = gram_matrix(mb)
    gram = np.max(np.abs(G - np.eye(len(G))))
    report(1, "Clifford/orthonormality",
           [("anticommutator", worst, 0.0, worst == 0.0), le("gram", gram, 1e-10)],
           time.perf_counter() - t, 1.0)


def test_criterion_2_projection_suite():
    t = time.perf_counter()
    mb = build_mode_basis(std_lattice(), 1.0, 5)
    P, A = projection_kernel(mb, "P"), projection_kernel(mb, "A")
    rng = np.random.default_rng(0)
    raw = rng.normal(size=mb.lattice.shape + (4,)) + 1j * rng.normal(size=mb.lattice.shape + (4,))
    scale = np.abs(raw).max()
    Pp, Ap = P.apply(raw), A.apply(raw)
    idem = max(np.abs(P.apply(Pp) - Pp).max(), np.abs(A.apply(Ap) - Ap).max()) / scale
    annih = max(np.abs(A.apply(Pp)).max(), np.abs(P.apply(Ap)).max()) / scale
    field = synthesize_field(mb, rand_coeffs(mb, 1), 0.3)
    comp = split_field(field, P, A).residual
    report(2, "projection kernels (N=64, k_cut=5)",
           [le("idempotence", idem, 1e-10), le("annihilation", annih, 1e-10),
            le("completeness", comp, 1e-10)], time.perf_counter() - t, 5.0)


def test_criterion_3_current_conservation():
    t = time.perf_counter()
    mb = build_mode_basis(thin_lattice(), 1.0, 5)
    c = rand_coeffs(mb, 2)
    c = ModeCoefficients(c.b / np.linalg.norm(c.b), c.dstar / np.linalg.norm(c.dstar))
    spectral = max(analytic_continuity_residual(mb, c, tt, part)
                   for part in ("P", "A", "full") for tt in (0.0, 0.9))
    ratios = []
    for part in ("P", "A"):
        r = [divergence_residual(current_series(mb, c, [0.5 - dt, 0.5, 0.5 + dt], part))
             for dt in (1e-3, 5e-4)]
        ratios.append(r[0] / r[1])
    dev = max(max(q / 4, 4 / q) for q in ratios)
    report(3, "current conservation",
           [le("spectral residual", spectral, 1e-8),
            ("Richardson ratio P", ratios[0], 4.0, True),
            ("Richardson ratio A", ratios[1], 4.0, True),
            le("ratio deviation factor", dev, 2.0)], time.perf_counter() - t, 10.0)


def test_criterion_4_one_positron_reduction():
    t = time.perf_counter()
    mb = build_mode_basis(thin_lattice(), 1.0, 5)
    fb = build_fock_basis([], list(range(len(mb))), 1)
    rng = np.random.default_rng(3)
    c = np.zeros(fb.dim, complex)
    amp = rng.normal(size=len(mb)) + 1j * rng.normal(size=len(mb))
    c[fb.sector_indices(0, 1)] = amp / np.linalg.norm(amp)
    state = FockState(fb, c)
    wave = wavefunction(state, mb, 0, 1)
    x = rng.uniform(0, 1, size=(100, 1, 3)) * np.asarray(mb.lattice.L)
    from bohmfermion.trajectories import corpuscle_current
    j = corpuscle_current(wave, 0, x, 0.6)
    psiA = synthesize_values(mb, ModeCoefficients(np.zeros(len(mb), complex),
                                                  np.conj(state.c[fb.sector_indices(0, 1)])),
                             x[:, 0], 0.6)
    ref = spinor_current(psiA)
    err = np.abs(j - ref).max()
    report(4, "one-positron current reduction (100 points)",
           [le("max abs error", err, 1e-10)], time.perf_counter() - t, 1.0)


def test_criterion_5_positron_density_cross_check():
    t = time.perf_counter()
    mb = build_mode_basis(thin_lattice(), 1.0, 5)
    rng = np.random.default_rng(4)
    worst = 0.0
    for trial in range(5):
        modes = rng.choice(len(mb), size=4, replace=False)
        fb = build_fock_basis([], modes.tolist(), 1)
        c = np.zeros(fb.dim, complex)
        c[fb.sector_indices(0, 1)] = rng.normal(size=4) + 1j * rng.normal(size=4)
        s = FockState(fb, c / np.linalg.norm(c))
        x = rng.uniform(0, 1, size=(40, 3)) * np.asarray(mb.lattice.L)
        op, wv = antiparticle_density_expectation(s, mb, x, rng.uniform(0, 3))
        worst = max(worst, float(np.abs(op - wv).max()))
    report(5, "positron density operator vs wave function (5 states)",
           [le("max abs difference", worst, 1e-10)], time.perf_counter() - t, 1.0)


def test_criterion_6_fock_dynamics():
    t = time.perf_counter()
    mb = build_mode_basis(std_lattice(), 1.0, 5)
    pm = [mb.index(m) for m in [(0, 0, 0, 1), (1, 0, 0, 1), (-2, 0, 0, -1)]]
    am = [mb.index(m) for m in [(0, 0, 0, -1), (3, 0, 0, 1)]]
    fb = build_fock_basis(pm, am)
    rng = np.random.default_rng(5)
    c = rng.normal(size=fb.dim) + 1j * rng.normal(size=fb.dim)
    s = FockState(fb, c / np.linalg.norm(c))
    free = build_hamiltonian(fb, HamiltonianSpec.from_modes(fb, mb))
    mix = build_hamiltonian(fb, HamiltonianSpec.from_modes(
        fb, mb, "quadratic-mixing", (Coupling(0, 0, 0.4), Coupling(2, 1, 0.2 - 0.3j))))
    e_min = float(min(mb.energy[m] for m in pm + am))
    times = np.linspace(0, 10 / e_min, 41)
    unit = max(abs(evolve(s, H, tt).norm() - 1) for H in (free, mix) for tt in times)
    drift = max(np.abs(np.abs(evolve(s, free, tt).c) - np.abs(s.c)).max() for tt in times)
    fb2 = build_fock_basis([0], [0])
    Ep, Ea, lam = 1.3, 0.9, 0.35 + 0.2j
    H2 = build_hamiltonian(fb2, HamiltonianSpec("quadratic-mixing", [Ep], [Ea],
                                                (Coupling(0, 0, lam),)))
    delta = 0.5 * (Ep + Ea)
    om = math.sqrt(delta**2 + abs(lam) ** 2)
    rabi = 0.0
    for tt in np.linspace(0, 12, 25):
        out = evolve(basis_state(fb2), H2, tt)
        vac = np.exp(-1j * delta * tt) * (np.cos(om * tt) + 1j * delta / om * np.sin(om * tt))
        pair = -1j * lam / om * np.sin(om * tt) * np.exp(-1j * delta * tt)
        rabi = max(rabi, abs(out.c[fb2.index(0)] - vac),
                   abs(out.c[fb2.index(fb2.mask_of([0], [0]))] - pair))
    report(6, "Fock dynamics",
           [le("unitarity", unit, 1e-12), le("free |c_K| drift", drift, 1e-12),
            le("Rabi error", rabi, 1e-10)], time.perf_counter() - t, 1.0)


def test_criterion_7_dirac_equivariance():
    t = time.perf_counter()
    mb = build_mode_basis(std_lattice(), 1.0, 5)
    c = ModeCoefficients.from_dict(mb, {(1, 0, 0, 1): 1 / math.sqrt(2),
                                        (2, 0, 0, 1): 1 / math.sqrt(2)})
    wave = single_corpuscle_wave(mb, c, "P")
    beat = 2 * np.pi / (math.sqrt(5) - math.sqrt(2))
    M = 10_000
    rep = equivariance_test(wave, 0, M, 0.0, beat / 4, seed=3, dt=0.01)
    report(7, "first-quantized equivariance (M=1e4, quarter beat)",
           [lt("KS", rep.ks_statistic, KS_COEFF_1PCT / math.sqrt(M)),
            lt("exclusion", rep.exclusion_fraction, 0.01)], time.perf_counter() - t, 120.0)


def pair_model(c, kind, G=128):
    fb = build_fock_basis([0], [0])
    couplings = (Coupling(0, 0, 0.5),) if kind != "free" else ()
    H = build_hamiltonian(fb, HamiltonianSpec(kind, [1.0], [1.0], couplings))
    c = np.asarray(c, complex)
    return cf.CausalFieldModel(cf.build_functional_basis(fb, cf.ConfigGrid(2, 6.0, G)), H,
                               FockState(fb, c / np.linalg.norm(c)))


def test_criterion_8_zero_source_branch():
    t = time.perf_counter()
    fb = build_fock_basis([0], [0])
    worst_E = worst_e = worst_v = 0.0
    branch = True
    for occ in (([], []), ([0], []), ([], [0]), ([0], [0])):
        m = pair_model(basis_state(fb, *occ).c, "free")
        for tt in (0.0, 0.9):
            st = cf.field_state(m, tt)
            branch &= st.source_vanishes
            worst_E = max(worst_E, float(np.abs(st.E).max()))
            worst_e = max(worst_e, float(np.abs(st.e).max()))
            worst_v = max(worst_v, float(np.nan_to_num(np.abs(st.v - st.u)).max()))
    report(8, "J=0 branch (sector-diagonal H)",
           [("J detected zero", float(branch), 1.0, branch), le("max|E|", worst_E, 0.0),
            le("max|e|", worst_e, 0.0), le("max|v-u|", worst_v, 1e-10)],
           time.perf_counter() - t, 10.0)


def test_criterion_9_nonzero_source_branch():
    t = time.perf_counter()
    m = pair_model([0.5, 0.5j, 0.5, -0.5], "quadratic-mixing")
    g = m.grid
    worst = dict(J=0.0, P=0.0, C=0.0, G=0.0)
    for tt in (0.0, 0.7, 1.6):
        st = cf.field_state(m, tt)
        assert not st.source_vanishes
        worst["J"] = max(worst["J"], abs(g.integrate(st.J)))
        worst["P"] = max(worst["P"], st.poisson_residual / float(np.abs(st.J).max()))
        worst["C"] = max(worst["C"], cf.continuity_residual(st, g))
        worst["G"] = max(worst["G"], float(np.abs(cf.mean_velocity(st, g)
                                                  - m.mean_position_rate(tt)).max()))
    report(9, "J!=0 branch (pair mixing, n=2, G=128)",
           [le("|int J|", worst["J"], 1e-6), le("Poisson rel", worst["P"], 1e-8),
            le("continuity", worst["C"], 1e-6), le("mean-velocity identity", worst["G"], 1e-6)],
           time.perf_counter() - t, 120.0)


def test_criterion_10_field_equivariance():
    t = time.perf_counter()
    m = pair_model([1, 0, 0, 0], "quadratic-mixing")
    M = 10_000
    rep = cf.field_equivariance_test(m, M, 0.0, 1.0, seed=11, dt=0.05)
    crit = KS_COEFF_1PCT / math.sqrt(M)
    report(10, "field-trajectory equivariance (M=1e4)",
           [lt(f"KS axis {a}", s, crit) for a, s in enumerate(rep.ks_statistics)]
           + [lt("exclusion", rep.exclusion_fraction, 0.01)], time.perf_counter() - t, 300.0)


def test_criterion_11_effectivity():
    t = time.perf_counter()
    m = pair_model([0.5, 0.5j, 0.5, -0.5], "quadratic-mixing")
    worst_sum = 0.0
    for tt in (0.0, 0.5, 1.3):
        eff = cf.effectivity(m, m.grid.points(), tt)
        vals = eff.values[~eff.indeterminate]
        worst_sum = max(worst_sum, float(np.abs(vals.sum(axis=1) - 1).max()))
    fb = m.basis.fock
    ind = 0.0
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(200, 2)) * 2
    for occ in (([], []), ([0], []), ([], [0]), ([0], [0])):
        pm = pair_model(basis_state(fb, *occ).c, "quadratic-mixing")
        eff = cf.effectivity(pm, pts, 0.0)
        target = np.zeros(len(eff.sectors))
        target[eff.sectors.index((len(occ[0]), len(occ[1])))] = 1.0
        ind = max(ind, float(np.abs(eff.values - target).max()))
    # tail dominance: (|0> + b+|0>)/sqrt(2) under free evolution
    tail = pair_model([1, 1, 0, 0], "free")
    phi1 = np.array([-6.0, -5.0, -4.5, -4.0, 4.0, 4.5, 5.0, 6.0])
    pts = np.stack([phi1, np.zeros_like(phi1)], axis=1)
    e10 = cf.effectivity(tail, pts, 0.0).values[:, fb.sectors().index((1, 0))]
    r = (cf.oscillator(1, phi1) / cf.oscillator(0, phi1)) ** 2
    analytic = np.max(np.abs(e10 - r / (1 + r)))
    report(11, "effectivity",
           [le("sum-to-one", worst_sum, 1e-12), le("pure-sector indicator", ind, 1e-12),
            le("tail vs analytic ratio", analytic, 1e-12),
            ge("min e_10 at |phi1|>=4", e10.min(), 0.99)], time.perf_counter() - t, 10.0)


def test_criterion_12_determinism(tmp_path):
    t = time.perf_counter()
    files = sorted(SCENARIOS.glob("*.json"))
    mismatched = []
    for f in files:
        doc = scenario.load(f)
        a = runner.run(doc, tmp_path / f.stem / "a")
        b = runner.run(doc, tmp_path / f.stem / "b")
        same = a.manifest == b.manifest and all(
            (tmp_path / f.stem / "a" / n).read_bytes() == (tmp_path / f.stem / "b" / n).read_bytes()
            for n in a.manifest)
        if not same or not a.manifest:
            mismatched.append(f.stem)
    report(12, f"determinism ({len(files)} shipped scenarios run twice)",
           [le("mismatching scenarios", len(mismatched), 0)], time.perf_counter() - t, 600.0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
