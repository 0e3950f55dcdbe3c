"""Run orchestration: scenario -> pipeline -> artifacts + report."""
from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import causal_field as cf
from .dirac import (ModeCoefficients, clifford_residual, dirac_residual, gram_matrix,
                    synthesize_field, synthesize_values)
from .fock import (HamiltonianMatrix, Propagator, build_hamiltonian, ladder_matrix,
                   number_operator, wavefunction)
from .projection import (analytic_continuity_residual, current, part_coefficients,
                         projection_kernel, spinor_current, split_field)
from .scenario import Built, build
from .trajectories import (Trajectory, _all_velocities, corpuscle_current, equivariance_test,
                           integrate, single_corpuscle_wave)

REPORT_NAME = "report.json"


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    tolerance: float | None = None
    applicable: bool = True
    note: str = ""

    def to_json(self) -> dict:
        d = {"name": self.name, "passed": self.passed, "applicable": self.applicable}
        if self.value is not None:
            d["value"] = self.value
        if self.tolerance is not None:
            d["tolerance"] = self.tolerance
        if self.note:
            d["note"] = self.note
        return d


def below(name: str, value: float, tol: float, note: str = "") -> Check:
    value = float(value)
    return Check(name, bool(np.isfinite(value) and value <= tol), value, tol, note=note)


def moot(name: str, note: str) -> Check:
    return Check(name, True, applicable=False, note=note)


@dataclass
class Outcome:
    checks: list[Check] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)
    aborts: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


@dataclass
class RunReport:
    scenario: dict
    kind: str
    checks: list[Check]
    manifest: dict[str, str]
    aborts: list[str]
    timings: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        return {"scenario": self.scenario, "kind": self.kind, "passed": self.passed,
                "invariants": [c.to_json() for c in self.checks],
                "artifacts": [{"path": k, "sha256": v} for k, v in self.manifest.items()],
                "aborts": self.aborts, "timings": self.timings}


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def fmt(x: float) -> str:
    return f"{x:.17g}"


# ---- shared pieces -------------------------------------------------------------------------

def one_body_coefficients(built: Built, c: np.ndarray) -> ModeCoefficients:
    """b_k and d*_k read off the one-particle and one-antiparticle Fock amplitudes."""
    fb, mb = built.fock_basis, built.mode_basis
    coeffs = ModeCoefficients.zeros(mb)
    if fb.cap < 1:
        return coeffs
    for i, m in enumerate(fb.particle_modes):
        coeffs.b[m] += c[fb.index(fb.mask_of([i], []))]
    for j, m in enumerate(fb.antiparticle_modes):
        coeffs.dstar[m] += np.conj(c[fb.index(fb.mask_of([], [j]))])
    return coeffs


def time_window(doc: dict) -> tuple[float, float, float]:
    t = doc["time"]
    return float(t.get("t0", 0.0)), float(t["t1"]), float(t["dt"])


def trajectories_csv(trajs: list[Trajectory]) -> str:
    lines = ["traj,t,slot,kind,x1,x2,x3,j0"]
    for n, tr in enumerate(trajs):
        for row in tr.to_csv().splitlines()[1:]:
            lines.append(f"{n},{row}")
    return "\n".join(lines) + "\n"


def field_trajectories_csv(trajs: list[cf.FieldTrajectory], n: int) -> str:
    head = ",".join(f"phi{a + 1}" for a in range(n))
    lines = [f"traj,t,{head},rho"]
    for k, tr in enumerate(trajs):
        for t, phi, rho in zip(tr.times, tr.phi, tr.rho):
            lines.append(",".join([str(k), fmt(t), *map(fmt, phi), fmt(rho)]))
    return "\n".join(lines) + "\n"


def _max_subluminal(trajs, waves) -> float:
    worst = 0.0
    for tr, wave in zip(trajs, waves):
        for t, x in zip(tr.times, tr.positions):
            v, j0 = _all_velocities(wave, x[None], t)
            ok = j0[0] > wave.node_threshold
            if ok.any():
                worst = max(worst, float(np.max(np.linalg.norm(v[0, ok], axis=-1))))
    return worst


def _traj_checks(trajs: list[Trajectory], aborts: list[str], label: str) -> Check:
    bad = [i for i, t in enumerate(trajs) if not t.completed]
    for i in bad:
        why = "node encounter" if trajs[i].node_abort else "step underflow"
        aborts.append(f"{label} trajectory {i}: {why} at t={fmt(trajs[i].times[-1])}")
    return Check(f"{label}_trajectories_completed", not bad, float(len(bad)), 0.0)


# ---- run kinds -----------------------------------------------------------------------------

def run_dirac_trajectories(built: Built, out: Outcome, threads: int, seed):
    doc = built.doc
    mb, lat = built.mode_basis, built.lattice
    t0, t1, dt = time_window(doc)
    coeffs = one_body_coefficients(built, built.initial.c)
    out.checks.append(below("clifford_residual", clifford_residual(), 1e-14))
    out.checks.append(below("mode_gram_deviation",
                            np.max(np.abs(gram_matrix(mb) - np.eye(2 * len(mb)))), 1e-10))
    out.checks.append(below("dirac_residual", dirac_residual(mb, coeffs, t0), 1e-8))
    field0 = synthesize_field(mb, coeffs, t0)
    split = split_field(field0, projection_kernel(mb, "P"), projection_kernel(mb, "A"))
    out.checks.append(below("projection_completeness", split.residual, 1e-10))
    charges = {}
    for part in ("P", "A"):
        res = max(analytic_continuity_residual(mb, coeffs, t, part) for t in (t0, t1))
        out.checks.append(below(f"continuity_residual_{part}", res, 1e-8))
        q = [current(synthesize_field(mb, part_coefficients(coeffs, part), t)).charge()
             for t in (t0, t1)]
        charges[part] = q
        out.checks.append(below(f"charge_drift_{part}", abs(q[1] - q[0]), 1e-10))
    out.artifacts["current_P_t0.csv"] = current(split.particle).to_csv()
    out.artifacts["current_A_t0.csv"] = current(split.antiparticle).to_csv()
    trajs, waves = [], []
    positions = doc.get("positions", {})
    empty_refs = 0
    for part, key in (("P", "particle"), ("A", "antiparticle")):
        starts = positions.get(key)
        if charges[part][0] <= 0:
            if starts:
                empty_refs += 1
                out.aborts.append(f"{key} positions given but the {key} part is empty")
            continue
        if starts is None:
            # default: one corpuscle at a third of each active box edge
            starts = [[float(lat.L[i]) / 3 if lat.active[i] else 0.0 for i in range(3)]]
        wave = single_corpuscle_wave(mb, coeffs, part)
        for x in starts:
            trajs.append(integrate(wave, np.array([x]), t0, t1, dt))
            waves.append(wave)
    out.checks.append(Check("positions_reference_nonempty_parts", empty_refs == 0,
                            float(empty_refs), 0.0))
    out.checks.append(_traj_checks(trajs, out.aborts, "corpuscle"))
    out.checks.append(below("max_speed", _max_subluminal(trajs, waves), 1.0 + 1e-12))
    out.artifacts["trajectories.csv"] = trajectories_csv(trajs)
    out.artifacts["trajectories.json"] = dumps([t.to_json() for t in trajs])


def _check_points(wave, n: int, count: int = 64) -> np.ndarray:
    # fixed generator: these are diagnostics, not sampling
    rng = np.random.Generator(np.random.Philox(key=0))
    return rng.uniform(0, 1, size=(count, n, 3)) * np.asarray(wave.lattice.L)


def run_multiparticle(built: Built, out: Outcome, threads: int, seed):
    doc = built.doc
    mb = built.mode_basis
    t0, t1, dt = time_window(doc)
    n_p, n_a = doc["sector"]
    wave = wavefunction(built.initial, mb, n_p, n_a)
    n = n_p + n_a
    pts = _check_points(wave, n)
    psi = wave(pts, t0)
    scale = float(np.max(np.abs(psi))) or 1.0
    worst = 0.0
    for lo, hi in ((0, n_p), (n_p, n)):
        if hi - lo >= 2:
            swapped = pts.copy()
            swapped[:, [lo, lo + 1]] = pts[:, [lo + 1, lo]]
            flip = np.swapaxes(wave(swapped, t0), 1 + lo, 2 + lo)
            worst = max(worst, float(np.max(np.abs(flip + psi))) / scale)
    if n_p >= 2 or n_a >= 2:
        out.checks.append(below("antisymmetry_residual", worst, 1e-12))
    else:
        out.checks.append(moot("antisymmetry_residual", "no two identical corpuscles"))
    j0 = np.stack([corpuscle_current(wave, s, pts, t0)[:, 0] for s in range(n)])
    out.checks.append(below("negative_density", max(0.0, -float(np.min(j0))),
                            1e-12 * wave.mean_density))
    if n == 1:
        coeffs = one_body_coefficients(built, built.initial.c)
        part = "P" if n_p else "A"
        # Dirac current of the matching field part, psi-bar gamma psi
        jr = spinor_current(synthesize_values(mb, part_coefficients(coeffs, part), pts[:, 0], t0))
        jw = corpuscle_current(wave, 0, pts, t0)
        rel = float(np.max(np.abs(jw - jr))) / float(np.max(np.abs(jr)))
        out.checks.append(below("one_corpuscle_reduction", rel, 1e-10))
    else:
        out.checks.append(moot("one_corpuscle_reduction", "sector has several corpuscles"))
    trajs = [integrate(wave, np.array(c, dtype=float), t0, t1, dt)
             for c in doc["positions"]["configurations"]]
    out.checks.append(_traj_checks(trajs, out.aborts, "configuration"))
    out.checks.append(below("max_speed", _max_subluminal(trajs, [wave] * len(trajs)),
                            1.0 + 1e-12))
    out.artifacts["trajectories.csv"] = trajectories_csv(trajs)
    out.artifacts["trajectories.json"] = dumps([t.to_json() for t in trajs])


def _hamiltonian(built: Built) -> HamiltonianMatrix:
    return build_hamiltonian(built.fock_basis, built.hamiltonian_spec)


def _anticommutator_residual(fb) -> float:
    """max deviation of {b_i, b+_j} = delta_ij etc. on the truncated basis, below the cap.

    Truncation breaks the algebra on the top occupation layer, so matrix
    elements are compared only between states with fewer than ``cap`` quanta.
    """
    ops = [("b", i) for i in range(fb.n_p_modes)] + [("d", j) for j in range(fb.n_a_modes)]
    occ = np.array([bin(int(m)).count("1") for m in fb.masks])
    keep = occ < fb.cap
    worst = 0.0
    for o1, i in ops:
        A = ladder_matrix(fb, o1, i)
        for o2, j in ops:
            B = ladder_matrix(fb, o2 + "+", j)
            anti = A @ B + B @ A
            target = np.eye(fb.dim) if (o1, i) == (o2, j) else 0.0
            diff = (anti - target)[np.ix_(keep, keep)]
            worst = max(worst, float(np.max(np.abs(diff))) if diff.size else 0.0)
            C = ladder_matrix(fb, o2, j)
            diff = (A @ C + C @ A)[np.ix_(keep, keep)]
            worst = max(worst, float(np.max(np.abs(diff))) if diff.size else 0.0)
    return worst


def run_fock_evolve(built: Built, out: Outcome, threads: int, seed):
    doc = built.doc
    fb = built.fock_basis
    t0, t1, dt = time_window(doc)
    samples = doc["time"].get("samples") or max(3, int(round((t1 - t0) / dt)) + 1)
    times = np.linspace(t0, t1, samples)
    H = _hamiltonian(built)
    out.checks.append(below("hamiltonian_hermiticity",
                            np.max(np.abs(H.matrix - H.matrix.conj().T)), 0.0))
    if fb.dim <= 256:
        out.checks.append(below("anticommutator_residual", _anticommutator_residual(fb), 1e-14))
    else:
        out.checks.append(moot("anticommutator_residual", "basis above 256 states"))
    prop = Propagator(H)
    c0 = built.initial.c
    series = np.stack([prop.coefficients(c0, t - t0) for t in times])
    norms = np.linalg.norm(series, axis=1)
    out.checks.append(below("unitarity", np.max(np.abs(norms - 1.0)), 1e-12))
    Q = number_operator(fb, "P") - number_operator(fb, "A")
    qs = np.real(np.einsum("ti,ij,tj->t", series.conj(), Q, series))
    out.checks.append(below("charge_drift", np.max(np.abs(qs - qs[0])), 1e-12))
    if H.kind == "free":
        drift = np.max(np.abs(np.abs(series) - np.abs(c0)[None]))
        out.checks.append(below("free_modulus_drift", drift, 1e-12))
    else:
        out.checks.append(moot("free_modulus_drift", "interacting Hamiltonian"))
    lines = ["t,index,label,re,im,prob"]
    for t, c in zip(times, series):
        for k, m in enumerate(fb.masks):
            lines.append(f"{fmt(t)},{k},{fb.label(int(m))},{fmt(c[k].real)},{fmt(c[k].imag)},"
                         f"{fmt(abs(c[k]) ** 2)}")
    out.artifacts["fock_series.csv"] = "\n".join(lines) + "\n"
    pops = ["t," + ",".join(f"p{s[0]}_{s[1]}" for s in fb.sectors())]
    for t, c in zip(times, series):
        vals = [float(np.sum(np.abs(c[fb.sector_indices(*s)]) ** 2)) for s in fb.sectors()]
        pops.append(",".join([fmt(t), *map(fmt, vals)]))
    out.artifacts["sector_populations.csv"] = "\n".join(pops) + "\n"
    final = prop.evolve(built.initial, t1 - t0)
    out.artifacts["fock_state_t1.json"] = dumps(final.to_json())
    out.artifacts["hamiltonian.json"] = dumps({
        "basis": fb.to_json(), "kind": H.kind,
        "matrix": [[[z.real, z.imag] for z in row] for row in H.matrix]})


def _field_model(built: Built) -> cf.CausalFieldModel:
    basis = cf.build_functional_basis(built.fock_basis, built.grid)
    return cf.CausalFieldModel(basis, _hamiltonian(built), built.initial)


def _field_slices(model: cf.CausalFieldModel, st: cf.CausalFieldState) -> str:
    """Lines through the origin along each axis (index G/2 is phi = 0)."""
    grid = model.grid
    mid = grid.G // 2
    lines = ["t,axis,phi,rho,J,Phi,u,v,calE"]
    calE = st.E + st.e.reshape((-1,) + (1,) * grid.n)
    for a in range(grid.n):
        for j, x in enumerate(grid.axis()):
            idx = tuple(j if b == a else mid for b in range(grid.n))
            lines.append(",".join([fmt(st.t), str(a), fmt(x), fmt(st.rho[idx]), fmt(st.J[idx]),
                                   fmt(st.Phi[idx]), fmt(st.u[(a,) + idx]),
                                   fmt(st.v[(a,) + idx]), fmt(calE[(a,) + idx])]))
    return "\n".join(lines) + "\n"


def _field_checks(model: cf.CausalFieldModel, st: cf.CausalFieldState, tag: str) -> list[Check]:
    grid = model.grid
    out = []
    out.append(below(f"norm_{tag}", abs(grid.integrate(st.rho) - 1.0), 1e-8))
    out.append(below(f"source_integral_{tag}", abs(grid.integrate(st.J)), 1e-6))
    jmax = float(np.max(np.abs(st.J)))
    rel = 0.0 if st.source_vanishes else st.poisson_residual / jmax
    out.append(below(f"poisson_residual_rel_{tag}", rel, 1e-8))
    out.append(below(f"continuity_residual_{tag}", cf.continuity_residual(st, grid), 1e-6))
    gen = np.max(np.abs(cf.mean_velocity(st, grid) - model.mean_position_rate(st.t)))
    out.append(below(f"mean_velocity_identity_{tag}", gen, 1e-6))
    out.append(below(f"offset_integral_{tag}",
                     max(abs(grid.integrate(st.E[a] + st.e[a])) for a in range(grid.n)), 1e-12))
    if st.source_vanishes:
        diff = np.nan_to_num(np.abs(st.v - st.u))
        out.append(below(f"J_zero_v_equals_u_{tag}", np.max(diff), 1e-10))
    else:
        out.append(moot(f"J_zero_v_equals_u_{tag}", f"source present, max|J|={jmax:.3e}"))
    return out


def _field_trajectories(built, model, out) -> list[cf.FieldTrajectory]:
    t0, t1, dt = time_window(built.doc)
    trajs = [cf.integrate_field(model, np.array(p, dtype=float), t0, t1, dt)
             for p in built.doc.get("field_initial", [])]
    bad = [i for i, t in enumerate(trajs) if not t.completed]
    for i in bad:
        why = "grid exit" if trajs[i].grid_exit else "node encounter"
        out.aborts.append(f"field trajectory {i}: {why} at t={fmt(trajs[i].times[-1])}")
    out.checks.append(Check("field_trajectories_completed", not bad, float(len(bad)), 0.0))
    out.artifacts["field_trajectories.csv"] = field_trajectories_csv(trajs, model.grid.n)
    return trajs


def _basis_checks(model: cf.CausalFieldModel) -> list[Check]:
    b = model.basis
    gram = np.max(np.abs(b.gram() - np.eye(b.dim)))
    elems = np.max(np.abs(model.Hphi.elements() - model.H))
    return [below("functional_gram_deviation", gram, 1e-10),
            below("projected_hamiltonian_elements", elems, 1e-10)]


def run_causal_field(built: Built, out: Outcome, threads: int, seed):
    t0, t1, _ = time_window(built.doc)
    model = _field_model(built)
    out.checks += _basis_checks(model)
    for tag, t in (("t0", t0), ("t1", t1)):
        st = cf.field_state(model, t)
        out.checks += _field_checks(model, st, tag)
        out.artifacts[f"field_{tag}.json"] = dumps(st.to_json(model.grid))
        out.artifacts[f"field_slices_{tag}.csv"] = _field_slices(model, st)
    _field_trajectories(built, model, out)


def run_effectivity(built: Built, out: Outcome, threads: int, seed):
    t0, t1, _ = time_window(built.doc)
    model = _field_model(built)
    out.checks += _basis_checks(model)
    trajs = _field_trajectories(built, model, out)
    fb = built.fock_basis
    sectors = fb.sectors()
    lines = ["traj,t," + ",".join(f"phi{a + 1}" for a in range(fb.n_modes)) + "," +
             ",".join(f"e{s[0]}_{s[1]}" for s in sectors)]
    worst_sum, worst_range, worst_ind, pure_seen = 0.0, 0.0, 0.0, False
    for k, tr in enumerate(trajs):
        for t, phi in zip(tr.times, tr.phi):
            eff = cf.effectivity(model, phi, t)
            vals = eff.values[0]
            lines.append(",".join([str(k), fmt(t), *map(fmt, phi), *map(fmt, vals)]))
    for t in (t0, t1):
        eff = cf.effectivity(model, model.grid.points(), t)
        ok = ~eff.indeterminate
        vals = eff.values[ok]
        worst_sum = max(worst_sum, float(np.max(np.abs(vals.sum(axis=1) - 1.0))))
        worst_range = max(worst_range, float(max(0.0, -vals.min(), vals.max() - 1.0)))
        pops = model.state(t).sector_populations()
        occupied = [s for s, p in pops.items() if p > 0]
        if len(occupied) == 1:
            pure_seen = True
            col = sectors.index(occupied[0])
            target = np.zeros(len(sectors))
            target[col] = 1.0
            worst_ind = max(worst_ind, float(np.max(np.abs(vals - target))))
    out.checks.append(below("effectivity_sum", worst_sum, 1e-12))
    out.checks.append(below("effectivity_range", worst_range, 1e-12))
    if pure_seen:
        out.checks.append(below("pure_sector_indicator", worst_ind, 1e-12))
    else:
        out.checks.append(moot("pure_sector_indicator", "state spans several sectors"))
    out.artifacts["effectivity.csv"] = "\n".join(lines) + "\n"
    # slice along the first axis, other coordinates at 0
    axis = model.grid.axis()
    probe = np.zeros((axis.size, fb.n_modes))
    probe[:, 0] = axis
    eff = cf.effectivity(model, probe, t0)
    rows = ["t,phi1," + ",".join(f"e{s[0]}_{s[1]}" for s in sectors)]
    for x, vals in zip(axis, eff.values):
        rows.append(",".join([fmt(t0), fmt(x), *map(fmt, vals)]))
    out.artifacts["effectivity_axis.csv"] = "\n".join(rows) + "\n"


def run_equivariance(built: Built, out: Outcome, threads: int, seed):
    doc = built.doc
    t0, t1, dt = time_window(doc)
    ens = doc["ensemble"]
    target = ens.get("target", "dirac")
    if target == "dirac":
        n_p, n_a = doc["sector"]
        wave = wavefunction(built.initial, built.mode_basis, n_p, n_a)
        rep = equivariance_test(wave, ens.get("slot", 0), ens["M"], t0, t1, seed, dt=dt,
                                threads=threads)
        out.checks.append(below("ks_statistic", rep.ks_statistic, rep.critical_value,
                                note="must stay below the 1% critical value"))
    else:
        model = _field_model(built)
        rep = cf.field_equivariance_test(model, ens["M"], t0, t1, seed, dt=dt, threads=threads)
        out.checks.append(below("ks_statistic", max(rep.ks_statistics), rep.critical_value,
                                note="largest marginal statistic"))
        if rep.grid_exit_fraction > 0:
            out.aborts.append(f"{rep.grid_exit_fraction:.4%} of samples left the grid")
    out.checks.append(below("exclusion_fraction", rep.exclusion_fraction, 0.01))
    out.artifacts["equivariance.json"] = dumps(rep.to_json())


RUNNERS = {
    "dirac-trajectories": run_dirac_trajectories,
    "multiparticle": run_multiparticle,
    "fock-evolve": run_fock_evolve,
    "causal-field": run_causal_field,
    "effectivity": run_effectivity,
    "equivariance": run_equivariance,
}


def run(doc: dict, out_dir: str | Path | None = None, threads: int = 1,
        seed: int | None = None) -> RunReport:
    """Execute one scenario, write artifacts and ``report.json`` into ``out_dir``."""
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc["seed"] = int(seed)
    start = time.perf_counter()
    built = build(doc)
    result = Outcome()
    result.timings["setup_s"] = time.perf_counter() - start
    t = time.perf_counter()
    RUNNERS[doc["kind"]](built, result, max(1, int(threads)), doc.get("seed"))
    result.timings["pipeline_s"] = time.perf_counter() - t
    out_dir = Path(out_dir or doc.get("output") or Path("runs") / doc["name"])
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name in sorted(result.artifacts):
        data = result.artifacts[name].encode()
        (out_dir / name).write_bytes(data)
        manifest[name] = hashlib.sha256(data).hexdigest()
    result.timings["total_s"] = time.perf_counter() - start
    report = RunReport(doc, doc["kind"], result.checks, manifest, result.aborts, result.timings)
    (out_dir / REPORT_NAME).write_text(dumps(report.to_json()))
    return report
