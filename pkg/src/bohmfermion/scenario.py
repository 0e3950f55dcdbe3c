"""Scenario documents: schema, cross-reference validation, presets and builders."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .causal_field import MIN_HALF_WIDTH, ConfigGrid
from .dirac import Lattice, ModeBasis, build_mode_basis, dealiasing_ok
from .fock import (Coupling, FockBasis, FockState, HamiltonianSpec, build_fock_basis,
                   build_hamiltonian)

SCHEMA_ID = "bohmfermion.scenario/1"
RUN_KINDS = ("dirac-trajectories", "multiparticle", "fock-evolve", "causal-field",
             "effectivity", "equivariance")
LATTICE_KINDS = ("dirac-trajectories", "multiparticle")
FIELD_KINDS = ("causal-field", "effectivity")

PRESETS = {
    "vacuum": "the Fock vacuum |0>",
    "one-particle": "sum_i w_i b+_i |0> over 'modes' (particle mode indices, default [0])",
    "one-positron": "sum_i w_i d+_i |0> over 'modes' (antiparticle mode indices, default [0])",
    "pair-superposition": "(w_0 |0> + w_1 b+_p d+_a |0>) normalized, 'pair' = [p, a] "
                          "(default [0, 0]), weights default [1, 1]",
}

_num = {"type": "number"}
_complex = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]}
_mode = {"type": "array", "items": {"type": "integer"}, "minItems": 4, "maxItems": 4}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "name", "kind", "fock", "initial", "time"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": SCHEMA_ID},
        "name": {"type": "string", "minLength": 1},
        "kind": {"enum": list(RUN_KINDS)},
        "lattice": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "L": {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                                {"type": "array", "items": {"type": "number",
                                                            "exclusiveMinimum": 0},
                                 "minItems": 3, "maxItems": 3}]},
                "N": {"type": "integer", "minimum": 2},
                "active_axes": {"type": "array", "items": {"enum": [0, 1, 2]},
                                "minItems": 1, "maxItems": 3, "uniqueItems": True},
            },
        },
        "modes": {
            "type": "object", "additionalProperties": False, "required": ["mass", "k_cut"],
            "properties": {"mass": {"type": "number", "minimum": 0},
                           "k_cut": {"type": "integer", "minimum": 0}},
        },
        "fock": {
            "type": "object", "additionalProperties": False,
            "required": ["particle_modes", "antiparticle_modes"],
            "properties": {
                "particle_modes": {"type": "array", "items": _mode},
                "antiparticle_modes": {"type": "array", "items": _mode},
                "cap": {"type": "integer", "minimum": 0},
            },
        },
        "hamiltonian": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {
                "kind": {"enum": ["free", "quadratic-mixing"]},
                "energies": {
                    "type": "object", "additionalProperties": False,
                    "required": ["particle", "antiparticle"],
                    "properties": {"particle": {"type": "array", "items": _num},
                                   "antiparticle": {"type": "array", "items": _num}},
                },
                "couplings": {
                    "type": "array",
                    "items": {
                        "type": "object", "additionalProperties": False,
                        "required": ["particle", "antiparticle", "lambda"],
                        "properties": {"particle": {"type": "integer", "minimum": 0},
                                       "antiparticle": {"type": "integer", "minimum": 0},
                                       "lambda": _complex, "lambda_dagger": _complex},
                    },
                },
            },
        },
        "initial": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "preset": {"enum": list(PRESETS)},
                "modes": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "pair": {"type": "array", "items": {"type": "integer", "minimum": 0},
                         "minItems": 2, "maxItems": 2},
                "weights": {"type": "array", "items": _complex},
                "amplitudes": {
                    "type": "array", "minItems": 1,
                    "items": {
                        "type": "object", "additionalProperties": False, "required": ["c"],
                        "properties": {
                            "particles": {"type": "array", "items": {"type": "integer"}},
                            "antiparticles": {"type": "array", "items": {"type": "integer"}},
                            "c": _complex,
                        },
                    },
                },
            },
            "oneOf": [{"required": ["preset"]}, {"required": ["amplitudes"]}],
        },
        "positions": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "particle": {"type": "array", "items": _vec3},
                "antiparticle": {"type": "array", "items": _vec3},
                "configurations": {"type": "array",
                                   "items": {"type": "array", "items": _vec3, "minItems": 1}},
            },
        },
        "sector": {"type": "array", "items": {"type": "integer", "minimum": 0},
                   "minItems": 2, "maxItems": 2},
        "time": {
            "type": "object", "additionalProperties": False, "required": ["t1", "dt"],
            "properties": {"t0": _num, "t1": _num, "dt": _num,
                           "samples": {"type": "integer", "minimum": 3}},
        },
        "grid": {
            "type": "object", "additionalProperties": False, "required": ["Lam", "G"],
            "properties": {"n": {"type": "integer", "minimum": 1},
                           "Lam": {"type": "number", "exclusiveMinimum": 0},
                           "G": {"type": "integer"}},
        },
        "field_initial": {"type": "array", "items": {"type": "array", "items": _num}},
        "ensemble": {
            "type": "object", "additionalProperties": False, "required": ["M"],
            "properties": {"M": {"type": "integer", "minimum": 1},
                           "slot": {"type": "integer", "minimum": 0},
                           "target": {"enum": ["dirac", "field"]}},
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
    },
}


class ScenarioError(ValueError):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(diagnostics))


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def to_complex(x) -> complex:
    return complex(x[0], x[1]) if isinstance(x, list) else complex(x)


def load(path: str | Path) -> dict:
    with open(path) as f:
        return json.load(f)


def validate(doc: dict) -> list[str]:
    """Schema and cross-reference diagnostics; empty when the scenario is runnable."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    diags = [f"{_path(e.absolute_path)}: {e.message}" for e in errors]
    if diags:
        return diags
    return _cross_check(doc)


def _needs_lattice(doc: dict) -> bool:
    kind = doc["kind"]
    if kind in LATTICE_KINDS:
        return True
    return kind == "equivariance" and doc.get("ensemble", {}).get("target", "dirac") == "dirac"


def _needs_grid(doc: dict) -> bool:
    kind = doc["kind"]
    return kind in FIELD_KINDS or (
        kind == "equivariance" and doc.get("ensemble", {}).get("target") == "field")


def _cross_check(doc: dict) -> list[str]:
    d: list[str] = []
    kind = doc["kind"]
    t = doc["time"]
    if t["dt"] <= 0:
        d.append("$.time.dt: must be > 0")
    if t["t1"] < t.get("t0", 0.0):
        d.append("$.time.t1: must not precede t0")
    if kind == "equivariance" and "seed" not in doc:
        d.append("$.seed: required for sampling runs (kind 'equivariance')")
    if kind == "equivariance" and "ensemble" not in doc:
        d.append("$.ensemble: required for kind 'equivariance'")
    fock = doc["fock"]
    n_p, n_a = len(fock["particle_modes"]), len(fock["antiparticle_modes"])
    cap = fock.get("cap", n_p + n_a)

    if _needs_lattice(doc) or "modes" in doc:
        if "modes" not in doc:
            d.append("$.modes: required for lattice-based run kinds")
        else:
            lat = doc.get("lattice", {})
            N = lat.get("N", 64)
            active = lat.get("active_axes", [0])
            k_cut = doc["modes"]["k_cut"]
            if N < 2 * (2 * k_cut + 1):
                d.append(f"$.modes.k_cut: k_cut={k_cut} too large for N={N}; the dealiasing "
                         f"rule requires N >= 2(2k_cut+1) = {2 * (2 * k_cut + 1)}")
            for key in ("particle_modes", "antiparticle_modes"):
                for i, m in enumerate(fock[key]):
                    *n, s = m
                    if s not in (1, -1):
                        d.append(f"$.fock.{key}[{i}]: spin entry must be +1 or -1")
                    for ax in range(3):
                        if ax not in active and n[ax] != 0:
                            d.append(f"$.fock.{key}[{i}]: momentum on inactive axis {ax}")
                        elif abs(n[ax]) > k_cut:
                            d.append(f"$.fock.{key}[{i}]: |n| exceeds k_cut={k_cut}")
                    if doc["modes"]["mass"] == 0 and all(x == 0 for x in n):
                        d.append(f"$.fock.{key}[{i}]: massless zero mode is not allowed")

    ham = doc.get("hamiltonian", {"kind": "free"})
    for i, cp in enumerate(ham.get("couplings", [])):
        if cp["particle"] >= n_p:
            d.append(f"$.hamiltonian.couplings[{i}].particle: no particle mode {cp['particle']}")
        if cp["antiparticle"] >= n_a:
            d.append(f"$.hamiltonian.couplings[{i}].antiparticle: "
                     f"no antiparticle mode {cp['antiparticle']}")
        if "lambda_dagger" in cp and \
                abs(to_complex(cp["lambda_dagger"]) - np.conj(to_complex(cp["lambda"]))) > 1e-14:
            d.append(f"$.hamiltonian.couplings[{i}].lambda_dagger: must equal conj(lambda) "
                     "(hermiticity)")
    if ham["kind"] == "free" and ham.get("couplings"):
        d.append("$.hamiltonian.couplings: free Hamiltonian cannot carry couplings")
    if "energies" in ham:
        if len(ham["energies"]["particle"]) != n_p or \
                len(ham["energies"]["antiparticle"]) != n_a:
            d.append("$.hamiltonian.energies: lengths must match the Fock mode lists")
    elif "modes" not in doc:
        d.append("$.hamiltonian.energies: required when no mode basis ('modes') is given")

    d += _check_initial(doc["initial"], n_p, n_a, cap)

    if kind in ("multiparticle",) or (kind == "equivariance" and _needs_lattice(doc)):
        sector = doc.get("sector")
        if sector is None:
            d.append("$.sector: required for multiparticle guidance")
        elif sector[0] + sector[1] > cap or sector[0] > n_p or sector[1] > n_a:
            d.append(f"$.sector: sector {sector} is above the Fock basis cap")
        elif sum(sector) == 0:
            d.append("$.sector: needs at least one corpuscle")
    if kind == "multiparticle":
        confs = doc.get("positions", {}).get("configurations")
        if not confs:
            d.append("$.positions.configurations: required for kind 'multiparticle'")
        elif doc.get("sector") and any(len(c) != sum(doc["sector"]) for c in confs):
            d.append("$.positions.configurations: each configuration needs one point per slot")
    if kind == "equivariance" and "ensemble" in doc:
        ens = doc["ensemble"]
        if ens["M"] < 1000:
            d.append("$.ensemble.M: equivariance needs M >= 1000")
        if _needs_lattice(doc) and doc.get("sector") and \
                ens.get("slot", 0) >= sum(doc["sector"]):
            d.append("$.ensemble.slot: slot outside the sector")
    if _needs_grid(doc):
        g = doc.get("grid")
        if g is None:
            d.append("$.grid: required for causal-field run kinds")
        else:
            if g.get("n", n_p + n_a) != n_p + n_a:
                d.append(f"$.grid.n: must equal the number of Fock modes ({n_p + n_a})")
            if g["G"] < 16:
                d.append("$.grid.G: must be >= 16")
            if g["Lam"] < MIN_HALF_WIDTH:
                d.append(f"$.grid.Lam: must be >= {MIN_HALF_WIDTH} oscillator lengths")
        for i, p in enumerate(doc.get("field_initial", [])):
            if len(p) != n_p + n_a:
                d.append(f"$.field_initial[{i}]: needs {n_p + n_a} coordinates")
        if kind == "effectivity" and not doc.get("field_initial"):
            d.append("$.field_initial: required for kind 'effectivity'")
    return d


def _check_initial(init: dict, n_p: int, n_a: int, cap: int) -> list[str]:
    d = []
    if "amplitudes" in init:
        for i, a in enumerate(init["amplitudes"]):
            ps, ds = a.get("particles", []), a.get("antiparticles", [])
            if any(p >= n_p for p in ps) or any(q >= n_a for q in ds):
                d.append(f"$.initial.amplitudes[{i}]: references a missing mode")
            if len(set(ps)) != len(ps) or len(set(ds)) != len(ds):
                d.append(f"$.initial.amplitudes[{i}]: a mode is occupied twice")
            if len(ps) + len(ds) > cap:
                d.append(f"$.initial.amplitudes[{i}]: above the Fock basis cap")
        return d
    preset = init["preset"]
    if preset == "one-particle":
        modes = init.get("modes", [0])
        if n_p == 0 or any(m >= n_p for m in modes):
            d.append("$.initial.modes: one-particle preset references a missing particle mode")
    elif preset == "one-positron":
        modes = init.get("modes", [0])
        if n_a == 0 or any(m >= n_a for m in modes):
            d.append("$.initial.modes: one-positron preset references a missing antiparticle "
                     "mode")
    elif preset == "pair-superposition":
        p, a = init.get("pair", [0, 0])
        if p >= n_p or a >= n_a:
            d.append("$.initial.pair: references a missing mode")
        if cap < 2:
            d.append("$.initial.pair: pair state is above the Fock basis cap")
    if "weights" in init and preset in ("one-particle", "one-positron"):
        if len(init["weights"]) != len(init.get("modes", [0])):
            d.append("$.initial.weights: one weight per listed mode")
    if "weights" in init and preset == "pair-superposition" and len(init["weights"]) != 2:
        d.append("$.initial.weights: pair-superposition takes two weights")
    return d


@dataclass
class Built:
    doc: dict
    lattice: Lattice | None
    mode_basis: ModeBasis | None
    fock_basis: FockBasis
    hamiltonian_spec: HamiltonianSpec
    initial: FockState
    grid: ConfigGrid | None


def build(doc: dict) -> Built:
    diags = validate(doc)
    if diags:
        raise ScenarioError(diags)
    lattice = mode_basis = None
    fock = doc["fock"]
    if "modes" in doc:
        lat = doc.get("lattice", {})
        active = lat.get("active_axes", [0])
        lattice = Lattice.create(lat.get("L", 2 * np.pi), lat.get("N", 64),
                                 [ax in active for ax in range(3)])
        mode_basis = build_mode_basis(lattice, doc["modes"]["mass"], doc["modes"]["k_cut"])
        assert dealiasing_ok(lattice, doc["modes"]["k_cut"])
        pm = [mode_basis.index(tuple(m)) for m in fock["particle_modes"]]
        am = [mode_basis.index(tuple(m)) for m in fock["antiparticle_modes"]]
    else:
        pm = list(range(len(fock["particle_modes"])))
        am = list(range(len(fock["antiparticle_modes"])))
    fb = build_fock_basis(pm, am, fock.get("cap"))
    ham = doc.get("hamiltonian", {"kind": "free"})
    couplings = tuple(
        Coupling(c["particle"], c["antiparticle"], to_complex(c["lambda"]),
                 to_complex(c["lambda_dagger"]) if "lambda_dagger" in c else None)
        for c in ham.get("couplings", []))
    if "energies" in ham:
        hspec = HamiltonianSpec(ham["kind"], ham["energies"]["particle"],
                               ham["energies"]["antiparticle"], couplings)
    else:
        hspec = HamiltonianSpec.from_modes(fb, mode_basis, ham["kind"], couplings)
    build_hamiltonian(fb, hspec)  # surfaces hermiticity errors early
    t0 = doc["time"].get("t0", 0.0)
    initial = initial_state(fb, doc["initial"], t0)
    grid = None
    if "grid" in doc:
        g = doc["grid"]
        grid = ConfigGrid(fb.n_modes, float(g["Lam"]), int(g["G"]))
    return Built(doc, lattice, mode_basis, fb, hspec, initial, grid)


def initial_state(fb: FockBasis, init: dict, t0: float = 0.0) -> FockState:
    c = np.zeros(fb.dim, dtype=np.complex128)
    if "amplitudes" in init:
        for a in init["amplitudes"]:
            c[fb.index(fb.mask_of(a.get("particles", []), a.get("antiparticles", [])))] += \
                to_complex(a["c"])
    else:
        preset = init["preset"]
        if preset == "vacuum":
            c[fb.index(0)] = 1.0
        elif preset in ("one-particle", "one-positron"):
            modes = init.get("modes", [0])
            weights = [to_complex(w) for w in init.get("weights", [1.0] * len(modes))]
            for m, w in zip(modes, weights):
                mask = fb.mask_of([m], []) if preset == "one-particle" else fb.mask_of([], [m])
                c[fb.index(mask)] += w
        elif preset == "pair-superposition":
            p, a = init.get("pair", [0, 0])
            w0, w1 = [to_complex(w) for w in init.get("weights", [1.0, 1.0])]
            c[fb.index(0)] += w0
            c[fb.index(fb.mask_of([p], [a]))] += w1
    norm = np.linalg.norm(c)
    if norm == 0:
        raise ScenarioError(["$.initial: state has zero norm"])
    return FockState(fb, c / norm, t0)
