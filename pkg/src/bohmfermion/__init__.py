"""Guidance trajectories for particles, antiparticles and fermionic fields."""
from .causal_field import (CausalFieldModel, ConfigGrid, FunctionalBasis, build_functional_basis,
                           effectivity, field_equivariance_test, field_state, integrate_field)
from .dirac import (GAMMAS, Lattice, Mode, ModeBasis, ModeCoefficients, SpinorField,
                    build_mode_basis, synthesize_field)
from .fock import (Coupling, FockBasis, FockState, HamiltonianSpec, build_fock_basis,
                   build_hamiltonian, evolve, wavefunction)
from .projection import current, projection_kernel, split_field
from .trajectories import (MultiWave, NodeRegion, bohm_velocity, equivariance_test, integrate,
                           single_corpuscle_wave)

__all__ = [
    "CausalFieldModel",
    "ConfigGrid",
    "Coupling",
    "FockBasis",
    "FockState",
    "FunctionalBasis",
    "GAMMAS",
    "HamiltonianSpec",
    "Lattice",
    "Mode",
    "ModeBasis",
    "ModeCoefficients",
    "MultiWave",
    "NodeRegion",
    "SpinorField",
    "bohm_velocity",
    "build_fock_basis",
    "build_functional_basis",
    "build_hamiltonian",
    "build_mode_basis",
    "current",
    "effectivity",
    "equivariance_test",
    "evolve",
    "field_equivariance_test",
    "field_state",
    "integrate",
    "integrate_field",
    "projection_kernel",
    "single_corpuscle_wave",
    "split_field",
    "synthesize_field",
    "wavefunction",
]

__version__ = "0.1.0"
