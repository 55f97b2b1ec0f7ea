"""Zone-based pebble-bed core simulator with a reduced-order neutronics kernel."""

from .state import (
    BurnupGroup,
    ControlVector,
    CoreState,
    ZoneGrid,
    build_equilibrium_ladder_state,
    build_fresh_state,
    build_runin_state,
    control_ranges,
    quantize_count,
    validate_controls,
)
from .kernel import (
    MeshTally,
    KernelResult,
    compute_reactivity,
    discard_fraction,
    graphite_dilution,
    rod_factor,
    solve_neutronics,
    worth_curve,
)
from .stepper import (
    CoreSimulator,
    DischargeBatch,
    StepResult,
    advance_step,
    deplete_zones,
    insert_fresh,
    regroup_discharge,
    split_fresh_insertion,
)
from .calibrate import (
    EquilibriumSummary,
    benchmark_controls,
    calibrate,
    closed_form_kappa,
    run_benchmark_equilibrium,
)

__all__ = [
    "BurnupGroup",
    "ControlVector",
    "CoreState",
    "ZoneGrid",
    "MeshTally",
    "KernelResult",
    "CoreSimulator",
    "DischargeBatch",
    "StepResult",
    "EquilibriumSummary",
    "advance_step",
    "benchmark_controls",
    "build_equilibrium_ladder_state",
    "build_fresh_state",
    "build_runin_state",
    "calibrate",
    "closed_form_kappa",
    "compute_reactivity",
    "control_ranges",
    "deplete_zones",
    "discard_fraction",
    "graphite_dilution",
    "insert_fresh",
    "quantize_count",
    "regroup_discharge",
    "rod_factor",
    "run_benchmark_equilibrium",
    "solve_neutronics",
    "split_fresh_insertion",
    "validate_controls",
    "worth_curve",
]
