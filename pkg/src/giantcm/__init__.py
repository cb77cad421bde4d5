"""Collision-model simulation of normal and giant emitters coupled to a chiral 1-D field."""

from .collision import (
    CollisionConfig,
    build_vn,
    collision_unitary,
    delayed_coupling_h,
    propagate_single_excitation,
    run_conveyor,
    second_order_step,
    step,
)
from .dfree import df_hamiltonian, is_decoherence_free, phase_scan
from .errors import (
    CutoffTooSmallError,
    GiantCMError,
    InadmissibleMomentsError,
    InvalidArgumentError,
    InvalidLayoutError,
    InvalidStateError,
    NonVacuumLeadingError,
    NumericalError,
    ScenarioError,
)
from .field import GaussianInput, TimeBinState, bin_moments, coherent_bins, gaussian_bin_state
from .geometry import (
    CollectiveOps,
    CouplingPoint,
    EmitterSpec,
    Layout,
    build_collective_ops,
    build_dressed_ops,
    build_hvac,
    classify_topology,
    make_layout,
    order_points,
)
from .master_equation import LindbladGenerator, MasterEquation, build_generator, coefficient_table, integrate, is_cpt
from .operators import HilbertDims, Operator, StateDM, apply_super, embed, expm, make_ladder, partial_trace
from .scenario import Scenario, parse_scenario, serialize_scenario
from .trajectories import (
    DetectionScheme,
    TrajectoryRecord,
    click_rate,
    effective_ops,
    ensemble_average,
    kraus,
    kraus_expansion,
    mc_run,
    mixed_bin_kraus,
)

__version__ = "0.1.0"
