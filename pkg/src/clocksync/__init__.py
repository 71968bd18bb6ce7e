"""Simulation of clock-offset recovery between two parties that exchange
quantum systems through a phase-randomizing channel."""
from .channel import (
    FullyRandom,
    Mixture,
    ModelError,
    Noiseless,
    RandomDelay,
    apply_transit,
    average_trajectories,
    delta_matrix,
    sample_transit,
)
from .estimation import FisherReport, OffsetEstimate, mle_offset, nogo_sweep, qfi, trace_distance
from .hilbert import (
    CompositeState,
    EnergySpec,
    Owner,
    OwnershipError,
    OwnershipLedger,
    StateError,
    Subsystem,
    embed_unitary,
    free_evolve,
    partial_trace,
    tensor,
    transfer,
)
from .kernels import BACKEND
from .protocols import (
    ApplyLocal,
    ClockFrame,
    Event,
    Measure,
    PostSelect,
    Prepare,
    Receive,
    RunRecord,
    ScenarioError,
    Send,
    SubsystemDecl,
    Timeline,
    compose,
    final_state,
    outcome_distribution,
    run_exact,
    run_sampled,
    run_sampled_batch,
    scenario_eddington,
    scenario_einstein,
    scenario_entangled_distribution,
    scenario_postselect,
    scenario_postselected_eddington,
)

__version__ = "0.1.0"
