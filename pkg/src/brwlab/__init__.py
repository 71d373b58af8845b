"""Branching random walks, contact processes and restrained BRWs on boxes and percolation clusters."""

from .dynamics import (
    Caps,
    CoupledEngine,
    ParticleConfiguration,
    RateProfile,
    TrajectoryObservables,
    coupled_profile_trials,
    local_survival_trial,
    simulate_rbrw,
)
from .kernel import (
    FiniteGraph,
    Kernel,
    blz_kernel,
    box_graph,
    box_with_paths,
    kernel_matvec,
    lattice_path,
    make_stencil_kernel,
    nearest_neighbor_kernel,
    restrict,
)
from .percolation import (
    PercolationSample,
    SeedChain,
    build_seed_chain,
    giant_cluster_graph,
    sample_percolation,
    verify_chain,
)
from .spectral import (
    ConvergenceEstimate,
    expected_occupancy,
    expected_occupancy_vector,
    lambda_s_box,
    lambda_s_bracket,
    lambda_s_sequence,
    lambda_w_lower,
    perron_root,
    symmetry_check_lambda_w_eq_s,
)
from .survival import (
    CriticalEstimate,
    PairLaw,
    SurvivalEstimate,
    bisect_critical,
    block_event_probability,
    k_sweep,
    k_sweep_critical,
    oriented_block_percolation,
    survival_probability,
)

__version__ = "0.1.0"
