from ._modalchain import (
    ConfigError,
    chsh,
    epr_joint,
    equilibrium_convergence,
    haar_state,
    ontic_decompose,
    propagate,
    reduced_density,
    run_config,
    scenario_names,
    toy_chain,
    transition_matrix,
    typicality,
)

__version__ = "0.1.0"
