"""Hierarchical array priors for cell-means estimation in cross-classified data.

Library + CLI: a Gibbs sampler sharing per-factor covariance matrices across
ANOVA/MANOVA effects, baseline estimators, convergence diagnostics, and a
simulation harness.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    CellStats,
    CsvSchema,
    Decomposition,
    EmptyCellsError,
    Layout,
    all_effect_keys,
    anova_decompose,
    ase,
    cell_means,
    effect_magnitude,
    ingest_long_csv,
    ols_cell_means,
)
from .priors import HAHyper, default_hyperparameters  # noqa: F401
from .gibbs import (  # noqa: F401
    Chain,
    ChainConfig,
    HAState,
    gibbs_sweep,
    impute_balance,
    init_state,
    manova_preprocess,
    posterior_mean,
    run_chain,
)
from .rng import RngStream, make_rng  # noqa: F401
