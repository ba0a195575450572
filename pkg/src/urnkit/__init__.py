"""Simulation and verification toolkit for balanced generalized Polya urns
with growing initial compositions."""

__version__ = "0.1.0"

from .model import (
    ReplacementDistribution,
    ReplacementStructure,
    UrnSpec,
    cyclic,
    friedman,
    identity,
    matching,
    mean_matrix,
    second_moment,
    total_mass,
    validate_structure,
)
from .spectral import (
    DefectiveMatrixError,
    JordanBlock,
    SpectralDecomposition,
    classify,
    decompose,
    decomposition_for,
    expm,
    nilpotent_project,
    perron_frobenius,
    v_of_mu,
)
from .simulate import (
    EnsembleResult,
    EnsembleSpec,
    Trajectory,
    run_ensemble,
    run_mcbp_ensemble,
    sample_death_times,
    simulate_mcbp,
    simulate_urn,
    substream,
    urn_step,
)
from .limits import (
    LimitCovariance,
    centering,
    cov_W1,
    cov_W2,
    cov_WJk,
    cov_Ws,
    cov_Y1,
    cov_Y2,
    cov_YJk,
    cov_Ys,
    cov_ZJ,
    cov_ZS,
    cross_cov_critical,
    mcbp_second_moment,
    oscillatory_compose,
    var_VJ,
)
from .verify import (
    CovarianceReport,
    compare_cov,
    empirical_cov,
    fluctuation_samples,
    normality_test,
    suburn_equivalence_check,
    tau_scaling_suite,
)
