"""emfkit: low-rank matrix recovery under asymmetric least squares.

Fits rank-k factorizations whose entries estimate conditional expectiles
of the observations, making recovery robust to skewed noise.  Includes
exact inner-subproblem solvers, deterministic synthetic-data generators,
evaluation metrics and a CLI experiment harness.
"""

__version__ = "0.1.0"

from .core import (
    DuplicateEntryError,
    EmfConfig,
    EntryObservations,
    FactorPair,
    GeneralObservations,
    ObservationSet,
    SolveReport,
    StopReason,
    as_matrix,
    frobenius_distance,
    product_entry,
)
from .emf import DegenerateInitError, InitTriple, fit, predict, reconstruct, svd_init
from .loss import (
    asymmetric_weight,
    expectile_loss,
    gradient_x,
    gradient_y,
    objective,
    residuals,
    scalar_expectile,
)
from .metrics import (
    BinSpec,
    DenominatorTooSmallError,
    ErrorSummary,
    binned_summaries,
    empirical_cdf,
    relative_errors,
    summarize,
)
from .rng import Pcg32
from .subsolver import (
    RankDeficientError,
    SingularDesignError,
    SubproblemResult,
    qr_orthonormalize,
    reference_qp_solve,
    solve_x,
    solve_y,
)
from .synth import (
    SyntheticInstance,
    apply_measurements,
    chi_square_noise,
    gaussian_measurements,
    gen_low_rank,
    make_completion_instance,
    sample_mask,
)

__all__ = [
    "__version__",
    "as_matrix",
    "frobenius_distance",
    "product_entry",
    "FactorPair",
    "EntryObservations",
    "GeneralObservations",
    "ObservationSet",
    "EmfConfig",
    "SolveReport",
    "StopReason",
    "DuplicateEntryError",
    "asymmetric_weight",
    "expectile_loss",
    "residuals",
    "objective",
    "gradient_x",
    "gradient_y",
    "scalar_expectile",
    "solve_x",
    "solve_y",
    "reference_qp_solve",
    "qr_orthonormalize",
    "SubproblemResult",
    "SingularDesignError",
    "RankDeficientError",
    "svd_init",
    "fit",
    "predict",
    "reconstruct",
    "InitTriple",
    "DegenerateInitError",
    "gen_low_rank",
    "chi_square_noise",
    "sample_mask",
    "gaussian_measurements",
    "apply_measurements",
    "make_completion_instance",
    "SyntheticInstance",
    "relative_errors",
    "empirical_cdf",
    "summarize",
    "binned_summaries",
    "ErrorSummary",
    "BinSpec",
    "DenominatorTooSmallError",
    "Pcg32",
]
