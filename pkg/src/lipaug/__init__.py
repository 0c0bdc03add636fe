"""Data-dependent generalization toolkit for small smooth-activation nets.

Core pieces: exact forward traces with all interlayer Jacobians
(``network``), computational graphs with the release operation and Lipschitz
augmentation (``graph``), closed-form bound ingredients and the entropy
integral (``bounds``), an executable verification harness (``verify``), and a
Jacobian-regularized trainer on synthetic data (``training``).
"""

from .bounds import (
    BoundConfig,
    BoundReport,
    DataMeasurements,
    LeadingTerms,
    MarginError,
    MatrixNormTerms,
    combine_covering,
    dudley,
    generalization_bound,
    kappa_hidden,
    kappa_hidden_relu,
    kappa_jacobian,
    leading_term,
    measure,
    params_from_measurements,
    spectral_baseline,
)
from .graph import (
    AugmentationParams,
    CompGraph,
    LipschitzConstants,
    Rule,
    augmented_loss,
    check_forest_ordering,
    evaluate,
    lipschitz_augment,
    release,
    release_lipschitz_constants,
    sequential_graph,
)
from .linalg import (
    ConvergenceError,
    as_matrix,
    as_vector,
    norm_pq,
    soft_indicator,
    spectral_norm,
    spectral_norm_stack,
    stack_upper,
)
from .network import (
    ACTIVATIONS,
    LayerTrace,
    SmoothNet,
    forward_trace,
    margin,
    ramp_loss,
    zero_one_loss,
)
from .training import (
    Dataset,
    DatasetSpec,
    RunMetrics,
    TrainConfig,
    TrainingDiverged,
    make_dataset,
    margin_jacobian,
    reg_penalty,
    train,
)
from .verify import (
    VerificationReport,
    release_lipschitz_mutation_check,
    verify_finite_change,
    verify_jacobian_fd,
    verify_release_lipschitz,
    verify_telescoping,
    verify_upper_bound,
    write_reports,
)

__version__ = "0.1.0"
