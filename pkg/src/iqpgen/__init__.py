"""Classical training and evaluation of parameterised IQP generative models."""

from .bits import BitMatrix, as_bitmatrix, parity, signs
from .checkpoint import Checkpoint
from .circuit import GateSet, ModelKind, all_k_local, graph_gates, random_gateset, ring_triples, two_local
from .datasets import (
    BlobSpec,
    IsingSpec,
    McmcConfig,
    gen_blobs,
    gen_ising_2d,
    gen_scale_free,
    load_dataset,
    save_dataset,
    train_test_split,
)
from .evaluation import (
    CovarianceMatrix,
    KgelProblem,
    KgelSolution,
    covariance_from_samples,
    covariance_matrix,
    kgel_rhs,
    kgel_solve,
    log_likelihood,
    test_mmd,
    test_mmd_samples,
)
from .exact import (
    ExactLimitError,
    PhaseTable,
    exact_expval,
    exact_phase_table,
    exact_probabilities,
    fwht,
    sample_bitflip,
    sample_exact,
    set_exact_limit,
)
from .expval import ExpvalEstimate, expval_bitflip, expval_estimate
from .mmd import (
    BandwidthSchedule,
    KernelConfig,
    MmdEstimate,
    ObservableDistribution,
    bernoulli_p,
    gaussian_kernel,
    median_heuristic,
    mmd2_samples,
    mmd2_unbiased,
    multi_bandwidth_loss,
    sample_observables,
    sigma_for_weight,
)
from .training import InitConfig, OptimizerState, TrainConfig, TrainReport, adam_step, init_params_datadep, loss_and_grad, train
