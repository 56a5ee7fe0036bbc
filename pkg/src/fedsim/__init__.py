"""Deterministic simulator of federated averaging under non-uniform,
time-varying link failures, with exact bias oracles and mixing-spectrum
diagnostics."""

__version__ = "0.1.0"

from .algorithms import (AlgorithmConfig, ExperimentResult, FleetState, MetricsRow,
                         fedavg_round, fedpbc_round, local_sgd, matrix_form_check,
                         run_experiment)
from .errors import (CapacityError, ConfigError, ContractViolationError,
                     DivergedRunError, FedsimError, SolverError, StatisticalError)
from .link_model import (ActiveSet, StaticLinkProcess, UniformLinkProcess,
                         ZipfCountLinkProcess, build_trace, probabilities_at,
                         sample_active_set, zipf_sample)
from .mixing import (ExpectedSquareMixing, MixingMatrix, build_mixing,
                     contraction_check, contraction_profile, ergodicity_bound,
                     expected_square_exact, expected_square_mc, rho)
from .numerics import integrate_weighted_product, second_eigenvalue_sym
from .objectives import (FederatedDataset, QuadraticObjective, SoftmaxObjective,
                         SoftmaxParams, generate_synthetic, global_gradient_norm,
                         quad_global_optimum, quad_gradient, softmax_loss_grad)
from .oracles import (LimitWeights, fedavg_limit_integral, fedavg_limit_mc,
                      fedavg_limit_subset, kappa, local_perturbation_check)
from .streams import SeededStream

__all__ = [name for name in dir() if not name.startswith("_")]
