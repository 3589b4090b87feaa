"""Branching Pólya point processes on finite sites: samplers, exact laws and
Monte Carlo checks of their Papangelou, Palm and Laplace identities."""
from .boundary import (MixtureSpec, conditional_lt_exact_difference, conditioned_counts,
                       conditioned_sampler, convergence_experiment, estimate_Z_from_sample,
                       u_statistic, verify_mixed_ibp, z_parameter)
from .branching import (BranchingKernel, branch_configuration, branch_counts, check_cocycle,
                        cocycle_search, kernel_apply, smoothing_kernel, verify_count_preservation)
from .campbell import (BivariateFunctional, CountIndicator, CountPolynomial, ExpCount, One,
                       PapangelouSpec, estimate_campbell, evaluate_papangelou, exact_ibp,
                       exact_ibp_difference, intensity_measure, iterated_kernel, palm_pmf, qj_pmf,
                       sample_palm, sample_Qj, verify_ibp, verify_ibp_battery,
                       verify_iterated_symmetry, verify_palm, verify_superposition)
from .config import ConfigError, ExperimentConfig, load_config, read_config
from .laplace import laplace_analytic, laplace_branching, laplace_empirical
from .rng import replicate, stream
from .samplers import (DIFFERENCE, POISSON, SUM, PointConfiguration, ProcessSpec, exact_count_pmf,
                       sample_poisson, sample_polya_difference, sample_polya_sum,
                       sample_polya_sum_cluster)
from .space import BaseMeasure, Exhaustion, Space, TestFunction, integrate
from .stats import Estimate, VerificationReport, compare_estimates

__version__ = "0.1.0"
