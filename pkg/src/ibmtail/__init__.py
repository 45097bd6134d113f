"""Upper tails, small balls and Laplace transforms of norms of integrated Brownian motion."""
from .estimators import (ISConfig, LaplaceEstimate, NormSpec, SmallBallResult, SpliceError,
                         TailEstimate, laplace_estimate, mc_tail, mc_tail_many, mean_norm,
                         small_ball_curve)
from .formulas import (asymptotic_tail_l2, asymptotic_tail_lp_bm, asymptotic_tail_sup,
                       borell_bound, laplace_asymptotic, lifshits_consistency, sigma_p,
                       thm2_bound, thm3_bound)
from .process import ProcessSpec, cross_covariance, kernel_matrix, kernel_value, state_transition
from .rng import RngStream
from .simulate import TimeGrid, sample_kl, sample_path_cholesky, sample_path_exact, sample_paths
from .spectrum import (ConvergenceError, SpectralGapError, check_eigen_bounds, gauss_legendre,
                       nystrom_spectrum, operator_p_norm, zolotarev_constants)

__version__ = "0.1.0"
