"""Variational GP regression with decoupled mean/covariance basis sets."""

import os as _os

# The dense blocks here are small (a few thousand square at most); threaded
# BLAS loses far more to synchronization than it gains.  Respect explicit
# user settings.  Must run before numpy first loads its BLAS.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from .kernels import (BasisPoint, BasisSet, KernelBlock, KernelHyper,
                      gen_basis_cov, gen_cross_cov, kernel_block, se_ard_cov)
from .model import (DecoupledModel, ModelGradient, PredictiveMoments, elbo,
                    elbo_and_grad, ell_gaussian, ell_gaussian_grads,
                    ell_monte_carlo, gaussian_log_density, grad_ell, grad_kl,
                    kl_general, kl_general_from_blocks, kl_normal_prior,
                    kl_to_normal_prior, model_from_params, model_params,
                    predict, to_canonical, with_params)
from .optimizer import AdamState, StepSchedule, adam_step, schedule_rate
from .trainer import (Dataset, TrainConfig, add_basis, init_hyper,
                      sample_minibatch, train)

__version__ = "0.1.0"

__all__ = [
    "BasisPoint", "BasisSet", "KernelBlock", "KernelHyper",
    "se_ard_cov", "gen_basis_cov", "gen_cross_cov", "kernel_block",
    "DecoupledModel", "ModelGradient", "PredictiveMoments",
    "predict", "kl_normal_prior", "kl_to_normal_prior", "kl_general",
    "kl_general_from_blocks", "ell_gaussian", "ell_gaussian_grads",
    "ell_monte_carlo", "gaussian_log_density", "grad_kl", "grad_ell",
    "elbo", "elbo_and_grad", "to_canonical", "model_params",
    "model_from_params", "with_params",
    "AdamState", "StepSchedule", "adam_step", "schedule_rate",
    "Dataset", "TrainConfig", "init_hyper", "add_basis", "sample_minibatch",
    "train",
    "__version__",
]
