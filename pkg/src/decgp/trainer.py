"""Online training loop: grow the bases from incoming minibatches, ascend the bound.

Each iteration samples a minibatch, appends up to ``increment`` of its points
to both basis sets (until the caps are reached), and takes one Adam ascent
step on every variational parameter and hyperparameter.  Hyperparameters are
initialized from the first minibatch by the median trick.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernels import BasisSet, KernelHyper
from .model import (DecoupledModel, ModelGradient, elbo_and_grad, ell_gaussian_grads,
                    ell_monte_carlo, gaussian_log_density, grad_ell, grad_kl,
                    model_params, predict, with_params, _beta_workspace, _kl_cov_value)
from .optimizer import AdamState, StepSchedule, adam_step, grow_state, schedule_rate

__all__ = ["TrainConfig", "Dataset", "TraceRow", "init_hyper", "add_basis",
           "sample_minibatch", "train"]

logger = logging.getLogger(__name__)

_MEDIAN_PAIR_CAP = 2000
_NEW_L_DIAG = 1e-3


@dataclass
class TrainConfig:
    """Knobs for the online loop.

    kl_column_samples of None means exact KL gradients; an integer requests
    that many sampled basis columns per step.  share_bases ties the two basis
    sets together (the classic shared-basis model); update_bases/update_hyper
    freeze basis locations+multipliers or hyperparameters when False.
    """

    m_alpha_cap: int
    m_beta_cap: int
    batch_size: int
    increment: int
    iterations: int
    gamma0: float = 1e-2
    seed: int = 0
    kl_column_samples: Optional[int] = None
    likelihood: str = "gaussian"
    mc_samples: int = 64
    share_bases: bool = False
    update_bases: bool = True
    update_hyper: bool = True

    def __post_init__(self):
        if self.increment > self.batch_size:
            raise ValueError("increment must not exceed batch_size")
        if self.m_alpha_cap < 0 or self.m_beta_cap < 0 or self.iterations < 0:
            raise ValueError("caps and iteration count must be nonnegative")
        if self.likelihood not in ("gaussian", "monte_carlo"):
            raise ValueError("likelihood must be 'gaussian' or 'monte_carlo'")
        if self.share_bases and self.m_alpha_cap != self.m_beta_cap:
            raise ValueError("share_bases requires equal basis caps")


@dataclass
class Dataset:
    """Column-typed regression data plus optional normalization statistics."""

    inputs: np.ndarray
    targets: np.ndarray
    input_mean: Optional[np.ndarray] = None
    input_std: Optional[np.ndarray] = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must have the same number of rows")
        if self.inputs.shape[0] < 1:
            raise ValueError("dataset must contain at least one row")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset contains non-finite values")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class TraceRow:
    iteration: int
    wall_ms: float
    elbo_estimate: float


def init_hyper(batch) -> tuple[KernelHyper, float]:
    """Median-trick initialization from one minibatch.

    Per-dimension length scales are the medians of pairwise absolute
    coordinate differences (at most 2000 sampled pairs), the noise variance is
    the sample variance of the targets, and the amplitude is 1.
    """
    inputs, targets = batch
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float)
    n, dim = X.shape
    if n == 0:
        raise ValueError("cannot initialize hyperparameters from an empty batch")

    if n < 2:
        medians = np.ones(dim)
    else:
        n_pairs = n * (n - 1) // 2
        if n_pairs <= _MEDIAN_PAIR_CAP:
            ii, jj = np.triu_indices(n, k=1)
        else:
            pair_rng = np.random.default_rng(0)  # fixed: init_hyper stays a pure function
            ii = pair_rng.integers(0, n, _MEDIAN_PAIR_CAP)
            jj = pair_rng.integers(0, n - 1, _MEDIAN_PAIR_CAP)
            jj = np.where(jj >= ii, jj + 1, jj)
        medians = np.median(np.abs(X[ii] - X[jj]), axis=0)
    scales = np.where(medians > 0.0, np.maximum(medians, 1e-6), 1.0)

    sigma2 = float(np.var(y))
    if not np.isfinite(sigma2) or sigma2 <= 1e-8:
        sigma2 = 1e-4
    return KernelHyper(0.0, np.log(scales)), float(np.log(sigma2))


def empty_model(hyper: KernelHyper, log_noise: float) -> DecoupledModel:
    dim = hyper.dim
    return DecoupledModel(alpha=BasisSet.empty(dim), a=np.zeros(0),
                          beta=BasisSet.empty(dim), L=np.zeros((0, 0)),
                          hyper=hyper, log_noise=log_noise)


def add_basis(model: DecoupledModel, batch, config: TrainConfig,
              rng: np.random.Generator) -> DecoupledModel:
    """Append up to ``increment`` batch points to both bases (saturating at the caps).

    New points enter with zero mean coefficients, unit multipliers, and a
    small diagonal extension of L, so predictions are essentially unchanged.
    """
    inputs = np.atleast_2d(np.asarray(batch[0], dtype=float))
    room_alpha = max(config.m_alpha_cap - len(model.alpha), 0)
    room_beta = max(config.m_beta_cap - len(model.beta), 0)
    take = min(config.increment, max(room_alpha, room_beta), inputs.shape[0])
    if take == 0:
        return model
    chosen = inputs[rng.choice(inputs.shape[0], size=take, replace=False)]

    alpha, a = model.alpha, model.a
    n_alpha = min(take, room_alpha)
    if n_alpha > 0:
        pts = chosen[:n_alpha]
        alpha = alpha.appended(pts, np.zeros_like(pts))
        a = np.concatenate([a, np.zeros(n_alpha)])

    beta, L = model.beta, model.L
    n_beta = min(take, room_beta)
    if n_beta > 0:
        pts = chosen[:n_beta]
        beta = beta.appended(pts, np.zeros_like(pts))
        old = L.shape[0]
        grown = np.zeros((old + n_beta, old + n_beta))
        grown[:old, :old] = L
        grown[old:, old:] = _NEW_L_DIAG * np.eye(n_beta)
        L = grown

    return DecoupledModel(alpha=alpha, a=a, beta=beta, L=L,
                          hyper=model.hyper, log_noise=model.log_noise)


def sample_minibatch(dataset: Dataset, n: int, rng: np.random.Generator):
    """Uniform sample of n rows without replacement."""
    if not 1 <= n <= len(dataset):
        raise ValueError(f"minibatch size {n} out of range for {len(dataset)} rows")
    idx = rng.choice(len(dataset), size=n, replace=False)
    return dataset.inputs[idx], dataset.targets[idx]


def _step_gradient(model: DecoupledModel, Xb, yb, n_total: int,
                   config: TrainConfig, rng: np.random.Generator):
    """ELBO estimate and gradient for one minibatch under the configured likelihood."""
    kl_columns = None
    ma = len(model.alpha)
    if config.kl_column_samples is not None and 0 < config.kl_column_samples < ma:
        kl_columns = rng.choice(ma, size=config.kl_column_samples, replace=False)

    scale = n_total / Xb.shape[0]
    if config.likelihood == "gaussian":
        return elbo_and_grad(model, Xb, yb, n_total, kl_columns=kl_columns)

    moments = predict(model, Xb)
    mc_rng = rng.spawn(1)[0]
    value, d_mean, d_variance = ell_monte_carlo(
        moments, yb, gaussian_log_density(model.log_noise), config.mc_samples, mc_rng)
    # the likelihood-hyper derivative E_q[d log p / d log sigma^2] is available
    # in closed form for the Gaussian observation model
    _, _, d_log_noise = ell_gaussian_grads(moments, yb, model.log_noise)
    g_ell = grad_ell(model, Xb, scale * d_mean, scale * d_variance,
                     d_log_noise=scale * d_log_noise)
    g_kl = grad_kl(model, columns=kl_columns)
    kl_value = 0.5 * float(model.a @ g_kl.d_a) + _kl_cov_value(_beta_workspace(model))
    ge, gk = g_ell.as_dict(), g_kl.as_dict()
    grad = ModelGradient.from_dict({k: ge[k] - gk[k] for k in ge})
    return scale * value - kl_value, grad


def _apply_config_masks(grad: dict, config: TrainConfig) -> dict:
    if config.share_bases:
        grad["alpha_locations"] = grad["alpha_locations"] + grad["beta_locations"]
        grad["alpha_log_multipliers"] = grad["alpha_log_multipliers"] + grad["beta_log_multipliers"]
        grad["beta_locations"] = np.zeros_like(grad["beta_locations"])
        grad["beta_log_multipliers"] = np.zeros_like(grad["beta_log_multipliers"])
    if not config.update_bases:
        for key in ("alpha_locations", "alpha_log_multipliers",
                    "beta_locations", "beta_log_multipliers"):
            grad[key] = np.zeros_like(grad[key])
    if not config.update_hyper:
        grad["log_amplitude"] = 0.0
        grad["log_lengthscales"] = np.zeros_like(grad["log_lengthscales"])
        grad["log_noise"] = 0.0
    return grad


def train(dataset: Dataset, config: TrainConfig):
    """Run the online loop for ``config.iterations`` steps.

    Returns the final model and a per-iteration trace of ELBO estimates.  The
    whole trajectory is a pure function of (dataset, config); non-finite
    gradients reject the step and training continues.
    """
    rng = np.random.default_rng(config.seed)
    n_total = len(dataset)
    batch_size = min(config.batch_size, n_total)

    hyper, log_noise = init_hyper(sample_minibatch(dataset, batch_size, rng))
    model = empty_model(hyper, log_noise)
    schedule = StepSchedule(config.gamma0)
    adam = AdamState.init(model_params(model))
    trace: list[TraceRow] = []

    for t in range(1, config.iterations + 1):
        start = time.perf_counter()
        Xb, yb = sample_minibatch(dataset, batch_size, rng)
        model = add_basis(model, (Xb, yb), config, rng)
        params = model_params(model)
        grow_state(adam, params)

        value, grad = _step_gradient(model, Xb, yb, n_total, config, rng)
        grad_dict = _apply_config_masks(grad.as_dict(), config)
        try:
            params, adam = adam_step(adam, params, grad_dict, schedule_rate(schedule, t))
            if config.share_bases:
                params["beta_locations"] = params["alpha_locations"].copy()
                params["beta_log_multipliers"] = params["alpha_log_multipliers"].copy()
            model = with_params(model, params)
        except ValueError as err:
            logger.warning("iteration %d: %s", t, err)
        trace.append(TraceRow(iteration=t,
                              wall_ms=1000.0 * (time.perf_counter() - start),
                              elbo_estimate=float(value)))
    return model, trace
