"""Decoupled variational Gaussian-process posterior.

The posterior mean and covariance live in the prior kernel's function space
and are parametrized by two independent basis sets:

    mean:        mu(x)    = sum_j a_j k_cross(alpha_j, x)
    covariance:  Sigma    = (I + Psi_beta B Psi_beta^T)^-1,   B = L L^T

so that the predictive moments at a batch X are

    m_hat = K_{X,alpha} a
    s_hat = diag(K_X) - rowsum(K_{X,beta} (.) K_{X,beta} B (I + K_beta B)^-1)

Every inversion routes through the well-conditioned matrix
H = I + L^T K_beta L (eigenvalues >= 1); B is never inverted.  A small
diagonal guard is added to K_beta before forming H.  Gradients of the KL
term and of the expected log-likelihood are closed-form; see grad_kl and
grad_ell.  The training objective is

    elbo = (N / N_batch) * sum_batch E_q[log p(y_n | f(x_n))] - KL(q || prior).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .kernels import (JITTER, BasisSet, KernelHyper, contracted_partials,
                      kernel_block)

__all__ = [
    "DecoupledModel",
    "PredictiveMoments",
    "ModelGradient",
    "GradientWorkspace",
    "gaussian_log_density",
    "predict",
    "kl_normal_prior",
    "kl_to_normal_prior",
    "kl_general",
    "kl_general_from_blocks",
    "ell_gaussian",
    "ell_gaussian_grads",
    "ell_monte_carlo",
    "grad_kl",
    "grad_ell",
    "elbo",
    "elbo_and_grad",
    "to_canonical",
    "model_params",
    "model_from_params",
    "with_params",
]

# query chunk size: keeps cross-block memory at O(chunk * M)
_CHUNK = 4096

PARAM_KEYS = (
    "a",
    "alpha_locations",
    "alpha_log_multipliers",
    "L",
    "beta_locations",
    "beta_log_multipliers",
    "log_amplitude",
    "log_lengthscales",
    "log_noise",
)


@dataclass
class DecoupledModel:
    """Trainable state: mean basis (alpha, a), covariance basis (beta, L), hypers."""

    alpha: BasisSet
    a: np.ndarray
    beta: BasisSet
    L: np.ndarray
    hyper: KernelHyper
    log_noise: float

    def validate(self):
        if self.a.shape != (len(self.alpha),):
            raise ValueError("a must have one coefficient per mean basis point")
        m = len(self.beta)
        if self.L.shape != (m, m):
            raise ValueError("L must be square with one row per covariance basis point")
        if self.alpha.dim != self.hyper.dim or self.beta.dim != self.hyper.dim:
            raise ValueError("basis dimension does not match hyperparameters")
        for name, arr in (("a", self.a), ("L", self.L)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        if not np.isfinite(self.log_noise):
            raise ValueError("log_noise must be finite")
        return self


@dataclass
class PredictiveMoments:
    """Per-query predictive mean and variance."""

    mean: np.ndarray
    variance: np.ndarray


@dataclass
class ModelGradient:
    """Gradient with the same layout as the model parameters."""

    d_a: np.ndarray
    d_alpha_locations: np.ndarray
    d_alpha_multipliers: np.ndarray
    d_L: np.ndarray
    d_beta_locations: np.ndarray
    d_beta_multipliers: np.ndarray
    d_log_amplitude: float
    d_log_lengthscales: np.ndarray
    d_log_noise: float

    @classmethod
    def zeros(cls, model: DecoupledModel) -> "ModelGradient":
        ma, mb, d = len(model.alpha), len(model.beta), model.hyper.dim
        return cls(
            d_a=np.zeros(ma),
            d_alpha_locations=np.zeros((ma, d)),
            d_alpha_multipliers=np.zeros((ma, d)),
            d_L=np.zeros((mb, mb)),
            d_beta_locations=np.zeros((mb, d)),
            d_beta_multipliers=np.zeros((mb, d)),
            d_log_amplitude=0.0,
            d_log_lengthscales=np.zeros(d),
            d_log_noise=0.0,
        )

    def as_dict(self) -> dict:
        return {
            "a": self.d_a,
            "alpha_locations": self.d_alpha_locations,
            "alpha_log_multipliers": self.d_alpha_multipliers,
            "L": self.d_L,
            "beta_locations": self.d_beta_locations,
            "beta_log_multipliers": self.d_beta_multipliers,
            "log_amplitude": self.d_log_amplitude,
            "log_lengthscales": self.d_log_lengthscales,
            "log_noise": self.d_log_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelGradient":
        return cls(
            d_a=d["a"],
            d_alpha_locations=d["alpha_locations"],
            d_alpha_multipliers=d["alpha_log_multipliers"],
            d_L=d["L"],
            d_beta_locations=d["beta_locations"],
            d_beta_multipliers=d["beta_log_multipliers"],
            d_log_amplitude=float(d["log_amplitude"]),
            d_log_lengthscales=d["log_lengthscales"],
            d_log_noise=float(d["log_noise"]),
        )


def model_params(model: DecoupledModel) -> dict:
    """Copy the trainable parameters into a flat dict keyed by PARAM_KEYS."""
    return {
        "a": model.a.copy(),
        "alpha_locations": model.alpha.locations.copy(),
        "alpha_log_multipliers": model.alpha.log_multipliers.copy(),
        "L": model.L.copy(),
        "beta_locations": model.beta.locations.copy(),
        "beta_log_multipliers": model.beta.log_multipliers.copy(),
        "log_amplitude": float(model.hyper.log_amplitude),
        "log_lengthscales": model.hyper.log_lengthscales.copy(),
        "log_noise": float(model.log_noise),
    }


def model_from_params(params: dict) -> DecoupledModel:
    """Build a model from a flat parameter dict keyed by PARAM_KEYS."""
    return DecoupledModel(
        alpha=BasisSet(np.asarray(params["alpha_locations"], dtype=float),
                       np.asarray(params["alpha_log_multipliers"], dtype=float)),
        a=np.asarray(params["a"], dtype=float),
        beta=BasisSet(np.asarray(params["beta_locations"], dtype=float),
                      np.asarray(params["beta_log_multipliers"], dtype=float)),
        L=np.asarray(params["L"], dtype=float),
        hyper=KernelHyper(float(params["log_amplitude"]),
                          np.asarray(params["log_lengthscales"], dtype=float)),
        log_noise=float(params["log_noise"]),
    )


def with_params(model: DecoupledModel, params: dict) -> DecoupledModel:
    """A new model with the given parameter values (shapes must match)."""
    return model_from_params(params)


# -- covariance workspace ------------------------------------------------------

@dataclass
class GradientWorkspace:
    """Factorized covariance-side quantities shared by predict and the gradients.

    kb is the covariance-basis kernel matrix with the diagonal guard applied,
    tril_L the effective lower-triangular factor, W = kb @ L, and C the lower
    Cholesky factor of H = I + L^T kb L.
    """

    kb: np.ndarray
    tril_L: np.ndarray
    W: np.ndarray
    H: np.ndarray
    C: np.ndarray

    def solve_h(self, rhs: np.ndarray) -> np.ndarray:
        return sla.cho_solve((self.C, True), rhs)

    def half_solve(self, rhs: np.ndarray) -> np.ndarray:
        return sla.solve_triangular(self.C, rhs, lower=True)

    def r_matrix(self) -> np.ndarray:
        """(B^-1 + kb)^-1 evaluated stably as L H^-1 L^T."""
        return self.tril_L @ self.solve_h(self.tril_L.T)

    def log_det_h(self) -> float:
        return float(2.0 * np.log(np.diag(self.C)).sum())

    def trace_h_inv(self) -> float:
        inv_half = self.half_solve(np.eye(self.C.shape[0]))
        return float(np.sum(inv_half ** 2))


def _beta_workspace(model: DecoupledModel) -> Optional[GradientWorkspace]:
    mb = len(model.beta)
    if mb == 0:
        return None
    kb = kernel_block(model.beta, model.beta, model.hyper, "basis").values
    kb = kb + (JITTER * model.hyper.amplitude ** 2) * np.eye(mb)
    tril_L = np.tril(model.L)
    W = kb @ tril_L
    H = np.eye(mb) + tril_L.T @ W
    C = np.linalg.cholesky(H)
    return GradientWorkspace(kb=kb, tril_L=tril_L, W=W, H=H, C=C)


def _check_queries(model: DecoupledModel, queries) -> np.ndarray:
    X = np.atleast_2d(np.asarray(queries, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("query set must be nonempty")
    if X.shape[1] != model.hyper.dim:
        raise ValueError("query dimension does not match the model")
    return X


# -- predictive moments ---------------------------------------------------------

def predict(model: DecoupledModel, queries) -> PredictiveMoments:
    """Predictive mean and variance at the query points in O(N M_alpha + N M_beta^2)."""
    X = _check_queries(model, queries)
    n = X.shape[0]
    rho2 = model.hyper.amplitude ** 2
    ws = _beta_workspace(model)
    mean = np.zeros(n)
    var = np.full(n, rho2)
    for start in range(0, n, _CHUNK):
        Xc = X[start:start + _CHUNK]
        if len(model.alpha) > 0:
            kax = kernel_block(model.alpha, Xc, model.hyper, "cross").values
            mean[start:start + _CHUNK] = kax.T @ model.a
        if ws is not None:
            kbx = kernel_block(model.beta, Xc, model.hyper, "cross").values
            half = ws.half_solve(ws.tril_L.T @ kbx)
            var[start:start + _CHUNK] = rho2 - np.sum(half ** 2, axis=0)
    return PredictiveMoments(mean=mean, variance=np.maximum(var, 0.0))


# -- KL divergence --------------------------------------------------------------

def kl_to_normal_prior(a: np.ndarray, L: np.ndarray,
                       K_alpha: np.ndarray, K_beta: np.ndarray) -> float:
    """KL(q || normal prior) from explicit basis kernel matrices.

    0.5 a^T K_alpha a + 0.5 log|H| - 0.5 (M_beta - tr(H^-1)),
    H = I + L^T K_beta L.  The matrices are used as given; callers add any
    diagonal guard themselves.
    """
    a = np.asarray(a, dtype=float)
    value = 0.0
    if a.size > 0:
        value += 0.5 * float(a @ (np.asarray(K_alpha, dtype=float) @ a))
    L = np.tril(np.asarray(L, dtype=float))
    mb = L.shape[0]
    if mb > 0:
        H = np.eye(mb) + L.T @ np.asarray(K_beta, dtype=float) @ L
        C = np.linalg.cholesky(H)
        inv_half = sla.solve_triangular(C, np.eye(mb), lower=True)
        value += 0.5 * (2.0 * np.log(np.diag(C)).sum() - mb + np.sum(inv_half ** 2))
    return float(value)


def _kl_cov_value(ws: Optional[GradientWorkspace]) -> float:
    if ws is None:
        return 0.0
    mb = ws.C.shape[0]
    return 0.5 * (ws.log_det_h() - mb + ws.trace_h_inv())


def kl_normal_prior(model: DecoupledModel) -> float:
    """KL divergence from the model's posterior to the normal prior."""
    value = 0.0
    if len(model.alpha) > 0:
        ka = kernel_block(model.alpha, model.alpha, model.hyper, "basis").values
        value += 0.5 * float(model.a @ (ka @ model.a))
    value += _kl_cov_value(_beta_workspace(model))
    return value


def _coincidence_mask(u: BasisSet, v: BasisSet) -> np.ndarray:
    """Boolean (|u|, |v|) mask marking pointwise-identical basis entries."""
    loc_eq = np.all(u.locations[:, None, :] == v.locations[None, :, :], axis=-1)
    mul_eq = np.all(u.log_multipliers[:, None, :] == v.log_multipliers[None, :, :], axis=-1)
    return loc_eq & mul_eq


def _basis_cov(u: BasisSet, v: BasisSet, hyper: KernelHyper, guard: float) -> np.ndarray:
    if len(u) == 0 or len(v) == 0:
        return np.zeros((len(u), len(v)))
    k = kernel_block(u, v, hyper, "basis").values
    if guard:
        k = k + guard * _coincidence_mask(u, v)
    return k


def kl_general_from_blocks(a, L, a_bar, L_bar,
                           K_alpha, K_beta, K_alpha_bar, K_beta_bar,
                           K_alpha_alpha_bar, K_alpha_beta_bar,
                           K_beta_beta_bar, K_alpha_bar_beta_bar) -> float:
    """KL between two subspace-parametrized Gaussian measures from explicit blocks.

    q has mean basis alpha with weights a and covariance factor L; p carries
    the barred quantities.  Reduces to kl_to_normal_prior when p is normal
    (empty bars).  Matrices are used as given.
    """
    a = np.asarray(a, dtype=float)
    a_bar = np.asarray(a_bar, dtype=float)
    L = np.tril(np.asarray(L, dtype=float))
    L_bar = np.tril(np.asarray(L_bar, dtype=float))
    B_bar = L_bar @ L_bar.T

    K_beta = np.asarray(K_beta, dtype=float)
    G_beta = K_beta + K_beta_beta_bar @ B_bar @ np.transpose(K_beta_beta_bar)
    G_alpha = K_alpha + K_alpha_beta_bar @ B_bar @ np.transpose(K_alpha_beta_bar)
    G_alpha_alpha_bar = K_alpha_alpha_bar + K_alpha_beta_bar @ B_bar @ np.transpose(K_alpha_bar_beta_bar)

    value = 0.0
    mb = L.shape[0]
    if mb > 0:
        H = np.eye(mb) + L.T @ K_beta @ L
        C = np.linalg.cholesky(H)
        inner = sla.cho_solve((C, True), L.T @ G_beta @ L)
        value += -0.5 * np.trace(inner) + np.log(np.diag(C)).sum()
    if a.size > 0:
        value += 0.5 * float(a @ (G_alpha @ a))
        if a_bar.size > 0:
            value -= float(a @ (G_alpha_alpha_bar @ a_bar))

    # constant carrying the prior's own statistics
    mb_bar = L_bar.shape[0]
    if mb_bar > 0:
        value += 0.5 * float(np.sum((np.asarray(K_beta_bar, dtype=float) @ L_bar) * L_bar))
        H_bar = np.eye(mb_bar) + L_bar.T @ np.asarray(K_beta_bar, dtype=float) @ L_bar
        value -= np.log(np.diag(np.linalg.cholesky(H_bar))).sum()
    if a_bar.size > 0:
        quad = np.asarray(K_alpha_bar, dtype=float) + \
            K_alpha_bar_beta_bar @ B_bar @ np.transpose(K_alpha_bar_beta_bar)
        value += 0.5 * float(a_bar @ (quad @ a_bar))
    return float(value)


def kl_general(q: DecoupledModel, p: DecoupledModel) -> float:
    """KL(q || p) for two models sharing the same kernel hyperparameters."""
    if q.hyper.log_amplitude != p.hyper.log_amplitude or \
            not np.array_equal(q.hyper.log_lengthscales, p.hyper.log_lengthscales):
        raise ValueError("kl_general requires both measures to share the kernel")
    hyper = q.hyper
    guard = JITTER * hyper.amplitude ** 2
    # self-blocks that get factorized carry the guard; blocks between the two
    # covariance bases carry it only at pointwise-identical entries so that
    # KL(q || q) vanishes exactly
    return kl_general_from_blocks(
        q.a, q.L, p.a, p.L,
        K_alpha=_basis_cov(q.alpha, q.alpha, hyper, 0.0),
        K_beta=_basis_cov(q.beta, q.beta, hyper, 0.0) + guard * np.eye(len(q.beta)),
        K_alpha_bar=_basis_cov(p.alpha, p.alpha, hyper, 0.0),
        K_beta_bar=_basis_cov(p.beta, p.beta, hyper, 0.0) + guard * np.eye(len(p.beta)),
        K_alpha_alpha_bar=_basis_cov(q.alpha, p.alpha, hyper, 0.0),
        K_alpha_beta_bar=_basis_cov(q.alpha, p.beta, hyper, 0.0),
        K_beta_beta_bar=_basis_cov(q.beta, p.beta, hyper, guard),
        K_alpha_bar_beta_bar=_basis_cov(p.alpha, p.beta, hyper, 0.0),
    )


# -- expected log-likelihood -----------------------------------------------------

def gaussian_log_density(log_noise: float) -> Callable:
    """Elementwise Gaussian observation log-density with variance exp(log_noise)."""
    sigma2 = float(np.exp(log_noise))

    def log_density(y, f):
        return -0.5 * np.log(2.0 * np.pi * sigma2) - (y - f) ** 2 / (2.0 * sigma2)

    return log_density


def ell_gaussian(moments: PredictiveMoments, y, log_noise: float) -> float:
    """Closed-form expected Gaussian log-likelihood summed over observations."""
    y = np.asarray(y, dtype=float)
    m, s = moments.mean, moments.variance
    if y.shape != m.shape:
        raise ValueError("targets and moments have mismatched shapes")
    sigma2 = float(np.exp(log_noise))
    n = y.shape[0]
    return float(-0.5 * n * np.log(2.0 * np.pi * sigma2)
                 - np.sum((y - m) ** 2 + s) / (2.0 * sigma2))


def ell_gaussian_grads(moments: PredictiveMoments, y, log_noise: float):
    """Derivatives of ell_gaussian w.r.t. mean, variance, and log noise."""
    y = np.asarray(y, dtype=float)
    m, s = moments.mean, moments.variance
    sigma2 = float(np.exp(log_noise))
    d_mean = (y - m) / sigma2
    d_variance = np.full_like(s, -0.5 / sigma2)
    d_log_noise = float(np.sum(-0.5 + ((y - m) ** 2 + s) / (2.0 * sigma2)))
    return d_mean, d_variance, d_log_noise


def ell_monte_carlo(moments: PredictiveMoments, y, log_density: Callable,
                    n_samples: int, rng: np.random.Generator):
    """Score-function Monte-Carlo estimate of the ELL and its moment gradients.

    Samples f ~ N(m_hat, s_hat) per observation and returns the estimated sum
    of expectations together with d/d m_hat and d/d s_hat estimates, each the
    sample mean of (score of the scalar Gaussian) * log-density.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    y = np.asarray(y, dtype=float)
    m, s = moments.mean, moments.variance
    if np.any(s <= 0.0):
        raise ValueError("Monte-Carlo estimation requires strictly positive variances")
    eps = rng.standard_normal((n_samples, m.shape[0]))
    f = m[None, :] + np.sqrt(s)[None, :] * eps
    lp = log_density(y[None, :], f)
    if not np.all(np.isfinite(lp)):
        raise ValueError("non-finite likelihood evaluation in Monte-Carlo estimate")
    value = float(lp.mean(axis=0).sum())
    resid = f - m[None, :]
    d_mean = (resid / s[None, :] * lp).mean(axis=0)
    d_variance = ((-0.5 / s[None, :] + resid ** 2 / (2.0 * s[None, :] ** 2)) * lp).mean(axis=0)
    return value, d_mean, d_variance


# -- gradients -------------------------------------------------------------------

def grad_kl(model: DecoupledModel, columns: Optional[np.ndarray] = None) -> ModelGradient:
    """Gradient of KL(q || prior) w.r.t. all model parameters.

    With ``columns`` given, the mean-side sums over the alpha basis are
    estimated from those sampled columns, scaled by M_alpha / |columns|; the
    covariance-side terms are always exact.
    """
    g = ModelGradient.zeros(model)
    ma = len(model.alpha)

    if ma > 0:
        if columns is None:
            cols, target, scale = model.alpha, model.a, 1.0
        else:
            idx = np.asarray(columns, dtype=int)
            if idx.size == 0:
                raise ValueError("column index set must be nonempty")
            cols, target, scale = model.alpha.subset(idx), model.a[idx], ma / idx.size
        blk = kernel_block(model.alpha, cols, model.hyper, "basis")
        g.d_a = scale * (blk.values @ target)
        c = contracted_partials(model.alpha, cols, model.hyper, "basis",
                                blk.values, target[None, :])
        g.d_alpha_locations = scale * model.a[:, None] * c["row_locations"]
        g.d_alpha_multipliers = scale * model.a[:, None] * c["row_log_multipliers"]
        g.d_log_lengthscales += 0.5 * scale * (model.a @ c["log_lengthscales"])

    ws = _beta_workspace(model)
    if ws is not None:
        # d/dB = 0.5 (I + K B)^-1 K B K (I + B K)^-1 = 0.5 Q B Q with
        # Q = K - W H^-1 W^T; chain rule through B = L L^T gives d_L = Q B Q L
        Q = ws.kb - ws.W @ ws.solve_h(ws.W.T)
        QL = Q @ ws.tril_L
        g.d_L = np.tril(QL @ (ws.tril_L.T @ QL))
        R = ws.r_matrix()
        M = R @ ws.kb @ R
        kb = kernel_block(model.beta, model.beta, model.hyper, "basis").values
        c = contracted_partials(model.beta, model.beta, model.hyper, "basis", kb, M)
        g.d_beta_locations = c["row_locations"]
        g.d_beta_multipliers = c["row_log_multipliers"]
        g.d_log_lengthscales += 0.5 * c["log_lengthscales"].sum(axis=0)
    return g


def grad_ell(model: DecoupledModel, inputs, d_mean, d_variance,
             d_log_noise: float = 0.0) -> ModelGradient:
    """Chain the ELL moment gradients back to every model parameter.

    d_mean and d_variance are dELL/d m_hat and dELL/d s_hat for this batch
    (closed-form Gaussian derivatives or Monte-Carlo estimates); the
    likelihood's own hyperparameter derivative is passed through unchanged.
    """
    X = _check_queries(model, inputs)
    d_mean = np.asarray(d_mean, dtype=float)
    d_variance = np.asarray(d_variance, dtype=float)
    if d_mean.shape != (X.shape[0],) or d_variance.shape != (X.shape[0],):
        raise ValueError("moment gradients must have one entry per batch row")

    g = ModelGradient.zeros(model)
    g.d_log_noise = float(d_log_noise)
    rho2 = model.hyper.amplitude ** 2
    ws = _beta_workspace(model)
    dB = np.zeros((len(model.beta), len(model.beta)))
    A = np.zeros_like(dB)

    for start in range(0, X.shape[0], _CHUNK):
        Xc = X[start:start + _CHUNK]
        dm = d_mean[start:start + _CHUNK]
        dv = d_variance[start:start + _CHUNK]

        mean_c = np.zeros(Xc.shape[0])
        if len(model.alpha) > 0:
            blk = kernel_block(model.alpha, Xc, model.hyper, "cross")
            mean_c = blk.values.T @ model.a
            g.d_a += blk.values @ dm
            c = contracted_partials(model.alpha, Xc, model.hyper, "cross",
                                    blk.values, dm[None, :])
            g.d_alpha_locations += model.a[:, None] * c["row_locations"]
            g.d_alpha_multipliers += model.a[:, None] * c["row_log_multipliers"]
            g.d_log_lengthscales += model.a @ c["log_lengthscales"]

        var_c = np.full(Xc.shape[0], rho2)
        if ws is not None:
            kbx = kernel_block(model.beta, Xc, model.hyper, "cross").values
            wx = ws.tril_L.T @ kbx
            half = ws.half_solve(wx)
            var_c = rho2 - np.sum(half ** 2, axis=0)
            # V^T = K_{beta,X} (I + B K_beta)^-T evaluated via H
            vt = kbx - ws.W @ ws.solve_h(wx)
            dB -= (vt * dv[None, :]) @ vt.T
            omega = ws.tril_L @ ws.solve_h(wx)
            A += (omega * dv[None, :]) @ omega.T
            c = contracted_partials(model.beta, Xc, model.hyper, "cross",
                                    kbx, omega * dv[None, :])
            g.d_beta_locations += -2.0 * c["row_locations"]
            g.d_beta_multipliers += -2.0 * c["row_log_multipliers"]
            g.d_log_lengthscales += -2.0 * c["log_lengthscales"].sum(axis=0)
        g.d_log_amplitude += float(mean_c @ dm + 2.0 * var_c @ dv)

    if ws is not None:
        g.d_L = np.tril(2.0 * dB @ ws.tril_L)
        kb = kernel_block(model.beta, model.beta, model.hyper, "basis").values
        c = contracted_partials(model.beta, model.beta, model.hyper, "basis", kb, A)
        g.d_beta_locations += 2.0 * c["row_locations"]
        g.d_beta_multipliers += 2.0 * c["row_log_multipliers"]
        g.d_log_lengthscales += c["log_lengthscales"].sum(axis=0)
    return g


# -- objective -------------------------------------------------------------------

def elbo(model: DecoupledModel, inputs, targets, n_total: Optional[int] = None) -> float:
    """Minibatch evidence lower bound with Gaussian likelihood.

    The expected log-likelihood over the batch is scaled by n_total / batch
    size; the KL term is never scaled.  With the full dataset as the batch
    this is the exact bound.
    """
    X = _check_queries(model, inputs)
    y = np.asarray(targets, dtype=float)
    if n_total is None:
        n_total = X.shape[0]
    if n_total < X.shape[0]:
        raise ValueError("n_total must be at least the batch size")
    moments = predict(model, X)
    scale = n_total / X.shape[0]
    return scale * ell_gaussian(moments, y, model.log_noise) - kl_normal_prior(model)


def elbo_and_grad(model: DecoupledModel, inputs, targets, n_total: Optional[int] = None,
                  kl_columns: Optional[np.ndarray] = None):
    """ELBO estimate and its full parameter gradient (Gaussian likelihood).

    With kl_columns given, the mean-side KL contributions (value and gradient)
    are unbiased column-sampled estimates; everything else is exact.
    """
    X = _check_queries(model, inputs)
    y = np.asarray(targets, dtype=float)
    if n_total is None:
        n_total = X.shape[0]
    scale = n_total / X.shape[0]
    moments = predict(model, X)
    d_mean, d_variance, d_log_noise = ell_gaussian_grads(moments, y, model.log_noise)
    g_ell = grad_ell(model, X, scale * d_mean, scale * d_variance,
                     d_log_noise=scale * d_log_noise)
    g_kl = grad_kl(model, columns=kl_columns)
    # a^T d_a / 2 equals the exact mean-side KL term when columns is None and
    # an unbiased estimate of it otherwise
    kl_value = 0.5 * float(model.a @ g_kl.d_a) + _kl_cov_value(_beta_workspace(model))
    value = scale * ell_gaussian(moments, y, model.log_noise) - kl_value
    ge, gk = g_ell.as_dict(), g_kl.as_dict()
    grad = ModelGradient.from_dict({k: ge[k] - gk[k] for k in ge})
    return value, grad


# -- coupled form ----------------------------------------------------------------

def to_canonical(model: DecoupledModel):
    """Shared-basis statistics (m_tilde, S_tilde) for a model with alpha == beta.

    m_tilde = K_Z a and S_tilde = K_Z - K_Z (B^-1 + K_Z)^-1 K_Z; predictions
    reconstructed from these via the shared-basis predictive equations agree
    with predict().
    """
    if len(model.alpha) != len(model.beta) or \
            not np.array_equal(model.alpha.locations, model.beta.locations) or \
            not np.array_equal(model.alpha.log_multipliers, model.beta.log_multipliers):
        raise ValueError("to_canonical requires identical mean and covariance bases")
    if len(model.beta) == 0:
        return np.zeros(0), np.zeros((0, 0))
    kz = kernel_block(model.beta, model.beta, model.hyper, "basis").values
    m_tilde = kz @ model.a
    R = _beta_workspace(model).r_matrix()
    s_tilde = kz - kz @ R @ kz
    return m_tilde, s_tilde
