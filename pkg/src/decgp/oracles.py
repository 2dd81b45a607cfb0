"""Dense reference implementations used to certify the fast paths.

Everything in this module is deliberately written the straightforward way:
full kernel matrices, explicit Cholesky solves, entry-by-entry finite
differences.  The dense routines refuse problems with more than 4096 rows so
the test suite stays fast.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .kernels import KernelHyper
from .model import PredictiveMoments

__all__ = [
    "FeatureKernel",
    "exact_gpr",
    "log_marginal",
    "dense_gaussian_kl",
    "kernel_ridge",
    "finite_difference",
]

_DENSE_CAP = 4096


def _prior_matrix(X1, X2, hyper: KernelHyper) -> np.ndarray:
    # independent of decgp.kernels: plain broadcasting over scaled coordinates
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    s = hyper.lengthscales
    d2 = ((X1[:, None, :] - X2[None, :, :]) / s) ** 2
    return hyper.amplitude ** 2 * np.exp(-0.5 * d2.sum(axis=-1))


def _check_dense(n: int):
    if n > _DENSE_CAP:
        raise ValueError(f"dense oracle limited to {_DENSE_CAP} rows, got {n}")


def exact_gpr(train, hyper: KernelHyper, log_noise: float, queries) -> PredictiveMoments:
    """Exact Gaussian-process regression posterior moments at the query points."""
    X, y = train
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    _check_dense(X.shape[0])
    sigma2 = float(np.exp(log_noise))
    K = _prior_matrix(X, X, hyper) + sigma2 * np.eye(X.shape[0])
    cho = sla.cho_factor(K, lower=True)
    Kq = _prior_matrix(queries, X, hyper)
    mean = Kq @ sla.cho_solve(cho, y)
    solve = sla.cho_solve(cho, Kq.T)
    var = hyper.amplitude ** 2 - np.einsum("ij,ji->i", Kq, solve)
    return PredictiveMoments(mean=mean, variance=np.maximum(var, 0.0))


def log_marginal(train, hyper: KernelHyper, log_noise: float) -> float:
    """Log marginal likelihood of the observations under the exact GP prior."""
    X, y = train
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    _check_dense(X.shape[0])
    n = X.shape[0]
    sigma2 = float(np.exp(log_noise))
    K = _prior_matrix(X, X, hyper) + sigma2 * np.eye(n)
    L = np.linalg.cholesky(K)
    alpha = sla.solve_triangular(L, y, lower=True)
    return float(-0.5 * alpha @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2.0 * np.pi))


def dense_gaussian_kl(mu_q, Sigma_q, mu_p, Sigma_p) -> float:
    """KL divergence between two dense multivariate Gaussians.

    0.5 * (tr(Sp^-1 Sq) + (mq - mp)^T Sp^-1 (mq - mp) + log|Sp|/|Sq| - d)
    """
    mu_q = np.asarray(mu_q, dtype=float)
    mu_p = np.asarray(mu_p, dtype=float)
    Sigma_q = np.atleast_2d(np.asarray(Sigma_q, dtype=float))
    Sigma_p = np.atleast_2d(np.asarray(Sigma_p, dtype=float))
    d = mu_q.shape[0]
    if d > 64:
        raise ValueError("dense KL limited to 64 dimensions")
    Lq = np.linalg.cholesky(Sigma_q)
    Lp = np.linalg.cholesky(Sigma_p)
    dmu = mu_q - mu_p
    half = sla.solve_triangular(Lp, Lq, lower=True)
    quad = sla.solve_triangular(Lp, dmu, lower=True)
    logdet = 2.0 * (np.log(np.diag(Lp)).sum() - np.log(np.diag(Lq)).sum())
    return float(0.5 * (np.sum(half ** 2) + quad @ quad + logdet - d))


def kernel_ridge(train, hyper: KernelHyper, ridge: float) -> np.ndarray:
    """Coefficients of kernel ridge regression: (K + ridge*I)^-1 y."""
    X, y = train
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    _check_dense(X.shape[0])
    K = _prior_matrix(X, X, hyper) + ridge * np.eye(X.shape[0])
    return sla.cho_solve(sla.cho_factor(K, lower=True), y)


def finite_difference(fn, params, rel_step: float = 1e-5):
    """Central-difference gradient of a scalar function of a parameter collection.

    ``params`` is either an ndarray or a dict of ndarrays/floats; the step for
    each entry is rel_step * (1 + |value|).  Returns the same structure filled
    with derivative estimates.
    """
    if isinstance(params, dict):
        out = {}
        for key in params:
            base = params[key]
            arr = np.atleast_1d(np.asarray(base, dtype=float)).copy()
            grad = np.zeros_like(arr)
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                h = rel_step * (1.0 + abs(flat[i]))
                orig = flat[i]
                flat[i] = orig + h
                up = fn({**params, key: arr.reshape(np.shape(base)) if np.ndim(base) else float(flat[0])})
                flat[i] = orig - h
                down = fn({**params, key: arr.reshape(np.shape(base)) if np.ndim(base) else float(flat[0])})
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise ValueError(f"non-finite evaluation while differencing {key!r}")
                gflat[i] = (up - down) / (2.0 * h)
            out[key] = grad.reshape(np.shape(base)) if np.ndim(base) else float(gflat[0])
        return out
    arr = np.asarray(params, dtype=float).copy()
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        h = rel_step * (1.0 + abs(flat[i]))
        orig = flat[i]
        flat[i] = orig + h
        up = fn(arr)
        flat[i] = orig - h
        down = fn(arr)
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError("non-finite evaluation while differencing")
        gflat[i] = (up - down) / (2.0 * h)
    return grad


class FeatureKernel:
    """A kernel with an explicit finite feature map, k(x, x') = phi(x)^T phi(x').

    Random affine-cosine features with a fixed seed; used by the oracle tests
    to compare subspace KL formulas against the dense Gaussian KL in feature
    space.
    """

    def __init__(self, input_dim: int, feature_dim: int = 16, seed: int = 0):
        if feature_dim > 32:
            raise ValueError("feature_dim must stay small (<= 32) for the dense oracle")
        rng = np.random.default_rng(seed)
        self.input_dim = input_dim
        self.feature_dim = feature_dim
        self._W = rng.normal(size=(feature_dim, input_dim))
        self._b = rng.uniform(0.0, 2.0 * np.pi, size=feature_dim)

    def feature(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.sqrt(2.0 / self.feature_dim) * np.cos(X @ self._W.T + self._b)

    def cov(self, X1, X2) -> np.ndarray:
        return self.feature(X1) @ self.feature(X2).T
