import numpy as np

from decgp.kernels import BasisSet, KernelHyper
from decgp.model import DecoupledModel


def random_hyper(rng, dim):
    return KernelHyper(0.3 * rng.normal(), 0.3 * rng.normal(size=dim))


def random_model(rng, m_alpha=5, m_beta=3, dim=2, hyper=None, log_noise=None):
    hyper = hyper if hyper is not None else random_hyper(rng, dim)
    return DecoupledModel(
        alpha=BasisSet(rng.normal(size=(m_alpha, dim)), 0.3 * rng.normal(size=(m_alpha, dim))),
        a=rng.normal(size=m_alpha),
        beta=BasisSet(rng.normal(size=(m_beta, dim)), 0.3 * rng.normal(size=(m_beta, dim))),
        L=np.tril(0.5 * rng.normal(size=(m_beta, m_beta))),
        hyper=hyper,
        log_noise=log_noise if log_noise is not None else 0.3 * rng.normal(),
    )


def scaled_gradient_error(analytic: dict, reference: dict,
                          rel_tol=1e-4, abs_floor=1e-7) -> float:
    """Worst |analytic - reference| / max(|reference|, abs_floor / rel_tol).

    A return value <= rel_tol means every entry satisfies either the relative
    tolerance or the absolute floor.
    """
    worst = 0.0
    for key in reference:
        a = np.atleast_1d(np.asarray(analytic[key], dtype=float))
        r = np.atleast_1d(np.asarray(reference[key], dtype=float))
        if a.size == 0:
            continue
        denom = np.maximum(np.abs(r), abs_floor / rel_tol)
        worst = max(worst, float(np.max(np.abs(a - r) / denom)))
    return worst
