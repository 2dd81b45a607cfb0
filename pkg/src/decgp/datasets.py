"""Synthetic data generators and split helpers for the benchmark harness."""

from __future__ import annotations

import numpy as np

from .trainer import Dataset

__all__ = ["make_sinc", "split_dataset"]


def make_sinc(n: int = 500, noise: float = 0.1, seed: int = 0,
              low: float = -5.0, high: float = 5.0) -> Dataset:
    """Noisy observations of sin(pi x) / (pi x) with uniform inputs on [low, high]."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, size=n)
    y = np.sinc(x) + noise * rng.standard_normal(n)
    return Dataset(inputs=x[:, None], targets=y)


def split_dataset(dataset: Dataset, test_frac: float, seed: int = 0):
    """Deterministic shuffle-split into (train, test); test may be empty."""
    if not 0.0 <= test_frac < 1.0:
        raise ValueError("test_frac must lie in [0, 1)")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_frac * n))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    train = Dataset(dataset.inputs[train_idx], dataset.targets[train_idx],
                    input_mean=dataset.input_mean, input_std=dataset.input_std)
    test = None
    if n_test > 0:
        test = Dataset(dataset.inputs[test_idx], dataset.targets[test_idx],
                       input_mean=dataset.input_mean, input_std=dataset.input_std)
    return train, test
