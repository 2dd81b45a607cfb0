"""Squared-exponential ARD kernels with per-basis length-scale multipliers.

Two kernel families live here:

* the prior SE-ARD kernel
      k(x, x') = rho^2 * prod_d exp(-(x_d - x'_d)^2 / (2 s_d^2))
* a generalized SE-ARD form in which every basis point carries its own
  per-dimension multiplier c_d of the shared length scales, with effective
  scales l_d = s_d * c_d:
      g(b, b') = prod_d sqrt(2 l_d l'_d / (l_d^2 + l'_d^2))
                        * exp(-(b_d - b'_d)^2 / (l_d^2 + l'_d^2)).

With all multipliers equal to 1 the generalized form reduces to the
unit-amplitude SE-ARD kernel.  Cross covariances between a basis point and a
plain input carry a single amplitude factor: rho * g(b, point(x, c=1)).

All hyperparameters are stored in log space so that gradient ascent stays
unconstrained.  Analytic partial derivatives of every block are available on
request; they are closed-form expressions, not autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "KernelHyper",
    "BasisPoint",
    "BasisSet",
    "KernelBlock",
    "se_ard_cov",
    "gen_basis_cov",
    "gen_cross_cov",
    "kernel_block",
    "contracted_partials",
    "PARTIAL_FAMILIES",
]

# Diagonal guard added to basis covariance matrices before factorization.
JITTER = 1e-8

PARTIAL_FAMILIES = (
    "log_amplitude",
    "log_lengthscales",
    "row_locations",
    "row_log_multipliers",
)


def _as_vector(x, name="x"):
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class KernelHyper:
    """Shared kernel hyperparameters: log amplitude and per-dimension log length scales."""

    log_amplitude: float
    log_lengthscales: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "log_lengthscales",
                           _as_vector(self.log_lengthscales, "log_lengthscales"))
        if not np.isfinite(self.log_amplitude):
            raise ValueError("log_amplitude must be finite")

    @property
    def dim(self) -> int:
        return self.log_lengthscales.shape[0]

    @property
    def amplitude(self) -> float:
        return float(np.exp(self.log_amplitude))

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)


@dataclass(frozen=True)
class BasisPoint:
    """A basis location plus its per-dimension log length-scale multipliers."""

    location: np.ndarray
    log_multipliers: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "location", _as_vector(self.location, "location"))
        object.__setattr__(self, "log_multipliers",
                           _as_vector(self.log_multipliers, "log_multipliers"))
        if self.location.shape != self.log_multipliers.shape:
            raise ValueError("location and log_multipliers must share dimension")

    @property
    def dim(self) -> int:
        return self.location.shape[0]


class BasisSet:
    """A batch of basis points stored as (M, D) arrays for vectorized kernels."""

    __slots__ = ("locations", "log_multipliers")

    def __init__(self, locations: np.ndarray, log_multipliers: np.ndarray):
        locations = np.atleast_2d(np.asarray(locations, dtype=float))
        log_multipliers = np.atleast_2d(np.asarray(log_multipliers, dtype=float))
        if locations.shape != log_multipliers.shape:
            raise ValueError("locations and log_multipliers must have the same shape")
        self.locations = locations
        self.log_multipliers = log_multipliers

    @classmethod
    def empty(cls, dim: int) -> "BasisSet":
        return cls(np.zeros((0, dim)), np.zeros((0, dim)))

    @classmethod
    def from_points(cls, points: Sequence[BasisPoint]) -> "BasisSet":
        if len(points) == 0:
            raise ValueError("cannot infer dimension from an empty point list")
        return cls(np.stack([p.location for p in points]),
                   np.stack([p.log_multipliers for p in points]))

    @classmethod
    def at_locations(cls, locations: np.ndarray) -> "BasisSet":
        """Basis points at the given locations with unit multipliers."""
        locations = np.atleast_2d(np.asarray(locations, dtype=float))
        return cls(locations, np.zeros_like(locations))

    def point(self, i: int) -> BasisPoint:
        return BasisPoint(self.locations[i], self.log_multipliers[i])

    def subset(self, idx) -> "BasisSet":
        return BasisSet(self.locations[idx], self.log_multipliers[idx])

    def appended(self, locations: np.ndarray, log_multipliers: np.ndarray) -> "BasisSet":
        return BasisSet(np.vstack([self.locations, np.atleast_2d(locations)]),
                        np.vstack([self.log_multipliers, np.atleast_2d(log_multipliers)]))

    def __len__(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]


@dataclass
class KernelBlock:
    """A covariance block and, optionally, its analytic partial derivatives.

    ``partials`` is keyed by family; the hyper families map to arrays whose
    leading axis runs over input dimensions and whose trailing axes match
    ``values``.  Row families hold d values[i, j] / d (row i's parameter in
    dimension d), i.e. derivatives with respect to the left argument.
    """

    values: np.ndarray
    partials: dict = field(default_factory=dict)


# -- scalar operations --------------------------------------------------------
#
# These are written as plain per-dimension loops on purpose: the batched
# kernel_block below is tested against them entry by entry.

def se_ard_cov(x, x2, hyper: KernelHyper) -> float:
    """Prior SE-ARD covariance between two inputs."""
    x = _as_vector(x)
    x2 = _as_vector(x2, "x2")
    if x.shape != x2.shape or x.shape[0] != hyper.dim:
        raise ValueError("dimension mismatch between inputs and hyperparameters")
    s = hyper.lengthscales
    expo = 0.0
    for d in range(hyper.dim):
        expo -= (x[d] - x2[d]) ** 2 / (2.0 * s[d] ** 2)
    return float(hyper.amplitude ** 2 * np.exp(expo))


def gen_basis_cov(b: BasisPoint, b2: BasisPoint, hyper: KernelHyper) -> float:
    """Generalized SE-ARD covariance between two basis points (no amplitude factor)."""
    if b.dim != b2.dim or b.dim != hyper.dim:
        raise ValueError("dimension mismatch between basis points and hyperparameters")
    s = hyper.lengthscales
    out = 1.0
    for d in range(hyper.dim):
        l1 = s[d] * np.exp(b.log_multipliers[d])
        l2 = s[d] * np.exp(b2.log_multipliers[d])
        q = l1 ** 2 + l2 ** 2
        delta = b.location[d] - b2.location[d]
        out *= np.sqrt(2.0 * l1 * l2 / q) * np.exp(-delta ** 2 / q)
    return float(out)


def gen_cross_cov(b: BasisPoint, x, hyper: KernelHyper) -> float:
    """Covariance between a basis point and a plain input: rho * g(b, point(x, c=1))."""
    x = _as_vector(x)
    unit = BasisPoint(x, np.zeros_like(x))
    return hyper.amplitude * gen_basis_cov(b, unit, hyper)


# -- batched blocks ------------------------------------------------------------

def _side_arrays(side, hyper: KernelHyper, is_basis: bool):
    """Locations and effective length scales for one side of a block."""
    if is_basis:
        if isinstance(side, BasisSet):
            bs = side
        elif isinstance(side, BasisPoint):
            bs = BasisSet.from_points([side])
        elif isinstance(side, (list, tuple)) and len(side) > 0 and isinstance(side[0], BasisPoint):
            bs = BasisSet.from_points(side)
        else:
            raise ValueError("expected basis points for this side of the block")
        loc, logc = bs.locations, bs.log_multipliers
    else:
        loc = np.atleast_2d(np.asarray(side, dtype=float))
        logc = np.zeros_like(loc)
    if loc.shape[0] == 0:
        raise ValueError("empty point list")
    if loc.shape[1] != hyper.dim:
        raise ValueError("dimension mismatch between points and hyperparameters")
    if not np.all(np.isfinite(loc)):
        raise ValueError("non-finite point coordinates")
    ell = hyper.lengthscales[None, :] * np.exp(logc)
    return loc, ell


def kernel_block(rows, cols, hyper: KernelHyper, kind: str,
                 wants: Iterable[str] = ()) -> KernelBlock:
    """Assemble a covariance block with optional analytic partial derivatives.

    kind is one of:
      * "prior": both sides are plain inputs, amplitude factor rho^2;
      * "cross": rows are basis points, cols are plain inputs, factor rho;
      * "basis": both sides are basis points, no amplitude factor.

    Requested partials (families from PARTIAL_FAMILIES) cost Theta(D * n * m)
    and share memory layout with ``values``.  Row partials are only defined
    when the rows are basis points.
    """
    wants = set(wants)
    unknown = wants - set(PARTIAL_FAMILIES)
    if unknown:
        raise ValueError(f"unknown partial families: {sorted(unknown)}")
    if kind == "prior":
        rows_basis, cols_basis, amp_power = False, False, 2
    elif kind == "cross":
        rows_basis, cols_basis, amp_power = True, False, 1
    elif kind == "basis":
        rows_basis, cols_basis, amp_power = True, True, 0
    else:
        raise ValueError(f"unknown block kind: {kind!r}")
    if ("row_locations" in wants or "row_log_multipliers" in wants) and not rows_basis:
        raise ValueError("row partials require basis points on the row side")

    loc1, ell1 = _side_arrays(rows, hyper, rows_basis)
    loc2, ell2 = _side_arrays(cols, hyper, cols_basis)
    n, m, dim = loc1.shape[0], loc2.shape[0], hyper.dim

    want_s = "log_lengthscales" in wants
    want_loc = "row_locations" in wants
    want_c = "row_log_multipliers" in wants
    keep_factors = want_s or want_loc or want_c

    # the log-prefactor splits into rank-one row/column parts plus -log(q)/2;
    # with plain inputs on the column side q collapses to a column vector
    log_values = np.zeros((n, m))
    f_s = np.empty((dim, n, m)) if want_s else None
    f_loc = np.empty((dim, n, m)) if want_loc else None
    f_c = np.empty((dim, n, m)) if want_c else None

    for d in range(dim):
        delta = loc1[:, d, None] - loc2[None, :, d]
        l1sq = ell1[:, d, None] ** 2
        if cols_basis:
            inv_q = 1.0 / (l1sq + ell2[None, :, d] ** 2)
        else:
            inv_q = 1.0 / (l1sq + hyper.lengthscales[d] ** 2)
        d2q = delta ** 2 * inv_q
        log_values += 0.5 * np.log(inv_q) - d2q
        if keep_factors:
            if want_s:
                f_s[d] = 2.0 * d2q
            if want_loc:
                f_loc[d] = -2.0 * delta * inv_q
            if want_c:
                f_c[d] = 0.5 + (l1sq * inv_q) * (2.0 * d2q - 1.0)

    rank1 = (0.5 * (dim * np.log(2.0) + amp_power * 2.0 * hyper.log_amplitude)
             + 0.5 * np.log(ell1).sum(axis=1)[:, None]
             + 0.5 * np.log(ell2).sum(axis=1)[None, :])
    values = np.exp(log_values + rank1)

    partials = {}
    if "log_amplitude" in wants:
        partials["log_amplitude"] = amp_power * values
    if want_s:
        partials["log_lengthscales"] = f_s * values[None, :, :]
    if want_loc:
        partials["row_locations"] = f_loc * values[None, :, :]
    if want_c:
        partials["row_log_multipliers"] = f_c * values[None, :, :]
    return KernelBlock(values=values, partials=partials)


def contracted_partials(rows, cols, hyper: KernelHyper, kind: str,
                        values: np.ndarray, weights: np.ndarray) -> dict:
    """Weighted row-sums of every partial derivative of a block, fused.

    For W = ``weights`` (same shape as ``values``) this returns, per family,
    the contractions c[i, d] = sum_j dvalues[i,j]/d(row i's or the shared
    parameter in dimension d) * W[i,j]:

      * 'row_locations', 'row_log_multipliers': (n, D) arrays;
      * 'log_lengthscales': (n, D), rows still unsummed so callers can weight
        them further before reducing.

    Equivalent to contracting the matrices a full kernel_block would return
    but without materializing them; the evaluation runs in a constant number
    of O(n*m) passes per dimension, which is what keeps large-basis gradient
    steps within their memory budget.
    """
    if kind == "cross":
        cols_basis = False
    elif kind == "basis":
        cols_basis = True
    else:
        raise ValueError("contracted partials require basis rows ('cross' or 'basis')")
    loc1, ell1 = _side_arrays(rows, hyper, True)
    loc2, ell2 = _side_arrays(cols, hyper, cols_basis)
    n, dim = loc1.shape
    vw = values * weights
    row_sum = vw.sum(axis=1)
    r_loc = np.empty((n, dim))
    r_mul = np.empty((n, dim))
    r_len = np.empty((n, dim))
    for d in range(dim):
        delta = loc1[:, d, None] - loc2[None, :, d]
        l1sq = ell1[:, d] ** 2
        if cols_basis:
            inv_q = 1.0 / (l1sq[:, None] + ell2[None, :, d] ** 2)
            t = delta * inv_q
            r_loc[:, d] = -2.0 * np.einsum("ij,ij->i", vw, t)
            e2q = np.einsum("ij,ij,ij->i", vw, delta, t)
            r_len[:, d] = 2.0 * e2q
            r_mul[:, d] = 0.5 * row_sum + l1sq * (
                2.0 * np.einsum("ij,ij,ij->i", vw, t, t)
                - np.einsum("ij,ij->i", vw, inv_q))
        else:
            # plain inputs on the column side: q depends only on the row,
            # so all contractions reduce to two fused passes per dimension
            inv_q = 1.0 / (l1sq + hyper.lengthscales[d] ** 2)
            e1 = np.einsum("ij,ij->i", vw, delta)
            e2 = np.einsum("ij,ij,ij->i", vw, delta, delta)
            r_loc[:, d] = -2.0 * inv_q * e1
            r_len[:, d] = 2.0 * inv_q * e2
            r_mul[:, d] = 0.5 * row_sum + l1sq * inv_q * (2.0 * inv_q * e2 - row_sum)
    return {"row_locations": r_loc, "row_log_multipliers": r_mul,
            "log_lengthscales": r_len}
