"""Compact truncated supports for unbounded disturbance distributions.

The robust backward sweep needs bounded, centrally-symmetric disturbance
sets.  For distributions with unbounded support (Gaussian, or merely
"symmetric with known second moments") this module builds hypercube
truncations that carry at least a prescribed probability mass: splitting the
joint confidence across stages, inverting the normal CDF where that is
exact, and falling back to a multivariate Chebyshev-type tail bound
otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .errors import MalformedInputError
from .geometry import Polytope, minimal_rep, normalize

KINDS = ("polytopic-uniform", "gaussian", "declared-symmetric")
K_MAX = 1e6
BISECT_RTOL = 1e-9


@dataclass
class DisturbanceSpec:
    """Declared disturbance model for one problem.

    ``mean`` may be a single vector (broadcast over the horizon) or one row
    per stage.  ``sigma``/``corr`` describe second moments for the unbounded
    kinds; ``support`` carries the polytope for ``polytopic-uniform``.
    """

    kind: str
    mean: np.ndarray
    horizon: int
    confidence: Optional[float] = None
    sigma: Optional[np.ndarray] = None
    corr: Optional[np.ndarray] = None
    support: Optional[Polytope] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MalformedInputError(
                f"unknown disturbance kind {self.kind!r}; choose from {KINDS}")
        if self.horizon < 1:
            raise MalformedInputError("horizon must be at least 1")
        mean = np.atleast_2d(np.asarray(self.mean, dtype=float))
        if mean.shape[0] == 1:
            mean = np.repeat(mean, self.horizon, axis=0)
        if mean.shape[0] != self.horizon:
            raise MalformedInputError(
                f"mean must have 1 or {self.horizon} rows, got {mean.shape[0]}")
        self.mean = mean
        nd = mean.shape[1]
        if self.kind == "polytopic-uniform":
            if self.support is None:
                raise MalformedInputError(
                    "polytopic-uniform disturbances need an explicit support")
            return
        if self.confidence is None or not 0.0 < self.confidence < 1.0:
            raise MalformedInputError("confidence must lie strictly in (0, 1)")
        if self.sigma is None:
            raise MalformedInputError(f"{self.kind} disturbances need sigma")
        sigma = np.asarray(self.sigma, dtype=float).ravel()
        if sigma.size != nd:
            raise MalformedInputError("sigma length must match mean dimension")
        if np.any(sigma <= 0):
            raise MalformedInputError("standard deviations must be positive")
        self.sigma = sigma
        corr = np.eye(nd) if self.corr is None else np.asarray(self.corr, dtype=float)
        if corr.shape != (nd, nd):
            raise MalformedInputError("correlation matrix has wrong shape")
        if np.max(np.abs(corr - corr.T)) > 1e-12 or np.max(np.abs(np.diag(corr) - 1.0)) > 1e-12:
            raise MalformedInputError(
                "correlation matrix must be symmetric with unit diagonal")
        self.corr = corr

    @property
    def dim(self) -> int:
        return self.mean.shape[1]


@dataclass
class TruncationResult:
    """One stage's truncated support, its mass, and how it was obtained.

    ``mass`` is exact for ``exact-gaussian`` and a certified lower bound for
    ``chebyshev-bound``; in both cases it is at least the per-stage target.
    """

    polytope: Polytope
    mass: float
    method: str
    half_widths: np.ndarray = field(default=None)


def per_stage_mass(P: float, N: int) -> float:
    """Per-stage mass P**(1/N) so that N independent stages multiply to P."""
    if not 0.0 < P < 1.0:
        raise MalformedInputError("confidence must lie strictly in (0, 1)")
    if N < 1:
        raise MalformedInputError("horizon must be at least 1")
    return float(P ** (1.0 / N))


def truncate_gaussian_1d(mu: float, sigma: float, mass: float) -> TruncationResult:
    """Symmetric interval [mu - k*sigma, mu + k*sigma] holding ``mass``.

    k is the (1+mass)/2 quantile of the standard normal, so the interval
    mass is exact.  mass >= 1 would need an unbounded interval and raises.
    """
    if sigma <= 0:
        raise MalformedInputError("sigma must be positive")
    if not 0.0 < mass < 1.0:
        raise MalformedInputError(
            "interval mass must lie strictly in (0, 1); mass >= 1 has no "
            "bounded truncation")
    k = float(ndtri((1.0 + mass) / 2.0))
    half = k * sigma
    poly = Polytope.from_box([mu - half], [mu + half])
    return TruncationResult(polytope=poly, mass=float(mass),
                            method="exact-gaussian",
                            half_widths=np.array([half]))


def _tail_bound(k: float, corr: np.ndarray, method: str) -> float:
    """Lower bound on the mass of the equal-k hypercube {|d_i| <= k sigma_i}."""
    n = corr.shape[0]
    T = n / k ** 2
    if method == "union":
        return 1.0 - T
    off = np.sum(np.triu(corr, 1))
    u = T + 2.0 * off / k ** 2
    u = max(u, 0.0)
    inner = max((n - 1) * (n * T - u), 0.0)
    return 1.0 - (np.sqrt(u) + np.sqrt(inner)) ** 2 / n ** 2


def chebyshev_box(sigmas, correlations=None, mass_target: float = 0.95,
                  N: int = 1, mu=None, method: str = "olkin-pratt") -> TruncationResult:
    """Hypercube {|d_i - mu_i| <= k sigma_i} certified by a Chebyshev bound.

    A single multiplier k is found by bisection so that the chosen
    distribution-free tail bound reaches mass_target**(1/N).  The default
    bound exploits correlations; ``method="union"`` selects the plain union
    bound 1 - sum(1/k_i^2).  Works for any distribution with the declared
    second moments, at the price of conservatism.
    """
    sigmas = np.asarray(sigmas, dtype=float).ravel()
    n = sigmas.size
    if np.any(sigmas <= 0):
        raise MalformedInputError("standard deviations must be positive")
    corr = np.eye(n) if correlations is None else np.asarray(correlations, dtype=float)
    if corr.shape != (n, n):
        raise MalformedInputError("correlation matrix has wrong shape")
    if method == "literal":
        raise NotImplementedError(
            "the literal printed form of this bound is not well defined; "
            "use method='olkin-pratt' or method='union'")
    if method not in ("olkin-pratt", "union"):
        raise MalformedInputError(f"unknown bound method {method!r}")
    target = per_stage_mass(mass_target, N)
    if _tail_bound(K_MAX, corr, method) < target:
        raise MalformedInputError(
            f"mass target {mass_target} (per-stage {target:.6f}) is not "
            f"reachable by the {method} bound with k <= {K_MAX:.0e}")
    lo, hi = 1.0, K_MAX
    if _tail_bound(lo, corr, method) >= target:
        hi = lo
    else:
        while (hi - lo) > BISECT_RTOL * hi:
            mid = 0.5 * (lo + hi)
            if _tail_bound(mid, corr, method) >= target:
                hi = mid
            else:
                lo = mid
    k = hi
    half = k * sigmas
    mu = np.zeros(n) if mu is None else np.asarray(mu, dtype=float).ravel()
    poly = Polytope.from_box(mu - half, mu + half)
    return TruncationResult(polytope=poly, mass=float(_tail_bound(k, corr, method)),
                            method="chebyshev-bound", half_widths=half)


def verify_symmetric_support(D: Polytope, mu) -> bool:
    """True iff D - mu is centrally symmetric (facet rows close under negation).

    Works on the normalized minimal H-representation; rows (a, b) and
    (-a, b') match when the normals agree to 1e-8 and |b - b'| <= 1e-8.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    shifted = Polytope(D.A.copy(), D.b - D.A @ mu)
    P = minimal_rep(normalize(shifted))
    if P.is_empty:
        raise MalformedInputError("cannot check symmetry of an empty set")
    A, b = P.A, P.b
    for i in range(A.shape[0]):
        if not any(np.max(np.abs(A[i] + A[j])) <= 1e-8
                   and abs(b[i] - b[j]) <= 1e-8
                   for j in range(A.shape[0])):
            return False
    return True


def truncate_disturbance(dspec: DisturbanceSpec,
                         method: str = "olkin-pratt") -> list:
    """Per-stage truncated supports for an unbounded disturbance model.

    Gaussian models with (numerically) diagonal correlation get exact
    per-coordinate normal-quantile boxes; correlated Gaussians and
    moment-only symmetric models get the Chebyshev hypercube (``method``
    selects the tail bound).  Bounded polytopic models need no truncation
    and are rejected here.
    """
    if dspec.kind == "polytopic-uniform":
        raise MalformedInputError(
            "polytopic-uniform disturbances are already bounded; use the "
            "declared support directly")
    m = per_stage_mass(dspec.confidence, dspec.horizon)
    nd = dspec.dim
    results = []
    diagonal = np.max(np.abs(dspec.corr - np.eye(nd))) <= 1e-12
    for t in range(dspec.horizon):
        mu = dspec.mean[t]
        if dspec.kind == "gaussian" and diagonal:
            coord_mass = m ** (1.0 / nd)
            k = float(ndtri((1.0 + coord_mass) / 2.0))
            half = k * dspec.sigma
            res = TruncationResult(
                polytope=Polytope.from_box(mu - half, mu + half),
                mass=float(m), method="exact-gaussian", half_widths=half)
        else:
            res = chebyshev_box(dspec.sigma, dspec.corr, dspec.confidence,
                                dspec.horizon, mu=mu, method=method)
        results.append(res)
    return results
