"""Dense LP/QP front-ends with exact active-set and multiplier reporting.

The QP path is a primal active-set method started from a Phase-I LP vertex;
it reports the optimizer, one multiplier per row, and the set of rows that are
active with strictly positive multiplier.  Weakly active rows (lambda ~ 0)
flip the status to "degenerate" but the solution is still returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import MalformedInputError
from .geometry import Polytope, _farkas_certificate

STATIONARITY_TOL = 1e-7
COMPLEMENTARITY_TOL = 1e-7
DUAL_FEAS_TOL = 1e-9
ACTIVE_RESIDUAL_TOL = 1e-8
ACTIVE_LAMBDA_TOL = 1e-8


@dataclass
class LPResult:
    x: Optional[np.ndarray]
    value: float
    status: str            # "optimal" | "infeasible" | "unbounded"


@dataclass
class QPProblem:
    """min 1/2 z'Hz + f'z subject to A z <= b with H symmetric positive definite."""

    H: np.ndarray
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.H = np.ascontiguousarray(np.atleast_2d(np.asarray(self.H, dtype=float)))
        self.f = np.ascontiguousarray(np.asarray(self.f, dtype=float).ravel())
        self.A = np.ascontiguousarray(np.atleast_2d(np.asarray(self.A, dtype=float)))
        self.b = np.ascontiguousarray(np.asarray(self.b, dtype=float).ravel())
        n = self.H.shape[0]
        if self.H.shape != (n, n):
            raise MalformedInputError("H must be square")
        if np.max(np.abs(self.H - self.H.T)) > 1e-9 * (1 + np.max(np.abs(self.H))):
            raise MalformedInputError("H must be symmetric")
        if self.f.shape != (n,):
            raise MalformedInputError("f has wrong length")
        if self.A.size and self.A.shape[1] != n:
            raise MalformedInputError("A has wrong column count")
        if self.A.shape[0] != self.b.shape[0]:
            raise MalformedInputError("A/b row mismatch")
        if self.A.size == 0:
            self.A = np.zeros((0, n))
        min_eig = float(np.linalg.eigvalsh(self.H).min())
        if min_eig <= 1e-10:
            raise MalformedInputError(
                f"H is not positive definite (min eigenvalue {min_eig:.3e})"
            )

    @property
    def dim(self) -> int:
        return self.H.shape[0]


@dataclass
class QPSolution:
    z_star: Optional[np.ndarray]
    lambda_star: Optional[np.ndarray]
    active_set: tuple
    status: str            # "optimal" | "infeasible" | "degenerate"
    farkas: Optional[np.ndarray] = None
    weakly_active: tuple = field(default_factory=tuple)


def solve_lp(c, P: Polytope) -> LPResult:
    """Minimize c'x over a polytope."""

    c = np.ascontiguousarray(np.asarray(c, dtype=float).ravel())
    if c.shape[0] != P.dim:
        raise MalformedInputError("objective length does not match polytope dimension")
    status, x = K.lp_dense(c, P.A, P.b, np.zeros((0, P.dim)), np.zeros(0))
    if status == K.OPTIMAL:
        return LPResult(x=x, value=float(c @ x), status="optimal")
    if status == K.INFEASIBLE:
        return LPResult(x=None, value=np.inf, status="infeasible")
    if status == K.UNBOUNDED:
        return LPResult(x=None, value=-np.inf, status="unbounded")
    raise RuntimeError("LP iteration limit reached")


def solve_qp(qp: QPProblem) -> QPSolution:
    """Solve a strictly convex inequality-constrained QP.

    Deterministic: identical inputs yield identical iterates and active sets
    (smallest-index tie-breaking throughout).
    """

    m = qp.A.shape[0]
    if m == 0:
        z = np.linalg.solve(qp.H, -qp.f)
        return QPSolution(z, np.zeros(0), (), "optimal")

    status, z0 = K.lp_feasible_point(qp.A, qp.b)
    if status == K.INFEASIBLE:
        farkas = _farkas_certificate(qp.A, qp.b)
        return QPSolution(None, None, (), "infeasible", farkas=farkas)
    if status != K.OPTIMAL:
        raise RuntimeError("Phase-I LP did not converge")

    # Multipliers inherit the scale of the objective, so the absolute
    # activity thresholds below are only meaningful for a Hessian of unit
    # magnitude.  Solve with the objective divided by max|H| (minimizer and
    # active set are unchanged), threshold the scaled multipliers, and scale
    # back for reporting.
    s = float(np.abs(qp.H).max())
    maxiter = 100 + 20 * (m + qp.dim)
    try:
        st, z, lam, _ = K.qp_active_set(qp.H / s, qp.f / s, qp.A, qp.b, z0,
                                        maxiter)
    except np.linalg.LinAlgError:
        st, z, lam = K.ITERATION_LIMIT, None, None
    if st != K.OPTIMAL or z is None:
        raise RuntimeError("active-set QP did not converge")

    resid = qp.A @ z - qp.b
    active = tuple(
        int(i) for i in range(m)
        if resid[i] >= -ACTIVE_RESIDUAL_TOL and lam[i] > ACTIVE_LAMBDA_TOL
    )
    weak = tuple(
        int(i) for i in range(m)
        if resid[i] >= -ACTIVE_RESIDUAL_TOL and abs(lam[i]) <= ACTIVE_LAMBDA_TOL
    )
    status_str = "degenerate" if weak else "optimal"
    return QPSolution(z, lam * s, active, status_str, weakly_active=weak)


def kkt_residuals(qp: QPProblem, sol: QPSolution) -> dict:
    """Stationarity / complementary-slackness / dual-feasibility residuals."""

    z = sol.z_star
    lam = sol.lambda_star
    stat = np.max(np.abs(qp.H @ z + qp.f + qp.A.T @ lam)) if qp.A.size else \
        np.max(np.abs(qp.H @ z + qp.f))
    resid = qp.A @ z - qp.b if qp.A.size else np.zeros(0)
    comp = np.max(np.abs(lam * resid)) if lam is not None and lam.size else 0.0
    dual = float(lam.min()) if lam is not None and lam.size else 0.0
    primal = float(resid.max()) if resid.size else 0.0
    return {
        "stationarity": float(stat),
        "complementarity": float(comp),
        "dual_min": dual,
        "primal_violation": primal,
    }
