"""Multiparametric QP: explicit piecewise-affine solutions over a parameter set.

A problem instance minimizes, over the decision vector ``z`` for each
parameter ``x``,

    J(z, x) = 1/2 z'Hz + z'Fx + 1/2 x'Yx + fz'z + fx'x + c
    subject to   G z <= w + S x,   x in domain,

with ``H`` positive definite.  The optimizer ``z*(x)`` is piecewise affine
over a polyhedral partition of the feasible parameter footprint; each piece
(a *critical region*) corresponds to a fixed optimal active set.  The solver
enumerates the regions by stepping across facets and re-solving the QP just
beyond each one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptySetError, MalformedInputError, NotCoveredError
from .geometry import (
    Polytope,
    chebyshev_center,
    facet_interior_point,
    minimal_rep,
    normalize,
)
from .solvers import QPProblem, solve_qp

FACET_STEP = 1e-6
MIN_REGION_RADIUS = 1e-9
MAX_REGIONS = 20000


@dataclass(frozen=True)
class MPQPForm:
    """Multiparametric QP data in the half-quadratic convention above."""

    H: np.ndarray
    F: np.ndarray
    Y: np.ndarray
    fz: np.ndarray
    fx: np.ndarray
    c: float
    G: np.ndarray
    w: np.ndarray
    S: np.ndarray
    domain: Polytope

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        nz = H.shape[0]
        F = np.asarray(self.F, dtype=float).reshape(nz, -1)
        nx = F.shape[1]
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Y", np.asarray(self.Y, dtype=float).reshape(nx, nx))
        object.__setattr__(self, "fz", np.asarray(self.fz, dtype=float).reshape(nz))
        object.__setattr__(self, "fx", np.asarray(self.fx, dtype=float).reshape(nx))
        object.__setattr__(self, "c", float(self.c))
        G = np.asarray(self.G, dtype=float).reshape(-1, nz)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).reshape(G.shape[0]))
        object.__setattr__(self, "S", np.asarray(self.S, dtype=float).reshape(G.shape[0], nx))
        if H.shape != (nz, nz):
            raise MalformedInputError("H must be square")
        if not np.allclose(H, H.T, atol=1e-9 * max(1.0, np.abs(H).max())):
            raise MalformedInputError("H must be symmetric")
        if np.linalg.eigvalsh(H).min() <= 1e-10:
            raise MalformedInputError("H must be positive definite")
        if self.domain.dim != nx:
            raise MalformedInputError(
                f"domain dimension {self.domain.dim} does not match parameter "
                f"dimension {nx}")

    @property
    def nz(self):
        return self.H.shape[0]

    @property
    def nx(self):
        return self.F.shape[1]

    @property
    def n_constraints(self):
        return self.G.shape[0]

    def qp_at(self, x) -> QPProblem:
        """Fix the parameter and return the resulting ordinary QP."""
        x = np.asarray(x, dtype=float).reshape(self.nx)
        return QPProblem(self.H, self.F @ x + self.fz, self.G, self.w + self.S @ x)

    def objective(self, z, x) -> float:
        z = np.asarray(z, dtype=float).reshape(self.nz)
        x = np.asarray(x, dtype=float).reshape(self.nx)
        return float(0.5 * z @ self.H @ z + z @ self.F @ x + 0.5 * x @ self.Y @ x
                     + self.fz @ z + self.fx @ x + self.c)


def canonicalize(Qzz, Qzx, Qxx, lz, lx, const, G, w, S, domain) -> MPQPForm:
    """Build an :class:`MPQPForm` from an un-halved quadratic.

    The input cost is read as ``z'Qzz z + z'Qzx x + x'Qxx x + lz'z + lx'x +
    const``; the quadratic blocks are doubled (and symmetrized) to land in the
    half convention used by the solver.  Constraint rows are equilibrated to
    unit norm in ``G``: closed-loop rows mapped through a small input matrix
    can otherwise sit several decades below box rows, which wrecks the
    conditioning of the active-set normal matrix and the dual facets derived
    from it.  Scaling a row leaves the feasible set, the active-set indices,
    and the sign of every multiplier unchanged.
    """
    Qzz = np.atleast_2d(np.asarray(Qzz, dtype=float))
    Qxx = np.atleast_2d(np.asarray(Qxx, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    w = np.asarray(w, dtype=float).reshape(-1)
    S = np.asarray(S, dtype=float).reshape(G.shape[0], -1)
    scale = np.linalg.norm(G, axis=1)
    scale[scale == 0.0] = 1.0
    return MPQPForm(
        H=Qzz + Qzz.T,
        F=np.asarray(Qzx, dtype=float).reshape(Qzz.shape[0], -1),
        Y=Qxx + Qxx.T,
        fz=lz, fx=lx, c=const,
        G=G / scale[:, None], w=w / scale, S=S / scale[:, None],
        domain=domain,
    )


@dataclass(frozen=True)
class CriticalRegion:
    """One affine piece of the explicit solution.

    Inside ``region`` the optimizer is ``z*(x) = F x + G`` and the optimal
    value is ``x'Qv x + qv'x + cv`` (un-halved quadratic).  ``active_set``
    holds the constraint rows at equality with positive multiplier, sorted
    ascending.  ``n_constraints`` records the total row count of the parent
    problem so active indices can be interpreted downstream.
    """

    region: Polytope
    F: np.ndarray
    G: np.ndarray
    active_set: tuple
    Qv: np.ndarray
    qv: np.ndarray
    cv: float
    n_constraints: int
    degenerate: bool = False

    def law(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.F.shape[1])
        return self.F @ x + self.G

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(self.F.shape[1])
        return float(x @ self.Qv @ x + self.qv @ x + self.cv)

    def to_dict(self) -> dict:
        return {
            "region": self.region.to_dict(),
            "F": self.F.tolist(),
            "G": self.G.tolist(),
            "active_set": list(self.active_set),
            "Qv": self.Qv.tolist(),
            "qv": self.qv.tolist(),
            "cv": self.cv,
            "n_constraints": self.n_constraints,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d) -> "CriticalRegion":
        return cls(
            region=Polytope.from_dict(d["region"]),
            F=np.asarray(d["F"], dtype=float),
            G=np.asarray(d["G"], dtype=float),
            active_set=tuple(d["active_set"]),
            Qv=np.asarray(d["Qv"], dtype=float),
            qv=np.asarray(d["qv"], dtype=float),
            cv=float(d["cv"]),
            n_constraints=int(d["n_constraints"]),
            degenerate=bool(d.get("degenerate", False)),
        )


@dataclass
class PWASolution:
    """Explicit solution: critical regions ordered by active set."""

    regions: list = field(default_factory=list)
    form: MPQPForm | None = None

    def __len__(self):
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    def __getitem__(self, i) -> CriticalRegion:
        return self.regions[i]

    def locate(self, x, tol=1e-8) -> int:
        """Index of the first (lowest-index) region containing ``x``."""
        x = np.asarray(x, dtype=float).ravel()
        for i, cr in enumerate(self.regions):
            if cr.region.contains(x, tol=tol):
                return i
        raise NotCoveredError(
            f"parameter {x.tolist()} lies in no critical region")

    def active_sets(self) -> list:
        return [cr.active_set for cr in self.regions]


def _independent_subset(rows: np.ndarray, order: Sequence[int]) -> list:
    """Greedy prefix of ``order`` whose rows are linearly independent."""
    keep = []
    basis = np.zeros((0, rows.shape[1]))
    for i in order:
        cand = np.vstack([basis, rows[i][None, :]])
        if np.linalg.matrix_rank(cand, tol=1e-9) > basis.shape[0]:
            keep.append(i)
            basis = cand
    return keep


def _build_region(form: MPQPForm, active: tuple, degenerate: bool):
    """Critical region, affine law, and value function for one active set."""
    H, F, G, S = form.H, form.F, form.G, form.S
    w, fz = form.w, form.fz
    Hinv_F = np.linalg.solve(H, F)
    Hinv_fz = np.linalg.solve(H, fz)

    active = tuple(sorted(active))
    if active:
        GA = G[list(active)]
        if np.linalg.matrix_rank(GA, tol=1e-9) < len(active):
            # prune to an independent subset; the optimizer is unchanged but
            # some multipliers are not unique
            keep = _independent_subset(GA, range(len(active)))
            active = tuple(active[i] for i in keep)
            GA = G[list(active)]
            degenerate = True

    if not active:
        Fz = -Hinv_F
        Gz = -Hinv_fz
        Lx = np.zeros((0, form.nx))
        l0 = np.zeros(0)
    else:
        idx = list(active)
        GA, SA, wA = G[idx], S[idx], w[idx]
        GHG = GA @ np.linalg.solve(H, GA.T)
        Lx = -np.linalg.solve(GHG, GA @ Hinv_F + SA)
        l0 = -np.linalg.solve(GHG, GA @ Hinv_fz + wA)
        Fz = -Hinv_F - np.linalg.solve(H, GA.T @ Lx)
        Gz = -Hinv_fz - np.linalg.solve(H, GA.T @ l0)

    inactive = [i for i in range(form.n_constraints) if i not in active]
    rows_A = [form.domain.A]
    rows_b = [form.domain.b]
    if inactive:
        Gi, Si, wi = G[inactive], S[inactive], w[inactive]
        rows_A.append(Gi @ Fz - Si)
        rows_b.append(wi - Gi @ Gz)
    if active:
        rows_A.append(-Lx)
        rows_b.append(l0)
    raw = Polytope(np.vstack(rows_A), np.concatenate(rows_b))

    # degenerate rows collapse to ~zero normals; hide them before normalizing
    norms = np.linalg.norm(raw.A, axis=1)
    keep = norms > 1e-12
    raw = Polytope(raw.A[keep], raw.b[keep])
    region = minimal_rep(normalize(raw))

    Qv = 0.5 * Fz.T @ H @ Fz + 0.5 * (Fz.T @ F + F.T @ Fz) + 0.5 * form.Y
    qv = Fz.T @ H @ Gz + F.T @ Gz + Fz.T @ fz + form.fx
    cv = float(0.5 * Gz @ H @ Gz + fz @ Gz + form.c)

    return CriticalRegion(
        region=region, F=Fz, G=Gz, active_set=active,
        Qv=Qv, qv=qv, cv=cv,
        n_constraints=form.n_constraints, degenerate=degenerate,
    )


def _seed_parameter(form: MPQPForm):
    """Interior point of the feasible parameter footprint, or None."""
    if form.n_constraints == 0:
        try:
            return chebyshev_center(normalize(form.domain)).center
        except EmptySetError:
            return None
    # joint deepest point over (z, x, r): every constraint row gets slack at
    # least r in the joint space, so x sits strictly inside the footprint
    nz, nx = form.nz, form.nx
    J = np.hstack([form.G, -form.S])
    dom = np.hstack([np.zeros((form.domain.nrows, nz)), form.domain.A])
    A_rows = np.vstack([J, dom])
    b_rows = np.concatenate([form.w, form.domain.b])
    norms = np.linalg.norm(A_rows, axis=1)
    if np.any(norms <= 1e-12):
        raise MalformedInputError("constraint row without coefficients")
    A_lp = np.hstack([A_rows, (norms)[:, None]])
    # cap the radius so the LP stays bounded on unbounded feasible sets
    cap = np.zeros((1, nz + nx + 1))
    cap[0, -1] = 1.0
    A_lp = np.vstack([A_lp, cap, -cap])
    b_lp = np.concatenate([b_rows, [1e6], [0.0]])
    c = np.zeros(nz + nx + 1)
    c[-1] = -1.0
    from .solvers import solve_lp as _solve_lp
    res = _solve_lp(c, Polytope(A_lp, b_lp))
    if res.status != "optimal" or -res.value <= MIN_REGION_RADIUS:
        return None
    return res.x[nz:nz + nx]


def solve_mpqp(form: MPQPForm) -> PWASolution:
    """Enumerate all full-dimensional critical regions of ``form``.

    Starts from the deepest feasible parameter, then repeatedly steps a
    distance ``FACET_STEP`` across each facet of each known region and
    re-solves the QP there; a new active set spawns a new region.  Regions
    whose inscribed ball is smaller than ``MIN_REGION_RADIUS`` are dropped.
    Returns an empty solution when no parameter is feasible.
    """
    sol = PWASolution(form=form)
    x0 = _seed_parameter(form)
    if x0 is None:
        return sol

    seen = {}
    queue = []

    def try_point(x):
        """Solve the QP at ``x``; returns True when the probe is resolved.

        Resolved means the point is infeasible, spawned a new region, or
        belongs to a region already built.  An active set whose region does
        not contain ``x`` (the set extracted just past a facet can relax to
        the neighbour's while the entering multiplier is still microscopic)
        leaves the probe unresolved; the caller retries from further out.
        """
        qp = form.qp_at(x)
        qsol = solve_qp(qp)
        if qsol.status == "infeasible":
            return True
        key = qsol.active_set
        if key not in seen:
            cr = _build_region(form, key, qsol.status == "degenerate")
            if cr.active_set != key and cr.active_set in seen:
                seen[key] = seen[cr.active_set]
            elif cr.region.is_empty:
                seen[key] = None
                seen[cr.active_set] = None
            else:
                try:
                    ball = chebyshev_center(cr.region)
                except EmptySetError:
                    seen[key] = None
                    ball = None
                if ball is not None:
                    if ball.radius <= MIN_REGION_RADIUS:
                        seen[key] = None
                        seen[cr.active_set] = None
                    else:
                        seen[key] = cr
                        seen[cr.active_set] = cr
                        queue.append(cr)
                        return True
        hit = seen[key]
        return hit is not None and hit.region.contains(x, tol=1e-9)

    try_point(x0)
    covered = []
    while queue:
        cr = queue.pop(0)
        covered.append(cr)
        if len(covered) > MAX_REGIONS:
            raise RuntimeError("critical-region enumeration did not terminate")
        R = cr.region
        for row in range(R.nrows):
            xf = facet_interior_point(R, row)
            if xf is None:
                continue
            step = FACET_STEP
            while step <= 1e3 * FACET_STEP:
                probe = xf + step * R.A[row]
                if not form.domain.contains(probe, tol=1e-9):
                    break
                if any(c.region.contains(probe, tol=1e-9) for c in covered):
                    break
                if any(c.region.contains(probe, tol=1e-9) for c in queue):
                    break
                if try_point(probe):
                    break
                step *= 10.0

    sol.regions = sorted(covered, key=lambda c: c.active_set)
    return sol


def eval_pwa(sol: PWASolution, x):
    """Optimizer and region index at ``x``.

    Returns ``(z*, i)`` where region ``i`` is the lowest-index region whose
    closure contains ``x``; raises :class:`NotCoveredError` off the footprint.
    """
    i = sol.locate(x)
    return sol[i].law(x), i


def eval_value(sol: PWASolution, x) -> float:
    """Optimal objective value at ``x``."""
    return sol[sol.locate(x)].value(x)
