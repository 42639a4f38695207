"""Backward dynamic programming for constrained linear-quadratic control.

Builds, stage by stage, the collection of polyhedral state-space regions on
which the certainty-equivalent controller (disturbance replaced by its mean
in the cost, constraints robustified) is exactly optimal.  Each backward step
solves one multiparametric QP per region of the next-stage collection and
keeps only the critical regions whose active constraints avoid the
*exclusive* rows — facets not inherited from the stage state constraint.

Also provides the unconstrained Riccati reference recursion and a gridded
brute-force DP oracle used for independent verification.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._kernels import dp_stage_1d
from .errors import (
    EmptySetError,
    GridTooCoarseError,
    MalformedInputError,
    NotCoveredError,
)
from .geometry import (
    Polytope,
    bounding_box,
    chebyshev_center,
    minimal_rep,
    normalize,
    pontryagin_diff,
)
from .mpqp import CriticalRegion, MPQPForm, PWASolution, canonicalize, solve_mpqp

log = logging.getLogger(__name__)

# Robustifying state constraints against a disturbance whose image is several
# decades below the domain scale shards the boundary of the partition into
# slivers.  A sliver carries structure finer than the uncertainty it guards
# against, so stage collections drop regions whose inscribed ball is thinner
# than this fraction of the stage domain's own inscribed radius.
FLAT_REGION_REL_RADIUS = 1e-4


def flat_region_floor(domain: Polytope) -> float:
    """Inscribed-radius floor below which a stage region counts as flat."""
    try:
        ball = chebyshev_center(domain)
    except EmptySetError:
        return 0.0
    if ball.capped or not np.isfinite(ball.radius):
        return 0.0
    return FLAT_REGION_REL_RADIUS * max(ball.radius, 0.0)


def _stage_list(value, N, name):
    """Broadcast a single matrix/vector to a per-stage list of length N."""
    if value is None:
        return None
    if isinstance(value, (list, tuple)) and len(value) == N and not np.isscalar(value[0]):
        try:
            return [np.asarray(v, dtype=float) for v in value]
        except (TypeError, ValueError) as exc:
            raise MalformedInputError(f"{name}: {exc}") from None
    arr = np.asarray(value, dtype=float)
    return [arr.copy() for _ in range(N)]


@dataclass
class ProblemSpec:
    """Finite-horizon problem data ``x+ = Ax + Bu + G d + c``.

    Stage costs are un-halved quadratics ``x'Q_t x + u'R_t u`` for
    ``t < N`` plus the terminal ``x'QN x``.  ``X`` lists the per-stage state
    polytopes (length ``N+1``), ``U`` the input polytope, ``D`` the per-stage
    disturbance polytopes with means ``mean[t]`` inside them.  ``G`` maps the
    disturbance into the state space (identity when omitted) and ``drift``
    holds an optional constant offset per stage.
    """

    A: np.ndarray
    B: np.ndarray
    N: int
    Q: list
    R: list
    QN: np.ndarray
    X: list
    U: Polytope
    D: list
    mean: list
    G: np.ndarray | None = None
    drift: list | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0]
        self.B = np.asarray(self.B, dtype=float).reshape(n, -1)
        self.N = int(self.N)
        if self.N < 1:
            raise MalformedInputError("horizon must be at least 1")
        self.Q = _stage_list(self.Q, self.N, "Q")
        self.R = _stage_list(self.R, self.N, "R")
        self.QN = np.atleast_2d(np.asarray(self.QN, dtype=float))
        if isinstance(self.X, Polytope):
            self.X = [self.X] * (self.N + 1)
        self.X = list(self.X)
        if isinstance(self.D, Polytope):
            self.D = [self.D] * self.N
        self.D = list(self.D)
        self.mean = _stage_list(self.mean, self.N, "mean")
        nd = self.D[0].dim
        if self.G is not None:
            self.G = np.asarray(self.G, dtype=float).reshape(n, nd)
        self.drift = (_stage_list(self.drift, self.N, "drift")
                      if self.drift is not None
                      else [np.zeros(n) for _ in range(self.N)])
        self.validate()

    # -- dimensions ---------------------------------------------------------

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    @property
    def nd(self):
        return self.D[0].dim

    def validate(self):
        n, p, N = self.n, self.p, self.N
        if self.A.shape != (n, n):
            raise MalformedInputError("A must be square")
        if len(self.X) != N + 1:
            raise MalformedInputError(
                f"need {N + 1} state polytopes, got {len(self.X)}")
        if len(self.D) != N or len(self.mean) != N:
            raise MalformedInputError("D and mean must have one entry per stage")
        if self.QN.shape != (n, n):
            raise MalformedInputError("QN has wrong shape")
        for t in range(N):
            Q, R = self.Q[t], self.R[t]
            if Q.shape != (n, n) or R.shape != (p, p):
                raise MalformedInputError(f"cost matrices at stage {t} have wrong shape")
            if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 1e-12:
                raise MalformedInputError(f"R at stage {t} must be positive definite")
            if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-9:
                raise MalformedInputError(f"Q at stage {t} must be positive semidefinite")
            if self.mean[t].shape != (self.nd,):
                raise MalformedInputError(f"mean at stage {t} has wrong length")
            if not self.D[t].contains(self.mean[t], tol=1e-9):
                raise MalformedInputError(
                    f"disturbance mean at stage {t} lies outside its support")
            if self.drift[t].shape != (n,):
                raise MalformedInputError(f"drift at stage {t} has wrong length")
        if np.linalg.eigvalsh(0.5 * (self.QN + self.QN.T)).min() < -1e-9:
            raise MalformedInputError("QN must be positive semidefinite")
        for t, P in enumerate(self.X):
            if P.dim != n:
                raise MalformedInputError(f"X[{t}] has wrong dimension")
        if self.U.dim != p:
            raise MalformedInputError("U has wrong dimension")

    def state_mean(self, t) -> np.ndarray:
        """Mean state-space displacement at stage ``t``: drift + G E(d)."""
        Gd = self.mean[t] if self.G is None else self.G @ self.mean[t]
        return self.drift[t] + Gd


@dataclass
class RiccatiSequence:
    """Unconstrained value matrices ``P[0..N]`` and gains ``K[0..N-1]``."""

    P: list
    K: list

    def residual(self, spec: ProblemSpec) -> float:
        """Largest recursion defect across stages (should be ~0)."""
        A, B = spec.A, spec.B
        worst = float(np.max(np.abs(self.P[spec.N] - spec.QN)))
        for t in range(spec.N):
            Pn = self.P[t + 1]
            S = B.T @ Pn @ B + spec.R[t]
            rhs = A.T @ Pn @ A - A.T @ Pn @ B @ np.linalg.solve(S, B.T @ Pn @ A) \
                + spec.Q[t]
            worst = max(worst, float(np.max(np.abs(self.P[t] - rhs))))
        return worst


def riccati_recursion(spec: ProblemSpec) -> RiccatiSequence:
    """Backward Riccati sweep; gains ``K_t = -(B'P B + R)^-1 B'P A``."""
    A, B = spec.A, spec.B
    P = [None] * (spec.N + 1)
    K = [None] * spec.N
    P[spec.N] = 0.5 * (spec.QN + spec.QN.T)
    for t in range(spec.N - 1, -1, -1):
        Pn = P[t + 1]
        S = B.T @ Pn @ B + spec.R[t]
        if np.linalg.eigvalsh(0.5 * (S + S.T)).min() <= 1e-12:
            raise MalformedInputError("input-space Hessian is singular")
        K[t] = -np.linalg.solve(S, B.T @ Pn @ A)
        Pt = A.T @ Pn @ A + spec.Q[t] + A.T @ Pn @ B @ K[t]
        P[t] = 0.5 * (Pt + Pt.T)
        if np.linalg.eigvalsh(P[t]).min() < -1e-9:
            raise MalformedInputError(f"value matrix at stage {t} lost semidefiniteness")
    return RiccatiSequence(P=P, K=K)


@dataclass
class PCollection:
    """Regions of one stage on which the certainty-equivalent law is optimal.

    Regions have pairwise-disjoint interiors; where closures overlap on
    boundaries, lookups resolve to the region with the smaller value.
    """

    t: int
    regions: list

    def __len__(self):
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    def __getitem__(self, i) -> CriticalRegion:
        return self.regions[i]

    def contains(self, x, tol=1e-8) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        return any(cr.region.contains(x, tol=tol) for cr in self.regions)

    def locate(self, x, tol=1e-8) -> int:
        """Index of the best (lowest-value) region containing ``x``."""
        x = np.asarray(x, dtype=float).ravel()
        hits = [i for i, cr in enumerate(self.regions)
                if cr.region.contains(x, tol=tol)]
        if not hits:
            raise NotCoveredError(
                f"state {x.tolist()} is outside the stage-{self.t} collection")
        return min(hits, key=lambda i: (self.regions[i].value(x), i))

    def law(self, x, tol=1e-8) -> np.ndarray:
        return self.regions[self.locate(x, tol)].law(x)

    def value(self, x, tol=1e-8) -> float:
        return self.regions[self.locate(x, tol)].value(x)

    def to_dict(self) -> dict:
        return {"t": self.t, "regions": [cr.to_dict() for cr in self.regions]}

    @classmethod
    def from_dict(cls, d) -> "PCollection":
        return cls(t=int(d["t"]),
                   regions=[CriticalRegion.from_dict(r) for r in d["regions"]])


def terminal_collection(spec: ProblemSpec) -> PCollection:
    """Terminal cost viewed as a one-region collection over ``X_N``."""
    region = minimal_rep(normalize(spec.X[spec.N]))
    cr = CriticalRegion(
        region=region,
        F=np.zeros((0, spec.n)), G=np.zeros(0), active_set=(),
        Qv=0.5 * (spec.QN + spec.QN.T), qv=np.zeros(spec.n), cv=0.0,
        n_constraints=0,
    )
    return PCollection(t=spec.N, regions=[cr])


@dataclass(frozen=True)
class Subproblem:
    """One region-targeted backward-step mpQP.

    ``exclusive`` lists the constraint rows (in subproblem row numbering,
    input rows first) that correspond to facets of the eroded target region
    not inherited from the eroded stage state constraint; a critical region
    certifies certainty equivalence only if none of them is active.
    """

    successor: int
    form: MPQPForm
    target: Polytope
    exclusive: tuple


def ce_backup(J_next: PCollection, spec: ProblemSpec, t: int) -> list:
    """Subproblems of stage ``t``, one per region of the next-stage collection.

    Each subproblem minimizes ``x'Q_t x + u'R_t u + J_j(Ax + Bu + m_t)`` over
    ``u ∈ U`` subject to landing, robustly for every disturbance in ``D_t``,
    inside the ``j``-th region.  Regions whose erosion by the disturbance set
    is empty are skipped with a log entry.
    """
    from .geometry import facet_index_sets

    A, B = spec.A, spec.B
    m = spec.state_mean(t)
    nu = spec.U.nrows
    Xer = minimal_rep(normalize(pontryagin_diff(spec.X[t + 1], spec.D[t],
                                                image=spec.G)))
    if Xer.is_empty:
        log.warning("stage %d: state constraint erodes to the empty set", t)
        return []
    subs = []
    for j, cr in enumerate(J_next.regions):
        target = minimal_rep(normalize(pontryagin_diff(cr.region, spec.D[t],
                                                       image=spec.G)))
        if target.is_empty:
            log.info("stage %d: region %d erodes to the empty set; skipped", t, j)
            continue
        match = facet_index_sets(target, Xer)
        exclusive = tuple(int(nu + e) for e in match.exclusive)

        Qj, qj, cj = cr.Qv, cr.qv, cr.cv
        lin = 2.0 * (Qj @ m) + qj
        G_rows = np.vstack([spec.U.A, target.A @ B])
        w_rows = np.concatenate([spec.U.b, target.b - target.A @ m])
        S_rows = np.vstack([np.zeros((nu, spec.n)), -target.A @ A])
        form = canonicalize(
            Qzz=spec.R[t] + B.T @ Qj @ B,
            Qzx=2.0 * B.T @ Qj @ A,
            Qxx=spec.Q[t] + A.T @ Qj @ A,
            lz=B.T @ lin,
            lx=A.T @ lin,
            const=float(m @ Qj @ m + qj @ m + cj),
            G=G_rows, w=w_rows, S=S_rows,
            domain=spec.X[t],
        )
        subs.append(Subproblem(successor=j, form=form, target=target,
                               exclusive=exclusive))
    return subs


def certainty_test(cr: CriticalRegion, E) -> bool:
    """True iff none of the exclusive rows ``E`` is active in ``cr``."""
    E = tuple(int(e) for e in E)
    if any(e < 0 or e >= cr.n_constraints for e in E):
        raise MalformedInputError(
            f"exclusive row index out of range for {cr.n_constraints} constraints")
    return not set(cr.active_set) & set(E)


@dataclass
class CERegionResult:
    """Output of the backward sweep: one collection per stage plus audit."""

    stages: list
    mpqp_solves: int
    audit: list
    warnings: list = field(default_factory=list)

    @property
    def p0(self) -> PCollection:
        return self.stages[0]

    def stage_counts(self) -> list:
        """Per-stage (total, passed, failed) candidate-region counts."""
        out = []
        for recs in self.audit:
            total = len(recs)
            passed = sum(1 for r in recs if r["passed"])
            out.append((total, passed, total - passed))
        return out


def _solve_forms(forms, jobs):
    if jobs and jobs > 1 and len(forms) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(solve_mpqp, forms))
    return [solve_mpqp(f) for f in forms]


def compute_ce_region(spec: ProblemSpec, jobs: int = 1,
                      apply_filter: bool = True) -> CERegionResult:
    """Backward sweep building the certainty-equivalence collections.

    Seeds the final stage from the terminal cost (every region of that mpQP
    is kept: its exclusive set is empty because the target *is* the eroded
    state constraint), then walks backward keeping only certified regions.
    An empty stage collection empties all earlier stages; the run still
    completes, with a warning.  ``jobs > 1`` solves the per-region
    subproblems of each stage in parallel; results are merged in successor
    order so the output is deterministic.
    """
    J = terminal_collection(spec)
    stages = [None] * spec.N
    audit = [None] * spec.N
    warnings_out = []
    solves = 0
    for t in range(spec.N - 1, -1, -1):
        if len(J) == 0:
            stages[t] = PCollection(t=t, regions=[])
            audit[t] = []
            continue
        subs = ce_backup(J, spec, t)
        sols = _solve_forms([s.form for s in subs], jobs)
        solves += len(subs)
        floor = flat_region_floor(spec.X[t])
        kept, recs = [], []
        for sub, psol in zip(subs, sols):
            for cr in psol:
                certified = certainty_test(cr, sub.exclusive) if apply_filter else True
                flat = chebyshev_center(cr.region).radius <= floor
                ok = certified and not flat
                recs.append({
                    "stage": t,
                    "successor": sub.successor,
                    "active_set": list(cr.active_set),
                    "exclusive": list(sub.exclusive),
                    "passed": bool(ok),
                    "certified": bool(certified),
                    "flat": bool(flat),
                    "degenerate": bool(cr.degenerate),
                })
                if ok:
                    kept.append(cr)
        stages[t] = PCollection(t=t, regions=kept)
        audit[t] = recs
        if not kept:
            msg = (f"stage {t}: no region certified; collections for stages "
                   f"0..{t} are empty")
            log.warning(msg)
            warnings_out.append(msg)
        J = stages[t]
    return CERegionResult(stages=stages, mpqp_solves=solves, audit=audit,
                          warnings=warnings_out)


# ---------------------------------------------------------------------------
# brute-force gridded DP oracle
# ---------------------------------------------------------------------------


def _interp_points(grids, table, P):
    """Multilinear interpolation of ``table`` at rows of ``P``; +inf off-grid."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if len(grids) == 1:
        g = grids[0]
        x = P[:, 0]
        inside = (x >= g[0] - 1e-9) & (x <= g[-1] + 1e-9)
        xc = np.clip(x, g[0], g[-1])
        i = np.clip(np.searchsorted(g, xc, side="right") - 1, 0, len(g) - 2)
        s = (xc - g[i]) / (g[i + 1] - g[i])
        v = (1 - s) * table[i] + s * table[i + 1]
        return np.where(inside, v, np.inf)
    g1, g2 = grids
    x1, x2 = P[:, 0], P[:, 1]
    inside = ((x1 >= g1[0] - 1e-9) & (x1 <= g1[-1] + 1e-9)
              & (x2 >= g2[0] - 1e-9) & (x2 <= g2[-1] + 1e-9))
    x1c = np.clip(x1, g1[0], g1[-1])
    x2c = np.clip(x2, g2[0], g2[-1])
    i = np.clip(np.searchsorted(g1, x1c, side="right") - 1, 0, len(g1) - 2)
    j = np.clip(np.searchsorted(g2, x2c, side="right") - 1, 0, len(g2) - 2)
    s = (x1c - g1[i]) / (g1[i + 1] - g1[i])
    r = (x2c - g2[j]) / (g2[j + 1] - g2[j])
    v = ((1 - s) * (1 - r) * table[i, j] + s * (1 - r) * table[i + 1, j]
         + (1 - s) * r * table[i, j + 1] + s * r * table[i + 1, j + 1])
    return np.where(inside, v, np.inf)


@dataclass
class DPTable:
    """Gridded DP output: per-stage value/law/feasibility tables."""

    spec: ProblemSpec
    state_grid: tuple
    input_grid: tuple
    values: list          # length N+1, terminal last; +inf marks infeasible
    laws: list            # length N, NaN where infeasible
    feasible: list        # length N+1 boolean masks
    atoms: np.ndarray
    weights: np.ndarray
    certainty_equivalent: bool

    def _interp(self, table, x):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return float(_interp_points(self.state_grid, table, x)[0])

    def value_at(self, x, t: int = 0) -> float:
        v = self._interp(self.values[t], x)
        if not np.isfinite(v):
            raise NotCoveredError("state is outside the feasible grid area")
        return float(v)

    def law_at(self, x, t: int = 0) -> np.ndarray:
        u = np.array([self._interp(self.laws[t][..., k], x)
                      for k in range(self.spec.p)])
        if not np.all(np.isfinite(u)):
            raise NotCoveredError("state is outside the feasible grid area")
        return u

    def polish_law_at(self, x, t: int = 0, fine: float = 1e-4,
                      window: float | None = None) -> np.ndarray:
        """Re-minimize the stage objective at ``x`` on a fine local input grid.

        ``law_at`` inherits the resolution of the tabulated input grid; this
        re-runs the one-step minimization at the query state around that
        anchor, using the interpolated next-stage value, which sharpens the
        answer when the table's input grid is coarse.
        """
        spec = self.spec
        x = np.asarray(x, dtype=float).ravel()
        anchor = self.law_at(x, t)
        if window is None:
            window = 1.5 * max(float(g[1] - g[0]) for g in self.input_grid)
        axes = []
        for k in range(spec.p):
            lo = anchor[k] - window
            hi = anchor[k] + window
            axes.append(np.arange(lo, hi + fine / 2, fine))
        if spec.p == 1:
            cand = axes[0][:, None]
        else:
            M = np.meshgrid(*axes, indexing="ij")
            cand = np.column_stack([m.ravel() for m in M])
        cand = cand[spec.U.contains_batch(cand, tol=1e-12)]
        if len(cand) == 0:
            return anchor
        Gd = np.eye(spec.n) if spec.G is None else spec.G
        disp = self.atoms @ Gd.T + spec.drift[t]
        base = spec.A @ x
        stage_u = np.einsum("ni,ij,nj->n", cand, spec.R[t], cand)
        succ0 = base + cand @ spec.B.T
        if self.certainty_equivalent:
            cost = _interp_points(self.state_grid, self.values[t + 1],
                                  succ0 + spec.state_mean(t))
            for a in range(len(self.weights)):
                bad = ~np.isfinite(_interp_points(
                    self.state_grid, self.values[t + 1], succ0 + disp[a]))
                cost = np.where(bad, np.inf, cost)
        else:
            cost = np.zeros(len(cand))
            for a in range(len(self.weights)):
                cost = cost + self.weights[a] * _interp_points(
                    self.state_grid, self.values[t + 1], succ0 + disp[a])
        total = stage_u + cost
        k = int(np.argmin(total))
        if not np.isfinite(total[k]):
            return anchor
        return cand[k]


def _box_bounds(P: Polytope):
    lo, hi = bounding_box(P)
    return lo, hi


def _terminal_table(spec, grids):
    QN = spec.QN
    lo, hi = _box_bounds(spec.X[spec.N])
    if spec.n == 1:
        g = grids[0]
        vals = QN[0, 0] * g**2
        feas = (g >= lo[0] - 1e-9) & (g <= hi[0] + 1e-9)
        # respect non-box terminal sets too
        if spec.X[spec.N].nrows > 2:
            pts = g[:, None]
            feas &= spec.X[spec.N].contains_batch(pts)
        vals = np.where(feas, vals, np.inf)
        return vals, feas
    g1, g2 = grids
    X1, X2 = np.meshgrid(g1, g2, indexing="ij")
    pts = np.column_stack([X1.ravel(), X2.ravel()])
    vals = np.einsum("ni,ij,nj->n", pts, QN, pts).reshape(X1.shape)
    feas = spec.X[spec.N].contains_batch(pts).reshape(X1.shape)
    vals = np.where(feas, vals, np.inf)
    return vals, feas


def brute_force_dp(spec: ProblemSpec, state_grid, input_grid,
                   disturbance_atoms, weights=None,
                   certainty_equivalent: bool = False) -> DPTable:
    """Tabulated DP over a discrete disturbance distribution.

    The expectation is an atom-weighted sum and the state constraint is
    enforced for **every** atom (robust feasibility), matching the recursion
    the region computation implements.  With ``certainty_equivalent`` the
    cost uses only the mean disturbance while feasibility stays robust.
    Values are interpolated multilinearly between nodes.  Supported state
    dimensions: 1 and 2.  Raises :class:`GridTooCoarseError` when a stage
    ends up with no feasible node.
    """
    n, p = spec.n, spec.p
    if n > 2:
        raise MalformedInputError("the brute-force oracle supports n <= 2 only")
    grids = ((np.asarray(state_grid, dtype=float),)
             if n == 1 and np.ndim(state_grid) == 1
             else tuple(np.asarray(g, dtype=float) for g in state_grid))
    ugrids = ((np.asarray(input_grid, dtype=float),)
              if p == 1 and np.ndim(input_grid) == 1
              else tuple(np.asarray(g, dtype=float) for g in input_grid))
    atoms = np.atleast_2d(np.asarray(disturbance_atoms, dtype=float))
    if atoms.shape[1] != spec.nd:
        atoms = atoms.reshape(-1, spec.nd)
    weights = (np.full(len(atoms), 1.0 / len(atoms)) if weights is None
               else np.asarray(weights, dtype=float))
    weights = weights / weights.sum()

    Gd = np.eye(n) if spec.G is None else spec.G
    values = [None] * (spec.N + 1)
    laws = [None] * spec.N
    feas = [None] * (spec.N + 1)
    values[spec.N], feas[spec.N] = _terminal_table(spec, grids)

    for t in range(spec.N - 1, -1, -1):
        state_atoms = atoms @ Gd.T + spec.drift[t]      # displacement per atom
        mean_disp = spec.state_mean(t)
        if n == 1:
            vals, law, fmask = _stage_1d(spec, t, grids[0], ugrids[0],
                                         state_atoms[:, 0], weights,
                                         mean_disp[0], values[t + 1],
                                         certainty_equivalent)
            laws[t] = law[:, None]
        else:
            vals, law, fmask = _stage_2d(spec, t, grids, ugrids, state_atoms,
                                         weights, mean_disp, values[t + 1],
                                         certainty_equivalent)
            laws[t] = law
        if not fmask.any():
            raise GridTooCoarseError(
                f"stage {t}: no grid node admits a feasible input; "
                "refine the grids or check the constraints")
        values[t], feas[t] = vals, fmask
    return DPTable(spec=spec, state_grid=grids, input_grid=ugrids,
                   values=values, laws=laws, feasible=feas, atoms=atoms,
                   weights=weights, certainty_equivalent=certainty_equivalent)


def _stage_1d(spec, t, xg, ug, atom_disp, weights, mean_disp, j_next, ce):
    Xt, Xn, U = spec.X[t], spec.X[t + 1], spec.U
    vals, law, feas = dp_stage_1d(
        np.ascontiguousarray(xg), np.ascontiguousarray(ug),
        float(spec.A[0, 0]), float(spec.B[0, 0]),
        np.ascontiguousarray(atom_disp), np.ascontiguousarray(weights),
        float(mean_disp),
        np.ascontiguousarray(Xt.A[:, 0]), np.ascontiguousarray(Xt.b),
        np.ascontiguousarray(Xn.A[:, 0]), np.ascontiguousarray(Xn.b),
        np.ascontiguousarray(U.A[:, 0]), np.ascontiguousarray(U.b),
        float(spec.Q[t][0, 0]), float(spec.R[t][0, 0]),
        float(xg[0]), float(xg[1] - xg[0]), j_next, ce,
    )
    return vals, law, feas


def _stage_2d(spec, t, grids, ugrids, state_atoms, weights, mean_disp,
              j_next, ce):
    g1, g2 = grids
    X1, X2 = np.meshgrid(g1, g2, indexing="ij")
    pts = np.column_stack([X1.ravel(), X2.ravel()])
    in_Xt = spec.X[t].contains_batch(pts)
    npts = len(pts)

    if spec.p == 2:
        U1, U2 = np.meshgrid(ugrids[0], ugrids[1], indexing="ij")
        uu = np.column_stack([U1.ravel(), U2.ravel()])
    else:
        uu = ugrids[0][:, None]
    uu = uu[spec.U.contains_batch(uu)]
    if len(uu) == 0:
        raise GridTooCoarseError(f"stage {t}: no input-grid point lies in U")

    def interp_next(P):
        return _interp_points(grids, j_next, P)

    Qt, Rt = spec.Q[t], spec.R[t]
    stage_x = np.einsum("ni,ij,nj->n", pts, Qt, pts)
    best = np.full(npts, np.inf)
    best_u = np.full((npts, spec.p), np.nan)
    A, B = spec.A, spec.B
    base = pts @ A.T
    for u in uu:
        drive = B @ u
        succ_mean = base + drive + mean_disp
        if ce:
            cost_next = interp_next(succ_mean)
            feas_next = np.isfinite(cost_next)
            for a in range(len(weights)):
                succ = base + drive + state_atoms[a]
                feas_next &= np.isfinite(interp_next(succ))
            cost_next = np.where(feas_next, cost_next, np.inf)
        else:
            cost_next = np.zeros(npts)
            for a in range(len(weights)):
                succ = base + drive + state_atoms[a]
                cost_next = cost_next + weights[a] * interp_next(succ)
        total = stage_x + float(u @ Rt @ u) + cost_next
        better = total < best
        best = np.where(better, total, best)
        best_u[better] = u
    best = np.where(in_Xt, best, np.inf)
    best_u[~in_Xt] = np.nan
    shape = X1.shape
    return (best.reshape(shape), best_u.reshape(shape + (spec.p,)),
            np.isfinite(best).reshape(shape))
