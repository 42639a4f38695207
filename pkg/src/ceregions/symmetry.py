"""Symmetries of constrained LQ problems and the reduced region computation.

A symmetry is a pair of invertible maps (Theta on states, Omega on inputs)
that leaves the dynamics, costs, constraint sets, and disturbance law
unchanged.  Symmetric problems have symmetric region collections, so the
backward sweep only needs one representative region per orbit; the full
collection is reconstructed at the end by applying every group element to
every representative and transporting the affine laws along the way.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dp import PCollection, ProblemSpec, Subproblem, ce_backup, certainty_test, \
    flat_region_floor, terminal_collection
from .errors import (
    MalformedInputError,
    NonFiniteGroupError,
    OrbitInconsistencyError,
    VerificationError,
)
from .geometry import (
    Polytope,
    chebyshev_center,
    linear_image_equal,
    minimal_rep,
    normalize,
    polytopes_equal,
)
from .mpqp import CriticalRegion, solve_mpqp

log = logging.getLogger(__name__)

GROUP_DEDUP_TOL = 1e-9
INTERIOR_MARGIN = 1e-9


@dataclass(frozen=True)
class SymmetryPair:
    """State map Theta and input map Omega, both invertible."""

    Theta: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.Theta, dtype=float))
        W = np.atleast_2d(np.asarray(self.Omega, dtype=float))
        object.__setattr__(self, "Theta", T)
        object.__setattr__(self, "Omega", W)
        for name, M in (("Theta", T), ("Omega", W)):
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise MalformedInputError(f"{name} must be square")
            if np.linalg.cond(M) > 1e12:
                raise MalformedInputError(f"{name} is singular or near-singular")

    def compose(self, other: "SymmetryPair") -> "SymmetryPair":
        return SymmetryPair(self.Theta @ other.Theta, self.Omega @ other.Omega)

    def inverse(self) -> "SymmetryPair":
        return SymmetryPair(np.linalg.inv(self.Theta), np.linalg.inv(self.Omega))

    def close_to(self, other: "SymmetryPair", tol=GROUP_DEDUP_TOL) -> bool:
        return (np.max(np.abs(self.Theta - other.Theta)) <= tol
                and np.max(np.abs(self.Omega - other.Omega)) <= tol)

    @classmethod
    def identity(cls, n, p) -> "SymmetryPair":
        return cls(np.eye(n), np.eye(p))


@dataclass
class VerifyReport:
    """Outcome of a symmetry check; falsy when any named check failed."""

    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def _disturbance_map(pair: SymmetryPair, spec: ProblemSpec, tol):
    """Map acting on disturbance space, induced by the pair.

    With state-dimensional disturbances this is Theta itself.  When a
    disturbance input matrix G is present, the action must satisfy
    Theta G = G Xi; Omega is tried first (inputs and disturbances often share
    coordinates), then Theta, then a least-squares solve.
    """
    if spec.G is None:
        return pair.Theta
    G = spec.G
    for cand in ((pair.Omega,) if G.shape[1] == pair.Omega.shape[0] else ()) \
            + ((pair.Theta,) if G.shape[1] == pair.Theta.shape[0] else ()):
        if np.max(np.abs(pair.Theta @ G - G @ cand)) <= tol:
            return cand
    Xi, *_ = np.linalg.lstsq(G, pair.Theta @ G, rcond=None)
    if np.max(np.abs(pair.Theta @ G - G @ Xi)) <= tol:
        return Xi
    return None


def verify_symmetry(pair: SymmetryPair, spec: ProblemSpec,
                    tol: float = 1e-8) -> VerifyReport:
    """Check that the pair preserves every ingredient of the problem.

    Checks run in a fixed order — commutation with the dynamics, invariance
    of the quadratic costs, invariance of the constraint polytopes, then the
    disturbance law (set, mean, and any drift) — and each failure is recorded
    under the name of the offending ingredient.
    """
    rep = VerifyReport()
    T, W = pair.Theta, pair.Omega
    if T.shape[0] != spec.n or W.shape[0] != spec.p:
        raise MalformedInputError("symmetry pair dimensions do not match spec")

    def check(name, dev):
        if dev > tol:
            rep.violations.append(name)

    check("dynamics.A", np.max(np.abs(T @ spec.A - spec.A @ T)))
    check("dynamics.B", np.max(np.abs(T @ spec.B - spec.B @ W)))
    for t in range(spec.N):
        check(f"cost.Q[{t}]", np.max(np.abs(T.T @ spec.Q[t] @ T - spec.Q[t])))
        check(f"cost.R[{t}]", np.max(np.abs(W.T @ spec.R[t] @ W - spec.R[t])))
    check("cost.QN", np.max(np.abs(T.T @ spec.QN @ T - spec.QN)))
    for t, X in enumerate(spec.X):
        P = minimal_rep(normalize(X))
        if not linear_image_equal(T, P, P, tol=max(tol, 1e-8)):
            rep.violations.append(f"constraint.X[{t}]")
    PU = minimal_rep(normalize(spec.U))
    if not linear_image_equal(W, PU, PU, tol=max(tol, 1e-8)):
        rep.violations.append("constraint.U")
    Xi = _disturbance_map(pair, spec, tol)
    if Xi is None:
        rep.violations.append("disturbance.map")
    else:
        for t in range(spec.N):
            PD = minimal_rep(normalize(spec.D[t]))
            if not linear_image_equal(Xi, PD, PD, tol=max(tol, 1e-8)):
                rep.violations.append(f"disturbance.D[{t}]")
            check(f"disturbance.mean[{t}]",
                  np.max(np.abs(Xi @ spec.mean[t] - spec.mean[t])))
    for t in range(spec.N):
        check(f"drift[{t}]", np.max(np.abs(T @ spec.drift[t] - spec.drift[t])))
    return rep


@dataclass
class SymmetryGroup:
    """Finite matrix group of symmetry pairs; identity is element 0."""

    elements: list
    generator_indices: list

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def __getitem__(self, i) -> SymmetryPair:
        return self.elements[i]

    def index_of(self, pair: SymmetryPair):
        for i, g in enumerate(self.elements):
            if g.close_to(pair):
                return i
        return None

    def is_closed(self) -> bool:
        for a in self.elements:
            if self.index_of(a.inverse()) is None:
                return False
            for b in self.elements:
                if self.index_of(a.compose(b)) is None:
                    return False
        return True

    @classmethod
    def trivial(cls, n, p) -> "SymmetryGroup":
        return cls(elements=[SymmetryPair.identity(n, p)], generator_indices=[])


def close_group(generators, cap: int = 512) -> SymmetryGroup:
    """Breadth-first closure of the generators under composition.

    Raises :class:`NonFiniteGroupError` once more than ``cap`` distinct
    elements appear (tolerance 1e-9 entrywise for deduplication).
    """
    if not generators:
        raise MalformedInputError("need at least one generator")
    n = generators[0].Theta.shape[0]
    p = generators[0].Omega.shape[0]
    ident = SymmetryPair.identity(n, p)
    elements = [ident]
    gen_idx = []
    frontier = [ident]
    while frontier:
        new_frontier = []
        for g in frontier:
            for h in generators:
                cand = g.compose(h)
                if any(cand.close_to(e) for e in elements):
                    continue
                elements.append(cand)
                new_frontier.append(cand)
                if len(elements) > cap:
                    raise NonFiniteGroupError(
                        f"group closure exceeded {cap} elements; generators "
                        "may not generate a finite group")
        frontier = new_frontier
    for h in generators:
        for i, e in enumerate(elements):
            if e.close_to(h):
                gen_idx.append(i)
                break
    return SymmetryGroup(elements=elements, generator_indices=gen_idx)


def map_region(region: Polytope, Theta: np.ndarray) -> Polytope:
    """Image of an H-rep polytope under an invertible linear map."""
    Tinv = np.linalg.inv(Theta)
    return minimal_rep(normalize(Polytope(region.A @ Tinv, region.b.copy())))


def _transported_piece_matches(cr: CriticalRegion, member: CriticalRegion,
                               pair: SymmetryPair, y, tol: float = 1e-6) -> bool:
    """Law and value of ``member`` at ``y`` match ``cr`` transported by ``pair``.

    At a degenerate tie the same cell can carry different active-set labels
    at different orbit positions, so the polytopes need not be equal shapes;
    agreeing on the (unique) optimizer and value at an interior point of the
    image is the invariant that survives relabeling.
    """
    x = np.linalg.solve(pair.Theta, y)
    law_src = pair.Omega @ (cr.F @ x + cr.G)
    law_dst = member.F @ y + member.G
    if np.max(np.abs(law_src - law_dst)) > tol:
        return False
    v_src = float(x @ cr.Qv @ x + cr.qv @ x + cr.cv)
    v_dst = float(y @ member.Qv @ y + member.qv @ y + member.cv)
    return abs(v_src - v_dst) <= tol * max(1.0, abs(v_src))


def orbit_region(cr: CriticalRegion, collection: PCollection,
                 group: SymmetryGroup, strict: bool = True) -> dict:
    """Orbit of ``cr`` inside ``collection``: {member index: witness element}.

    For each group element the Chebyshev center of ``cr`` is mapped and the
    containing member located (strict interior, margin 1e-9), then the match
    is confirmed either by :func:`linear_image_equal` on the polytopes or —
    when degenerate relabeling makes the shapes differ — by agreement of the
    transported law and value at the mapped point.  In strict mode a mapped
    point landing in no member, or in no member that matches, raises
    :class:`OrbitInconsistencyError`; in permissive mode unmatched elements
    are skipped (used when the collection is only a partial array of
    candidates).
    """
    x0 = chebyshev_center(cr.region).center
    orbit = {}
    for gi, g in enumerate(group):
        y = g.Theta @ x0
        containing = [j for j, member in enumerate(collection)
                      if member.region.contains(y, tol=-INTERIOR_MARGIN)]
        if not containing:
            if strict:
                raise OrbitInconsistencyError(
                    f"image of region interior point under element {gi} lies "
                    "in no collection member; the collection is not symmetric")
            continue
        hit = None
        for j in containing:
            if linear_image_equal(g.Theta, cr.region, collection[j].region):
                hit = j
                break
        if hit is None:
            for j in containing:
                if _transported_piece_matches(cr, collection[j], g, y):
                    hit = j
                    break
        if hit is None:
            if strict:
                raise OrbitInconsistencyError(
                    f"element {gi} maps the interior point into members "
                    f"{containing}, but none is the image of the region")
            continue
        if hit not in orbit:
            orbit[hit] = gi
    return orbit


@dataclass
class OrbitPartition:
    """Quotient of a collection: representatives plus membership maps."""

    representatives: list
    member_rep: dict       # region index -> representative region index
    member_witness: dict   # region index -> group element mapping rep onto it

    def orbit_sizes(self) -> list:
        return [sum(1 for r in self.member_rep.values() if r == rep)
                for rep in self.representatives]


def quotient(collection: PCollection, group: SymmetryGroup) -> OrbitPartition:
    """Greedy orbit partition: first unassigned region represents its orbit."""
    assigned = {}
    witness = {}
    reps = []
    for i, cr in enumerate(collection):
        if i in assigned:
            continue
        reps.append(i)
        orbit = orbit_region(cr, collection, group, strict=True)
        for j, gi in orbit.items():
            if j not in assigned:
                assigned[j] = i
                witness[j] = gi
    return OrbitPartition(representatives=reps, member_rep=assigned,
                          member_witness=witness)


def transport_region(cr: CriticalRegion, pair: SymmetryPair) -> CriticalRegion:
    """Image of a critical region under a symmetry, laws and value included.

    The law moves as F -> Omega F Theta^-1, G -> Omega G; the value quadratic
    as Q -> Theta^-T Q Theta^-1 (and likewise for the linear term).
    """
    Tinv = np.linalg.inv(pair.Theta)
    return CriticalRegion(
        region=map_region(cr.region, pair.Theta),
        F=pair.Omega @ cr.F @ Tinv,
        G=pair.Omega @ cr.G,
        active_set=cr.active_set,
        Qv=Tinv.T @ cr.Qv @ Tinv,
        qv=Tinv.T @ cr.qv,
        cv=cr.cv,
        n_constraints=cr.n_constraints,
        degenerate=cr.degenerate,
    )


def reconstruct_collection(reps: PCollection, group: SymmetryGroup) -> PCollection:
    """Full stage collection from representatives: apply every element, dedup."""
    full = []
    for cr in reps:
        for g in group:
            cand = transport_region(cr, g)
            if not any(polytopes_equal(cand.region, k.region) for k in full):
                full.append(cand)
    return PCollection(t=reps.t, regions=full)


@dataclass
class SymmetricCEResult:
    """Reduced backward sweep output: representatives plus reconstructed P_0."""

    rep_stages: list
    p0_full: PCollection
    mpqp_solves: int
    audit: list
    group: SymmetryGroup
    warnings: list = field(default_factory=list)

    @property
    def p0_representatives(self) -> PCollection:
        return self.rep_stages[0]


def _candidate_orbit_sweep(candidates, excl_sets, group, t):
    """One-test-per-orbit filtering of a pooled candidate array.

    Candidates are (CriticalRegion, exclusive-set) pairs from the
    representative subproblems.  The first remaining candidate is tested; its
    whole in-array orbit (permissive matching) is then retired, inheriting
    the verdict — symmetric problems certify or reject entire orbits at once.
    """
    kept = []
    recs = []
    alive = list(range(len(candidates)))
    while alive:
        i = alive[0]
        cr = candidates[i]
        ok = certainty_test(cr, excl_sets[i])
        coll = PCollection(t=t, regions=[candidates[j] for j in alive])
        local = orbit_region(cr, coll, group, strict=False)
        orbit_global = sorted({alive[j] for j in local})
        for j in orbit_global:
            recs.append({
                "stage": t,
                "candidate": j,
                "orbit_representative": i,
                "active_set": list(candidates[j].active_set),
                "passed": bool(ok),
                "tested": j == i,
            })
        if ok:
            kept.append(cr)
        alive = [j for j in alive if j not in orbit_global]
    return kept, recs


def symmetric_ce_region(spec: ProblemSpec, group: SymmetryGroup,
                        jobs: int = 1) -> SymmetricCEResult:
    """Backward sweep solving subproblems only for orbit representatives.

    Every group element must pass :func:`verify_symmetry` first.  Each stage
    pools the critical regions of the representative subproblems, tests one
    member per orbit, and carries only representatives backward.  The full
    stage-0 collection is reconstructed by applying every group element to
    every representative and de-duplicating equal polytopes.
    """
    for gi, g in enumerate(group):
        report = verify_symmetry(g, spec)
        if not report:
            raise VerificationError(
                f"group element {gi} is not a symmetry of the problem; "
                f"failed checks: {', '.join(report.violations)}")

    from .dp import _solve_forms

    J = terminal_collection(spec)
    rep_stages = [None] * spec.N
    audit = [None] * spec.N
    warnings_out = []
    solves = 0
    for t in range(spec.N - 1, -1, -1):
        if len(J) == 0:
            rep_stages[t] = PCollection(t=t, regions=[])
            audit[t] = []
            continue
        subs = ce_backup(J, spec, t)
        sols = _solve_forms([s.form for s in subs], jobs)
        solves += len(subs)
        floor = flat_region_floor(spec.X[t])
        candidates, excl, flat_recs = [], [], []
        for sub, psol in zip(subs, sols):
            for cr in psol:
                if chebyshev_center(cr.region).radius <= floor:
                    flat_recs.append({
                        "stage": t,
                        "candidate": None,
                        "orbit_representative": None,
                        "active_set": list(cr.active_set),
                        "passed": False,
                        "tested": False,
                        "flat": True,
                    })
                    continue
                candidates.append(cr)
                excl.append(sub.exclusive)
        kept, recs = _candidate_orbit_sweep(candidates, excl, group, t)
        recs.extend(flat_recs)
        rep_stages[t] = PCollection(t=t, regions=kept)
        audit[t] = recs
        if not kept:
            msg = f"stage {t}: no representative certified; earlier stages empty"
            log.warning(msg)
            warnings_out.append(msg)
        J = rep_stages[t]

    p0_full = reconstruct_collection(rep_stages[0], group)
    return SymmetricCEResult(rep_stages=rep_stages, p0_full=p0_full,
                             mpqp_solves=solves, audit=audit, group=group,
                             warnings=warnings_out)
