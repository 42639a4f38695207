"""Acceptance suite: end-to-end guarantees on the bundled example problems.

Each test checks one externally visible property of the pipeline, with its
tolerance and runtime budget stated inline: filter behaviour on a one-step
problem, agreement with a brute-force stochastic DP oracle, solve counts
and partition agreement under symmetry reduction, partition sizes on the
battery ring, slab coverage, pointwise optimality / facet continuity /
value convexity of the explicit solutions, group equivariance, and the
disturbance-truncation guarantees.  The expensive sweeps run once in
module-scoped fixtures and are shared.

The two-stage battery sweep is heavy and only runs when RUN_LONG_TESTS=1.
"""

import itertools
import os
import time

import numpy as np
import pytest
from scipy.optimize import nnls
from scipy.stats import norm

from ceregions.cli import coverage_fraction
from ceregions.dp import (
    ProblemSpec,
    brute_force_dp,
    ce_backup,
    compute_ce_region,
    terminal_collection,
)
from ceregions.errors import NotCoveredError
from ceregions.examples import example_file
from ceregions.geometry import (
    Polytope,
    bounding_box,
    chebyshev_center,
    facet_interior_point,
    polytopes_equal,
)
from ceregions.mpqp import solve_mpqp
from ceregions.problem_io import parse_problem
from ceregions.solvers import solve_qp
from ceregions.symmetry import close_group, orbit_region, symmetric_ce_region
from ceregions.truncation import (
    chebyshev_box,
    truncate_gaussian_1d,
    verify_symmetric_support,
)


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


# -- shared sweeps ----------------------------------------------------------


@pytest.fixture(scope="module")
def integrator_pf():
    return parse_problem(example_file("integrator"))  # N = 3, D4 symmetry


@pytest.fixture(scope="module")
def integrator_plain(integrator_pf):
    return timed(compute_ce_region, integrator_pf.spec)


@pytest.fixture(scope="module")
def integrator_sym(integrator_pf):
    group = close_group(integrator_pf.generators)
    result, elapsed = timed(symmetric_ce_region, integrator_pf.spec, group)
    return group, result, elapsed


@pytest.fixture(scope="module")
def battery_pf():
    return parse_problem(example_file("battery"))  # n = 5, N = 1, D5 symmetry


@pytest.fixture(scope="module")
def battery_plain(battery_pf):
    return timed(compute_ce_region, battery_pf.spec)


@pytest.fixture(scope="module")
def battery_sym(battery_pf):
    group = close_group(battery_pf.generators)
    result, elapsed = timed(symmetric_ce_region, battery_pf.spec, group)
    return group, result, elapsed


@pytest.fixture(scope="module")
def slab_run():
    pf = parse_problem(example_file("slab"))  # N = 24
    result, elapsed = timed(compute_ce_region, pf.spec)
    return pf, result, elapsed


# -- 1: one-step sweeps keep the whole partition ----------------------------


def test_one_step_filter_keeps_every_candidate():
    """With one stage to go there is nothing left to mispredict, so the
    certainty filter must certify every region of the terminal-stage mpQP
    partition: zero candidates filtered and the collection is the full
    partition of the feasible footprint."""
    pf = parse_problem(example_file("integrator", horizon=1))
    result, elapsed = timed(compute_ce_region, pf.spec)
    recs = result.audit[0]
    assert all(r["passed"] for r in recs), "a one-step candidate was filtered"
    assert len(result.p0) == len(recs) == 9
    # the feasible footprint here is the whole state box, and the certified
    # collection must tile it exactly (area computed from polygon vertices)
    assert coverage_fraction(pf.spec, result.p0) == pytest.approx(1.0, abs=1e-9)
    assert elapsed < 10.0


# -- 2: agreement with a brute-force stochastic DP oracle -------------------


def test_law_matches_stochastic_dp_with_constant_offset():
    """On certified regions the computed law must equal the law of the full
    stochastic DP (three-atom disturbance), and the two value functions may
    differ only by a constant per region.  Oracle: dense-grid DP, law read
    back through a local re-minimization at each query state."""
    t0 = time.perf_counter()
    one = np.eye(1)
    X = Polytope.from_box([-10.0], [10.0])
    U = Polytope.from_box([-1.0], [1.0])
    D = Polytope.from_box([-0.5], [0.5])
    spec = ProblemSpec(A=one, B=one, N=2, Q=one, R=one, QN=one,
                       X=[X] * 3, U=U, D=[D] * 2, mean=[np.zeros(1)] * 2)
    result = compute_ce_region(spec)
    atoms = np.array([[-0.5], [0.0], [0.5]])
    h = 1e-3
    table = brute_force_dp(spec, np.arange(-10.0, 10.0 + h / 2, h),
                           np.arange(-1.0, 1.0 + h / 2, h), atoms)
    rng = np.random.default_rng(0)
    states = rng.uniform(-10.0, 10.0, size=200)
    law_dev = 0.0
    offsets = {}
    checked = 0
    for x in states:
        if not result.p0.contains([x]):
            continue
        i = result.p0.locate([x])
        u_ce = result.p0.law([x])[0]
        u_ref = table.polish_law_at([x], t=0)[0]
        law_dev = max(law_dev, abs(u_ce - u_ref))
        offsets.setdefault(i, []).append(
            table.value_at([x], t=0) - result.p0.value([x]))
        checked += 1
    assert checked >= 150, "too few samples landed on certified regions"
    assert law_dev <= 1e-3, f"law deviates from the stochastic DP by {law_dev:.2e}"
    for i, vals in offsets.items():
        spread = max(vals) - min(vals)
        assert spread <= 1e-3, \
            f"value offset varies by {spread:.2e} on region {i}"
    assert time.perf_counter() - t0 < 120.0


# -- 3: symmetry reduction solves fewer problems, same answer ---------------


def test_symmetric_sweep_solve_counts_and_agreement(integrator_plain,
                                                    integrator_sym):
    plain, t_plain = integrator_plain
    group, sym, t_sym = integrator_sym
    assert 15 <= plain.mpqp_solves <= 23       # 19 up to degeneracy splits
    assert 5 <= sym.mpqp_solves <= 9           # 7 representative solves
    assert sym.mpqp_solves < plain.mpqp_solves

    p_regions = list(plain.p0)
    s_regions = list(sym.p0_full)
    assert len(p_regions) == len(s_regions) == 25
    unused = set(range(len(s_regions)))
    for i, cr in enumerate(p_regions):
        match = [j for j in unused
                 if polytopes_equal(cr.region, s_regions[j].region)]
        assert match, f"plain region {i} missing from the symmetric partition"
        j = match[0]
        unused.discard(j)
        c = chebyshev_center(cr.region).center
        np.testing.assert_allclose(s_regions[j].F @ c + s_regions[j].G,
                                   cr.F @ c + cr.G, atol=1e-6)
    assert not unused
    assert t_plain + t_sym < 300.0


# -- 4: battery ring partition sizes and charge conservation ----------------


def test_battery_partition_size(battery_plain):
    result, _ = battery_plain
    count = len(result.p0)
    assert 211 * 0.85 <= count <= 211 * 1.15, \
        f"stage-0 partition has {count} regions, expected 211 within 15%"


def test_battery_representative_count(battery_sym):
    """Expected 26 orbit representatives within 15%.  The computed
    arrangement decomposes into 31 orbits under the ten ring symmetries
    (one fixed cell, eighteen orbits of size five, twelve of size ten;
    confirmed by an independent orbit census of the plain partition), so
    this target is not reachable for this geometry.  The test keeps the
    stated band and reports the discrepancy instead of widening it."""
    group, sym, _ = battery_sym
    reps = len(sym.rep_stages[0])
    assert 26 * 0.85 <= reps <= 26 * 1.15, \
        f"stage-0 orbit representatives: {reps}, expected 26 within 15%"


def test_battery_orbit_accounting(battery_plain, battery_sym):
    """Representatives times group order bounds the full partition size."""
    plain, _ = battery_plain
    group, sym, _ = battery_sym
    assert len(group.elements) == 10
    assert len(sym.rep_stages[0]) * len(group.elements) >= len(plain.p0)


def test_battery_rollouts_conserve_charge(battery_pf, battery_plain):
    """Total stored charge is invariant under the closed loop: the exchange
    matrix has zero column sums, so 1'x is conserved to rounding."""
    spec = battery_pf.spec
    result, _ = battery_plain
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 100:
        x = rng.uniform(0.0, 1.0, size=5)
        if not result.p0.contains(x):
            continue
        for _ in range(3):                     # a short closed-loop run
            u = result.p0.law(x) if result.p0.contains(x) else np.zeros(5)
            d = rng.uniform(-0.1, 0.1, size=5)
            x_next = spec.A @ x + spec.B @ u + spec.G @ d
            assert abs(x_next.sum() - x.sum()) <= 1e-10
            x = x_next
        checked += 1


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("RUN_LONG_TESTS"),
                    reason="two-stage battery sweep; set RUN_LONG_TESTS=1")
def test_battery_two_stage_partition_sizes(battery_pf):
    pf = parse_problem(example_file("battery", horizon=2))
    t0 = time.perf_counter()
    plain = compute_ce_region(pf.spec)
    sym = symmetric_ce_region(pf.spec, close_group(pf.generators))
    count = len(plain.p0)
    reps = len(sym.rep_stages[0])
    assert 1998 * 0.85 <= count <= 1998 * 1.15, \
        f"two-stage partition has {count} regions, expected 1998 within 15%"
    assert 213 * 0.85 <= reps <= 213 * 1.15, \
        f"two-stage representatives: {reps}, expected 213 within 15%"
    assert time.perf_counter() - t0 < 7200.0


# -- 5: slab coverage -------------------------------------------------------


def test_slab_collection_covers_operating_box(slab_run):
    """Over the full 24-hour horizon the certified stage-0 footprint must
    cover at least 90% of the slab/room operating box."""
    pf, result, elapsed = slab_run
    cov = coverage_fraction(pf.spec, result.p0)
    assert cov >= 0.90, f"stage-0 coverage {cov:.4f} below 0.90"
    assert elapsed < 1800.0


# -- 6: explicit-solution properties on every example -----------------------


def _stage_forms(spec, stages):
    """Stage mpQP forms rebuilt from the computed successor collections."""
    forms = []
    for t in range(spec.N):
        succ = stages[t + 1] if t + 1 < spec.N else terminal_collection(spec)
        forms.extend(sub.form for sub in ce_backup(succ, spec, t))
    return forms


def _locate_best(pwa, x, tol=1e-8):
    """Containing region with the smallest value (overlap-safe lookup)."""
    hits = [cr for cr in pwa if cr.region.contains(x, tol=tol)]
    if not hits:
        raise NotCoveredError(f"parameter {np.asarray(x).tolist()} uncovered")
    return min(hits, key=lambda cr: cr.value(x))


def _is_kkt_point(form, x, z, tol=1e-7):
    """Independent eps-optimality certificate for a claimed optimizer.

    Feasibility in the (unit-norm) constraint rows plus existence of
    nonnegative multipliers on the near-active rows that cancel the
    objective gradient, measured after scaling out the Hessian magnitude
    so the certificate is meaningful for badly scaled objectives.
    """
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    resid = form.G @ z - form.w - form.S @ x
    if resid.size and resid.max() > tol:
        return False
    sigma = max(float(np.abs(form.H).max()), 1e-300)
    grad = (form.H @ z + form.F @ x + form.fz) / sigma
    near = np.where(resid >= -1e-6)[0]
    if near.size == 0:
        return float(np.linalg.norm(grad, np.inf)) <= tol
    lam, _ = nnls(form.G[near].T, -grad)
    return float(np.linalg.norm(form.G[near].T @ lam + grad, np.inf)) <= tol


def _value_close(va, vb, tol=1e-6):
    return abs(va - vb) <= tol * max(1.0, abs(va), abs(vb))


def _check_explicit_solution(name, forms, rng, target_samples=1000,
                             classify_budget=2000):
    """Pointwise optimality, facet continuity, and value convexity for the
    explicit solutions of a pooled list of stage mpQPs.

    Parameters are drawn uniformly over each stage problem's domain box and
    kept when they land on the explicit partition.  At a degenerate tie the
    optimizer is not a well-conditioned quantity (two active-set labels can
    differ noticeably while their objectives agree to rounding), so when
    the explicit law and a fresh QP solve disagree beyond tolerance, both
    answers must carry an independent KKT certificate and matching values;
    such ties are counted and must stay rare.
    """
    solutions = [solve_mpqp(form) for form in forms]
    quota = -(-target_samples // len(forms))  # ceil division
    pooled = 0
    uncovered = 0
    ties = 0
    kept = [[] for _ in forms]               # (x, value) per form, for segments
    for sweep in range(3):
        if pooled >= target_samples:
            break
        for fi, (form, pwa) in enumerate(zip(forms, solutions)):
            lo, hi = bounding_box(form.domain)
            got = 0
            tries = 0
            while got < quota and tries < 60 * quota:
                x = rng.uniform(lo, hi)
                tries += 1
                if not form.domain.contains(x):
                    continue
                try:
                    cr = _locate_best(pwa, x)
                except NotCoveredError:
                    if classify_budget > 0:
                        classify_budget -= 1
                        if solve_qp(form.qp_at(x)).status in ("optimal",
                                                              "degenerate"):
                            uncovered += 1   # feasible but not located
                            pooled += 1
                            got += 1
                    continue
                sol = solve_qp(form.qp_at(x))
                assert sol.status in ("optimal", "degenerate"), \
                    f"{name}: located point reported {sol.status}"
                pooled += 1
                got += 1
                z_claim = cr.F @ x + cr.G
                v_claim = cr.value(x)
                v_ref = form.objective(sol.z_star, x)
                assert _value_close(v_claim, v_ref), \
                    f"{name}: value mismatch at {x.tolist()}"
                if np.max(np.abs(z_claim - sol.z_star)) > 1e-6:
                    # degenerate tie: both answers must certify as optimal
                    assert _is_kkt_point(form, x, z_claim), \
                        f"{name}: claimed law not optimal at {x.tolist()}"
                    assert _is_kkt_point(form, x, sol.z_star)
                    ties += 1
                kept[fi].append((x, v_claim))

    assert pooled >= target_samples, \
        f"{name}: only {pooled} feasible parameters found"
    assert uncovered <= 1e-3 * pooled, \
        f"{name}: {uncovered} of {pooled} feasible parameters not located"
    assert ties <= 0.01 * pooled, \
        f"{name}: {ties} degenerate optimizer ties in {pooled} samples"

    # facet continuity: regions meeting at a facet point must carry the
    # same law there, except across a degeneracy where each label still
    # certifies as optimal with matching value
    for form, pwa in zip(forms, solutions):
        for _ in range(min(60, 4 * len(pwa))):
            cr = pwa[int(rng.integers(len(pwa)))]
            if cr.region.nrows == 0:
                continue
            point = facet_interior_point(cr.region,
                                         int(rng.integers(cr.region.nrows)))
            if point is None or not form.domain.contains(point, tol=1e-9):
                continue
            hits = [r for r in pwa if r.region.contains(point, tol=1e-9)]
            for ra, rb in itertools.combinations(hits, 2):
                la = ra.F @ point + ra.G
                lb = rb.F @ point + rb.G
                if np.max(np.abs(la - lb)) <= 1e-7:
                    continue
                assert _is_kkt_point(form, point, la) \
                    and _is_kkt_point(form, point, lb), \
                    f"{name}: law jumps across a facet at {point.tolist()}"
                assert _value_close(ra.value(point), rb.value(point)), \
                    f"{name}: value jumps across a facet at {point.tolist()}"

    # convexity of the value along segments between feasible parameters
    for (form, pwa), pts in zip(zip(forms, solutions), kept):
        if len(pts) < 2:
            continue
        for _ in range(min(100, len(pts) ** 2)):
            (a, v_a), (b, v_b) = (pts[int(rng.integers(len(pts)))],
                                  pts[int(rng.integers(len(pts)))])
            mid = 0.5 * (a + b)
            try:
                v_mid = _locate_best(pwa, mid).value(mid)
            except NotCoveredError:
                continue
            slack = 1e-9 * max(1.0, abs(v_a), abs(v_b))
            assert v_mid <= 0.5 * (v_a + v_b) + slack, \
                f"{name}: value not convex between {a.tolist()} and {b.tolist()}"


def test_explicit_solutions_integrator(integrator_pf, integrator_plain):
    t0 = time.perf_counter()
    plain, _ = integrator_plain
    forms = _stage_forms(integrator_pf.spec, plain.stages)
    _check_explicit_solution("integrator", forms, np.random.default_rng(1))
    assert time.perf_counter() - t0 < 300.0


def test_explicit_solutions_battery(battery_pf):
    t0 = time.perf_counter()
    spec = battery_pf.spec
    forms = _stage_forms(spec, [None])          # N = 1: terminal successor
    _check_explicit_solution("battery", forms, np.random.default_rng(2))
    assert time.perf_counter() - t0 < 300.0


def test_explicit_solutions_slab(slab_run):
    t0 = time.perf_counter()
    pf, result, _ = slab_run
    forms = _stage_forms(pf.spec, result.stages)
    _check_explicit_solution("slab", forms, np.random.default_rng(3))
    assert time.perf_counter() - t0 < 300.0


# -- 7: group equivariance of laws and partitions ---------------------------


def _law_equivariance(p0, group, spec, rng, samples=200):
    lo, hi = bounding_box(spec.X[0])
    worst = 0.0
    for pair in group.elements:
        found = 0
        for _ in range(400):
            for x in rng.uniform(lo, hi, size=(4 * samples, spec.n)):
                if not p0.contains(x):
                    continue
                y = pair.Theta @ x
                assert p0.contains(y), \
                    "partition not closed under the group action"
                dev = np.max(np.abs(p0.law(y) - pair.Omega @ p0.law(x)))
                worst = max(worst, dev)
                found += 1
                if found >= samples:
                    break
            if found >= samples:
                break
        assert found >= samples
    return worst


def test_equivariance_integrator(integrator_pf, integrator_plain,
                                 integrator_sym):
    t0 = time.perf_counter()
    plain, _ = integrator_plain
    group, _, _ = integrator_sym
    assert len(group.elements) == 8            # full square symmetry
    dev = _law_equivariance(plain.p0, group, integrator_pf.spec,
                            np.random.default_rng(4))
    assert dev <= 1e-6, f"law equivariance violated by {dev:.2e}"
    for coll in plain.stages:
        for cr in coll:
            orbit_region(cr, coll, group, strict=True)
    assert time.perf_counter() - t0 < 300.0


def test_equivariance_battery(battery_pf, battery_plain, battery_sym):
    t0 = time.perf_counter()
    plain, _ = battery_plain
    group, _, _ = battery_sym
    assert len(group.elements) == 10           # full ring symmetry
    dev = _law_equivariance(plain.p0, group, battery_pf.spec,
                            np.random.default_rng(5))
    assert dev <= 1e-6, f"law equivariance violated by {dev:.2e}"
    for cr in plain.p0:
        orbit_region(cr, plain.p0, group, strict=True)
    assert time.perf_counter() - t0 < 300.0


# -- 8: disturbance truncation guarantees -----------------------------------


def test_truncation_guarantees():
    t0 = time.perf_counter()
    # exact Gaussian quantiles: the one/two-sigma masses map back to k = 1, 2
    for k in (1.0, 2.0):
        mass = 2.0 * norm.cdf(k) - 1.0
        res = truncate_gaussian_1d(0.0, 1.0, mass)
        assert abs(res.half_widths[0] - k) <= 1e-6
        assert res.method == "exact-gaussian"

    # the moment-only box must be conservative for any matching distribution;
    # check against a correlated Gaussian by Monte Carlo
    sigmas = np.array([1.0, 2.0, 0.5])
    corr = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, -0.2], [0.0, -0.2, 1.0]])
    box = chebyshev_box(sigmas, corr, mass_target=0.95)
    cov = corr * np.outer(sigmas, sigmas)
    rng = np.random.default_rng(8)
    pts = rng.multivariate_normal(np.zeros(3), cov, size=1_000_000)
    frac = float(np.mean(np.all(np.abs(pts) <= box.half_widths, axis=1)))
    assert frac >= 0.95 - 0.002, \
        f"moment box holds only {frac:.4f} empirical mass"

    # declared supports must be centrally symmetric about their mean
    assert verify_symmetric_support(box.polytope, np.zeros(3))
    assert verify_symmetric_support(
        Polytope.from_box([-0.4, 0.6], [0.6, 1.4]), [0.1, 1.0])
    assert not verify_symmetric_support(
        Polytope.from_box([-1.0, -1.0], [2.0, 1.0]), [0.0, 0.0])
    assert time.perf_counter() - t0 < 120.0
