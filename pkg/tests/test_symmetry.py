import numpy as np
import pytest

from ceregions.dp import ProblemSpec, compute_ce_region
from ceregions.errors import (
    MalformedInputError,
    NonFiniteGroupError,
    OrbitInconsistencyError,
    VerificationError,
)
from ceregions.geometry import Polytope, chebyshev_center, polytopes_equal, sample_points
from ceregions.symmetry import (
    OrbitPartition,
    SymmetryGroup,
    SymmetryPair,
    close_group,
    map_region,
    orbit_region,
    quotient,
    symmetric_ce_region,
    transport_region,
    verify_symmetry,
)

ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])
REFLECT = np.array([[1.0, 0.0], [0.0, -1.0]])


def integrator_2d(N=1, x_lim=10.0, u_lim=1.0, d_half=0.5):
    n = 2
    return ProblemSpec(
        A=np.eye(n), B=np.eye(n), N=N,
        Q=np.eye(n), R=np.eye(n), QN=np.eye(n),
        X=Polytope.from_box([-x_lim] * n, [x_lim] * n),
        U=Polytope.from_box([-u_lim] * n, [u_lim] * n),
        D=Polytope.from_box([-d_half] * n, [d_half] * n),
        mean=np.zeros(n),
    )


def dihedral4():
    return close_group([SymmetryPair(ROT90, ROT90), SymmetryPair(REFLECT, REFLECT)])


# -- pair validation and verification ---------------------------------------


def test_pair_requires_invertible():
    with pytest.raises(MalformedInputError):
        SymmetryPair(np.array([[1.0, 1.0], [1.0, 1.0]]), np.eye(2))


def test_identity_always_verifies():
    spec = integrator_2d()
    rep = verify_symmetry(SymmetryPair.identity(2, 2), spec)
    assert rep.ok and bool(rep)


def test_rotation_verifies_on_square_box():
    spec = integrator_2d()
    assert verify_symmetry(SymmetryPair(ROT90, ROT90), spec)


def test_rotation_fails_on_rectangular_state_box():
    spec = integrator_2d()
    spec = ProblemSpec(
        A=spec.A, B=spec.B, N=1, Q=np.eye(2), R=np.eye(2), QN=np.eye(2),
        X=Polytope.from_box([-10.0, -5.0], [10.0, 5.0]),
        U=spec.U, D=spec.D[0], mean=np.zeros(2),
    )
    rep = verify_symmetry(SymmetryPair(ROT90, ROT90), spec)
    assert not rep
    assert any(v.startswith("constraint.X") for v in rep.violations)


def test_asymmetric_cost_named():
    spec = integrator_2d()
    spec = ProblemSpec(
        A=spec.A, B=spec.B, N=1, Q=np.diag([1.0, 2.0]), R=np.eye(2),
        QN=np.eye(2), X=spec.X[0], U=spec.U, D=spec.D[0], mean=np.zeros(2),
    )
    rep = verify_symmetry(SymmetryPair(ROT90, ROT90), spec)
    assert "cost.Q[0]" in rep.violations


def test_offcenter_mean_named():
    spec = integrator_2d()
    spec = ProblemSpec(
        A=spec.A, B=spec.B, N=1, Q=np.eye(2), R=np.eye(2), QN=np.eye(2),
        X=spec.X[0], U=spec.U, D=spec.D[0], mean=np.array([0.2, 0.0]),
    )
    rep = verify_symmetry(SymmetryPair(ROT90, ROT90), spec)
    assert "disturbance.mean[0]" in rep.violations


def test_drift_must_be_fixed():
    spec = integrator_2d()
    spec = ProblemSpec(
        A=spec.A, B=spec.B, N=1, Q=np.eye(2), R=np.eye(2), QN=np.eye(2),
        X=spec.X[0], U=spec.U, D=spec.D[0], mean=np.zeros(2),
        drift=np.array([1.0, 0.0]),
    )
    rep = verify_symmetry(SymmetryPair(ROT90, ROT90), spec)
    assert any(v.startswith("drift") for v in rep.violations)


def test_disturbance_matrix_uses_induced_map():
    # G scales the two disturbance channels differently; a sign flip on the
    # second coordinate commutes with G, so the induced map is the sign flip
    # and the (asymmetric-width) box is preserved.
    flip = np.diag([1.0, -1.0])
    spec = ProblemSpec(
        A=np.eye(2), B=np.eye(2), N=1, Q=np.eye(2), R=np.eye(2), QN=np.eye(2),
        X=Polytope.from_box([-10, -10], [10, 10]),
        U=Polytope.from_box([-1, -1], [1, 1]),
        D=Polytope.from_box([-1.0, -2.0], [1.0, 2.0]),
        mean=np.zeros(2), G=np.diag([1.0, 0.5]),
    )
    assert verify_symmetry(SymmetryPair(flip, flip), spec)
    # With a square disturbance box the induced map G^-1 Theta G stretches
    # the box, so the rotation is not a symmetry of the disturbance law.
    square = ProblemSpec(
        A=spec.A, B=spec.B, N=1, Q=np.eye(2), R=np.eye(2), QN=np.eye(2),
        X=spec.X[0], U=spec.U, D=Polytope.from_box([-1.0, -1.0], [1.0, 1.0]),
        mean=np.zeros(2), G=np.diag([1.0, 0.5]),
    )
    rep = verify_symmetry(SymmetryPair(ROT90, ROT90), square)
    assert "disturbance.D[0]" in rep.violations


# -- group closure -----------------------------------------------------------


def test_cyclic_four():
    g = close_group([SymmetryPair(ROT90, ROT90)])
    assert len(g) == 4
    assert g.is_closed()
    assert g[0].close_to(SymmetryPair.identity(2, 2))


def test_dihedral_eight():
    g = dihedral4()
    assert len(g) == 8
    assert g.is_closed()
    assert len(g.generator_indices) == 2


def test_dihedral_ten_on_ring():
    n = 5
    cyc = np.roll(np.eye(n), 1, axis=0)
    rev = np.eye(n)[::-1]
    g = close_group([SymmetryPair(cyc, cyc), SymmetryPair(rev, rev)])
    assert len(g) == 10
    assert g.is_closed()


def test_irrational_rotation_not_finite():
    c, s = np.cos(1.0), np.sin(1.0)
    R = np.array([[c, -s], [s, c]])
    with pytest.raises(NonFiniteGroupError):
        close_group([SymmetryPair(R, R)], cap=64)


# -- orbits and quotients ----------------------------------------------------


@pytest.fixture(scope="module")
def one_step_result():
    return compute_ce_region(integrator_2d(N=1))


def test_one_step_orbit_structure(one_step_result):
    p0 = one_step_result.p0
    assert len(p0) == 9
    part = quotient(p0, dihedral4())
    sizes = sorted(part.orbit_sizes())
    assert sizes == [1, 4, 4]
    assert sum(sizes) == len(p0)
    # every orbit size divides the group order
    assert all(8 % s == 0 for s in sizes)
    # the region containing the origin is fixed by the whole group
    origin_idx = p0.locate(np.zeros(2))
    fixed_rep = part.member_rep[origin_idx]
    assert sum(1 for r in part.member_rep.values() if r == fixed_rep) == 1


def test_quotient_witness_maps_rep_onto_member(one_step_result):
    p0 = one_step_result.p0
    group = dihedral4()
    part = quotient(p0, group)
    for j, rep_idx in part.member_rep.items():
        g = group[part.member_witness[j]]
        image = map_region(p0[rep_idx].region, g.Theta)
        assert polytopes_equal(image, p0[j].region)


def test_orbit_region_strict_raises_on_broken_collection(one_step_result):
    from ceregions.dp import PCollection

    p0 = one_step_result.p0
    # drop one of the corner regions: the rotation image of another corner
    # now lands nowhere
    corner = max(range(len(p0)), key=lambda i: len(p0[i].active_set))
    broken = PCollection(t=0, regions=[cr for i, cr in enumerate(p0) if i != corner])
    with pytest.raises(OrbitInconsistencyError):
        for cr in broken:
            orbit_region(cr, broken, dihedral4(), strict=True)


def test_transport_preserves_law_and_value(one_step_result):
    rng = np.random.default_rng(7)
    p0 = one_step_result.p0
    g = SymmetryPair(ROT90, ROT90)
    for cr in p0:
        moved = transport_region(cr, g)
        for x in sample_points(cr.region, 20, rng):
            y = g.Theta @ x
            assert moved.region.contains(y, tol=1e-7)
            assert np.max(np.abs(moved.law(y) - g.Omega @ cr.law(x))) <= 1e-8
            assert abs(moved.value(y) - cr.value(x)) <= 1e-8


# -- the reduced sweep -------------------------------------------------------


def test_trivial_group_matches_plain():
    spec = integrator_2d(N=1)
    plain = compute_ce_region(spec)
    sym = symmetric_ce_region(spec, SymmetryGroup.trivial(2, 2))
    assert sym.mpqp_solves == plain.mpqp_solves
    assert len(sym.p0_full) == len(plain.p0)
    rng = np.random.default_rng(3)
    for x in sample_points(Polytope.from_box([-9, -9], [9, 9]), 50, rng):
        up = plain.p0.law(x)
        us = sym.p0_full.law(x)
        assert np.max(np.abs(up - us)) <= 1e-8


def test_refuses_non_symmetry():
    spec = ProblemSpec(
        A=np.eye(2), B=np.eye(2), N=1, Q=np.diag([1.0, 2.0]), R=np.eye(2),
        QN=np.eye(2), X=Polytope.from_box([-10, -10], [10, 10]),
        U=Polytope.from_box([-1, -1], [1, 1]),
        D=Polytope.from_box([-0.5, -0.5], [0.5, 0.5]), mean=np.zeros(2),
    )
    with pytest.raises(VerificationError):
        symmetric_ce_region(spec, close_group([SymmetryPair(ROT90, ROT90)]))


@pytest.fixture(scope="module")
def one_step_symmetric():
    return symmetric_ce_region(integrator_2d(N=1), dihedral4())


def test_one_step_representatives(one_step_symmetric):
    assert one_step_symmetric.mpqp_solves == 1
    assert len(one_step_symmetric.p0_representatives) == 3


def test_one_step_reconstruction(one_step_result, one_step_symmetric):
    p0 = one_step_result.p0
    full = one_step_symmetric.p0_full
    assert len(full) == len(p0)
    for cr in p0:
        assert any(polytopes_equal(cr.region, k.region) for k in full)
    rng = np.random.default_rng(11)
    box = Polytope.from_box([-9.9, -9.9], [9.9, 9.9])
    for x in sample_points(box, 200, rng):
        up = p0.law(x)
        us = full.law(x)
        assert np.max(np.abs(up - us)) <= 1e-6
        vp = p0.value(x)
        vs = full.value(x)
        assert abs(vp - vs) <= 1e-6


def test_equivariant_law(one_step_symmetric):
    group = one_step_symmetric.group
    full = one_step_symmetric.p0_full
    rng = np.random.default_rng(5)
    box = Polytope.from_box([-9.9, -9.9], [9.9, 9.9])
    pts = sample_points(box, 100, rng)
    for g in group:
        for x in pts:
            u = full.law(x)
            ug = full.law(g.Theta @ x)
            assert np.max(np.abs(ug - g.Omega @ u)) <= 1e-6


def test_two_stage_sets_agree():
    spec = integrator_2d(N=2)
    plain = compute_ce_region(spec)
    sym = symmetric_ce_region(spec, dihedral4())
    assert sym.mpqp_solves < plain.mpqp_solves
    union_plain = [cr.region for cr in plain.p0]
    union_sym = [cr.region for cr in sym.p0_full]
    # equal as unions: every region of one collection is covered by the other
    rng = np.random.default_rng(2)
    for regions, other in ((union_plain, sym.p0_full), (union_sym, plain.p0)):
        for R in regions:
            for x in sample_points(R, 10, rng):
                assert any(S.region.contains(x, tol=1e-7) for S in other)
    # and the laws agree where both are defined
    box = Polytope.from_box([-9.9, -9.9], [9.9, 9.9])
    for x in sample_points(box, 100, rng):
        try:
            up = plain.p0.law(x)
            us = sym.p0_full.law(x)
        except Exception:
            continue
        assert np.max(np.abs(up - us)) <= 1e-6
