import numpy as np
import pytest
from scipy.stats import norm

from ceregions.errors import MalformedInputError
from ceregions.geometry import Polytope
from ceregions.truncation import (
    DisturbanceSpec,
    TruncationResult,
    chebyshev_box,
    per_stage_mass,
    truncate_disturbance,
    truncate_gaussian_1d,
    verify_symmetric_support,
)


# -- per-stage mass allocation ----------------------------------------------


def test_per_stage_square_root():
    assert per_stage_mass(0.81, 2) == pytest.approx(0.9, abs=1e-12)


def test_per_stage_identity():
    assert per_stage_mass(0.73, 1) == 0.73


def test_per_stage_long_horizon():
    m = per_stage_mass(0.95, 24)
    assert m == pytest.approx(0.95 ** (1 / 24), abs=1e-15)
    assert str(m).startswith("0.99786")


def test_per_stage_composition():
    for P, N in [(0.5, 3), (0.99, 24), (0.9, 7)]:
        assert per_stage_mass(P, N) ** N == pytest.approx(P, abs=1e-12)


def test_per_stage_domain():
    with pytest.raises(MalformedInputError):
        per_stage_mass(1.0, 2)
    with pytest.raises(MalformedInputError):
        per_stage_mass(0.0, 2)
    with pytest.raises(MalformedInputError):
        per_stage_mass(0.5, 0)


# -- one-dimensional Gaussian truncation ------------------------------------


def test_one_sigma_interval():
    res = truncate_gaussian_1d(0.0, 1.0, 0.6826894921)
    assert res.method == "exact-gaussian"
    assert res.half_widths[0] == pytest.approx(1.0, abs=1e-6)


def test_two_sigma_interval():
    res = truncate_gaussian_1d(0.0, 1.0, 0.9544997361)
    assert res.half_widths[0] == pytest.approx(2.0, abs=1e-6)


def test_shifted_scaled_interval():
    res = truncate_gaussian_1d(5.0, 2.0, 0.95)
    k = norm.ppf(0.975)
    lo, hi = -res.polytope.b[1], res.polytope.b[0]
    assert lo == pytest.approx(5 - 2 * k, abs=1e-9)
    assert hi == pytest.approx(5 + 2 * k, abs=1e-9)


def test_interval_mass_is_exact():
    for mass in (0.5, 0.9, 0.999):
        res = truncate_gaussian_1d(1.0, 3.0, mass)
        k = res.half_widths[0] / 3.0
        achieved = norm.cdf(k) - norm.cdf(-k)
        assert achieved == pytest.approx(mass, abs=1e-10)


def test_full_mass_has_no_bounded_interval():
    with pytest.raises(MalformedInputError):
        truncate_gaussian_1d(0.0, 1.0, 1.0)
    with pytest.raises(MalformedInputError):
        truncate_gaussian_1d(0.0, 1.0, 1.5)


def test_interval_is_symmetric_about_mean():
    res = truncate_gaussian_1d(5.0, 2.0, 0.95)
    assert verify_symmetric_support(res.polytope, [5.0])
    assert not verify_symmetric_support(res.polytope, [4.0])


# -- Chebyshev hypercubes ----------------------------------------------------


def test_scalar_chebyshev_recovers_closed_form():
    res = chebyshev_box([1.0], mass_target=0.99, N=1)
    assert res.method == "chebyshev-bound"
    assert res.half_widths[0] == pytest.approx(10.0, rel=1e-6)
    assert res.mass >= 0.99


def test_loose_target_small_k():
    res = chebyshev_box([1.0], mass_target=1e-6, N=1)
    assert res.half_widths[0] < 1.01
    assert res.mass > 0


def test_horizon_split_widens_box():
    one = chebyshev_box([1.0, 1.0], mass_target=0.9, N=1)
    many = chebyshev_box([1.0, 1.0], mass_target=0.9, N=10)
    assert many.half_widths[0] > one.half_widths[0]


def test_zero_correlation_matches_union_bound():
    op = chebyshev_box([1.0, 2.0], np.eye(2), 0.95, 1)
    un = chebyshev_box([1.0, 2.0], np.eye(2), 0.95, 1, method="union")
    assert op.half_widths == pytest.approx(un.half_widths, rel=1e-6)
    # closed form: 1 - 2/k^2 = 0.95 -> k = sqrt(40)
    assert op.half_widths[0] == pytest.approx(np.sqrt(40.0), rel=1e-6)


def test_correlation_tightens_box():
    corr = np.array([[1.0, 0.5], [0.5, 1.0]])
    op = chebyshev_box([1.0, 1.0], corr, 0.95, 1)
    un = chebyshev_box([1.0, 1.0], corr, 0.95, 1, method="union")
    assert op.half_widths[0] < un.half_widths[0]
    assert op.mass >= per_stage_mass(0.95, 1)


def test_unreachable_target_raises():
    with pytest.raises(MalformedInputError):
        chebyshev_box([1.0], mass_target=1 - 1e-14, N=1)


def test_literal_form_is_refused():
    with pytest.raises(NotImplementedError):
        chebyshev_box([1.0], mass_target=0.9, N=1, method="literal")


def test_chebyshev_box_is_symmetric_about_center():
    res = chebyshev_box([1.0, 2.0], mass_target=0.9, N=2, mu=[3.0, -1.0])
    assert verify_symmetric_support(res.polytope, [3.0, -1.0])


def test_monte_carlo_conservative_uncorrelated():
    res = chebyshev_box([1.0, 1.0], np.eye(2), 0.95, 1)
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((1_000_000, 2))
    inside = np.mean(np.all(np.abs(pts) <= res.half_widths, axis=1))
    assert inside >= 0.95 - 0.002


def test_monte_carlo_conservative_correlated():
    corr = np.array([[1.0, 0.7], [0.7, 1.0]])
    sig = np.array([1.0, 2.0])
    res = chebyshev_box(sig, corr, 0.9, 2)
    cov = corr * np.outer(sig, sig)
    rng = np.random.default_rng(1)
    pts = rng.multivariate_normal(np.zeros(2), cov, size=1_000_000)
    inside = np.mean(np.all(np.abs(pts) <= res.half_widths, axis=1))
    assert inside >= per_stage_mass(0.9, 2) - 0.002


def test_conditional_mean_preserved_by_symmetric_truncation():
    res = truncate_gaussian_1d(5.0, 2.0, 0.9)
    rng = np.random.default_rng(2)
    d = rng.normal(5.0, 2.0, size=1_000_000)
    half = res.half_widths[0]
    kept = d[np.abs(d - 5.0) <= half]
    se = kept.std(ddof=1) / np.sqrt(kept.size)
    assert abs(kept.mean() - 5.0) <= 3 * se


# -- symmetric-support checks ------------------------------------------------


def test_symmetric_box_about_origin():
    assert verify_symmetric_support(Polytope.from_box([-1, -1], [1, 1]), [0, 0])


def test_shifted_box_about_origin_fails():
    assert not verify_symmetric_support(Polytope.from_box([0, 0], [2, 2]), [0, 0])


def test_shifted_box_about_its_center():
    assert verify_symmetric_support(Polytope.from_box([0, 0], [2, 2]), [1, 1])


def test_triangle_is_not_symmetric():
    tri = Polytope([[1, 1], [-1, 0], [0, -1]], [1, 0, 0])
    assert not verify_symmetric_support(tri, [0.25, 0.25])


def test_hexagon_is_symmetric():
    angles = np.arange(6) * np.pi / 3
    A = np.column_stack([np.cos(angles), np.sin(angles)])
    assert verify_symmetric_support(Polytope(A, np.ones(6)), [0, 0])


# -- the declared-distribution pipeline --------------------------------------


def test_spec_validation():
    with pytest.raises(MalformedInputError):
        DisturbanceSpec(kind="weird", mean=[0.0], horizon=1, confidence=0.9,
                        sigma=[1.0])
    with pytest.raises(MalformedInputError):
        DisturbanceSpec(kind="gaussian", mean=[0.0], horizon=1,
                        confidence=0.9, sigma=[-1.0])
    with pytest.raises(MalformedInputError):
        DisturbanceSpec(kind="gaussian", mean=[0.0], horizon=1,
                        confidence=1.2, sigma=[1.0])
    with pytest.raises(MalformedInputError):
        DisturbanceSpec(kind="gaussian", mean=[0.0, 0.0], horizon=1,
                        confidence=0.9, sigma=[1.0, 1.0],
                        corr=[[1.0, 0.3], [0.2, 1.0]])
    with pytest.raises(MalformedInputError):
        DisturbanceSpec(kind="polytopic-uniform", mean=[0.0], horizon=1)


def test_gaussian_pipeline_exact_product():
    d = DisturbanceSpec(kind="gaussian", mean=[0.0, 0.0], horizon=2,
                        confidence=0.9, sigma=[1.0, 2.0])
    out = truncate_disturbance(d)
    assert len(out) == 2
    m = per_stage_mass(0.9, 2)
    for res in out:
        assert res.method == "exact-gaussian"
        k = res.half_widths / np.array([1.0, 2.0])
        prod = np.prod(norm.cdf(k) - norm.cdf(-k))
        assert prod == pytest.approx(m, abs=1e-9)
        assert verify_symmetric_support(res.polytope, [0.0, 0.0])


def test_pipeline_recentres_per_stage():
    means = [[0.0, 0.0], [1.0, -1.0], [2.0, 0.5]]
    d = DisturbanceSpec(kind="gaussian", mean=means, horizon=3,
                        confidence=0.9, sigma=[1.0, 1.0])
    out = truncate_disturbance(d)
    for res, mu in zip(out, means):
        assert verify_symmetric_support(res.polytope, mu)
        assert res.polytope.contains(mu)


def test_declared_symmetric_uses_chebyshev():
    corr = np.array([[1.0, 0.3], [0.3, 1.0]])
    d = DisturbanceSpec(kind="declared-symmetric", mean=[0.0, 0.0], horizon=1,
                        confidence=0.9, sigma=[1.0, 1.0], corr=corr)
    out = truncate_disturbance(d)
    assert out[0].method == "chebyshev-bound"
    assert out[0].mass >= 0.9


def test_correlated_gaussian_uses_chebyshev():
    corr = np.array([[1.0, 0.5], [0.5, 1.0]])
    d = DisturbanceSpec(kind="gaussian", mean=[0.0, 0.0], horizon=1,
                        confidence=0.9, sigma=[1.0, 1.0], corr=corr)
    out = truncate_disturbance(d)
    assert out[0].method == "chebyshev-bound"


def test_bounded_kind_needs_no_truncation():
    d = DisturbanceSpec(kind="polytopic-uniform", mean=[0.0], horizon=1,
                        support=Polytope.from_box([-1], [1]))
    with pytest.raises(MalformedInputError):
        truncate_disturbance(d)
