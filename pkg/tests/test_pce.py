import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochlemma.errors import BasisMismatch, IndexOutOfRange, UnsupportedDistribution
from stochlemma.pce import (
    DisturbanceSpec,
    Gaussian,
    Generic,
    JointBasis,
    PceTrajectory,
    Uniform,
    build_joint_basis,
    disturbance_coeffs,
    evaluate,
    histogram_rows,
    mean,
    second_moment_quadratic,
    total_quadratic_cost,
    variance,
    write_histogram_csv,
)


def test_basis_size_for_aircraft(spec):
    # [PAPER] L = 1 + N (L_w - 1) with L_w = 4 for three affine germs
    assert build_joint_basis(spec, 10).L == 31
    assert build_joint_basis(spec, 25).L == 76


@settings(max_examples=50, deadline=None)
@given(N=st.integers(1, 12), n_w=st.integers(1, 4))
def test_index_maps_are_consistent(N, n_w):
    b = JointBasis(N=N, L_w=1 + n_w)
    seen = set()
    for k in range(N):
        for j in b.ik(k):
            assert b.k_prime(j) == k
            assert 1 <= b.within_index(j) <= n_w
            assert j == 1 + k * n_w + b.within_index(j) - 1
            seen.add(j)
    assert seen == set(range(1, b.L))
    assert b.k_prime(0) == 0


def test_index_out_of_range():
    b = JointBasis(N=3, L_w=2)
    with pytest.raises(IndexOutOfRange):
        b.k_prime(b.L)
    with pytest.raises(IndexOutOfRange):
        b.ik(3)


def test_disturbance_coefficients_are_exact(spec):
    # W_k = mean + sum_i std_i * germ_i, germs of unit variance
    b = build_joint_basis(spec, 4)
    c = disturbance_coeffs(b, spec, 2)
    np.testing.assert_array_equal(c[0], spec.mean)
    np.testing.assert_allclose(np.sum(c[1:] ** 2, axis=0), spec.variance, rtol=1e-15)
    assert np.count_nonzero(c[1:]) == spec.n_w


def test_uniform_moments():
    # [TRIVIAL] mean and variance of U(a, b)
    u = Uniform(-3.0, 3.0)
    assert u.mean == 0.0 and u.variance == pytest.approx(3.0)


def test_germs_are_standardized_and_reproducible(spec):
    g = spec.sample_germs(7, 0, 200_000)
    np.testing.assert_allclose(g.mean(axis=0), 0.0, atol=0.01)
    np.testing.assert_allclose(g.var(axis=0), 1.0, atol=0.01)
    # counter-based streams: a shorter draw is a prefix of a longer one
    np.testing.assert_array_equal(spec.sample_germs(7, 0, 50), g[:50])
    assert not np.array_equal(spec.sample_germs(8, 0, 50), g[:50])


def test_infinite_variance_rejected():
    with pytest.raises(UnsupportedDistribution):
        DisturbanceSpec((Generic(0.0, float("inf"), lambda r, n: r.standard_cauchy(n)),))


def test_spec_mismatch_rejected(spec):
    with pytest.raises(BasisMismatch):
        JointBasis(N=2, L_w=3).sample(spec, 4, 0)


def test_moment_formulas_match_sampling(spec):
    # [DERIVED: Monte-Carlo oracle] mean / variance of a random PCE signal
    rng = np.random.default_rng(0)
    b = build_joint_basis(spec, 3)
    tr = PceTrajectory(rng.normal(size=(3, b.size, 2)), b, 1, "y")
    phi, _ = b.sample(spec, 200_000, 3)
    X = evaluate(tr, phi)
    for k in (1, 2, 3):
        np.testing.assert_allclose(X[:, k - 1].mean(axis=0), mean(tr, k), atol=0.02)
        np.testing.assert_allclose(X[:, k - 1].var(axis=0), variance(tr, k), rtol=0.02)


def test_gaussian_moments_match_sampling():
    spec = DisturbanceSpec((Gaussian(1.0, 4.0),))
    g = spec.sample(0, 0, 100_000)
    assert g.mean() == pytest.approx(1.0, abs=0.03)
    assert g.var() == pytest.approx(4.0, rel=0.03)


def test_quadratic_cost_equals_expectation(spec):
    rng = np.random.default_rng(1)
    b = build_joint_basis(spec, 2)
    ty = PceTrajectory(rng.normal(size=(2, b.size, 3)), b, 1, "y")
    tu = PceTrajectory(rng.normal(size=(2, b.size, 1)), b, 1, "u")
    Q = np.diag([1.0, 2.0, 3.0])
    R = np.array([[0.5]])
    phi, _ = b.sample(spec, 400_000, 9)
    Y, U = evaluate(ty, phi), evaluate(tu, phi)
    mc = np.mean(np.einsum("nta,ab,ntb->n", Y, Q, Y) + np.einsum("nta,ab,ntb->n", U, R, U))
    assert total_quadratic_cost(ty, tu, Q, R) == pytest.approx(mc, rel=0.01)
    one = second_moment_quadratic(ty, tu, Q, R, 1)
    assert one < total_quadratic_cost(ty, tu, Q, R)


def test_histogram_density_integrates_to_one(tmp_path):
    samples = np.random.default_rng(0).normal(size=(1000, 2))
    rows = histogram_rows(samples, [1, 2], bins=10)
    for k in (1, 2):
        area = sum((r[2] - r[1]) * r[3] for r in rows if r[0] == k)
        assert area == pytest.approx(1.0)
    path = tmp_path / "h.csv"
    write_histogram_csv(path, samples, [1, 2], bins=10)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,bin_left,bin_right,density" and len(lines) == 21
