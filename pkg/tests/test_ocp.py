import numpy as np
import pytest

from oracles import pce_coefficient_recursion
from stochlemma import aircraft as ac
from stochlemma.errors import DimensionMismatch, Infeasible, InvalidBounds
from stochlemma.ocp import (
    ChanceConstraint,
    build_ocp,
    chebyshev_backoff,
    open_loop_experiment,
    recomputed_cost,
    reformulate_chance,
    solve_ocp,
)
from stochlemma.pce import JointBasis


@pytest.fixture(scope="module")
def basis10():
    return JointBasis(N=10, L_w=4)


@pytest.fixture(scope="module")
def init0():
    return ac.initial_window(np.random.default_rng(0))


def _con(kappa=3.0):
    return ChanceConstraint(0, -ac.Y1_BOUND, ac.Y1_BOUND, ac.CHANCE_LEVEL, kappa)


def test_decision_count(experiment, spec, basis10, init0):
    # [DERIVED: n_u (N + (L_w - 1) sum_{k'} (N - k')) = 10 + 3 * 55]
    p = build_ocp("I", experiment.undisturbed, basis10, spec, init0, ac.Q, ac.R)
    assert p.n_dec == 175
    p2 = build_ocp("II", experiment.disturbed, basis10, spec, init0, ac.Q, ac.R)
    assert p2.n_dec == 175


def test_unconstrained_problem_matches_model_based_qp(plant, experiment, spec, basis10, init0):
    # [DERIVED: dense QP built from the per-coefficient model recursion]
    p = build_ocp("I", experiment.undisturbed, basis10, spec, init0, ac.Q, ac.R)
    sol = solve_ocp(p)
    n = p.n_dec

    def outputs(x):
        return pce_coefficient_recursion(plant, basis10, spec, init0, p.input_coeffs(x))

    c = outputs(np.zeros(n)).reshape(-1)
    M = np.column_stack([outputs(e).reshape(-1) - c for e in np.eye(n)])
    # cost = |M x + c|^2 (Q = I) + |x|^2 (R = I)
    x_ref = np.linalg.solve(M.T @ M + np.eye(n), -M.T @ c)
    J_ref = float(np.sum((M @ x_ref + c) ** 2) + np.sum(x_ref**2))
    assert sol.cost == pytest.approx(J_ref, rel=1e-6)
    assert np.abs(sol.x - x_ref).max() < 1e-4 * max(1.0, np.abs(x_ref).max())


def test_schemes_agree(experiment, spec, basis10, init0):
    # [PAPER: equal closed-loop cost of the two data-driven schemes]
    s1 = solve_ocp(build_ocp("I", experiment.undisturbed, basis10, spec, init0, ac.Q, ac.R, [_con()]))
    s2 = solve_ocp(build_ocp("II", experiment.disturbed, basis10, spec, init0, ac.Q, ac.R, [_con()]))
    assert s1.cost == pytest.approx(s2.cost, rel=1e-4)
    assert np.abs(s1.u.coeffs - s2.u.coeffs).max() < 1e-4


def test_objective_consistency_and_convexity(experiment, spec, basis10, init0):
    # [DERIVED: second moments summed from the returned coefficients]
    p = build_ocp("I", experiment.undisturbed, basis10, spec, init0, ac.Q, ac.R, [_con()])
    sol = solve_ocp(p)
    assert sol.status == "optimal"
    assert sol.cost == pytest.approx(recomputed_cost(p, sol), rel=1e-6)
    H, _, _ = p.quadratic()
    eig = np.linalg.eigvalsh(H)
    assert eig.min() >= -1e-9 * np.abs(eig).max()
    # the cone rows hold at the solution
    assert min(r.slack(sol.x) for r in p.cone_rows()) > -1e-7
    # inputs are causal: no dependence on germs that are not realized yet
    U = sol.u.coeffs
    for j in range(1, basis10.L):
        assert not np.any(U[: basis10.k_prime(j), j])


def test_chance_rows_shape(experiment, spec, basis10, init0):
    # [TRIVIAL] two rows per step k = 2..N
    p = build_ocp("I", experiment.undisturbed, basis10, spec, init0, ac.Q, ac.R, [_con()])
    rows = p.cone_rows()
    assert len(rows) == 2 * 9
    *_, dims, _ = p.cone_program()
    assert dims.size == sum(1 + r.C.shape[0] for r in rows if np.any(r.C) or np.any(r.d)) + dims.l


def test_reformulation_examples():
    # [PAPER: mean +- 3 std inside +-0.349]
    row = _con()
    a = np.array([1.0, 0.0])
    lo, up = reformulate_chance(row, (a, 0.1), (np.array([[0.0, 1.0]]), np.array([0.05])))
    x = np.array([0.0, 0.0])
    # mean 0.1, std 0.05: 0.1 + 0.15 <= 0.349 and 0.1 - 0.15 >= -0.349
    assert up.slack(x) == pytest.approx(0.349 - 0.25)
    assert lo.slack(x) == pytest.approx(0.1 - 0.15 + 0.349)
    # [TRIVIAL] no spread: a box on the mean
    lo0, up0 = reformulate_chance(row, (a, 0.3), (np.zeros((0, 2)), np.zeros(0)))
    assert up0.slack(x) == pytest.approx(0.049) and lo0.slack(x) == pytest.approx(0.649)
    # [TRIVIAL] kappa = 0 ignores the spread
    z = ChanceConstraint(0, -1.0, 1.0, 0.8, 0.0)
    lo1, up1 = reformulate_chance(z, (a, 0.5), (np.array([[0.0, 1.0]]), np.array([10.0])))
    assert up1.slack(x) == pytest.approx(0.5) and lo1.slack(x) == pytest.approx(1.5)


def test_invalid_constraints():
    with pytest.raises(InvalidBounds):
        ChanceConstraint(0, 1.0, -1.0)
    with pytest.raises(InvalidBounds):
        ChanceConstraint(0, -1.0, 1.0, level=1.0)
    with pytest.raises(InvalidBounds):
        ChanceConstraint(0, -1.0, 1.0, kappa=-1.0)
    # [DERIVED: two-sided Chebyshev at level 0.8]
    assert chebyshev_backoff(0.8) == pytest.approx(np.sqrt(5.0))


def test_large_backoff_is_infeasible(experiment, spec, basis10, init0):
    # [DERIVED: the germ of step k-1 reaches Y_k with std 0.1/sqrt(3) whatever the input]
    assert 10.0 * 0.1 / np.sqrt(3.0) > ac.Y1_BOUND
    p = build_ocp("I", experiment.undisturbed, basis10, spec, init0, ac.Q, ac.R, [_con(10.0)])
    with pytest.raises(Infeasible):
        solve_ocp(p)


def test_bad_arguments(experiment, spec, basis10, init0):
    with pytest.raises(DimensionMismatch):
        build_ocp("IV", experiment.undisturbed, basis10, spec, init0, ac.Q, ac.R)
    with pytest.raises(DimensionMismatch):
        build_ocp("I", experiment.undisturbed, basis10, spec, init0, np.eye(2), ac.R)
    with pytest.raises(DimensionMismatch):
        build_ocp("I", experiment.undisturbed, basis10, spec, init0, ac.Q, np.zeros((1, 1)))
    p = build_ocp("I", experiment.undisturbed, basis10, spec, init0, ac.Q, ac.R, [ChanceConstraint(5, -1, 1)])
    with pytest.raises(DimensionMismatch):
        p.cone_rows()


@pytest.fixture(scope="module")
def open_loop():
    return open_loop_experiment(0, N=25, n_samples=10_000)


def test_open_loop_monte_carlo(open_loop):
    # [PAPER: chance constraint holds with high probability]
    assert open_loop.probability.shape == (24,)
    assert open_loop.min_probability() >= 0.8
    assert open_loop.samples.shape == (10_000, 25, 3)


def test_open_loop_second_output_heads_to_zero(open_loop):
    # [PAPER: second output ends near zero] measured on the mean
    mean = open_loop.samples[:, :, 1].mean(axis=0)
    assert abs(mean[-1]) < 0.1 * abs(mean[0])


@pytest.mark.xfail(strict=True, reason="spread of the second output grows over the horizon; see the decision ledger")
def test_open_loop_second_output_narrows(open_loop):
    # [PAPER: narrow distribution at the end] checked literally as std[Y2_25] < std[Y2_2]
    std = open_loop.samples[:, :, 1].std(axis=0)
    assert std[24] < std[1]


def test_histogram_export(tmp_path):
    r = open_loop_experiment(0, N=5, n_samples=500, out_dir=tmp_path, bins=10)
    assert [p.name for p in r.histogram_files] == ["pdf_y1.csv", "pdf_y2.csv"]
    assert all(p.stat().st_size > 0 for p in r.histogram_files)
