"""Chance-constrained stochastic optimal control in PCE coefficients.

The output coefficients of every basis index are eliminated through the
affine maps of the data-driven predictors, leaving only the free input
coefficients as decisions. Each two-sided chance constraint becomes a pair
of second-order-cone rows on the mean and the spread of one output
component.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import CausalityViolation, DimensionMismatch, InvalidBounds
from .hankel import check_assumption_pe, check_lemma1_pe
from .lti import RealTrajectory
from .pce import DisturbanceSpec, JointBasis, PceTrajectory, total_quadratic_cost
from .predictor import (
    DisturbedData,
    UndisturbedData,
    lemma1_disturbance_window,
    precompute_yw,
)
from .socp import ConeDims, ConeSolution, solve_cone_qp

SCHEMES = ("I", "II", "III")
DEFAULT_KAPPA = 3.0


def chebyshev_backoff(level: float) -> float:
    """Distribution-free two-sided backoff ``1 / sqrt(1 - level)``."""
    if not 0.0 < level < 1.0:
        raise InvalidBounds(f"probability level {level} outside (0, 1)")
    return 1.0 / math.sqrt(1.0 - level)


@dataclass(frozen=True)
class ChanceConstraint:
    """``P[lower <= Y^c_k <= upper] >= level`` for ``k`` in ``steps``.

    ``component`` is zero-based. ``steps`` defaults to ``2..N``.
    """

    component: int
    lower: float
    upper: float
    level: float = 0.8
    kappa: float = DEFAULT_KAPPA
    steps: Optional[tuple] = None

    def __post_init__(self):
        if not self.lower < self.upper:
            raise InvalidBounds(f"lower bound {self.lower} not below upper bound {self.upper}")
        if not 0.0 < self.level < 1.0:
            raise InvalidBounds(f"probability level {self.level} outside (0, 1)")
        if self.kappa < 0:
            raise InvalidBounds("backoff factor must be nonnegative")

    def step_range(self, N: int) -> tuple:
        steps = tuple(range(2, N + 1)) if self.steps is None else tuple(self.steps)
        if any(not 1 <= k <= N for k in steps):
            raise DimensionMismatch(f"chance-constraint steps {steps} outside [1, {N}]")
        return steps


@dataclass
class SocRow:
    """Cone row ``a.x + b >= ||C x + d||``."""

    a: np.ndarray
    b: float
    C: np.ndarray
    d: np.ndarray

    def slack(self, x: np.ndarray) -> float:
        return float(self.a @ x + self.b - np.linalg.norm(self.C @ x + self.d))


def reformulate_chance(row: ChanceConstraint, mean_map, std_map):
    """Conservative cone rows for one chance constraint at one step.

    ``mean_map = (a, b)`` gives ``E[Y] = a.x + b``; ``std_map = (C, d)``
    stacks the non-constant coefficients ``C x + d`` so that
    ``std[Y] = ||C x + d||``. Returns ``(lower_row, upper_row)`` encoding
    ``lower <= mean - kappa std`` and ``mean + kappa std <= upper``.
    """
    a, b = np.asarray(mean_map[0], dtype=float), float(mean_map[1])
    C, d = np.asarray(std_map[0], dtype=float), np.asarray(std_map[1], dtype=float)
    k = row.kappa
    lower = SocRow(a.copy(), b - row.lower, k * C, k * d)
    upper = SocRow(-a, row.upper - b, k * C, k * d)
    return lower, upper


# ---------------------------------------------------------------- assembly


@dataclass
class IndexMap:
    """``vec(y^j) = A x_j + c`` with ``x_j = vec(u^j_[k'+1, N])``."""

    j: int
    k_prime: int
    A: np.ndarray
    c: np.ndarray
    offset: int

    @property
    def n_dec(self) -> int:
        return self.A.shape[1]


@dataclass
class OcpProblem:
    scheme: str
    N: int
    Q: np.ndarray
    R: np.ndarray
    basis: JointBasis
    spec: DisturbanceSpec
    init: RealTrajectory
    constraints: List[ChanceConstraint]
    maps: List[IndexMap]
    n_u: int
    n_y: int
    certificates: list = field(default_factory=list)
    hankel_cells: int = 0

    @property
    def n_dec(self) -> int:
        return sum(m.n_dec for m in self.maps)

    def _slice(self, m: IndexMap) -> slice:
        return slice(m.offset, m.offset + m.n_dec)

    def input_coeffs(self, x: np.ndarray) -> np.ndarray:
        U = np.zeros((self.N, self.basis.size, self.n_u))
        for m in self.maps:
            U[m.k_prime :, m.j] = x[self._slice(m)].reshape(-1, self.n_u)
        return U

    def output_coeffs(self, x: np.ndarray) -> np.ndarray:
        Y = np.zeros((self.N, self.basis.size, self.n_y))
        for m in self.maps:
            Y[:, m.j] = (m.A @ x[self._slice(m)] + m.c).reshape(self.N, self.n_y)
        return Y

    def quadratic(self):
        """Objective as ``(P, q, const)`` with value ``x'Px/2 + q'x + const``."""
        n = self.n_dec
        P = np.zeros((n, n))
        q = np.zeros(n)
        const = 0.0
        Qb = np.kron(np.eye(self.N), self.Q)
        for m in self.maps:
            sl = self._slice(m)
            Rb = np.kron(np.eye(self.N - m.k_prime), self.R)
            QA = Qb @ m.A
            P[sl, sl] = 2.0 * (m.A.T @ QA + Rb)
            q[sl] = 2.0 * (QA.T @ m.c)
            const += float(m.c @ Qb @ m.c)
        return 0.5 * (P + P.T), q, const

    def cone_rows(self) -> List[SocRow]:
        n = self.n_dec
        rows = []
        for con in self.constraints:
            c = con.component
            if not 0 <= c < self.n_y:
                raise DimensionMismatch(f"constrained component {c} outside [0, {self.n_y})")
            for k in con.step_range(self.N):
                r = (k - 1) * self.n_y + c
                a = np.zeros(n)
                m0 = self.maps[0]
                a[self._slice(m0)] = m0.A[r]
                b = m0.c[r]
                active = [m for m in self.maps[1:] if m.k_prime < k]
                C = np.zeros((len(active), n))
                d = np.zeros(len(active))
                for i, m in enumerate(active):
                    C[i, self._slice(m)] = m.A[r]
                    d[i] = m.c[r]
                rows.extend(reformulate_chance(con, (a, b), (C, d)))
        return rows

    def cone_program(self):
        P, q, const = self.quadratic()
        rows = self.cone_rows()
        if not rows:
            return P, q, None, None, ConeDims(), const
        # rows without a spread term are plain linear inequalities
        lin = [r for r in rows if not np.any(r.C) and not np.any(r.d)]
        soc = [r for r in rows if np.any(r.C) or np.any(r.d)]
        # Gx + s = h with s = (a.x + b, C x + d) in the cone
        G = np.vstack([-r.a[None, :] for r in lin] + [np.vstack([-r.a[None, :], -r.C]) for r in soc])
        h = np.concatenate([[r.b] for r in lin] + [np.concatenate([[r.b], r.d]) for r in soc])
        dims = ConeDims(len(lin), tuple(1 + r.C.shape[0] for r in soc))
        return P, q, G, h, dims, const

    def summary(self) -> dict:
        return {
            "scheme": self.scheme,
            "N": self.N,
            "n_decisions": self.n_dec,
            "basis_size": self.basis.size,
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "constraints": [
                {"component": c.component, "lower": c.lower, "upper": c.upper, "level": c.level, "kappa": c.kappa}
                for c in self.constraints
            ],
            "init": {"u": self.init.u.tolist(), "y": self.init.y.tolist(), "start": self.init.start},
            "hankel_cells": self.hankel_cells,
            "certificates": [c.to_dict() for c in self.certificates],
        }


@dataclass
class OcpSolution:
    u: PceTrajectory
    y: PceTrajectory
    cost: float
    status: str
    iterations: int
    kkt_residuals: dict
    x: np.ndarray
    solver: Optional[ConeSolution] = None

    def first_input(self) -> np.ndarray:
        """Mean input of the first step."""
        return self.u.coeffs[0, 0].copy()

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "cost": self.cost,
            "iterations": self.iterations,
            "kkt_residuals": self.kkt_residuals,
            "u_coeffs": self.u.coeffs.tolist(),
            "y_coeffs": self.y.coeffs.tolist(),
        }


def _undisturbed_maps(dd: UndisturbedData, basis, spec, init, n_u, n_y):
    ell, N = dd.ell, basis.N
    pattern = spec.step_pattern()
    maps, cells, offset = [], 0, 0
    # mean: measured window plus the response to E[W]
    p = dd.predictor(N)
    cells += p.P.size + p.Yf.size
    Mu = p.input_map()
    c0 = Mu[:, : ell * n_u] @ init.u.reshape(-1) + p.output_init_map() @ init.y.reshape(-1)
    c0 = c0 + np.cumsum(precompute_yw(dd, spec.mean, N), axis=0).reshape(-1)
    maps.append(IndexMap(0, 0, Mu[:, ell * n_u :], c0, 0))
    offset += N * n_u
    for j in range(1, basis.L):
        kp = basis.k_prime(j)
        nd = (N - kp) * n_u
        A = np.zeros((N * n_y, nd))
        c = np.zeros(N * n_y)
        c[kp * n_y : (kp + 1) * n_y] = pattern[basis.within_index(j)]
        h = N - kp - 1
        if h > 0:
            pj = dd.predictor(h)
            cells += pj.P.size + pj.Yf.size
            y_init = np.zeros((ell, n_y))
            y_init[-1] = pattern[basis.within_index(j)]
            # u window: (l-1) zeros, then u^j_{k'+1..N}
            A[(kp + 1) * n_y :] = pj.input_map()[:, (ell - 1) * n_u :]
            c[(kp + 1) * n_y :] = pj.output_init_map() @ y_init.reshape(-1)
        maps.append(IndexMap(j, kp, A, c, offset))
        offset += nd
    return maps, cells


def _disturbed_maps(dd: DisturbedData, basis, spec, init, n_u, n_y, share: bool):
    ell, N = dd.ell, basis.N
    pattern = spec.step_pattern()
    maps, cells, offset = [], 0, 0
    p = None
    for j in range(basis.L):
        if p is None or not share:
            p = dd.predictor()
            cells += p.P.size + p.Yf.size
        kp = basis.k_prime(j)
        Mu = p.input_map()
        w_win = lemma1_disturbance_window(basis, spec, ell, j).reshape(-1)
        if j == 0:
            c = Mu[:, : ell * n_u] @ init.u.reshape(-1) + p.output_init_map() @ init.y.reshape(-1)
            c = c + p.disturbance_map() @ w_win
            A = Mu[:, ell * n_u :].copy()
        else:
            c = p.disturbance_map() @ w_win
            A = Mu[:, (ell + kp) * n_u :].copy()
            # outputs up to k'+1 are fixed by causality; pin them after a check
            head = (kp + 1) * n_y
            exact = np.zeros(head)
            exact[kp * n_y :] = pattern[basis.within_index(j)]
            scale = 1.0 + np.abs(c).max() + np.abs(A).max()
            dev = max(np.abs(c[:head] - exact).max(), np.abs(A[:head]).max(initial=0.0))
            if dev > 1e-6 * scale:
                raise CausalityViolation(f"index {j}: disturbance-data predictor breaks causality by {dev:.3e}")
            c[:head] = exact
            A[:head] = 0.0
        maps.append(IndexMap(j, kp, A, c, offset))
        offset += A.shape[1]
    return maps, cells


def build_ocp(
    scheme: str,
    data: RealTrajectory,
    basis: JointBasis,
    spec: DisturbanceSpec,
    init: RealTrajectory,
    Q,
    R,
    constraints: Sequence[ChanceConstraint] = (),
    share: bool = False,
    ridge: float = 0.0,
) -> OcpProblem:
    """Assemble the stochastic OCP for one scheme.

    Schemes ``I`` and ``III`` take undisturbed input-output data (recorded
    or synthesized); scheme ``II`` takes disturbed data with the recorded
    disturbance. With ``share=False`` every basis index builds its own
    Hankel system, so assembly cost tracks the data volume of each scheme.
    """
    if scheme not in SCHEMES:
        raise DimensionMismatch(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if basis.n_init:
        raise DimensionMismatch("the OCP takes a measured (deterministic) initial window")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n_u, n_y, ell, N = init.n_u, init.n_y, len(init), basis.N
    if Q.shape != (n_y, n_y) or R.shape != (n_u, n_u):
        raise DimensionMismatch("weight shapes do not match the signal dimensions")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-12 or np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
        raise DimensionMismatch("Q must be positive semidefinite and R positive definite")
    if spec.n_w != n_y:
        raise DimensionMismatch("disturbance enters every output: n_w must equal n_y")
    if scheme == "II":
        dd = DisturbedData(data, ell, N, ridge=ridge)
        certs = [check_lemma1_pe(data.u, data.y, data.w, ell, N)]
        maps, cells = _disturbed_maps(dd, basis, spec, init, n_u, n_y, share)
    else:
        dd = UndisturbedData(data, ell, N, share=share, ridge=ridge)
        certs = [check_assumption_pe(data.u, data.y, ell, N)]
        maps, cells = _undisturbed_maps(dd, basis, spec, init, n_u, n_y)
    return OcpProblem(scheme, N, Q, R, basis, spec, init, list(constraints), maps, n_u, n_y, certs, cells)


def solve_ocp(p: OcpProblem, gap_tol: float = 1e-9, feas_tol: float = 1e-8, max_iter: int = 100) -> OcpSolution:
    P, q, G, h, dims, const = p.cone_program()
    sol = solve_cone_qp(P, q, G, h, dims, gap_tol=gap_tol, feas_tol=feas_tol, max_iter=max_iter)
    x = sol.x
    U = PceTrajectory(p.input_coeffs(x), p.basis, 1, "u")
    Y = PceTrajectory(p.output_coeffs(x), p.basis, 1, "y")
    cost = float(sol.primal_objective + const)
    kkt = {"primal": sol.primal_infeasibility, "dual": sol.dual_infeasibility, "gap": sol.gap}
    return OcpSolution(U, Y, cost, sol.status, sol.iterations, kkt, x, sol)


def recomputed_cost(p: OcpProblem, s: OcpSolution) -> float:
    return total_quadratic_cost(s.y, s.u, p.Q, p.R)


@dataclass
class OpenLoopResult:
    problem: OcpProblem
    solution: OcpSolution
    samples: np.ndarray
    probability: np.ndarray
    steps: tuple
    histogram_files: list = field(default_factory=list)

    def min_probability(self) -> float:
        return float(self.probability.min())

    def to_dict(self) -> dict:
        return {
            "cost": self.solution.cost,
            "status": self.solution.status,
            "iterations": self.solution.iterations,
            "steps": list(self.steps),
            "probability": self.probability.tolist(),
            "min_probability": self.min_probability(),
            "n_samples": int(self.samples.shape[0]),
            "histograms": [str(p) for p in self.histogram_files],
        }


def open_loop_experiment(
    seed: int = 0,
    N: int = 25,
    scheme: str = "I",
    kappa: float = DEFAULT_KAPPA,
    n_samples: int = 10_000,
    out_dir=None,
    bins: int = 40,
    data=None,
    init: Optional[RealTrajectory] = None,
    init_spread: float = 1.0,
    component: int = 0,
    spec: Optional[DisturbanceSpec] = None,
    Q=None,
    R=None,
    constraint: Optional[ChanceConstraint] = None,
    solver: Optional[dict] = None,
) -> OpenLoopResult:
    """OCP from one sampled initial window, with a Monte-Carlo check of the
    chance constraint and per-step output histograms.

    Unless overridden, plant data, weights and the constraint are those of
    the aircraft benchmark.
    """
    from pathlib import Path

    from . import aircraft as ac
    from . import streams
    from .pce import evaluate, write_histogram_csv

    spec = spec or ac.disturbance_spec()
    if data is None:
        data = ac.prepare_data(seed, synthesize=scheme == "III").for_scheme(scheme)
    if init is None:
        init = ac.initial_window(streams.stream(seed, streams.INIT, 0), spread=init_spread)
    basis = JointBasis(N=N, L_w=1 + spec.n_w)
    con = constraint or ChanceConstraint(component, -ac.Y1_BOUND, ac.Y1_BOUND, ac.CHANCE_LEVEL, kappa)
    component = con.component
    problem = build_ocp(scheme, data, basis, spec, init, ac.Q if Q is None else Q, ac.R if R is None else R, [con])
    sol = solve_ocp(problem, **(solver or {}))
    phi, _ = basis.sample(spec, n_samples, streams.substream_seed(seed, streams.GERMS))
    Y = evaluate(sol.y, phi)
    steps = con.step_range(N)
    idx = np.array(steps) - 1
    inside = (Y[:, idx, component] >= con.lower) & (Y[:, idx, component] <= con.upper)
    files = []
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for c in range(min(2, problem.n_y)):
            path = out / f"pdf_y{c + 1}.csv"
            write_histogram_csv(path, Y[:, :, c], range(1, N + 1), bins)
            files.append(path)
    return OpenLoopResult(problem, sol, Y, inside.mean(axis=0), steps, files)
