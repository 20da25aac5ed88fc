"""Data-driven propagation of PCE coefficient trajectories.

Two families of predictors are provided:

* ``propagate_*``: built from undisturbed input-output data only. The mean
  (``j = 0``) is propagated with the measured initial window plus the
  precomputed response to ``E[W]``; every disturbance index ``j >= 1`` is a
  disturbance-free subsystem whose only excitation is the initial output
  ``y^j_{k'(j)+1} = w^{I(j)}``, so its horizon shrinks to ``N - k'(j)``.
* ``predict_lemma1``: the disturbance-data predictor that stacks input,
  output and disturbance Hankel blocks and solves one system per index.

All solves are minimum-norm least squares on the pinned rows followed by
evaluation of the free output rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import (
    CausalityViolation,
    DimensionMismatch,
    IndexOutOfRange,
    InfeasibleInit,
    NotPersistentlyExciting,
    TooShort,
)
from .hankel import (
    RANK_RTOL,
    check_assumption_pe,
    check_lemma1_pe,
    hankel,
    is_persistently_exciting,
    numerical_rank,
)
from .lti import RealTrajectory, pinv
from .pce import DisturbanceSpec, JointBasis, PceTrajectory, disturbance_coeffs

PIN_TOL = 1e-6


class WindowPredictor:
    """Hankel predictor for a fixed initial-window length and horizon.

    Pinned rows are ``H_{l+h}(u)``, optionally ``H_{l+h}(w)``, and the first
    ``l`` block rows of ``H_{l+h}(y)``; the last ``h`` block rows of
    ``H_{l+h}(y)`` are the predicted outputs. Only the first ``n_cols``
    columns are used, so predictors of different horizons share the same
    combination-vector dimension.
    """

    def __init__(self, u, y, ell: int, horizon: int, n_cols: Optional[int] = None, w=None, ridge: float = 0.0):
        u = np.asarray(u, dtype=float).reshape(len(u), -1)
        y = np.asarray(y, dtype=float).reshape(len(y), -1)
        depth = ell + horizon
        if len(u) < depth:
            raise TooShort(f"data length {len(u)} < l + horizon = {depth}")
        self.ell, self.horizon = ell, horizon
        self.n_u, self.n_y = u.shape[1], y.shape[1]
        self.n_w = 0 if w is None else np.asarray(w).reshape(len(w), -1).shape[1]
        Hu = hankel(u, depth)
        Hy = hankel(y, depth)
        cols = Hu.shape[1] if n_cols is None else n_cols
        if cols > Hu.shape[1]:
            raise TooShort(f"requested {cols} columns, data provide {Hu.shape[1]}")
        blocks = [Hu[:, :cols]]
        if w is not None:
            blocks.append(hankel(np.asarray(w, dtype=float).reshape(len(w), -1), depth)[:, :cols])
        blocks.append(Hy[: ell * self.n_y, :cols])
        self.P = np.vstack(blocks)
        self.Yf = Hy[ell * self.n_y :, :cols]
        self.n_g = cols
        self.rank, self.singular_values = numerical_rank(self.P, RANK_RTOL)
        if self.rank < self.P.shape[0]:
            raise NotPersistentlyExciting(
                f"pinned Hankel rows have rank {self.rank} < {self.P.shape[0]} (l={ell}, horizon={horizon})"
            )
        if ridge > 0.0:
            # g = P' (P P' + ridge I)^{-1} rhs
            self.P_pinv = self.P.T @ np.linalg.inv(self.P @ self.P.T + ridge * np.eye(self.P.shape[0]))
        else:
            self.P_pinv = pinv(self.P)
        self.M = self.Yf @ self.P_pinv

    # column offsets of each pinned group inside the right-hand side
    @property
    def _splits(self):
        nu_rows = (self.ell + self.horizon) * self.n_u
        nw_rows = (self.ell + self.horizon) * self.n_w
        return nu_rows, nu_rows + nw_rows

    def rhs(self, u_window, y_init, w_window=None) -> np.ndarray:
        parts = [np.asarray(u_window, dtype=float).reshape(-1)]
        if self.n_w:
            parts.append(np.asarray(w_window, dtype=float).reshape(-1))
        parts.append(np.asarray(y_init, dtype=float).reshape(-1))
        r = np.concatenate(parts)
        if r.shape[0] != self.P.shape[0]:
            raise DimensionMismatch(f"right-hand side has {r.shape[0]} rows, expected {self.P.shape[0]}")
        return r

    def solve(self, rhs: np.ndarray, check: bool = True):
        """Return ``(y_future, g, residual)`` for a stacked right-hand side."""
        g = self.P_pinv @ rhs
        residual = float(np.linalg.norm(self.P @ g - rhs))
        if check and residual > PIN_TOL * (1.0 + np.linalg.norm(rhs)):
            raise InfeasibleInit(f"pinned rows not attainable, residual {residual:.3e}")
        return (self.Yf @ g).reshape(self.horizon, self.n_y), g, residual

    def predict(self, u_window, y_init, w_window=None):
        return self.solve(self.rhs(u_window, y_init, w_window))[0]

    def input_map(self) -> np.ndarray:
        """Columns of the affine map acting on the stacked ``u`` window."""
        return self.M[:, : self._splits[0]]

    def disturbance_map(self) -> np.ndarray:
        a, b = self._splits
        return self.M[:, a:b]

    def output_init_map(self) -> np.ndarray:
        return self.M[:, self._splits[1] :]


def _ng(T: int, ell: int, N: int) -> int:
    n_g = T - ell - N + 1
    if n_g < 1:
        raise TooShort(f"data length {T} too short for l={ell}, N={N}")
    return n_g


class UndisturbedData:
    """Undisturbed input-output record with predictors for every horizon up to ``N``.

    ``share=True`` caches one predictor per horizon; ``share=False`` builds a
    fresh one on every request (each basis index then assembles its own
    Hankel system).
    """

    def __init__(self, data: RealTrajectory, ell: int, N: int, share: bool = True, ridge: float = 0.0):
        self.data, self.ell, self.N = data, ell, N
        self.n_g = _ng(len(data), ell, N)
        self.share = share
        self.ridge = ridge
        self._cache: Dict[int, WindowPredictor] = {}

    @property
    def n_u(self) -> int:
        return self.data.n_u

    @property
    def n_y(self) -> int:
        return self.data.n_y

    def predictor(self, horizon: int) -> WindowPredictor:
        if not 0 <= horizon <= self.N:
            raise DimensionMismatch(f"horizon {horizon} outside [0, {self.N}]")
        if self.share and horizon in self._cache:
            return self._cache[horizon]
        p = WindowPredictor(self.data.u, self.data.y, self.ell, horizon, self.n_g, ridge=self.ridge)
        if self.share:
            self._cache[horizon] = p
        return p


def _as_data(data, ell, N) -> UndisturbedData:
    return data if isinstance(data, UndisturbedData) else UndisturbedData(data, ell, N)


def predict_undisturbed(data, init: RealTrajectory, u_future) -> np.ndarray:
    """Output continuation ``y_[1,N]`` of the undisturbed dynamics."""
    ell = len(init)
    u_future = np.asarray(u_future, dtype=float).reshape(-1, init.n_u)
    N = u_future.shape[0]
    dd = _as_data(data, ell, N)
    p = dd.predictor(N)
    return p.predict(np.vstack([init.u, u_future]), init.y)


def precompute_yw(data, mean_w, N: int, ell: Optional[int] = None) -> np.ndarray:
    """Free response ``y^w_[1,N]`` to the initial output ``y^w_1 = E[W]``."""
    dd = data if isinstance(data, UndisturbedData) else UndisturbedData(data, ell, N)
    ell, n_u = dd.ell, dd.n_u
    mean_w = np.asarray(mean_w, dtype=float).reshape(-1)
    out = np.zeros((N, mean_w.shape[0]))
    out[0] = mean_w
    if N > 1:
        y_init = np.zeros((ell, mean_w.shape[0]))
        y_init[-1] = mean_w
        out[1:] = dd.predictor(N - 1).predict(np.zeros((ell + N - 1, n_u)), y_init)
    return out


def propagate_mean(data, init: RealTrajectory, u0, mean_w, yw: Optional[np.ndarray] = None):
    """Mean output ``y^0_[1,N]`` and the combination vector ``g^0``."""
    ell = len(init)
    u0 = np.asarray(u0, dtype=float).reshape(-1, init.n_u)
    N = u0.shape[0]
    dd = _as_data(data, ell, N)
    p = dd.predictor(N)
    y_u, g, res = p.solve(p.rhs(np.vstack([init.u, u0]), init.y))
    if yw is None:
        yw = precompute_yw(dd, mean_w, N)
    return y_u + np.cumsum(yw, axis=0), g, res


def _pce_j_window(basis: JointBasis, j: int, w_pattern: np.ndarray, u_free: np.ndarray, ell: int, n_u: int, n_y: int):
    kp = basis.k_prime(j)
    u_win = np.zeros((ell, n_u))
    u_win[-1] = u_free[0]
    y_init = np.zeros((ell, n_y))
    y_init[-1] = w_pattern[basis.within_index(j)]
    return kp, np.vstack([u_win, u_free[1:]]), y_init


def propagate_pce_j(data, basis: JointBasis, j: int, u_free, w_pattern, ell: Optional[int] = None):
    """Coefficient trajectories ``(u^j, y^j)_[1,N]`` of one disturbance index.

    ``u_free`` holds the ``N - k'(j)`` inputs ``u^j_[k'(j)+1, N]``; earlier
    inputs and outputs are zero by causality and ``y^j_{k'(j)+1}`` is pinned
    to the germ coefficient ``w^{I(j)}``. Returns ``(u^j, y^j, g^j)``.
    """
    if not 1 <= j < basis.L:
        raise IndexOutOfRange(f"disturbance index {j} outside [1, {basis.L - 1}]")
    N = basis.N
    dd = data if isinstance(data, UndisturbedData) else UndisturbedData(data, ell, N)
    w_pattern = np.asarray(w_pattern, dtype=float)
    n_y = w_pattern.shape[1]
    kp = basis.k_prime(j)
    u_free = np.asarray(u_free, dtype=float).reshape(N - kp, dd.n_u)
    _, u_stack, y_init = _pce_j_window(basis, j, w_pattern, u_free, dd.ell, dd.n_u, n_y)
    u = np.zeros((N, dd.n_u))
    y = np.zeros((N, n_y))
    u[kp:] = u_free
    y[kp] = y_init[-1]
    g = None
    h = N - kp - 1
    if h > 0:
        p = dd.predictor(h)
        y[kp + 1 :], g, _ = p.solve(p.rhs(u_stack, y_init))
    return u, y, g


@dataclass
class Prediction:
    N: int
    u: PceTrajectory
    y: PceTrajectory
    g: Dict[int, np.ndarray] = field(default_factory=dict)
    residuals: Dict[int, float] = field(default_factory=dict)
    certificates: list = field(default_factory=list)

    @property
    def basis(self) -> JointBasis:
        return self.y.basis

    def mean(self) -> np.ndarray:
        return self.y.coeffs[:, 0, :].copy()

    def variance(self) -> np.ndarray:
        return np.sum(self.y.coeffs[:, 1:, :] ** 2, axis=1)

    def check_causality(self, spec: DisturbanceSpec) -> None:
        """Assert the causal zero pattern and initial-value pins of every index."""
        pattern = spec.step_pattern()
        b = self.basis
        for j in range(1, b.L):
            kp = b.k_prime(j)
            if np.any(self.u.coeffs[:kp, j] != 0) or np.any(self.y.coeffs[:kp, j] != 0):
                raise CausalityViolation(f"index {j} has nonzero coefficients before step {kp + 1}")
            if not np.array_equal(self.y.coeffs[kp, j], pattern[b.within_index(j)]):
                raise CausalityViolation(f"index {j} initial value not pinned to its germ coefficient")

    def report(self) -> dict:
        return {
            "N": self.N,
            "basis_size": self.basis.size,
            "residuals": {str(k): v for k, v in self.residuals.items()},
            "max_residual": max(self.residuals.values(), default=0.0),
            "certificates": [c.to_dict() for c in self.certificates],
            "n_g": {str(k): int(v.shape[0]) for k, v in self.g.items() if v is not None},
        }


def _is_causal(basis: JointBasis, U: np.ndarray) -> bool:
    return all(not np.any(U[: basis.k_prime(j), j]) for j in range(1, basis.L))


def _pin_causal_outputs(basis: JointBasis, spec: DisturbanceSpec, Y: np.ndarray, rtol: float = 1e-6) -> None:
    """Replace the causally determined output coefficients by their exact
    values after checking the solve reproduced them."""
    pattern = spec.step_pattern()
    scale = 1.0 + np.abs(Y).max()
    for j in range(1, basis.L):
        kp = basis.k_prime(j)
        exact = pattern[basis.within_index(j)]
        dev = max(np.abs(Y[:kp, j]).max(initial=0.0), np.abs(Y[kp, j] - exact).max())
        if dev > rtol * scale:
            raise CausalityViolation(f"index {j}: predicted outputs violate causality by {dev:.3e}")
        Y[:kp, j] = 0.0
        Y[kp, j] = exact


def check_input_causality(basis: JointBasis, u_coeffs: np.ndarray) -> None:
    for j in range(1, basis.L):
        kp = basis.k_prime(j)
        if np.any(u_coeffs[:kp, j] != 0):
            raise CausalityViolation(f"input coefficient {j} is nonzero before step {kp + 1}")


def propagate_all(data, basis: JointBasis, spec: DisturbanceSpec, init: RealTrajectory, u_coeffs) -> Prediction:
    """Propagate every basis index from undisturbed data.

    ``u_coeffs`` is a :class:`PceTrajectory` (or array) of shape
    ``(N, basis.size, n_u)`` over times ``1..N``; initial-condition
    directions, if any, are propagated with zero initial window.
    """
    N, ell = basis.N, len(init)
    U = np.asarray(getattr(u_coeffs, "coeffs", u_coeffs), dtype=float)
    if U.shape != (N, basis.size, init.n_u):
        raise DimensionMismatch(f"input coefficients have shape {U.shape}, expected {(N, basis.size, init.n_u)}")
    check_input_causality(basis, U)
    dd = _as_data(data, ell, N)
    pattern = spec.step_pattern()
    Y = np.zeros((N, basis.size, init.n_y))
    g, res = {}, {}
    yw = precompute_yw(dd, spec.mean, N)
    Y[:, 0], g[0], res[0] = propagate_mean(dd, init, U[:, 0], spec.mean, yw=yw)
    for j in range(1, basis.L):
        kp = basis.k_prime(j)
        _, y_j, g_j = propagate_pce_j(dd, basis, j, U[kp:, j], pattern, N)
        Y[:, j] = y_j
        g[j] = g_j
    for j in basis.init_indices:
        # no initial-window information: the direction is driven by its inputs only
        p = dd.predictor(N)
        Y[:, j], g[j], res[j] = p.solve(p.rhs(np.vstack([np.zeros((ell, init.n_u)), U[:, j]]), np.zeros((ell, init.n_y))))
    certs = [check_assumption_pe(dd.data.u, dd.data.y, ell, N)]
    return Prediction(N, PceTrajectory(U, basis, 1, "u"), PceTrajectory(Y, basis, 1, "y"), g, res, certs)


def propagate_uncertain_init(
    data,
    basis: JointBasis,
    spec: DisturbanceSpec,
    init_mean: RealTrajectory,
    init_u_coeffs,
    init_y_coeffs,
    u_coeffs,
) -> Prediction:
    """Propagation with an uncertain initial window.

    ``init_u_coeffs`` / ``init_y_coeffs`` have shape ``(l, n_init, dim)``:
    the centered initial window expressed in the initial-condition germs
    (basis indices ``L .. L + n_init - 1``). Each direction is propagated as
    an undisturbed trajectory from its own initial window.
    """
    ell, N = len(init_mean), basis.N
    iu = np.asarray(init_u_coeffs, dtype=float).reshape(ell, basis.n_init, init_mean.n_u)
    iy = np.asarray(init_y_coeffs, dtype=float).reshape(ell, basis.n_init, init_mean.n_y)
    dd = _as_data(data, ell, N)
    pred = propagate_all(dd, basis, spec, init_mean, u_coeffs)
    U = pred.u.coeffs
    Y = np.array(pred.y.coeffs)
    p = dd.predictor(N)
    for m, j in enumerate(basis.init_indices):
        Y[:, j], pred.g[j], pred.residuals[j] = p.solve(p.rhs(np.vstack([iu[:, m], U[:, j]]), iy[:, m]))
    pred.y = PceTrajectory(Y, basis, 1, "y")
    return pred


def lemma1_disturbance_window(basis: JointBasis, spec: DisturbanceSpec, ell: int, j: int) -> np.ndarray:
    """Disturbance coefficients ``w^j`` over times ``1-l .. N``.

    Steps ``0..N-1`` come from the joint basis; the remaining window entries
    cannot affect the predicted outputs and are set to the mean (``j = 0``)
    or zero.
    """
    N = basis.N
    out = np.zeros((ell + N, spec.n_w))
    if j == 0:
        out[:] = spec.mean
    for k in range(N):
        out[ell - 1 + k] = disturbance_coeffs(basis, spec, k)[j]
    return out


class DisturbedData:
    """Disturbed record ``(u, y, w)`` for the disturbance-data predictor."""

    def __init__(self, data: RealTrajectory, ell: int, N: int, ridge: float = 0.0):
        if data.w is None:
            raise DimensionMismatch("disturbance-data predictor needs recorded w")
        self.data, self.ell, self.N, self.ridge = data, ell, N, ridge
        self.n_g = _ng(len(data), ell, N)

    def predictor(self) -> WindowPredictor:
        d = self.data
        return WindowPredictor(d.u, d.y, self.ell, self.N, self.n_g, w=d.w, ridge=self.ridge)


def predict_lemma1(data, basis: JointBasis, spec: DisturbanceSpec, init: RealTrajectory, u_coeffs, w_coeffs=None) -> Prediction:
    """Per-index prediction from input, output and disturbance Hankel blocks.

    ``w_coeffs`` optionally overrides the disturbance coefficients, shape
    ``(l + N, basis.size, n_w)`` over times ``1-l .. N``.
    """
    N, ell = basis.N, len(init)
    U = np.asarray(getattr(u_coeffs, "coeffs", u_coeffs), dtype=float)
    if U.shape != (N, basis.size, init.n_u):
        raise DimensionMismatch(f"input coefficients have shape {U.shape}")
    dd = data if isinstance(data, DisturbedData) else DisturbedData(data, ell, N)
    p = dd.predictor()
    Y = np.zeros((N, basis.size, init.n_y))
    g, res = {}, {}
    for j in range(basis.L):
        u_win = np.zeros((ell, init.n_u)) if j else init.u
        y_init = np.zeros((ell, init.n_y)) if j else init.y
        w_win = lemma1_disturbance_window(basis, spec, ell, j) if w_coeffs is None else np.asarray(w_coeffs)[:, j]
        Y[:, j], g[j], res[j] = p.solve(p.rhs(np.vstack([u_win, U[:, j]]), y_init, w_win))
    if w_coeffs is None and _is_causal(basis, U):
        _pin_causal_outputs(basis, spec, Y)
    d = dd.data
    certs = [
        is_persistently_exciting(np.hstack([d.u, d.w]), ell + N),
        check_lemma1_pe(d.u, d.y, d.w, ell, N),
    ]
    return Prediction(N, PceTrajectory(U, basis, 1, "u"), PceTrajectory(Y, basis, 1, "y"), g, res, certs)
