"""Disturbance estimation, undisturbed-data synthesis and feedback search.

Conventions: a recorded trajectory covers times ``t0 .. t1``; the regressor
``z_k = [u_[k-l,k-1]; y_[k-l,k-1]]`` (oldest sample first) predicts ``y_k``
and the residual is the disturbance estimate ``w_hat_{k-1}``, so estimates
cover times ``t0 + l - 1 .. t1 - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Union

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionMismatch,
    InfeasibleStack,
    MaxIterationsExceeded,
    NotPersistentlyExciting,
    PlantUnbounded,
    RankDeficientData,
    TooShort,
)
from .hankel import assumption_pe_matrix, hankel, numerical_rank
from .lti import RealTrajectory, VarxModel, pinv

STACK_TOL = 1e-6


# ---------------------------------------------------------------- feedback


@dataclass(frozen=True)
class FeedbackLaw:
    """``u_k = K z_k + v_k`` with ``v_k`` uniform on ``[-dither, dither]``."""

    K: np.ndarray
    ell: int
    dither: float = 1e-3
    iterations: int = 0

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if K.shape[1] % self.ell:
            raise DimensionMismatch(f"gain has {K.shape[1]} columns, not a multiple of lag {self.ell}")
        if K.shape[1] // self.ell <= K.shape[0]:
            raise DimensionMismatch("gain columns must cover l (n_u + n_y) entries")
        object.__setattr__(self, "K", K)

    @classmethod
    def zero(cls, n_u: int, n_y: int, ell: int, dither: float = 1e-3) -> "FeedbackLaw":
        return cls(np.zeros((n_u, ell * (n_u + n_y))), ell, dither)

    @property
    def n_u(self) -> int:
        return self.K.shape[0]

    @property
    def n_y(self) -> int:
        return self.K.shape[1] // self.ell - self.n_u

    def z(self, u_win, y_win) -> np.ndarray:
        return np.concatenate([np.asarray(u_win, dtype=float).reshape(-1), np.asarray(y_win, dtype=float).reshape(-1)])

    def __call__(self, u_win, y_win, v=None) -> np.ndarray:
        u = self.K @ self.z(u_win, y_win)
        return u if v is None else u + v

    def closed_loop_matrix(self, model: VarxModel) -> np.ndarray:
        """Companion matrix of ``model`` under ``u = K z``."""
        F, G, _ = model.companion()
        # companion state is [y window; u window]; z is [u window; y window]
        Kc = np.hstack([self.K[:, self.ell * self.n_u :], self.K[:, : self.ell * self.n_u]])
        return F + G @ Kc

    def spectral_radius(self, model: VarxModel) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.closed_loop_matrix(model)))))


def lqr_feedback(model: VarxModel, q: float = 1.0, r: float = 1.0, dither: float = 1e-3) -> FeedbackLaw:
    """Discrete LQR on the input-output companion form, as a ``z``-feedback."""
    F, G, _ = model.companion()
    n = F.shape[0]
    Qm, Rm = q * np.eye(n), r * np.eye(model.n_u)
    P = sla.solve_discrete_are(F, G, Qm, Rm)
    Kc = np.linalg.solve(Rm + G.T @ P @ G, G.T @ P @ F)
    ny_tot = model.lag * model.n_y
    K = -np.hstack([Kc[:, ny_tot:], Kc[:, :ny_tot]])
    return FeedbackLaw(K, model.lag, dither)


# ---------------------------------------------------------------- estimation


def regressors(u, y, ell: int) -> np.ndarray:
    """Columns ``z_k`` for every ``k`` with a full window, shape ``(l(n_u+n_y), T-l)``."""
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    T = len(u)
    if T <= ell:
        raise TooShort(f"{T} samples cannot fill a window of length {ell}")
    Hu = hankel(u[:-1], ell)
    Hy = hankel(y[:-1], ell)
    return np.vstack([Hu, Hy])


@dataclass
class DisturbanceEstimate:
    w: np.ndarray
    start: int
    theta: np.ndarray
    ell: int
    n_u: int

    def model(self) -> VarxModel:
        """The VARX model that the data and ``w`` satisfy exactly."""
        split = self.ell * self.n_u
        return VarxModel(self.theta[:, split:], self.theta[:, :split], lag=self.ell, assumption2=True)

    def trajectory(self, data: RealTrajectory) -> RealTrajectory:
        """``data`` over the estimate's time range with ``w_hat`` attached."""
        a, b = self.start, self.start + len(self.w) - 1
        sub = data.window(a, b)
        return RealTrajectory(sub.u, sub.y, self.w, start=a)


def estimate_disturbances(data: RealTrajectory, ell: int) -> DisturbanceEstimate:
    """Least-squares residuals of the one-step VARX regression.

    ``w_hat = Y (I - Z^+ Z)`` where ``Y`` holds ``y_k`` and ``Z`` the
    regressors ``z_k``; equivalently the residual of the fitted
    ``[B_hat A_hat]``.
    """
    Z = regressors(data.u, data.y, ell)
    if Z.shape[1] < Z.shape[0]:
        raise TooShort(f"{len(data)} samples give {Z.shape[1]} regressions for {Z.shape[0]} unknowns per output")
    Y = data.y[ell:].T
    if not np.any(Z) and not np.any(Y):
        # silent record: nothing to explain, nothing left over
        return DisturbanceEstimate(np.zeros((Z.shape[1], data.n_y)), data.start + ell - 1, np.zeros((data.n_y, Z.shape[0])), ell, data.n_u)
    r, _ = numerical_rank(Z)
    if r < Z.shape[0]:
        raise RankDeficientData(f"regressor matrix has rank {r} < {Z.shape[0]}; data not exciting")
    theta = Y @ pinv(Z)
    w = (Y - theta @ Z).T
    return DisturbanceEstimate(w, data.start + ell - 1, theta, ell, data.n_u)


# ---------------------------------------------------------------- synthesis


def _w_aligned(data: RealTrajectory, w_hat) -> np.ndarray:
    """Disturbance estimates covering times ``t0+l-1 .. t1-1``."""
    if isinstance(w_hat, DisturbanceEstimate):
        if w_hat.start != data.start + w_hat.ell - 1:
            raise DimensionMismatch("disturbance estimate is not aligned with the data")
        return w_hat.w
    return np.asarray(w_hat, dtype=float).reshape(-1, data.n_y)


def _solve_stack(P: np.ndarray, Yf: np.ndarray, rhs: np.ndarray, label: str):
    r, s = numerical_rank(P)
    if r < P.shape[0]:
        raise NotPersistentlyExciting(f"{label}: pinned rows have rank {r} < {P.shape[0]}")
    g = pinv(P) @ rhs
    res = float(np.linalg.norm(P @ g - rhs))
    if res > STACK_TOL * (1.0 + np.linalg.norm(rhs)):
        raise InfeasibleStack(f"{label}: residual {res:.3e}")
    return Yf @ g, float(s[0] / s[r - 1])


def max_chunk_length(T: int, ell: int, n_u: int, n_y: int) -> int:
    """Largest ``T_hat`` whose pinned rows fit in the available columns."""
    best = 0
    for Th in range(1, T):
        cols = T - ell - Th + 1
        rows = (Th + ell) * n_u + ell * n_y + Th * n_y
        if cols >= rows:
            best = Th
    return best


@dataclass
class SynthesisResult:
    trajectory: RealTrajectory
    condition_numbers: list = field(default_factory=list)
    chunks: int = 0
    v: Optional[np.ndarray] = None

    def hankel_condition(self, ell: int, N: int) -> float:
        t = self.trajectory
        M = assumption_pe_matrix(t.u, t.y, ell, N)
        s = np.linalg.svd(M, compute_uv=False)
        return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")


def generate_undisturbed_trajectory(
    data: RealTrajectory,
    w_hat,
    ell: int,
    T_hat: int,
    length: Optional[int] = None,
    inputs=None,
    init: Optional[RealTrajectory] = None,
    rng: Optional[np.random.Generator] = None,
    input_scale: float = 1.0,
) -> SynthesisResult:
    """Undisturbed trajectory from disturbed data and disturbance estimates.

    Each chunk pins the input window, the initial outputs and ``w_hat = 0``
    for the disturbances that reach the ``T_hat`` new outputs. Chunks are
    chained: the last ``l`` samples of one chunk initialize the next. The
    first initial window defaults to the first ``l`` recorded samples.
    ``inputs`` (``length x n_u``) defaults to uniform random inputs.
    Returns ``length`` samples after the initial window (``T_hat`` if not given).
    """
    n_u, n_y, T = data.n_u, data.n_y, len(data)
    w = _w_aligned(data, w_hat)
    if len(w) != T - ell:
        raise DimensionMismatch(f"expected {T - ell} disturbance estimates, got {len(w)}")
    if T_hat < 1 or T_hat > max_chunk_length(T, ell, n_u, n_y):
        raise TooShort(f"T_hat={T_hat} not admissible for {T} samples (max {max_chunk_length(T, ell, n_u, n_y)})")
    length = T_hat if length is None else int(length)
    if inputs is None:
        rng = rng or np.random.default_rng(0)
        inputs = input_scale * rng.uniform(-1, 1, (length, n_u))
    inputs = np.asarray(inputs, dtype=float).reshape(-1, n_u)
    if len(inputs) < length:
        raise DimensionMismatch("fewer inputs than requested samples")
    init = data.window(data.start, data.start + ell - 1) if init is None else init
    depth = T_hat + ell
    Hu = hankel(data.u, depth)
    Hy = hankel(data.y, depth)
    Hw = hankel(w, T_hat)
    cols = Hu.shape[1]
    P = np.vstack([Hu, Hy[: ell * n_y], Hw[:, :cols]])
    Yf = Hy[ell * n_y :]
    u_all, y_all = [init.u], [init.y]
    u_win, y_win = init.u, init.y
    conds, done, chunks = [], 0, 0
    while done < length:
        step = min(T_hat, length - done)
        u_chunk = np.zeros((T_hat, n_u))
        u_chunk[:step] = inputs[done : done + step]
        rhs = np.concatenate([np.vstack([u_win, u_chunk]).reshape(-1), y_win.reshape(-1), np.zeros(T_hat * n_y)])
        y_new, cond = _solve_stack(P, Yf, rhs, "undisturbed synthesis")
        y_new = y_new.reshape(T_hat, n_y)[:step]
        u_all.append(u_chunk[:step])
        y_all.append(y_new)
        u_win = np.vstack([u_win, u_chunk[:step]])[-ell:]
        y_win = np.vstack([y_win, y_new])[-ell:]
        conds.append(cond)
        done += step
        chunks += 1
    traj = RealTrajectory(np.vstack(u_all), np.vstack(y_all), None, start=init.start)
    return SynthesisResult(traj, conds, chunks)


def generate_undisturbed_near_origin(
    data: RealTrajectory,
    w_hat,
    law: FeedbackLaw,
    T_hat: int,
    length: Optional[int] = None,
    v=None,
    z0=None,
    rng: Optional[np.random.Generator] = None,
    v_scale: float = 1.0,
) -> SynthesisResult:
    """Undisturbed closed-loop trajectory in the ``(v, z)`` coordinates.

    Pins ``v_k = u_k - K z_k`` over the chunk, the first regressor ``z_1``
    (default: the origin) and ``w_hat = 0``; the remaining regressors
    ``z_2 .. z_T_hat`` are read off. Each chunk adds ``T_hat - 1`` samples.
    The returned trajectory starts with the initial window encoded in
    ``z_1`` at times ``1-l .. 0``.
    """
    ell, n_u, n_y = law.ell, data.n_u, data.n_y
    if law.n_u != n_u or law.n_y != n_y:
        raise DimensionMismatch("feedback gain does not match the data dimensions")
    if T_hat < 2:
        raise TooShort("near-origin synthesis needs T_hat >= 2")
    w = _w_aligned(data, w_hat)
    Z = regressors(data.u, data.y, ell)  # z_k for k = t0+l .. t1
    if len(w) != Z.shape[1]:
        raise DimensionMismatch(f"expected {Z.shape[1]} disturbance estimates, got {len(w)}")
    V = data.u[ell:].T - law.K @ Z
    nz = Z.shape[0]
    n_cols = Z.shape[1] - T_hat + 1
    if n_cols < T_hat * n_u + nz + T_hat * n_y:
        raise TooShort(f"T_hat={T_hat} not admissible for {len(data)} samples")
    Hv = hankel(V.T, T_hat)
    Hz = hankel(Z.T, T_hat)
    Hw = hankel(w, T_hat)
    P = np.vstack([Hv, Hz[:nz], Hw])
    Yf = Hz[nz:]
    length = T_hat - 1 if length is None else int(length)
    per_chunk = T_hat - 1
    if v is None:
        rng = rng or np.random.default_rng(0)
        v = v_scale * rng.uniform(-1, 1, (length + T_hat, n_u))
    v = np.asarray(v, dtype=float).reshape(-1, n_u)
    z = np.zeros(nz) if z0 is None else np.asarray(z0, dtype=float).reshape(nz)
    u_win = z[: ell * n_u].reshape(ell, n_u)
    y_win = z[ell * n_u :].reshape(ell, n_y)
    u_all, y_all, v_used = [u_win], [y_win], []
    conds, done, chunks = [], 0, 0
    while done < length:
        step = min(per_chunk, length - done)
        v_chunk = np.zeros((T_hat, n_u))
        avail = v[done : done + T_hat]
        v_chunk[: len(avail)] = avail
        rhs = np.concatenate([v_chunk.reshape(-1), z, np.zeros(T_hat * n_y)])
        z_new, cond = _solve_stack(P, Yf, rhs, "near-origin synthesis")
        z_new = z_new.reshape(T_hat - 1, nz)[:step]
        # the newest (u, y) pair sits in the last block of each window
        u_all.append(z_new[:, ell * n_u - n_u : ell * n_u])
        y_all.append(z_new[:, nz - n_y :])
        v_used.append(v_chunk[:step])
        z = z_new[-1]
        conds.append(cond)
        done += step
        chunks += 1
    traj = RealTrajectory(np.vstack(u_all), np.vstack(y_all), None, start=1 - ell)
    return SynthesisResult(traj, conds, chunks, np.vstack(v_used))


# ---------------------------------------------------------------- plants


class Plant(Protocol):
    """Sample-in/sample-out port of a physical or simulated plant."""

    ell: int

    def window(self) -> RealTrajectory: ...

    def step(self, u) -> np.ndarray: ...


class VarxPlant:
    """Simulated plant ``y_{t+1} = A_hat y_win + B_hat u_win + w_t``.

    The current window ``(u, y)_[t-l+1, t]`` already holds the applied
    ``u_t``; :meth:`step` computes ``y_{t+1}`` from it, appends the new
    input ``u_{t+1}`` and returns ``y_{t+1}``. ``disturbance`` is either a
    sequence consumed in order or a callable returning the next ``w_t``.
    """

    def __init__(self, model: VarxModel, init: RealTrajectory, disturbance: Union[np.ndarray, Callable, None] = None):
        if len(init) != model.lag:
            raise DimensionMismatch("initial window length must equal the lag")
        self.model = model
        self.ell = model.lag
        self._u = [np.array(r) for r in init.u]
        self._y = [np.array(r) for r in init.y]
        self._w = []
        self.t = init.stop
        self._start = init.start
        self._dist = disturbance
        self._k = 0

    def _next_w(self) -> np.ndarray:
        d = self._dist
        if d is None:
            w = np.zeros(self.model.n_w)
        elif callable(d):
            w = np.asarray(d(), dtype=float).reshape(self.model.n_w)
        else:
            if self._k >= len(d):
                raise DimensionMismatch("disturbance stream exhausted")
            w = np.asarray(d[self._k], dtype=float).reshape(self.model.n_w)
        self._k += 1
        return w

    def window(self) -> RealTrajectory:
        return RealTrajectory(np.array(self._u[-self.ell :]), np.array(self._y[-self.ell :]), None, start=self.t - self.ell + 1)

    def step(self, u) -> np.ndarray:
        m, ell = self.model, self.ell
        w = self._next_w()
        y = m.A_hat @ np.concatenate(self._y[-ell:]) + m.B_hat @ np.concatenate(self._u[-ell:]) + w
        self._u.append(np.asarray(u, dtype=float).reshape(m.n_u))
        self._y.append(y)
        self._w.append(w)
        self.t += 1
        return y

    def history(self) -> RealTrajectory:
        return RealTrajectory(np.array(self._u), np.array(self._y), None, start=self._start)

    def disturbances(self) -> np.ndarray:
        return np.array(self._w).reshape(-1, self.model.n_w)


def run_policy(plant, law: FeedbackLaw, steps: int, rng: np.random.Generator, amplitude: float, overflow: float = 1e12) -> RealTrajectory:
    """Drive ``plant`` with ``u = K z + v``; returns the window plus new samples."""
    start = plant.window()
    us, ys = [start.u], [start.y]
    for _ in range(steps):
        win = plant.window()
        v = amplitude * rng.uniform(-1, 1, law.n_u)
        u = law(win.u, win.y, v)
        y = plant.step(u)
        if not np.all(np.isfinite(y)) or np.abs(y).max() > overflow:
            raise PlantUnbounded(f"plant output exceeded {overflow:.1e}")
        us.append(u.reshape(1, -1))
        ys.append(y.reshape(1, -1))
    return RealTrajectory(np.vstack(us), np.vstack(ys), None, start=start.start)


def find_stabilizing_feedback(
    plant,
    n_u: int,
    n_y: int,
    seed: int = 0,
    probe_length: int = 30,
    probe_amplitude: float = 1.0,
    dither: float = 1e-3,
    test_window: int = 50,
    radius_factor: float = 10.0,
    max_iter: int = 10,
    overflow: float = 1e12,
    initial: Optional[FeedbackLaw] = None,
) -> FeedbackLaw:
    """Iterative data-driven stabilization.

    Each iteration probes the plant under the current policy with extra
    excitation, estimates disturbances and a VARX model by least squares,
    computes an LQR gain on the identified companion form, then runs the
    new policy with a small dither and checks that the outputs stay in a
    ball of radius ``radius_factor * max(|y_0|, 1)`` for ``test_window``
    steps.
    """
    ell = plant.ell
    rng = np.random.default_rng(seed)
    law = initial or FeedbackLaw.zero(n_u, n_y, ell, dither)
    for it in range(1, max_iter + 1):
        probe = run_policy(plant, law, probe_length, rng, probe_amplitude, overflow)
        try:
            est = estimate_disturbances(probe, ell)
            law = FeedbackLaw(lqr_feedback(est.model()).K, ell, dither, it)
        except (RankDeficientData, np.linalg.LinAlgError, ValueError):
            law = FeedbackLaw(law.K, ell, dither, it)
        y0 = max(float(np.linalg.norm(plant.window().y[-1])), 1.0)
        test = run_policy(plant, law, test_window, rng, dither, overflow)
        if np.linalg.norm(test.y[ell:], axis=1).max() <= radius_factor * y0:
            return law
    raise MaxIterationsExceeded(f"no stabilizing feedback found in {max_iter} iterations")
