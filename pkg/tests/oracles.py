"""Reference computations that do not use the library's Hankel machinery.

Each oracle is a direct recursion on model matrices, written from the model
equations with plain loops so it shares no code path with the data-driven
predictors under test.
"""
from __future__ import annotations

import numpy as np

from stochlemma.lti import RealTrajectory, VarxModel


def varx_step(A_hat, B_hat, y_hist, u_hist, w_prev):
    """``y_k`` from the ``l`` previous outputs/inputs (oldest first) and ``w_{k-1}``."""
    return A_hat @ np.concatenate(y_hist) + B_hat @ np.concatenate(u_hist) + w_prev


def pce_coefficient_recursion(m: VarxModel, basis, spec, init: RealTrajectory, U: np.ndarray) -> np.ndarray:
    """Coefficients ``y^j_k`` for ``k = 1..N`` by running the VARX recursion on
    every coefficient separately (linearity of the Galerkin projection).

    The mean coefficient starts from the measured window, the others from
    zero; ``w^j_{k-1}`` is the mean for ``j = 0`` and the scaled germ for the
    index belonging to step ``k - 1``.
    """
    N, ell = basis.N, m.lag
    std = np.sqrt([c.variance for c in spec.components])
    mean = np.array([c.mean for c in spec.components])
    Y = np.zeros((N, basis.size, m.n_y))
    for j in range(basis.L):
        ys = [init.y[i] if j == 0 else np.zeros(m.n_y) for i in range(ell)]
        us = [init.u[i] if j == 0 else np.zeros(m.n_u) for i in range(ell)]
        for k in range(1, N + 1):
            if j == 0:
                w = mean
            else:
                step = (j - 1) // spec.n_w
                comp = (j - 1) % spec.n_w
                w = np.zeros(m.n_y)
                if step == k - 1:
                    w[comp] = std[comp]
            y = varx_step(m.A_hat, m.B_hat, ys[-ell:], us[-ell:], w)
            Y[k - 1, j] = y
            ys.append(y)
            us.append(U[k - 1, j])
    return Y


def moment_recursion(m: VarxModel, spec, init: RealTrajectory, u_mean: np.ndarray):
    """Mean and covariance of ``Y_1..Y_N`` on the stacked window state with
    deterministic inputs and i.i.d. disturbances."""
    ell, ny, nu = m.lag, m.n_y, m.n_u
    N = len(u_mean)
    mu_w = np.array([c.mean for c in spec.components])
    cov_w = np.diag([c.variance for c in spec.components])
    # state: [y_{k-l+1..k}; u_{k-l+1..k}]
    n = ell * (ny + nu)
    mu = np.concatenate([init.y.reshape(-1), init.u.reshape(-1)])
    S = np.zeros((n, n))
    means, variances = [], []
    for k in range(N):
        F = np.zeros((n, n))
        F[: (ell - 1) * ny, ny : ell * ny] = np.eye((ell - 1) * ny)
        F[(ell - 1) * ny : ell * ny, : ell * ny] = m.A_hat
        F[(ell - 1) * ny : ell * ny, ell * ny :] = m.B_hat
        F[ell * ny : ell * ny + (ell - 1) * nu, ell * ny + nu :] = np.eye((ell - 1) * nu)
        H = np.zeros((n, ny))
        H[(ell - 1) * ny : ell * ny] = np.eye(ny)
        Gu = np.zeros((n, nu))
        Gu[n - nu :] = np.eye(nu)
        mu = F @ mu + H @ mu_w + Gu @ u_mean[k]
        S = F @ S @ F.T + H @ cov_w @ H.T
        means.append(mu[(ell - 1) * ny : ell * ny].copy())
        variances.append(np.diag(S)[(ell - 1) * ny : ell * ny].copy())
    return np.array(means), np.array(variances)


def random_varx(rng: np.random.Generator, n_y: int, n_u: int, ell: int, radius: float = 0.9) -> VarxModel:
    """Random Assumption-2 VARX model whose companion matrix is stable."""
    while True:
        A = rng.normal(size=(n_y, ell * n_y))
        B = rng.normal(size=(n_y, ell * n_u))
        m = VarxModel(A, B, lag=ell, assumption2=True)
        F, _, _ = m.companion()
        rho = max(abs(np.linalg.eigvals(F)))
        if rho > 1e-6:
            A = A * (radius / rho) ** np.repeat(np.arange(ell, 0, -1), n_y)[None, :]
            m = VarxModel(A, B, lag=ell, assumption2=True)
            F, _, _ = m.companion()
            if max(abs(np.linalg.eigvals(F))) < 1.0:
                return m


def record(m: VarxModel, T: int, rng: np.random.Generator, w_scale: float = 0.0) -> RealTrajectory:
    """Plain-loop simulation under uniform inputs; ``w[t]`` enters ``y[t+1]``."""
    ell = m.lag
    u = rng.uniform(-1, 1, (T + ell, m.n_u))
    y = np.zeros((T + ell, m.n_y))
    y[:ell] = rng.uniform(-1, 1, (ell, m.n_y))
    w = w_scale * rng.uniform(-1, 1, (T + ell, m.n_y))
    for k in range(ell, T + ell):
        y[k] = varx_step(m.A_hat, m.B_hat, list(y[k - ell : k]), list(u[k - ell : k]), w[k - 1])
    return RealTrajectory(u[ell:], y[ell:], w[ell:], start=1)


def random_state_space(rng: np.random.Generator, n_x: int, n_u: int, n_y: int):
    """Random observable state-space matrices ``(A, B, C, E)`` with ``E = B``-shaped noise input."""
    from stochlemma.lti import StateSpaceModel, lag

    while True:
        A = rng.normal(size=(n_x, n_x))
        A *= 0.95 / max(abs(np.linalg.eigvals(A)))
        B = rng.normal(size=(n_x, n_u))
        C = rng.normal(size=(n_y, n_x))
        E = rng.normal(size=(n_x, n_y))
        try:
            lag(A, C)
        except Exception:
            continue
        return StateSpaceModel(A, B, C, E)
