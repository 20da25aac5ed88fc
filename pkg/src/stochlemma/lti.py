"""State-space and VARX plant models, exact simulation, and conversion.

Trajectories are stored as ``(T, dim)`` arrays with an explicit integer
start time, so a window like ``[1 - ell, 0]`` is just ``start = 1 - ell``.
Stacked windows (the ``z_[a,b]`` vectors) are ordered oldest sample first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, InitTooShort, NotObservable

PINV_RTOL = 1e-10


def pinv(M: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose inverse; singular values below ``rtol * s_max`` are dropped."""
    return np.linalg.pinv(np.atleast_2d(M), rtol=rtol)


def _frozen(a, ndim=2) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 1 and ndim == 2:
        a = a.reshape(1, -1)
    a.setflags(write=False)
    return a


def _as_seq(a, dim: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1) if dim == 1 else a.reshape(1, -1)
    if a.ndim != 2 or a.shape[1] != dim:
        raise DimensionMismatch(f"{name}: expected (T, {dim}) sequence, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        for name in "ABCE":
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        nx = self.A.shape[0]
        if self.A.shape != (nx, nx):
            raise DimensionMismatch(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != nx or self.E.shape[0] != nx or self.C.shape[1] != nx:
            raise DimensionMismatch("B, E rows and C columns must equal n_x")
        if min(nx, self.n_u, self.n_y, self.n_w) < 1:
            raise DimensionMismatch("all dimensions must be at least 1")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def n_w(self) -> int:
        return self.E.shape[1]


@dataclass(frozen=True)
class VarxModel:
    """``y_k = A_hat y_[k-l,k-1] + B_hat u_[k-l,k-1] + E_hat w_[k-l,k-1]``.

    With ``assumption2=True`` the disturbance enters only through the most
    recent step, i.e. ``E_hat = [0 ... 0 I]`` and ``n_w = n_y``.
    """

    A_hat: np.ndarray
    B_hat: np.ndarray
    E_hat: Optional[np.ndarray] = None
    lag: int = 1
    assumption2: bool = False

    def __post_init__(self):
        A = _frozen(self.A_hat)
        B = _frozen(self.B_hat)
        ell = int(self.lag)
        if ell < 1:
            raise DimensionMismatch("lag must be positive")
        ny = A.shape[0]
        if A.shape[1] != ell * ny:
            raise DimensionMismatch(f"A_hat must be {ny}x{ell * ny}, got {A.shape}")
        if B.shape[0] != ny or B.shape[1] % ell:
            raise DimensionMismatch(f"B_hat columns must be a multiple of lag {ell}")
        if self.E_hat is None:
            E = np.zeros((ny, ell * ny))
            E[:, -ny:] = np.eye(ny)
            E = _frozen(E)
            object.__setattr__(self, "assumption2", True)
        else:
            E = _frozen(self.E_hat)
        if E.shape[0] != ny or E.shape[1] % ell:
            raise DimensionMismatch(f"E_hat columns must be a multiple of lag {ell}")
        if self.assumption2:
            target = np.zeros((ny, ell * ny))
            target[:, -ny:] = np.eye(ny)
            if E.shape != target.shape or not np.array_equal(E, target):
                raise DimensionMismatch("assumption2 requires E_hat = [0 ... 0 I]")
        object.__setattr__(self, "A_hat", A)
        object.__setattr__(self, "B_hat", B)
        object.__setattr__(self, "E_hat", E)
        object.__setattr__(self, "lag", ell)

    @property
    def n_y(self) -> int:
        return self.A_hat.shape[0]

    @property
    def n_u(self) -> int:
        return self.B_hat.shape[1] // self.lag

    @property
    def n_w(self) -> int:
        return self.E_hat.shape[1] // self.lag

    def companion(self):
        """Realization on the stacked window ``[y_[k-l+1,k]; u_[k-l+1,k]]``.

        Returns ``(F, G, H)`` with ``zeta_{k+1} = F zeta_k + G u_{k+1} + H w_k``.
        Only meaningful under Assumption 2; used by the covariance oracle.
        """
        ell, ny, nu = self.lag, self.n_y, self.n_u
        ny_tot, nu_tot = ell * ny, ell * nu
        F = np.zeros((ny_tot + nu_tot, ny_tot + nu_tot))
        G = np.zeros((ny_tot + nu_tot, nu))
        H = np.zeros((ny_tot + nu_tot, self.n_w))
        F[: ny_tot - ny, ny:ny_tot] = np.eye(ny_tot - ny)
        F[ny_tot - ny : ny_tot, :ny_tot] = self.A_hat
        F[ny_tot - ny : ny_tot, ny_tot:] = self.B_hat
        F[ny_tot : ny_tot + nu_tot - nu, ny_tot + nu :] = np.eye(nu_tot - nu)
        G[ny_tot + nu_tot - nu :, :] = np.eye(nu)
        H[ny_tot - ny : ny_tot, :] = self.E_hat[:, -self.n_w :]
        return F, G, H


@dataclass(frozen=True)
class RealTrajectory:
    u: np.ndarray
    y: np.ndarray
    w: Optional[np.ndarray] = None
    start: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        if u.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"u has {u.shape[0]} steps, y has {y.shape[0]}")
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "y", _frozen(y))
        if self.w is not None:
            w = np.asarray(self.w, dtype=float)
            if w.ndim == 1:
                w = w.reshape(-1, 1)
            if w.shape[0] != u.shape[0]:
                raise DimensionMismatch("w must be aligned with u and y")
            object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "start", int(self.start))

    def __len__(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    @property
    def n_w(self) -> int:
        return 0 if self.w is None else self.w.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self))

    @property
    def stop(self) -> int:
        """Last time index (inclusive)."""
        return self.start + len(self) - 1

    def window(self, a: int, b: int) -> "RealTrajectory":
        """Sub-trajectory over absolute times ``[a, b]`` inclusive."""
        if a < self.start or b > self.stop or b < a:
            raise DimensionMismatch(f"window [{a}, {b}] outside [{self.start}, {self.stop}]")
        i, j = a - self.start, b - self.start + 1
        w = None if self.w is None else self.w[i:j]
        return RealTrajectory(self.u[i:j], self.y[i:j], w, start=a)

    def shifted(self, start: int) -> "RealTrajectory":
        return RealTrajectory(self.u, self.y, self.w, start=start)


def observability_matrix(A: np.ndarray, C: np.ndarray, depth: int) -> np.ndarray:
    blocks, M = [], np.asarray(C, dtype=float)
    for _ in range(depth):
        blocks.append(M)
        M = M @ A
    return np.vstack(blocks)


def lag(A, C, tol: float = PINV_RTOL) -> int:
    """Smallest depth at which the observability matrix has full column rank."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    nx = A.shape[0]
    for ell in range(1, nx + 1):
        O = observability_matrix(A, C, ell)
        s = np.linalg.svd(O, compute_uv=False)
        if np.sum(s > tol * s[0]) == nx:
            return ell
    raise NotObservable(f"rank(O_{nx}) < n_x = {nx}")


def _lagged_blocks(m: StateSpaceModel, D: np.ndarray, ell: int):
    """Controllability-type block ``[A^{l-1}D ... AD D]`` and the Toeplitz map
    from a stacked window of ``D``-inputs to the stacked window of outputs."""
    A, C = m.A, m.C
    nd = D.shape[1]
    powers = [np.eye(m.n_x)]
    for _ in range(ell):
        powers.append(powers[-1] @ A)
    ctrb = np.hstack([powers[ell - 1 - i] @ D for i in range(ell)])
    toep = np.zeros((ell * m.n_y, ell * nd))
    for r in range(ell):
        for c in range(r):
            toep[r * m.n_y : (r + 1) * m.n_y, c * nd : (c + 1) * nd] = C @ powers[r - c - 1] @ D
    return ctrb, toep


def varx_from_state_space(m: StateSpaceModel, ell: Optional[int] = None) -> VarxModel:
    """Convert an observable state-space model to its lag-``ell`` VARX form."""
    ell_min = lag(m.A, m.C)
    if ell is None:
        ell = ell_min
    if ell < ell_min:
        raise NotObservable(f"lag {ell} below observability index {ell_min}")
    O = observability_matrix(m.A, m.C, ell)
    Al_Opinv = np.linalg.matrix_power(m.A, ell) @ pinv(O)
    A_hat = m.C @ Al_Opinv
    ctrb_B, toep_B = _lagged_blocks(m, m.B, ell)
    ctrb_E, toep_E = _lagged_blocks(m, m.E, ell)
    B_hat = m.C @ (ctrb_B - Al_Opinv @ toep_B)
    E_hat = m.C @ (ctrb_E - Al_Opinv @ toep_E)
    return VarxModel(A_hat, B_hat, E_hat, lag=ell, assumption2=False)


def simulate_state_space(m: StateSpaceModel, x0, u_seq, w_seq) -> RealTrajectory:
    """Exact recursion from ``x_0``; returns ``(u_k, y_k, w_k)`` for ``k = 0..T-1``."""
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape[0] != m.n_x:
        raise DimensionMismatch(f"x0 has {x.shape[0]} entries, model has n_x = {m.n_x}")
    u = _as_seq(u_seq, m.n_u, "u_seq")
    w = _as_seq(w_seq, m.n_w, "w_seq")
    if u.shape[0] != w.shape[0]:
        raise DimensionMismatch("u_seq and w_seq must have equal length")
    y = np.empty((u.shape[0], m.n_y))
    for k in range(u.shape[0]):
        y[k] = m.C @ x
        x = m.A @ x + m.B @ u[k] + m.E @ w[k]
    return RealTrajectory(u, y, w, start=0)


def simulate_varx(m: VarxModel, init: RealTrajectory, u_seq, w_seq=None) -> RealTrajectory:
    """Run the VARX recursion forward from an ``ell``-step initial window.

    ``u_seq`` and ``w_seq`` hold the inputs and disturbances at the new time
    steps ``init.stop + 1, ...``. Disturbances inside the initial window are
    taken from ``init.w`` (zero when absent). The returned trajectory contains
    the initial window followed by the new steps.
    """
    ell = m.lag
    if len(init) != ell:
        raise InitTooShort(f"initial window has {len(init)} steps, lag is {ell}")
    if init.n_u != m.n_u or init.n_y != m.n_y:
        raise DimensionMismatch("initial window dimensions do not match the model")
    u_new = _as_seq(u_seq, m.n_u, "u_seq")
    n = u_new.shape[0]
    w_new = np.zeros((n, m.n_w)) if w_seq is None else _as_seq(w_seq, m.n_w, "w_seq")
    if w_new.shape[0] != n:
        raise DimensionMismatch("u_seq and w_seq must have equal length")
    w_init = np.zeros((ell, m.n_w)) if init.w is None else init.w
    if w_init.shape[1] != m.n_w:
        raise DimensionMismatch("initial window disturbance dimension mismatch")
    u = np.vstack([init.u, u_new])
    w = np.vstack([w_init, w_new])
    y = np.vstack([init.y, np.zeros((n, m.n_y))])
    for k in range(ell, ell + n):
        y[k] = (
            m.A_hat @ y[k - ell : k].reshape(-1)
            + m.B_hat @ u[k - ell : k].reshape(-1)
            + m.E_hat @ w[k - ell : k].reshape(-1)
        )
    return RealTrajectory(u, y, w, start=init.start)
