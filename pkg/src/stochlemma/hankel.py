"""Block-Hankel matrices, excitation certificates and data-volume accounting."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import DimensionMismatch, TooShort
from .lti import RealTrajectory

RANK_RTOL = 1e-8


def hankel(data, depth: int) -> np.ndarray:
    """Block-Hankel matrix with ``depth`` block rows.

    ``data`` is a ``(T, d)`` array (or a length-``T`` vector for ``d = 1``);
    block ``(i, t)`` of the result is ``data[t + i]``.
    """
    z = np.asarray(data, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    T, d = z.shape
    if depth < 1:
        raise TooShort("Hankel depth must be at least 1")
    if T < depth:
        raise TooShort(f"data length {T} shorter than depth {depth}")
    cols = T - depth + 1
    idx = np.arange(depth)[:, None] + np.arange(cols)[None, :]
    # (depth, cols, d) -> rows ordered block by block
    return z[idx].transpose(0, 2, 1).reshape(depth * d, cols)


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> Tuple[int, np.ndarray]:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, s
    return int(np.sum(s > rtol * s[0])), s


@dataclass
class RankCertificate:
    rank: int
    required: int
    passed: bool
    singular_values: list
    label: str = ""

    @property
    def condition_number(self) -> float:
        s = self.singular_values
        if not s or self.rank == 0:
            return float("inf")
        return float(s[0] / s[self.rank - 1])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["condition_number"] = self.condition_number
        return d


def _certificate(M: np.ndarray, required: int, label: str) -> RankCertificate:
    r, s = numerical_rank(M)
    return RankCertificate(r, required, r == required, [float(v) for v in s], label)


def is_persistently_exciting(u, order: int) -> RankCertificate:
    H = hankel(u, order)
    return _certificate(H, H.shape[0], f"PE order {order}")


def assumption_pe_matrix(u, y, ell: int, N: int) -> np.ndarray:
    """``[H_{l+N}(u); H_l(y)]`` over the common ``T - l - N + 1`` columns."""
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    Hu = hankel(u, ell + N)
    Hy = hankel(y, ell)[:, : Hu.shape[1]]
    return np.vstack([Hu, Hy])


def check_assumption_pe(u, y, ell: int, N: int) -> RankCertificate:
    if ell < 1 or N < 1:
        raise DimensionMismatch("lag and horizon must both be positive")
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    if len(u) < ell + N:
        raise TooShort(f"data length {len(u)} < l + N = {ell + N}")
    M = assumption_pe_matrix(u, y, ell, N)
    req = (ell + N) * u.shape[1] + ell * y.shape[1]
    return _certificate(M, req, f"assumption PE (l={ell}, N={N})")


def check_lemma1_pe(u, y, w, ell: int, N: int) -> RankCertificate:
    """Rank of ``[H(u); H(w); H_l(y)]`` at depth ``l + N``: the pinned rows of
    the disturbance-data predictor must be jointly full row rank."""
    u, y, w = (np.asarray(a, dtype=float).reshape(len(a), -1) for a in (u, y, w))
    Hu, Hw = hankel(u, ell + N), hankel(w, ell + N)
    Hy = hankel(y, ell)[:, : Hu.shape[1]]
    req = (ell + N) * (u.shape[1] + w.shape[1]) + ell * y.shape[1]
    return _certificate(np.vstack([Hu, Hw, Hy]), req, f"disturbance-data PE (l={ell}, N={N})")


def count_nonzero_entries(
    scheme: str,
    n_u: int,
    n_y: int,
    n_w: int,
    ell: int,
    N: int,
    L: int,
    n_g: int,
    convention: str = "published",
) -> int:
    """Number of Hankel cells in the assembled predictor systems.

    ``lemma1``: one ``(l+N)(n_u+n_y+n_w) x n_g`` block per basis index.

    ``lemma5``: the mean block ``(l+N)(n_u+n_y) x n_g`` plus, per disturbance
    index with step ``k'``, a block of ``d (n_u+n_y)`` rows. ``convention``
    selects ``d = l + N - k'`` ("published", reproduces the published count) or
    ``d = l - 1 + N - k'`` ("structural", the literal stacked block depth).
    """
    if min(n_u, n_y, ell, N, L, n_g) < 1:
        raise DimensionMismatch("dimensions must be positive")
    if scheme == "lemma1":
        return (ell + N) * (n_u + n_y + n_w) * n_g * L
    if scheme != "lemma5":
        raise ValueError(f"unknown scheme {scheme!r}")
    shift = {"published": 0, "structural": 1}[convention]
    L_w = 1 + (L - 1) // N
    rows = (ell + N) * (n_u + n_y)
    for kp in range(N):
        rows += (L_w - 1) * (ell - shift + N - kp) * (n_u + n_y)
    return rows * n_g


class HankelSystem:
    """Recorded trajectory with eagerly built Hankel blocks.

    ``depths`` lists the Hankel depths to materialize for every recorded
    signal; blocks are then sliced by block row and column ranges.
    """

    def __init__(self, traj: RealTrajectory, depths=()):
        self.traj = traj
        signals = {"u": traj.u, "y": traj.y}
        if traj.w is not None:
            signals["w"] = traj.w
        self._signals = signals
        self._cache: Dict[Tuple[str, int], np.ndarray] = {}
        for d in depths:
            for s in signals:
                self._cache[(s, d)] = hankel(signals[s], d)

    @property
    def T(self) -> int:
        return len(self.traj)

    def full(self, signal: str, depth: int) -> np.ndarray:
        key = (signal, depth)
        if key not in self._cache:
            self._cache[key] = hankel(self._signals[signal], depth)
        return self._cache[key]

    def block(self, signal: str, depth: int, row_start: int, n_rows: int, n_cols: Optional[int] = None) -> np.ndarray:
        """Block rows ``[row_start, row_start + n_rows)`` of ``H_depth(signal)``."""
        H = self.full(signal, depth)
        d = self._signals[signal].shape[1]
        out = H[row_start * d : (row_start + n_rows) * d]
        return out if n_cols is None else out[:, :n_cols]
