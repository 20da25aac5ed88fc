"""Primal-dual interior-point solver for convex quadratic cone programs.

Solves::

    minimize    1/2 x'Px + q'x
    subject to  Gx + s = h,  s in K
                Ax = b

where ``K`` is a product of a nonnegative orthant of size ``dims["l"]``
followed by second-order cones of sizes ``dims["q"]`` (``s_0 >= ||s_1:||``).
The iteration is the infeasible-start Mehrotra predictor-corrector method
with Nesterov-Todd scaling, using dense factorizations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import Infeasible, MaxIterations, NumericalBreakdown, Unbounded


@dataclass
class ConeDims:
    l: int = 0
    q: tuple = ()

    def __post_init__(self):
        self.q = tuple(int(n) for n in self.q)
        if self.l < 0 or any(n < 1 for n in self.q):
            raise ValueError("cone sizes must be positive")
        sizes = np.array(self.q, dtype=int)
        # offsets relative to the start of the SOC block, owner cone of every entry
        self._offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int) if sizes.size else sizes
        self._owner = np.repeat(np.arange(sizes.size), sizes)
        tail = np.ones(int(sizes.sum()), dtype=bool)
        tail[self._offsets] = False
        self._tail = tail

    @property
    def size(self) -> int:
        return self.l + sum(self.q)

    @property
    def degree(self) -> int:
        return self.l + len(self.q)

    def soc_slices(self):
        off = self.l
        for n in self.q:
            yield slice(off, off + n)
            off += n

    def heads(self, x: np.ndarray) -> np.ndarray:
        """First entry of every second-order cone block."""
        return x[self.l + self._offsets]

    def segsum(self, x: np.ndarray) -> np.ndarray:
        """Per-cone sums of an array covering only the SOC entries (rows for matrices)."""
        return np.add.reduceat(x, self._offsets, axis=0)

    def tail_dot(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Per-cone ``a_1:' b_1:`` for full-length vectors."""
        return self.segsum(np.where(self._tail, a[self.l :], 0.0) * b[self.l :]) if self.q else np.zeros(0)

    def spread(self, v: np.ndarray) -> np.ndarray:
        """Broadcast one value per cone onto every entry of its block."""
        return v[self._owner]


@dataclass
class ConeSolution:
    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    primal_objective: float
    dual_objective: float
    gap: float
    primal_infeasibility: float
    dual_infeasibility: float
    trace: list = field(default_factory=list)


# ---------------------------------------------------------------- cone algebra


def identity(dims: ConeDims) -> np.ndarray:
    e = np.zeros(dims.size)
    e[: dims.l] = 1.0
    e[dims.l + dims._offsets] = 1.0
    return e


def _soc(x: np.ndarray, dims: ConeDims) -> np.ndarray:
    return x[dims.l :]


def jordan_product(a: np.ndarray, b: np.ndarray, dims: ConeDims) -> np.ndarray:
    out = np.empty_like(a)
    out[: dims.l] = a[: dims.l] * b[: dims.l]
    if dims.q:
        a0, b0 = dims.spread(dims.heads(a)), dims.spread(dims.heads(b))
        tail = a0 * _soc(b, dims) + b0 * _soc(a, dims)
        tail[~dims._tail] = dims.segsum(_soc(a, dims) * _soc(b, dims))
        out[dims.l :] = tail
    return out


def jordan_divide(lam: np.ndarray, r: np.ndarray, dims: ConeDims) -> np.ndarray:
    """Solve ``lam o x = r`` for ``x``."""
    out = np.empty_like(r)
    out[: dims.l] = r[: dims.l] / lam[: dims.l]
    if dims.q:
        l0, r0 = dims.heads(lam), dims.heads(r)
        det = l0 * l0 - dims.tail_dot(lam, lam)
        x0 = (l0 * r0 - dims.tail_dot(lam, r)) / det
        tail = (_soc(r, dims) - dims.spread(x0) * _soc(lam, dims)) / dims.spread(l0)
        tail[~dims._tail] = x0
        out[dims.l :] = tail
    return out


def min_eigenvalue(x: np.ndarray, dims: ConeDims) -> float:
    vals = []
    if dims.l:
        vals.append(float(np.min(x[: dims.l])))
    if dims.q:
        vals.append(float(np.min(dims.heads(x) - np.sqrt(dims.tail_dot(x, x)))))
    return min(vals) if vals else math.inf


def _first_roots(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Smallest positive root of ``a t^2 + b t + c`` (``c > 0``) per entry; ``inf`` if none."""
    out = np.full(a.shape, math.inf)
    lin = np.abs(a) < 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = lin & (b < 0)
        out[ok] = -c[ok] / b[ok]
        quad = ~lin
        disc = b * b - 4 * a * c
        quad &= disc >= 0
        sq = np.sqrt(np.where(quad, disc, 0.0))
        qq = -0.5 * (b + np.copysign(sq, b))
        r1 = np.where(quad, qq / np.where(quad, a, 1.0), math.inf)
        r2 = np.where(quad & (qq != 0), c / np.where(qq != 0, qq, 1.0), math.inf)
    r1 = np.where(r1 > 0, r1, math.inf)
    r2 = np.where(r2 > 0, r2, math.inf)
    out[quad] = np.minimum(r1, r2)[quad]
    return out


def max_step(x: np.ndarray, d: np.ndarray, dims: ConeDims) -> float:
    """Largest ``t`` with ``x + t d`` in the cone, for ``x`` interior."""
    t = math.inf
    if dims.l:
        dl = d[: dims.l]
        neg = dl < 0
        if np.any(neg):
            t = float(np.min(-x[: dims.l][neg] / dl[neg]))
    if dims.q:
        x0, d0 = dims.heads(x), dims.heads(d)
        a = d0 * d0 - dims.tail_dot(d, d)
        b = 2.0 * (x0 * d0 - dims.tail_dot(x, d))
        c = x0 * x0 - dims.tail_dot(x, x)
        t = min(t, float(np.min(_first_roots(a, b, c))))
        # the head must stay nonnegative; catches double roots lost to rounding
        neg = d0 < 0
        if np.any(neg):
            t = min(t, float(np.min(-x0[neg] / d0[neg])))
    return t


class NTScaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^{-1} s = lambda``.

    Each second-order block is ``beta (2 v v' - J)`` with ``v`` the
    hyperbolic Householder vector of the scaling point; its inverse is
    ``(2 J v v' J - J) / beta``.
    """

    def __init__(self, s: np.ndarray, z: np.ndarray, dims: ConeDims):
        self.dims = dims
        self.d = np.sqrt(s[: dims.l] / z[: dims.l])
        if dims.q:
            sn = np.sqrt(dims.heads(s) ** 2 - dims.tail_dot(s, s))
            zn = np.sqrt(dims.heads(z) ** 2 - dims.tail_dot(z, z))
            sb = _soc(s, dims) / dims.spread(sn)
            zb = _soc(z, dims) / dims.spread(zn)
            head = ~dims._tail
            gamma = np.sqrt(0.5 * (1.0 + dims.segsum(sb * zb)))
            wb = np.where(head, sb + zb, sb - zb) / dims.spread(2.0 * gamma)
            w0 = wb[head]
            v = wb.copy()
            v[head] += 1.0
            v /= dims.spread(np.sqrt(2.0 * (w0 + 1.0)))
            self.beta = np.sqrt(sn / zn)
            self.wbar = wb
            self.v = v
            self.sign = np.where(head, -1.0, 1.0)  # -J on the diagonal
        self.lam = self.apply(z)

    def inv_square_gram(self, G: np.ndarray) -> np.ndarray:
        """``G' W^{-2} G`` without forming ``W^{-1} G``.

        Per second-order block ``W^{-2} = (2 J w w' J - J) / beta^2`` with
        ``w`` the scaling point.
        """
        dims, l = self.dims, self.dims.l
        Gl = G[:l]
        out = Gl.T @ (Gl / (self.d**2)[:, None])
        if dims.q:
            Gq = G[l:]
            inv_b2 = 1.0 / self.beta**2
            Jw = -self.sign * self.wbar
            a = dims.segsum(Jw[:, None] * Gq)
            out += (a.T * (2.0 * inv_b2)) @ a
            out += Gq.T @ ((self.sign * dims.spread(inv_b2))[:, None] * Gq)
        return out

    def apply(self, v: np.ndarray, inverse: bool = False) -> np.ndarray:
        """``W v`` (or ``W^{-1} v``); ``v`` may be a matrix with rows on the cone."""
        dims = self.dims
        out = np.empty_like(v)
        l = dims.l
        extra = (1,) * (v.ndim - 1)
        scale = 1.0 / self.d if inverse else self.d
        out[:l] = scale.reshape((-1,) + extra) * v[:l]
        if dims.q:
            V = v[l:]
            hv = self.v.reshape((-1,) + extra)
            sg = self.sign.reshape((-1,) + extra)
            if inverse:
                # J v = -sign * v ; result 2 J hv (hv' J V) - J V
                JV = -sg * V
                Jh = -sg * hv
                res = 2.0 * Jh * dims.spread(dims.segsum(hv * JV)) - JV
                res = res / dims.spread(self.beta).reshape((-1,) + extra)
            else:
                res = 2.0 * hv * dims.spread(dims.segsum(hv * V)) + sg * V
                res = res * dims.spread(self.beta).reshape((-1,) + extra)
            out[l:] = res
        return out


# ---------------------------------------------------------------- solver


class _KKT:
    """Factorization of ``[P + G'W^{-2}G, A'; A, 0]`` for one scaling."""

    def __init__(self, P, G, A, W: Optional[NTScaling], reg: float = 0.0):
        self.G, self.A, self.W = G, A, W
        n = P.shape[0]
        if G.shape[0]:
            H = P + (W.inv_square_gram(G) if W is not None else G.T @ G)
        else:
            H = P.copy()
        if reg:
            H = H + reg * np.eye(n)
        self.n, self.p = n, A.shape[0]
        if self.p == 0:
            # near convergence the active rows dominate H; a relative shift
            # restores definiteness without changing the direction materially
            for shift in (0.0, 1e-13, 1e-10):
                try:
                    Hs = H + shift * max(1.0, np.abs(np.diag(H)).max()) * np.eye(n) if shift else H
                    self.chol = sla.cho_factor(Hs, lower=True, check_finite=False)
                    self.lu = None
                    return
                except np.linalg.LinAlgError:
                    continue
            K = H
        else:
            K = np.block([[H, A.T], [A, np.zeros((self.p, self.p))]])
        self.chol = None
        try:
            self.lu = sla.lu_factor(K, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise NumericalBreakdown(str(exc)) from exc
        if not np.all(np.isfinite(self.lu[0])) or np.min(np.abs(np.diag(self.lu[0]))) == 0.0:
            raise NumericalBreakdown("singular KKT matrix")

    def solve(self, bx, by, bz_scaled):
        """Solve for ``(dx, dy, dz_scaled)`` given ``W^{-1}``-scaled ``bz``."""
        m = self.G.shape[0]
        if m:
            rhs_x = bx + self.G.T @ (self.W.apply(bz_scaled, inverse=True) if self.W is not None else bz_scaled)
        else:
            rhs_x = bx
        if self.chol is not None:
            dx = sla.cho_solve(self.chol, rhs_x, check_finite=False)
            dy = np.zeros(0)
        else:
            sol = sla.lu_solve(self.lu, np.concatenate([rhs_x, by]), check_finite=False)
            dx, dy = sol[: self.n], sol[self.n :]
        if m:
            Gdx = self.G @ dx
            dz_scaled = (self.W.apply(Gdx, inverse=True) if self.W is not None else Gdx) - bz_scaled
        else:
            dz_scaled = np.zeros(0)
        return dx, dy, dz_scaled


def _prepare(P, q, G, h, dims, A, b):
    q = np.asarray(q, dtype=float).reshape(-1)
    n = q.shape[0]
    P = np.zeros((n, n)) if P is None else np.asarray(P, dtype=float)
    if dims is None:
        dims = ConeDims(l=0 if G is None else np.asarray(G).shape[0])
    elif isinstance(dims, dict):
        dims = ConeDims(l=dims.get("l", 0), q=tuple(dims.get("q", ())))
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float).reshape(-1, n)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).reshape(-1)
    A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(-1)
    if G.shape[0] != dims.size or h.shape[0] != dims.size:
        raise ValueError(f"G/h have {G.shape[0]}/{h.shape[0]} rows, cone size is {dims.size}")
    if A.shape[0] != b.shape[0]:
        raise ValueError("A and b row counts differ")
    return P, q, G, h, dims, A, b


def _check_recession(P, q, G, A):
    """Detect an unbounded linear direction not touched by any constraint."""
    # fast path: a well-conditioned Gram matrix has no null space
    gram = P + G.T @ G + A.T @ A
    try:
        c, _ = sla.cho_factor(gram, lower=True, check_finite=False)
        d = np.abs(np.diag(c))
        if d.size == 0 or d.min() > 1e-5 * d.max():
            return False
    except np.linalg.LinAlgError:
        pass
    M = np.vstack([P, G, A])
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    tol = 1e-12 * (s[0] if s.size and s[0] > 0 else 1.0)
    rank = int(np.sum(s > tol))
    null = Vt[rank:]
    if null.shape[0]:
        proj = null.T @ (null @ q)
        if np.linalg.norm(proj) > 1e-9 * max(1.0, np.linalg.norm(q)):
            raise Unbounded("objective decreases along a direction free of constraints")
        return True
    return False


def solve_cone_qp(
    P,
    q,
    G=None,
    h=None,
    dims=None,
    A=None,
    b=None,
    *,
    gap_tol: float = 1e-9,
    feas_tol: float = 1e-8,
    max_iter: int = 100,
    check_infeasibility: bool = True,
) -> ConeSolution:
    P, q, G, h, dims, A, b = _prepare(P, q, G, h, dims, A, b)
    n, m = q.shape[0], dims.size
    reg = 1e-12 * max(1.0, np.abs(P).max(initial=0.0)) if _check_recession(P, q, G, A) else 0.0
    e = identity(dims)
    trace = []

    # initial point: least-squares solve with unit scaling, then shift into the cone
    kkt = _KKT(P, G, A, None, reg)
    x, y, zs = kkt.solve(-q, b, -h) if m else kkt.solve(-q, b, np.zeros(0))
    z = zs.copy()
    s = -z.copy()
    if m:
        for v in (s, z):
            t = -min_eigenvalue(v, dims)
            if t >= -1e-8 * max(np.linalg.norm(v), 1.0):
                v += (1.0 + t) * e

    hnorm = max(1.0, np.linalg.norm(np.concatenate([h, b])))
    qnorm = max(1.0, np.linalg.norm(q))

    for it in range(max_iter + 1):
        rx = P @ x + q + A.T @ y + G.T @ z
        ry = A @ x - b
        rz = G @ x + s - h
        gap = float(s @ z)
        pcost = 0.5 * x @ P @ x + q @ x
        dcost = -0.5 * x @ P @ x - b @ y - h @ z
        pres = max(np.linalg.norm(ry), np.linalg.norm(rz)) / hnorm
        dres = np.linalg.norm(rx) / qnorm
        trace.append((it, pcost, dcost, gap, pres, dres))
        if not all(map(math.isfinite, (pcost, gap, pres, dres))):
            raise NumericalBreakdown(f"non-finite iterate at iteration {it}")
        if pres <= feas_tol and dres <= feas_tol and gap <= gap_tol * max(1.0, abs(pcost)):
            return ConeSolution(x, s, z, y, "optimal", it, pcost, dcost, gap, pres, dres, trace)
        if check_infeasibility and m:
            t = -(h @ z + b @ y)
            if t > 0 and np.linalg.norm(G.T @ z + A.T @ y) <= feas_tol * t:
                raise Infeasible(f"primal infeasibility certificate at iteration {it}")
            tq = -(q @ x)
            if tq > 0 and np.linalg.norm(P @ x) <= feas_tol * tq and np.linalg.norm(A @ x) <= feas_tol * tq:
                if min_eigenvalue(-(G @ x), dims) >= -feas_tol * tq:
                    raise Unbounded(f"dual infeasibility certificate at iteration {it}")
        if it == max_iter:
            break

        W = NTScaling(s, z, dims) if m else None
        try:
            kkt = _KKT(P, G, A, W, reg)
        except NumericalBreakdown:
            break
        lam = W.lam if m else np.zeros(0)
        mu = gap / dims.degree if m else 0.0

        def direction(r_lam, eta):
            # linearized complementarity: lam o (ds~ + dz~) = r_lam
            lam_div = jordan_divide(lam, r_lam, dims) if m else np.zeros(0)
            bz = -(1.0 - eta) * rz - (W.apply(lam_div) if m else 0.0)
            bz_scaled = W.apply(bz, inverse=True) if m else np.zeros(0)
            dx, dy, dz_t = kkt.solve(-(1.0 - eta) * rx, -(1.0 - eta) * ry, bz_scaled)
            ds_t = lam_div - dz_t
            return dx, dy, ds_t, dz_t

        if m:
            ll = jordan_product(lam, lam, dims)
            dx_a, dy_a, ds_a, dz_a = direction(-ll, 0.0)
            alpha_a = min(1.0, max_step(lam, ds_a, dims), max_step(lam, dz_a, dims))
            sigma = min(1.0, (1.0 - alpha_a) ** 3)
            r_lam = -ll - jordan_product(ds_a, dz_a, dims) + sigma * mu * e
            dx, dy, ds_t, dz_t = direction(r_lam, sigma)
            alpha = min(1.0, 0.99 * max_step(lam, ds_t, dims), 0.99 * max_step(lam, dz_t, dims))
            ds, dz = W.apply(ds_t), W.apply(dz_t, inverse=True)
        else:
            dx, dy, _, _ = direction(np.zeros(0), 0.0)
            alpha, ds, dz = 1.0, np.zeros(0), np.zeros(0)
        if not math.isfinite(alpha) or alpha < 1e-14:
            break
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz

    if check_infeasibility and m and _phase_one_infeasible(G, h, dims, A, b, feas_tol):
        raise Infeasible("phase-one problem certifies an empty feasible set")
    raise MaxIterations(f"no convergence after {it} iterations (pres={pres:.2e}, dres={dres:.2e}, gap={gap:.2e})")


def _phase_one_infeasible(G, h, dims: ConeDims, A, b, tol: float) -> bool:
    """Minimize ``t`` subject to ``Gx + s = h + t e``, ``t >= -1``; the
    constraints are infeasible iff the optimum is positive."""
    n = G.shape[1]
    e = identity(dims)
    G1 = np.vstack([np.hstack([np.zeros((1, n)), -np.ones((1, 1))]), np.hstack([G, -e[:, None]])])
    h1 = np.concatenate([[1.0], h])
    dims1 = ConeDims(l=dims.l + 1, q=dims.q)
    q1 = np.zeros(n + 1)
    q1[-1] = 1.0
    P1 = 1e-8 * np.eye(n + 1)
    P1[-1, -1] = 0.0
    A1 = np.hstack([A, np.zeros((A.shape[0], 1))]) if A.shape[0] else None
    try:
        sol = solve_cone_qp(P1, q1, G1, h1, dims1, A1, b if A.shape[0] else None, check_infeasibility=False, max_iter=80)
    except (MaxIterations, NumericalBreakdown):
        return False
    return sol.x[-1] > 1e3 * tol
