"""Joint polynomial-chaos basis for an i.i.d. disturbance sequence.

Each disturbance component gets one standardized affine germ per time step,
``psi^i = (W^i - E[W^i]) / std(W^i)``, so the per-step basis has
``L_w = 1 + n_w`` functions and the joint basis over a horizon ``N`` has
``L = 1 + N (L_w - 1)`` functions. Basis index ``j >= 1`` belongs to time
step ``k'(j)`` and within-step germ ``I(j)``::

    j = 1 + k'(j) * (L_w - 1) + (I(j) - 1)

Optional initial-condition germs are appended after index ``L - 1``. All
basis functions are orthonormal, so means, variances and quadratic moments
follow directly from the coefficients.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import BasisMismatch, DimensionMismatch, IndexOutOfRange, UnsupportedDistribution

# Entropy tags separating the germ streams of disturbances and initial conditions.
_DISTURBANCE_STREAM = 0
_INIT_STREAM = 1


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    @property
    def variance(self) -> float:
        return (self.high - self.low) ** 2 / 12.0

    def standard_germ(self, rng: np.random.Generator, n: int) -> np.ndarray:
        s3 = math.sqrt(3.0)
        return rng.uniform(-s3, s3, size=n)


@dataclass(frozen=True)
class Gaussian:
    mu: float
    var: float

    @property
    def mean(self) -> float:
        return self.mu

    @property
    def variance(self) -> float:
        return self.var

    def standard_germ(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal(n)


@dataclass(frozen=True)
class Generic:
    """Arbitrary finite-variance distribution given by a centered sampler.

    ``sampler(rng, n)`` must return ``n`` draws of ``W - E[W]``.
    """

    mu: float
    var: Optional[float]
    sampler: Callable[[np.random.Generator, int], np.ndarray]

    @property
    def mean(self) -> float:
        return self.mu

    @property
    def variance(self) -> float:
        return self.var

    def standard_germ(self, rng: np.random.Generator, n: int) -> np.ndarray:
        x = np.asarray(self.sampler(rng, n), dtype=float)
        return x / math.sqrt(self.var) if self.var > 0 else x


Component = Union[Uniform, Gaussian, Generic]


@dataclass(frozen=True)
class DisturbanceSpec:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise DimensionMismatch("a disturbance needs at least one component")
        for c in comps:
            v = c.variance
            if v is None or not np.isfinite(v) or v < 0:
                raise UnsupportedDistribution(f"component {c!r} has no finite variance")
        object.__setattr__(self, "components", comps)

    @classmethod
    def uniform(cls, bounds: Sequence[tuple]) -> "DisturbanceSpec":
        return cls(tuple(Uniform(a, b) for a, b in bounds))

    @property
    def n_w(self) -> int:
        return len(self.components)

    @property
    def mean(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def variance(self) -> np.ndarray:
        return np.array([c.variance for c in self.components])

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def step_pattern(self) -> np.ndarray:
        """Per-step coefficients ``w^n``, shape ``(L_w, n_w)``: the mean, then
        one scaled unit vector per germ."""
        return np.vstack([self.mean, np.diag(self.std)])

    def sample_germs(self, seed: int, step: int, n: int, tag: int = _DISTURBANCE_STREAM) -> np.ndarray:
        """Standardized germs of one time step, shape ``(n, n_w)``.

        Each ``(seed, tag, step, component)`` has its own counter-based stream,
        so draws do not depend on how samples are scheduled.
        """
        out = np.empty((n, self.n_w))
        for i, c in enumerate(self.components):
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, tag, step, i])))
            out[:, i] = c.standard_germ(rng, n)
        return out

    def sample(self, seed: int, step: int, n: int) -> np.ndarray:
        """Realizations of ``W_step``, shape ``(n, n_w)``."""
        return self.mean + self.sample_germs(seed, step, n) * self.std


@dataclass(frozen=True)
class JointBasis:
    N: int
    L_w: int
    n_init: int = 0
    init_spec: Optional[DisturbanceSpec] = None

    def __post_init__(self):
        if self.N < 1 or self.L_w < 1:
            raise IndexOutOfRange("horizon and per-step basis size must be positive")
        if self.n_init and self.init_spec is not None and self.init_spec.n_w != self.n_init:
            raise DimensionMismatch("init_spec must have n_init components")

    @property
    def L(self) -> int:
        """Number of disturbance basis functions, including ``phi^0 = 1``."""
        return 1 + self.N * (self.L_w - 1)

    @property
    def size(self) -> int:
        return self.L + self.n_init

    @property
    def norms(self) -> np.ndarray:
        return np.ones(self.size)

    @property
    def init_indices(self) -> range:
        return range(self.L, self.L + self.n_init)

    def ik(self, k: int) -> range:
        if not 0 <= k < self.N:
            raise IndexOutOfRange(f"step {k} outside [0, {self.N - 1}]")
        m = self.L_w - 1
        return range(1 + k * m, (k + 1) * m + 1)

    def k_prime(self, j: int) -> int:
        self._check(j)
        if j == 0:
            return 0
        return (j - 1) // (self.L_w - 1)

    def within_index(self, j: int) -> int:
        return j - self.k_prime(j) * (self.L_w - 1)

    def _check(self, j: int) -> None:
        if not 0 <= j < self.L:
            raise IndexOutOfRange(f"basis index {j} outside [0, {self.L - 1}]")

    def evaluate(self, germs: np.ndarray, init_germs: Optional[np.ndarray] = None) -> np.ndarray:
        """Basis values ``phi^j(xi)`` for germs of shape ``(n, N, L_w - 1)``."""
        n = germs.shape[0]
        cols = [np.ones((n, 1)), germs.reshape(n, -1)]
        if self.n_init:
            cols.append(np.zeros((n, self.n_init)) if init_germs is None else init_germs)
        return np.hstack(cols)

    def sample(self, spec: DisturbanceSpec, n_samples: int, seed: int):
        """Draw germs and evaluate the basis.

        Returns ``(phi, germs)`` with ``phi`` of shape ``(n, size)`` and the
        disturbance germs of shape ``(n, N, n_w)``.
        """
        if spec.n_w != self.L_w - 1:
            raise BasisMismatch(f"spec has {spec.n_w} components, basis expects {self.L_w - 1}")
        germs = np.stack([spec.sample_germs(seed, k, n_samples) for k in range(self.N)], axis=1)
        init = None
        if self.n_init:
            ispec = self.init_spec or DisturbanceSpec(tuple(Gaussian(0.0, 1.0) for _ in range(self.n_init)))
            init = ispec.sample_germs(seed, 0, n_samples, tag=_INIT_STREAM)
        return self.evaluate(germs, init), germs


def build_joint_basis(spec: DisturbanceSpec, N: int, n_init: int = 0, init_spec=None) -> JointBasis:
    if N < 1:
        raise IndexOutOfRange("horizon N must be at least 1")
    return JointBasis(N=N, L_w=1 + spec.n_w, n_init=n_init, init_spec=init_spec)


def k_prime(basis: JointBasis, j: int) -> int:
    return basis.k_prime(j)


def within_index_I(basis: JointBasis, j: int) -> int:
    return basis.within_index(j)


def disturbance_coeffs(basis: JointBasis, spec: DisturbanceSpec, k: int) -> np.ndarray:
    """Coefficients of ``W_k`` in the joint basis, shape ``(size, n_w)``."""
    if spec.n_w != basis.L_w - 1:
        raise BasisMismatch("disturbance spec does not match the basis")
    out = np.zeros((basis.size, spec.n_w))
    out[0] = spec.mean
    out[list(basis.ik(k))] = np.diag(spec.std)
    return out


@dataclass(frozen=True)
class PceTrajectory:
    """Coefficients of a vector signal over consecutive time steps.

    ``coeffs[t, j, c]`` is the ``j``-th coefficient of component ``c`` at
    time ``start + t``.
    """

    coeffs: np.ndarray
    basis: JointBasis
    start: int = 1
    name: str = "y"

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 3 or c.shape[1] != self.basis.size:
            raise BasisMismatch(f"coefficient array {c.shape} does not match basis size {self.basis.size}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    @property
    def dim(self) -> int:
        return self.coeffs.shape[2]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self))

    def at(self, k: int) -> np.ndarray:
        t = k - self.start
        if not 0 <= t < len(self):
            raise IndexOutOfRange(f"time {k} outside [{self.start}, {self.start + len(self) - 1}]")
        return self.coeffs[t]


def mean(traj: PceTrajectory, k: int) -> np.ndarray:
    return traj.at(k)[0].copy()


def variance(traj: PceTrajectory, k: int) -> np.ndarray:
    return np.sum(traj.at(k)[1:] ** 2, axis=0)


def second_moment_quadratic(traj_y: PceTrajectory, traj_u: PceTrajectory, Q, R, k: int) -> float:
    """``E[Y_k' Q Y_k + U_k' R U_k]`` for an orthonormal basis."""
    if traj_y.basis != traj_u.basis:
        raise BasisMismatch("trajectories use different bases")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    y, u = traj_y.at(k), traj_u.at(k)
    if Q.shape != (y.shape[1],) * 2 or R.shape != (u.shape[1],) * 2:
        raise DimensionMismatch("weight matrices do not match signal dimensions")
    return float(np.einsum("ja,ab,jb->", y, Q, y) + np.einsum("ja,ab,jb->", u, R, u))


def total_quadratic_cost(traj_y: PceTrajectory, traj_u: PceTrajectory, Q, R) -> float:
    return sum(second_moment_quadratic(traj_y, traj_u, Q, R, int(k)) for k in traj_y.times)


def evaluate(traj: PceTrajectory, phi: np.ndarray) -> np.ndarray:
    """Realizations ``sum_j coef^j phi^j`` for basis values ``phi`` of shape
    ``(n, size)``; returns ``(n, T, dim)``."""
    return np.einsum("nj,tjc->ntc", phi, traj.coeffs)


def sample_realizations(trajs: Sequence[PceTrajectory], spec: DisturbanceSpec, n_samples: int, seed: int) -> dict:
    """Sample all trajectories with one shared set of germs.

    Returns ``{name: array (n_samples, T, dim)}`` plus ``"_phi"`` holding the
    evaluated basis (needed to rebuild the matching disturbances).
    """
    trajs = list(trajs)
    basis = trajs[0].basis
    if any(t.basis != basis for t in trajs):
        raise BasisMismatch("all trajectories must share one basis")
    phi, _ = basis.sample(spec, n_samples, seed)
    out = {t.name: evaluate(t, phi) for t in trajs}
    out["_phi"] = phi
    return out


def histogram_rows(samples: np.ndarray, times: Sequence[int], bins: int = 40):
    """Density histograms per time step from ``samples`` of shape ``(n, T)``."""
    rows = []
    for t, k in enumerate(times):
        dens, edges = np.histogram(samples[:, t], bins=bins, density=True)
        rows.extend((int(k), float(edges[i]), float(edges[i + 1]), float(dens[i])) for i in range(bins))
    return rows


def write_histogram_csv(path, samples: np.ndarray, times: Sequence[int], bins: int = 40) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "bin_left", "bin_right", "density"])
        for row in histogram_rows(samples, times, bins):
            wr.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
