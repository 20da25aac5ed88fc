"""Aircraft benchmark plant (VARX form, lag 2) and data generation helpers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import streams
from .errors import DataError, TooShort
from .estimator import (
    FeedbackLaw,
    VarxPlant,
    estimate_disturbances,
    find_stabilizing_feedback,
    generate_undisturbed_near_origin,
    lqr_feedback,
)
from .lti import RealTrajectory, VarxModel, simulate_varx
from .pce import DisturbanceSpec

A_HAT = np.array(
    [
        [-0.201, 0.256, 0.050, 0.160, -0.256, 0.086],
        [-4.773, 3.688, 0.650, 2.982, -2.688, 1.707],
        [-15.746, 12.898, 2.319, 10.461, -12.897, 5.171],
    ]
)
B_HAT = np.array(
    [
        [-0.019, -1.440],
        [0.711, -1.800],
        [1.444, -26.922],
    ]
)
LAG = 2
DISTURBANCE_BOUNDS = ((-0.1, 0.1), (-3.0, 3.0), (-0.8, 0.8))
Q = np.eye(3)
R = np.eye(1)
Y1_BOUND = 0.349
CHANCE_LEVEL = 0.8
INIT_OUTPUT = np.array([0.0, -100.0, 0.0])
DATA_LENGTH = 90


def model() -> VarxModel:
    return VarxModel(A_HAT, B_HAT, lag=LAG, assumption2=True)


def disturbance_spec() -> DisturbanceSpec:
    return DisturbanceSpec.uniform(DISTURBANCE_BOUNDS)


def random_window(m: VarxModel, rng: np.random.Generator, scale: float = 1.0, start: int = 0) -> RealTrajectory:
    return RealTrajectory(
        scale * rng.uniform(-1, 1, (m.lag, m.n_u)),
        scale * rng.uniform(-1, 1, (m.lag, m.n_y)),
        np.zeros((m.lag, m.n_w)),
        start=start,
    )


def initial_window(rng: np.random.Generator, center=INIT_OUTPUT, spread: float = 1.0, ell: int = LAG) -> RealTrajectory:
    """Measured initial window ``(u, y)_[1-l, 0]`` around an output operating point.

    Inputs are zero; every output sample is ``center`` plus a uniform
    perturbation of half-width ``spread``.
    """
    center = np.asarray(center, dtype=float)
    y = center + rng.uniform(-spread, spread, (ell, center.shape[0]))
    return RealTrajectory(np.zeros((ell, 1)), y, None, start=1 - ell)


def collect(
    m: VarxModel,
    T: int,
    rng: np.random.Generator,
    spec: DisturbanceSpec | None = None,
    input_scale: float = 1.0,
    init_scale: float = 1.0,
    feedback=None,
) -> RealTrajectory:
    """Record ``T`` samples of the plant under uniform random excitation.

    With ``spec=None`` the plant is undisturbed while recording; the random
    initial window stands in for the effect of earlier disturbances. With a
    ``feedback`` law the input is ``K z_k + v_k``, otherwise just ``v_k``;
    ``v_k`` is uniform on ``[-input_scale, input_scale]``. The result covers
    times ``1..T`` and carries the realized disturbances (zeros when
    undisturbed), ``w[t]`` entering the output at ``t + 1``.
    """
    init = random_window(m, rng, init_scale, start=1 - m.lag)
    v = input_scale * rng.uniform(-1, 1, (T, m.n_u))
    if spec is None:
        w = np.zeros((T, m.n_w))
        w_init = np.zeros((m.lag, m.n_w))
    else:
        w = draw(spec, rng, T)
        w_init = draw(spec, rng, m.lag)
    init = RealTrajectory(init.u, init.y, w_init, start=init.start)
    if feedback is None:
        return simulate_varx(m, init, v, w).window(1, T)
    ell = m.lag
    u = np.vstack([init.u, np.zeros((T, m.n_u))])
    y = np.vstack([init.y, np.zeros((T, m.n_y))])
    ww = np.vstack([w_init, w])
    for k in range(ell, ell + T):
        # y_k uses the window ending at k-1; u_k then sees that same window
        y[k] = m.A_hat @ y[k - ell : k].reshape(-1) + m.B_hat @ u[k - ell : k].reshape(-1) + ww[k - 1]
        u[k] = feedback(u[k - ell : k], y[k - ell : k], v[k - ell])
    return RealTrajectory(u[ell:], y[ell:], ww[ell:], start=1)


def draw(spec: DisturbanceSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` realizations of ``W`` drawn from a plain generator."""
    germs = np.column_stack([c.standard_germ(rng, n) for c in spec.components])
    return spec.mean + germs * spec.std


@dataclass
class ExperimentData:
    """Offline records for the three controller variants.

    ``undisturbed`` feeds the undisturbed-data predictor, ``disturbed``
    (with its recorded disturbance) the disturbance-data predictor, and
    ``synthesized`` is rebuilt from ``disturbed`` with estimated
    disturbances only.
    """

    undisturbed: RealTrajectory
    disturbed: RealTrajectory
    synthesized: Optional[RealTrajectory]
    feedback: Optional[FeedbackLaw]
    synthesis_condition: float = float("nan")

    def for_scheme(self, scheme: str) -> RealTrajectory:
        if scheme == "I":
            return self.undisturbed
        if scheme == "II":
            return self.disturbed
        if scheme == "III":
            if self.synthesized is None:
                raise DataError("no synthesized record was prepared")
            return self.synthesized
        raise DataError(f"unknown scheme {scheme!r}")


def collection_feedback(m: VarxModel, mode: str, seed: int = 0, spec: DisturbanceSpec | None = None) -> Optional[FeedbackLaw]:
    """Gain used while recording: ``none``, ``lqr`` (from the known model)
    or ``search`` (the iterative data-driven procedure on a simulated plant)."""
    if mode == "none":
        return None
    if mode == "lqr":
        return lqr_feedback(m)
    if mode == "search":
        rng = streams.stream(seed, streams.FEEDBACK)
        spec = spec or disturbance_spec()
        plant = VarxPlant(m, random_window(m, rng, 1.0, start=1 - m.lag), lambda: draw(spec, rng, 1)[0])
        return find_stabilizing_feedback(plant, m.n_u, m.n_y, seed=seed)
    raise DataError(f"unknown feedback mode {mode!r}")


def synthesize_record(
    dist: RealTrajectory,
    m: VarxModel,
    law: Optional[FeedbackLaw],
    seed: int,
    T_hat: Optional[int] = None,
    input_scale: float = 1.0,
):
    """Undisturbed record rebuilt from ``dist`` using estimated disturbances
    only. Returns ``(trajectory over 1..T, estimate, worst condition number)``."""
    T = len(dist)
    est = estimate_disturbances(dist, m.lag)
    syn_law = law or FeedbackLaw.zero(m.n_u, m.n_y, m.lag)
    nz = m.lag * (m.n_u + m.n_y)
    if T_hat is None:
        # largest chunk whose pinned rows fit in the available columns
        fits = [t for t in range(2, T) if (T - m.lag) - t + 1 >= t * (m.n_u + m.n_y) + nz]
        if not fits:
            raise TooShort(f"{T} samples are too few to synthesize an undisturbed record")
        T_hat = max(fits)
    res = generate_undisturbed_near_origin(
        dist, est, syn_law, T_hat, length=T - m.lag, rng=streams.stream(seed, streams.SYNTHESIS), v_scale=input_scale
    )
    return res.trajectory.shifted(1), est, max(res.condition_numbers)


def prepare_data(
    seed: int,
    T: int = DATA_LENGTH,
    m: VarxModel | None = None,
    spec: DisturbanceSpec | None = None,
    feedback: str = "lqr",
    input_scale: float = 1.0,
    synthesize: bool = True,
    T_hat: Optional[int] = None,
    undisturbed: Optional[RealTrajectory] = None,
    disturbed: Optional[RealTrajectory] = None,
) -> ExperimentData:
    """Record (or accept) the offline data of all three controller variants.

    Passing ``undisturbed`` / ``disturbed`` skips the corresponding
    simulation; the disturbed record must then carry its disturbances.
    """
    m = m or model()
    spec = spec or disturbance_spec()
    law = collection_feedback(m, feedback, seed, spec)
    ud = undisturbed if undisturbed is not None else collect(m, T, streams.stream(seed, streams.DATA, 0), None, input_scale, feedback=law)
    dist = disturbed if disturbed is not None else collect(m, T, streams.stream(seed, streams.DATA, 1), spec, input_scale, feedback=law)
    synth, cond = None, float("nan")
    if synthesize:
        synth, _, cond = synthesize_record(dist, m, law, seed, T_hat, input_scale)
    return ExperimentData(ud, dist, synth, law, cond)
