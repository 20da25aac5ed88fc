"""Receding-horizon runs of the three controller variants and the
data-volume / timing / cost benchmark."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import aircraft as ac
from . import streams
from .errors import StochLemmaError
from .estimator import VarxPlant
from .hankel import count_nonzero_entries
from .lti import RealTrajectory, VarxModel
from .ocp import SCHEMES, ChanceConstraint, build_ocp, solve_ocp
from .pce import DisturbanceSpec, JointBasis

log = logging.getLogger(__name__)


@dataclass
class SchemeReport:
    scheme: str
    init: RealTrajectory
    u: np.ndarray
    y: np.ndarray
    J_cl: float
    solve_times: List[float]
    nonzeros: int
    seeds: Dict[str, int] = field(default_factory=dict)
    failed: bool = False
    error: Optional[str] = None

    @property
    def steps(self) -> int:
        return len(self.u)

    @property
    def time_mean(self) -> float:
        return float(np.mean(self.solve_times)) if self.solve_times else float("nan")

    @property
    def time_sd(self) -> float:
        return float(np.std(self.solve_times, ddof=1)) if len(self.solve_times) > 1 else 0.0

    def recompute_cost(self, Q, R) -> float:
        Q, R = np.atleast_2d(Q), np.atleast_2d(R)
        return float(np.einsum("ka,ab,kb->", self.y, Q, self.y) + np.einsum("ka,ab,kb->", self.u, R, self.u))

    def trajectory(self) -> RealTrajectory:
        return RealTrajectory(np.vstack([self.init.u, self.u]), np.vstack([self.init.y, self.y]), None, start=self.init.start)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "J_cl": self.J_cl,
            "steps": self.steps,
            "u": self.u.tolist(),
            "y": self.y.tolist(),
            "init": {"u": self.init.u.tolist(), "y": self.init.y.tolist(), "start": self.init.start},
            "solve_times": self.solve_times,
            "time_mean_s": self.time_mean,
            "time_sd_s": self.time_sd,
            "nonzeros": self.nonzeros,
            "seeds": self.seeds,
            "failed": self.failed,
            "error": self.error,
        }

    def write_csv(self, path) -> None:
        t = self.trajectory()
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k"] + [f"u_{i + 1}" for i in range(t.n_u)] + [f"y_{i + 1}" for i in range(t.n_y)])
            for k, u, y in zip(t.times, t.u, t.y):
                wr.writerow([int(k)] + [repr(float(v)) for v in u] + [repr(float(v)) for v in y])


def table_nonzeros(scheme: str, n_u: int, n_y: int, n_w: int, ell: int, N: int, T: int) -> int:
    """Table-style Hankel cell count; the synthesized-data variant uses the
    same predictor structure as the undisturbed one."""
    L = 1 + N * n_w
    n_g = T - ell - N + 1
    kind = "lemma1" if scheme == "II" else "lemma5"
    return count_nonzero_entries(kind, n_u, n_y, n_w, ell, N, L, n_g)


def run_closed_loop(
    scheme: str,
    data: RealTrajectory,
    model: VarxModel,
    spec: DisturbanceSpec,
    init: RealTrajectory,
    disturbances: np.ndarray,
    steps: int = 30,
    N: int = 10,
    Q=None,
    R=None,
    constraints: Sequence[ChanceConstraint] = (),
    share: bool = False,
    seeds: Optional[dict] = None,
    solver: Optional[dict] = None,
) -> SchemeReport:
    """Receding-horizon control of the simulated plant.

    At every step the last ``l`` samples form the OCP's initial window, the
    mean first input is applied and the plant advances with the next entry
    of ``disturbances``. Solver or data errors stop the run and return the
    partial report with ``failed=True``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    Q = np.eye(model.n_y) if Q is None else np.atleast_2d(Q)
    R = np.eye(model.n_u) if R is None else np.atleast_2d(R)
    ell = model.lag
    plant = VarxPlant(model, init, disturbances)
    basis = JointBasis(N=N, L_w=1 + spec.n_w)
    us, ys, times = [], [], []
    failed, err = False, None
    nonzeros = table_nonzeros(scheme, model.n_u, model.n_y, spec.n_w, ell, N, len(data))
    for _ in range(steps):
        win = plant.window().shifted(1 - ell)
        try:
            t0 = time.perf_counter()
            problem = build_ocp(scheme, data, basis, spec, win, Q, R, constraints, share=share)
            sol = solve_ocp(problem, **(solver or {}))
            times.append(time.perf_counter() - t0)
        except StochLemmaError as exc:
            failed, err = True, f"{type(exc).__name__}: {exc}"
            log.warning("scheme %s stopped at step %d: %s", scheme, len(us) + 1, err)
            break
        u = sol.first_input()
        y = plant.step(u)
        us.append(u)
        ys.append(y)
    u_arr = np.array(us).reshape(-1, model.n_u)
    y_arr = np.array(ys).reshape(-1, model.n_y)
    rep = SchemeReport(scheme, init, u_arr, y_arr, 0.0, times, nonzeros, dict(seeds or {}), failed, err)
    rep.J_cl = rep.recompute_cost(Q, R)
    return rep


@dataclass
class _SampleJob:
    """One benchmark sample: every scheme on the same initial window and
    disturbance sequence. Picklable so samples can run in worker processes."""

    schemes: tuple
    data: "ac.ExperimentData"
    model: VarxModel
    spec: DisturbanceSpec
    center: np.ndarray
    init_spread: float
    seed: int
    steps: int
    N: int
    Q: np.ndarray
    R: np.ndarray
    constraints: list
    share: bool
    solver: Optional[dict]

    def __call__(self, i: int) -> Dict[str, SchemeReport]:
        m = self.model
        init = ac.initial_window(streams.stream(self.seed, streams.INIT, i), self.center, self.init_spread, m.lag)
        w = ac.draw(self.spec, streams.stream(self.seed, streams.DISTURBANCE, i), self.steps)
        seeds = {"root": self.seed, "sample": i}
        return {
            s: run_closed_loop(
                s, self.data.for_scheme(s), m, self.spec, init, w, self.steps, self.N, self.Q, self.R,
                self.constraints, self.share, seeds, self.solver,
            )
            for s in self.schemes
        }


@dataclass
class SchemeSummary:
    scheme: str
    nonzeros: int
    time_mean_s: float
    time_sd_s: float
    J_cl: float
    n_success: int
    n_failed: int
    assembled_cells: int = 0

    def row(self) -> list:
        return [self.scheme, self.nonzeros, self.time_mean_s, self.time_sd_s, self.J_cl]


@dataclass
class BenchmarkResult:
    summaries: Dict[str, SchemeSummary]
    reports: Dict[str, List[SchemeReport]]
    config: dict

    def time_saving(self, fast: str = "I", slow: str = "II") -> float:
        return 1.0 - self.summaries[fast].time_mean_s / self.summaries[slow].time_mean_s

    def write(self, out_dir, runs: bool = False) -> Path:
        """Write ``table2.csv`` / ``table2.json`` and, with ``runs``, one
        trajectory CSV per scheme and sample under ``runs/``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if runs:
            (out / "runs").mkdir(exist_ok=True)
            for s, reps in self.reports.items():
                for i, r in enumerate(reps):
                    r.write_csv(out / "runs" / f"scheme_{s}_{i:04d}.csv")
        with open(out / "table2.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["scheme", "nonzeros", "time_mean_s", "time_sd_s", "J_cl"])
            for s in self.summaries.values():
                wr.writerow([s.scheme, s.nonzeros, repr(s.time_mean_s), repr(s.time_sd_s), repr(s.J_cl)])
        payload = {
            "config": self.config,
            "schemes": {k: vars(v) for k, v in self.summaries.items()},
        }
        (out / "table2.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
        return out / "table2.csv"


def benchmark_schemes(
    n_samples: int = 1000,
    seed: int = 0,
    schemes: Sequence[str] = SCHEMES,
    steps: int = 30,
    N: int = 10,
    T: int = ac.DATA_LENGTH,
    kappa: float = 3.0,
    feedback: str = "lqr",
    init_spread: float = 1.0,
    share: bool = False,
    keep_reports: bool = True,
    model: Optional[VarxModel] = None,
    spec: Optional[DisturbanceSpec] = None,
    Q=None,
    R=None,
    constraints: Optional[Sequence[ChanceConstraint]] = None,
    init_center=None,
    data: Optional["ac.ExperimentData"] = None,
    solver: Optional[dict] = None,
    workers: int = 1,
) -> BenchmarkResult:
    """Closed-loop comparison over sampled initial windows and disturbance
    sequences; all schemes of one sample share the same realizations and
    are run back to back so timing drift affects them equally. With
    ``workers > 1`` samples run in separate processes; the aggregate does
    not depend on the order in which they finish.

    Defaults reproduce the aircraft setting; every ingredient can be
    replaced for other plants.
    """
    m = model or ac.model()
    spec = spec or ac.disturbance_spec()
    Q = ac.Q if Q is None else Q
    R = ac.R if R is None else R
    center = ac.INIT_OUTPUT if init_center is None else init_center
    if data is None:
        data = ac.prepare_data(seed, T, m, spec, feedback=feedback, synthesize="III" in schemes)
    T = len(data.undisturbed)
    if constraints is None:
        constraints = [ChanceConstraint(0, -ac.Y1_BOUND, ac.Y1_BOUND, ac.CHANCE_LEVEL, kappa)]
    con = list(constraints)
    reports: Dict[str, List[SchemeReport]] = {s: [] for s in schemes}
    cells: Dict[str, int] = {}
    job = _SampleJob(tuple(schemes), data, m, spec, center, init_spread, seed, steps, N, Q, R, con, share, solver)
    if workers > 1:
        # samples are independent; results come back in sample order
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(n_samples)))
    else:
        results = []
        for i in range(n_samples):
            results.append(job(i))
            log.info("sample %d/%d done", i + 1, n_samples)
    for res in results:
        for s in schemes:
            reports[s].append(res[s])
    basis = JointBasis(N=N, L_w=1 + spec.n_w)
    summaries = {}
    for s in schemes:
        ok = [r for r in reports[s] if not r.failed]
        times = [t for r in ok for t in r.solve_times]
        if s not in cells:
            init = ac.initial_window(streams.stream(seed, streams.INIT, 0), center, init_spread, m.lag)
            try:
                cells[s] = build_ocp(s, data.for_scheme(s), basis, spec, init, Q, R, con, share=share).hankel_cells
            except StochLemmaError:
                cells[s] = 0
        summaries[s] = SchemeSummary(
            s,
            table_nonzeros(s, m.n_u, m.n_y, spec.n_w, m.lag, N, T),
            float(np.mean(times)) if times else float("nan"),
            float(np.std(times, ddof=1)) if len(times) > 1 else 0.0,
            float(np.mean([r.J_cl for r in ok])) if ok else float("nan"),
            len(ok),
            len(reports[s]) - len(ok),
            cells[s],
        )
    config = {
        "n_samples": n_samples,
        "seed": seed,
        "steps": steps,
        "N": N,
        "T": T,
        "kappa": kappa,
        "feedback": feedback,
        "init_spread": init_spread,
        "share": share,
        "workers": workers,
    }
    return BenchmarkResult(summaries, reports if keep_reports else {}, config)
