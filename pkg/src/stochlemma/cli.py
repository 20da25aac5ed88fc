"""Command-line front end.

Every subcommand reads one :class:`ExperimentConfig`, writes its files under
``--out`` and prints a short JSON summary on stdout. Failures print a JSON
error report on stderr and exit with 2 (configuration), 3 (data) or
4 (solver). Wall-clock timings go to separate ``timing*.json`` files and the
benchmark table, so every other file is byte-identical across reruns with
the same configuration and seed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import aircraft as ac
from . import io, streams
from .config import ExperimentConfig, load_config, parse_value
from .errors import ConfigError, DataError, DimensionMismatch, StochLemmaError

log = logging.getLogger("stochlemma")

COMMANDS = ("collect", "estimate", "predict", "ocp", "closedloop", "benchmark")


# ------------------------------------------------------------------ data


def _load_trajectory(path: Path):
    if path.suffix.lower() == ".json":
        return io.trajectory_from_json(io.read_json(path))
    return io.read_trajectory_csv(path)


def _check_dims(name: str, t, m, need_w: bool = False) -> None:
    if t.n_u != m.n_u or t.n_y != m.n_y:
        raise DimensionMismatch(f"{name} data has n_u={t.n_u}, n_y={t.n_y}; model has n_u={m.n_u}, n_y={m.n_y}")
    if need_w and t.n_w != m.n_w:
        raise DimensionMismatch(f"{name} data must carry {m.n_w} disturbance columns, found {t.n_w}")


def _recorded(cfg: ExperimentConfig):
    """Recorded data named in the config, validated against the model."""
    m = cfg.plant()
    ud = dist = None
    if cfg.data.undisturbed is not None:
        ud = _load_trajectory(cfg.data.undisturbed)
        _check_dims("undisturbed", ud, m)
    if cfg.data.disturbed is not None:
        dist = _load_trajectory(cfg.data.disturbed)
        _check_dims("disturbed", dist, m)
    return ud, dist


def _experiment_data(cfg: ExperimentConfig, schemes) -> ac.ExperimentData:
    ud, dist = _recorded(cfg)
    if dist is not None and "II" in schemes and dist.n_w != cfg.plant().n_w:
        raise DataError("the disturbance-data scheme needs a disturbed record with w columns")
    return ac.prepare_data(
        cfg.seed,
        cfg.T,
        cfg.plant(),
        cfg.spec(),
        feedback=cfg.feedback,
        input_scale=cfg.input_scale,
        synthesize="III" in schemes,
        T_hat=cfg.T_hat,
        undisturbed=ud,
        disturbed=dist,
    )


def _initial_window(cfg: ExperimentConfig, index: int = 0):
    m = cfg.plant()
    return ac.initial_window(streams.stream(cfg.seed, streams.INIT, index), cfg.center(), cfg.init_spread, m.lag)


def _solver(cfg: ExperimentConfig) -> dict:
    return cfg.solver.model_dump()


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -------------------------------------------------------------- commands


def cmd_collect(cfg: ExperimentConfig) -> dict:
    m, spec = cfg.plant(), cfg.spec()
    law = ac.collection_feedback(m, cfg.feedback, cfg.seed, spec)
    ud = ac.collect(m, cfg.T, streams.stream(cfg.seed, streams.DATA, 0), None, cfg.input_scale, feedback=law)
    dist = ac.collect(m, cfg.T, streams.stream(cfg.seed, streams.DATA, 1), spec, cfg.input_scale, feedback=law)
    out = _out(cfg)
    io.write_trajectory_csv(out / "undisturbed.csv", ud, include_w=False)
    io.write_trajectory_csv(out / "disturbed.csv", dist, include_w=cfg.include_w)
    io.write_json(out / "model.json", io.model_to_json(m))
    meta = {
        "seed": cfg.seed,
        "T": cfg.T,
        "n_u": m.n_u,
        "n_y": m.n_y,
        "n_w": m.n_w,
        "lag": m.lag,
        "feedback": cfg.feedback,
        "gain": None if law is None else law.K.tolist(),
        "files": ["undisturbed.csv", "disturbed.csv", "model.json"],
    }
    io.write_json(out / "collect.json", meta)
    return meta


def cmd_estimate(cfg: ExperimentConfig) -> dict:
    from .estimator import estimate_disturbances

    m = cfg.plant()
    _, dist = _recorded(cfg)
    law = ac.collection_feedback(m, cfg.feedback, cfg.seed, cfg.spec())
    if dist is None:
        dist = ac.collect(m, cfg.T, streams.stream(cfg.seed, streams.DATA, 1), cfg.spec(), cfg.input_scale, feedback=law)
    est = estimate_disturbances(dist, m.lag)
    out = _out(cfg)
    a, b = est.start, est.start + len(est.w) - 1
    win = dist.window(a, b)
    io.write_trajectory_csv(out / "w_hat.csv", type(win)(win.u, win.y, est.w, start=a))
    meta = {
        "seed": cfg.seed,
        "window": [a, b],
        "theta": est.theta.tolist(),
        "files": ["w_hat.csv"],
    }
    if dist.w is not None and dist.n_w == m.n_y:
        meta["max_abs_error"] = float(np.max(np.abs(est.w - dist.w[a - dist.start : b - dist.start + 1])))
    if np.abs(est.w).max(initial=0.0) <= 1e-9 * max(1.0, np.abs(dist.y).max(initial=0.0)):
        # nothing to remove: the record already is undisturbed
        io.write_trajectory_csv(out / "synthesized.csv", dist, include_w=False)
        meta["synthesis"] = "passthrough"
    else:
        synth, _, cond = ac.synthesize_record(dist, m, law, cfg.seed, cfg.T_hat, cfg.input_scale)
        io.write_trajectory_csv(out / "synthesized.csv", synth, include_w=False)
        meta["synthesis"] = "chunked"
        meta["synthesis_condition"] = cond
    meta["files"].append("synthesized.csv")
    io.write_json(out / "estimate.json", meta)
    return meta


def cmd_predict(cfg: ExperimentConfig) -> dict:
    from .pce import build_joint_basis
    from .predictor import predict_lemma1, propagate_all

    m, spec = cfg.plant(), cfg.spec()
    basis = build_joint_basis(spec, cfg.N)
    data = _experiment_data(cfg, [cfg.scheme])
    init = _initial_window(cfg)
    if cfg.inputs_file is not None:
        U = io.read_pce_csv(cfg.inputs_file, basis, "u").coeffs
        if U.shape != (cfg.N, basis.size, m.n_u):
            raise DimensionMismatch(f"input coefficients have shape {U.shape}, expected {(cfg.N, basis.size, m.n_u)}")
    else:
        U = np.zeros((cfg.N, basis.size, m.n_u))
    if cfg.scheme == "II":
        pred = predict_lemma1(data.disturbed, basis, spec, init, U)
    else:
        pred = propagate_all(data.for_scheme(cfg.scheme), basis, spec, init, U)
    pred.check_causality(spec)
    out = _out(cfg)
    io.write_pce_csv(out / "prediction_y.csv", pred.y)
    io.write_pce_csv(out / "prediction_u.csv", pred.u)
    io.write_json(out / "prediction.json", {"y": io.pce_to_json(pred.y), "u": io.pce_to_json(pred.u)})
    report = {"seed": cfg.seed, "scheme": cfg.scheme, **pred.report()}
    io.write_json(out / "predict_report.json", report)
    return {"seed": cfg.seed, "scheme": cfg.scheme, "N": cfg.N, "max_residual": report["max_residual"]}


def cmd_ocp(cfg: ExperimentConfig) -> dict:
    from .ocp import open_loop_experiment

    out = _out(cfg)
    data = _experiment_data(cfg, [cfg.scheme]).for_scheme(cfg.scheme)
    Q, R = cfg.weights()
    con = cfg.constraints()
    res = open_loop_experiment(
        seed=cfg.seed,
        N=cfg.N,
        scheme=cfg.scheme,
        n_samples=cfg.mc_samples,
        out_dir=out,
        bins=cfg.bins,
        data=data,
        init=_initial_window(cfg),
        spec=cfg.spec(),
        Q=Q,
        R=R,
        constraint=con[0] if con else None,
        solver=_solver(cfg),
    ) if con else _ocp_unconstrained(cfg, data, out)
    io.write_json(out / "ocp.json", io.ocp_to_json(res.problem, res.solution))
    io.write_pce_csv(out / "ocp_u.csv", res.solution.u)
    io.write_pce_csv(out / "ocp_y.csv", res.solution.y)
    summary = {"seed": cfg.seed, **res.to_dict()}
    summary["histograms"] = [Path(p).name for p in res.histogram_files]
    io.write_json(out / "ocp_result.json", summary)
    return summary


def _ocp_unconstrained(cfg: ExperimentConfig, data, out: Path):
    from .ocp import OpenLoopResult, build_ocp, solve_ocp
    from .pce import JointBasis, evaluate, write_histogram_csv

    spec = cfg.spec()
    Q, R = cfg.weights()
    basis = JointBasis(N=cfg.N, L_w=1 + spec.n_w)
    problem = build_ocp(cfg.scheme, data, basis, spec, _initial_window(cfg), Q, R, [])
    sol = solve_ocp(problem, **_solver(cfg))
    phi, _ = basis.sample(spec, cfg.mc_samples, streams.substream_seed(cfg.seed, streams.GERMS))
    Y = evaluate(sol.y, phi)
    files = []
    for c in range(min(2, problem.n_y)):
        path = out / f"pdf_y{c + 1}.csv"
        write_histogram_csv(path, Y[:, :, c], range(1, cfg.N + 1), cfg.bins)
        files.append(path)
    return OpenLoopResult(problem, sol, Y, np.ones(0), (), files)


def cmd_closedloop(cfg: ExperimentConfig) -> dict:
    from .closedloop import run_closed_loop

    m, spec = cfg.plant(), cfg.spec()
    Q, R = cfg.weights()
    data = _experiment_data(cfg, cfg.schemes)
    init = _initial_window(cfg)
    w = ac.draw(spec, streams.stream(cfg.seed, streams.DISTURBANCE, 0), cfg.steps)
    out = _out(cfg)
    reports, timing = {}, {}
    for s in cfg.schemes:
        rep = run_closed_loop(
            s, data.for_scheme(s), m, spec, init, w, cfg.steps, cfg.N, Q, R, cfg.constraints(), cfg.share,
            {"root": cfg.seed, "sample": 0}, _solver(cfg),
        )
        rep.write_csv(out / f"closedloop_{s}.csv")
        doc = rep.to_dict()
        timing[s] = {k: doc.pop(k) for k in ("solve_times", "time_mean_s", "time_sd_s")}
        reports[s] = doc
    io.write_json(out / "closedloop.json", {"seed": cfg.seed, "reports": reports})
    io.write_json(out / "timing_closedloop.json", timing)
    summary = {"seed": cfg.seed, "J_cl": {s: r["J_cl"] for s, r in reports.items()}}
    summary["failed"] = {s: r["failed"] for s, r in reports.items()}
    return summary


def cmd_benchmark(cfg: ExperimentConfig) -> dict:
    from .closedloop import benchmark_schemes

    Q, R = cfg.weights()
    data = _experiment_data(cfg, cfg.schemes)
    res = benchmark_schemes(
        n_samples=cfg.n_samples,
        seed=cfg.seed,
        schemes=cfg.schemes,
        steps=cfg.steps,
        N=cfg.N,
        T=len(data.undisturbed),
        kappa=cfg.chance.kappa,
        feedback=cfg.feedback,
        init_spread=cfg.init_spread,
        share=cfg.share,
        keep_reports=cfg.write_runs,
        model=cfg.plant(),
        spec=cfg.spec(),
        Q=Q,
        R=R,
        constraints=cfg.constraints(),
        init_center=cfg.center(),
        data=data,
        solver=_solver(cfg),
        workers=cfg.workers,
    )
    out = _out(cfg)
    res.write(out, runs=cfg.write_runs)
    summary = {"seed": cfg.seed, "schemes": {k: vars(v) for k, v in res.summaries.items()}}
    if "I" in res.summaries and "II" in res.summaries:
        summary["time_saving_I_vs_II"] = res.time_saving()
    return summary


HANDLERS = {
    "collect": cmd_collect,
    "estimate": cmd_estimate,
    "predict": cmd_predict,
    "ocp": cmd_ocp,
    "closedloop": cmd_closedloop,
    "benchmark": cmd_benchmark,
}


# --------------------------------------------------------------- parsing


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--seed", type=int, help="root seed of all random streams")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--validate-only", action="store_true", help="validate configuration and data, then stop")
    p.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--scheme", choices=["I", "II", "III"], help="scheme for predict/ocp")
    p.add_argument("--schemes", help="comma-separated schemes for closedloop/benchmark")
    p.add_argument("--N", type=int, dest="N", help="prediction horizon")
    p.add_argument("--steps", type=int, help="closed-loop steps")
    p.add_argument("--T", type=int, dest="T", help="recorded data length")
    p.add_argument("--n-samples", type=int, dest="n_samples", help="benchmark samples")
    p.add_argument("--kappa", type=float, help="chance-constraint back-off factor")
    p.add_argument("--workers", type=int, help="benchmark worker processes")
    p.add_argument(
        "--set", action="append", metavar="KEY=VALUE", dest="overrides", help="override any config field (dotted key)"
    )
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="stochlemma",
        parents=[common],
        description="Data-driven stochastic prediction and chance-constrained control experiments.",
        epilog="Precedence: defaults < --config file < --set < dedicated flags.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "collect": "simulate and record input/output data",
        "estimate": "estimate disturbances and synthesize an undisturbed record",
        "predict": "propagate PCE coefficients from data",
        "ocp": "solve one chance-constrained OCP and export output histograms",
        "closedloop": "receding-horizon run of the selected schemes",
        "benchmark": "timing, data volume and cost table over many samples",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], argument_default=argparse.SUPPRESS)
    return parser


def _overrides(ns: argparse.Namespace) -> dict:
    over = {}
    for item in getattr(ns, "overrides", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}", [{"field": item, "message": "missing '='"}])
        k, v = item.split("=", 1)
        over[k.strip()] = parse_value(v)
    for key in ("seed", "N", "steps", "T", "n_samples", "workers", "kappa", "scheme", "out"):
        if hasattr(ns, key):
            value = getattr(ns, key)
            over["chance.kappa" if key == "kappa" else key] = str(value) if isinstance(value, Path) else value
    if hasattr(ns, "schemes"):
        over["schemes"] = [s.strip() for s in ns.schemes.split(",") if s.strip()]
    return over


def _error_report(exc: BaseException, code: int) -> dict:
    doc = {"status": "error", "exit_code": code, "error": type(exc).__name__, "message": str(exc)}
    fields = getattr(exc, "fields", None)
    if fields:
        doc["fields"] = fields
    return doc


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StochLemmaError):
        return exc.exit_code
    if isinstance(exc, (OSError, ValueError)):
        return DataError.exit_code
    return 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(ns, "log_level", "WARNING"), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = load_config(getattr(ns, "config", None), _overrides(ns))
        if getattr(ns, "validate_only", False):
            ud, dist = _recorded(cfg)
            m = cfg.plant()
            doc = {
                "status": "valid",
                "command": ns.command,
                "dims": {"n_u": m.n_u, "n_y": m.n_y, "n_w": m.n_w, "lag": m.lag},
                "data": {k: (None if t is None else len(t)) for k, t in (("undisturbed", ud), ("disturbed", dist))},
                "config": cfg.model_dump(mode="json"),
            }
            print(io.dumps(doc), end="")
            return 0
        summary = HANDLERS[ns.command](cfg)
    except Exception as exc:  # every failure becomes a JSON report
        code = _exit_code(exc)
        if code == 1:
            log.exception("unexpected failure")
        print(io.dumps(_error_report(exc, code)), end="", file=sys.stderr)
        return code
    print(io.dumps({"status": "ok", "command": ns.command, **summary}), end="")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
