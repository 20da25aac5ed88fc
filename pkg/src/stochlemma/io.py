"""JSON and CSV serialization of models, trajectories and solver output.

Matrices are stored row-major with explicit dimensions so a reader never has
to guess the shape of an empty or single-row block. Floats are written with
``repr`` so a round trip is exact.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import DataError, DimensionMismatch
from .lti import RealTrajectory, StateSpaceModel, VarxModel
from .pce import JointBasis, PceTrajectory

PathLike = Union[str, Path]


def matrix_to_json(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"rows": int(M.shape[0]), "cols": int(M.shape[1]), "data": [float(v) for v in M.reshape(-1)]}


def matrix_from_json(doc) -> np.ndarray:
    # nested lists are accepted too, for hand-written configs
    if isinstance(doc, list):
        return np.atleast_2d(np.asarray(doc, dtype=float))
    try:
        r, c, data = int(doc["rows"]), int(doc["cols"]), doc["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed matrix entry: {exc}") from exc
    if len(data) != r * c:
        raise DimensionMismatch(f"matrix declares {r}x{c} but holds {len(data)} values")
    return np.asarray(data, dtype=float).reshape(r, c)


# ------------------------------------------------------------------ models


def model_to_json(m: Union[VarxModel, StateSpaceModel]) -> dict:
    if isinstance(m, VarxModel):
        return {
            "kind": "varx",
            "lag": m.lag,
            "assumption2": bool(m.assumption2),
            "A_hat": matrix_to_json(m.A_hat),
            "B_hat": matrix_to_json(m.B_hat),
            "E_hat": matrix_to_json(m.E_hat),
        }
    if isinstance(m, StateSpaceModel):
        return {"kind": "state_space", **{k: matrix_to_json(getattr(m, k)) for k in "ABCE"}}
    raise TypeError(f"cannot serialize {type(m).__name__}")


def model_from_json(doc: dict) -> Union[VarxModel, StateSpaceModel]:
    kind = doc.get("kind")
    if kind == "varx":
        E = doc.get("E_hat")
        return VarxModel(
            matrix_from_json(doc["A_hat"]),
            matrix_from_json(doc["B_hat"]),
            None if E is None else matrix_from_json(E),
            lag=int(doc["lag"]),
            assumption2=bool(doc.get("assumption2", False)),
        )
    if kind == "state_space":
        return StateSpaceModel(*(matrix_from_json(doc[k]) for k in "ABCE"))
    raise DataError(f"unknown model kind {kind!r}")


# ------------------------------------------------------------ trajectories


def trajectory_to_json(t: RealTrajectory) -> dict:
    doc = {"start": t.start, "length": len(t), "u": matrix_to_json(t.u), "y": matrix_to_json(t.y)}
    if t.w is not None:
        doc["w"] = matrix_to_json(t.w)
    return doc


def trajectory_from_json(doc: dict) -> RealTrajectory:
    w = doc.get("w")
    return RealTrajectory(
        matrix_from_json(doc["u"]),
        matrix_from_json(doc["y"]),
        None if w is None else matrix_from_json(w),
        start=int(doc.get("start", 0)),
    )


def trajectory_header(n_u: int, n_y: int, n_w: int = 0) -> list:
    return (
        ["k"]
        + [f"u_{i + 1}" for i in range(n_u)]
        + [f"y_{i + 1}" for i in range(n_y)]
        + [f"w_{i + 1}" for i in range(n_w)]
    )


def write_trajectory_csv(path: PathLike, t: RealTrajectory, include_w: bool = True) -> None:
    n_w = t.n_w if include_w else 0
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(trajectory_header(t.n_u, t.n_y, n_w))
        for i, k in enumerate(t.times):
            row = [int(k)] + [repr(float(v)) for v in t.u[i]] + [repr(float(v)) for v in t.y[i]]
            if n_w:
                row += [repr(float(v)) for v in t.w[i]]
            wr.writerow(row)


def read_trajectory_csv(path: PathLike) -> RealTrajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    head = rows[0]
    if not head or head[0] != "k":
        raise DataError(f"{path}: first column must be 'k'")
    cols = {p: [i for i, h in enumerate(head) if h.startswith(p + "_")] for p in "uyw"}
    if not cols["u"] or not cols["y"]:
        raise DataError(f"{path}: need at least one u_ and one y_ column")
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if body.size == 0:
        raise DataError(f"{path}: no samples")
    k = body[:, 0].astype(int)
    if np.any(np.diff(k) != 1):
        raise DataError(f"{path}: time column must increase by one")
    w = body[:, cols["w"]] if cols["w"] else None
    return RealTrajectory(body[:, cols["u"]], body[:, cols["y"]], w, start=int(k[0]))


# -------------------------------------------------------- PCE trajectories


def basis_to_json(b: JointBasis) -> dict:
    return {"N": b.N, "L_w": b.L_w, "n_init": b.n_init}


def basis_from_json(doc: dict) -> JointBasis:
    return JointBasis(N=int(doc["N"]), L_w=int(doc["L_w"]), n_init=int(doc.get("n_init", 0)))


def pce_to_json(t: PceTrajectory) -> dict:
    return {
        "name": t.name,
        "start": t.start,
        "basis": basis_to_json(t.basis),
        "shape": list(t.coeffs.shape),
        "coeffs": [float(v) for v in t.coeffs.reshape(-1)],
    }


def pce_from_json(doc: dict) -> PceTrajectory:
    shape = tuple(int(s) for s in doc["shape"])
    coeffs = np.asarray(doc["coeffs"], dtype=float).reshape(shape)
    return PceTrajectory(coeffs, basis_from_json(doc["basis"]), int(doc.get("start", 1)), doc.get("name", "y"))


def write_pce_csv(path: PathLike, t: PceTrajectory) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "j", "component", "value"])
        for ti, k in enumerate(t.times):
            for j in range(t.coeffs.shape[1]):
                for c in range(t.dim):
                    wr.writerow([int(k), j, c + 1, repr(float(t.coeffs[ti, j, c]))])


def read_pce_csv(path: PathLike, basis: JointBasis, name: str = "y") -> PceTrajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["k", "j", "component", "value"]:
        raise DataError(f"{path}: expected header k,j,component,value")
    body = [(int(r[0]), int(r[1]), int(r[2]), float(r[3])) for r in rows[1:] if r]
    if not body:
        raise DataError(f"{path}: no coefficients")
    ks = sorted({r[0] for r in body})
    dim = max(r[2] for r in body)
    coeffs = np.zeros((len(ks), basis.size, dim))
    for k, j, c, v in body:
        if j >= basis.size:
            raise DataError(f"{path}: index {j} outside basis of size {basis.size}")
        coeffs[k - ks[0], j, c - 1] = v
    return PceTrajectory(coeffs, basis, ks[0], name)


# ------------------------------------------------------------- documents


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps(doc) -> str:
    """Deterministic JSON text (sorted keys, fixed indentation)."""
    return json.dumps(doc, indent=2, sort_keys=True, default=_default) + "\n"


def write_json(path: PathLike, doc) -> None:
    Path(path).write_text(dumps(doc))


def read_json(path: PathLike) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def ocp_to_json(problem, solution: Optional[object] = None) -> dict:
    doc = {"problem": problem.summary()}
    if solution is not None:
        doc["solution"] = solution.to_dict()
    return doc
