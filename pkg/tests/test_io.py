import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stochlemma import aircraft as ac
from stochlemma import io
from stochlemma.errors import DataError, DimensionMismatch
from stochlemma.lti import RealTrajectory, StateSpaceModel
from stochlemma.pce import JointBasis, PceTrajectory

finite = st.floats(-1e6, 1e6, allow_nan=False, width=64)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite))
def test_matrix_roundtrip_is_exact(M):
    # [TRIVIAL]
    np.testing.assert_array_equal(io.matrix_from_json(io.matrix_to_json(M)), M)


def test_matrix_errors():
    with pytest.raises(DimensionMismatch):
        io.matrix_from_json({"rows": 2, "cols": 2, "data": [1.0]})
    with pytest.raises(DataError):
        io.matrix_from_json({"rows": 2})
    np.testing.assert_array_equal(io.matrix_from_json([[1, 2], [3, 4]]), [[1, 2], [3, 4]])


def test_model_roundtrip(plant):
    m = io.model_from_json(io.model_to_json(plant))
    np.testing.assert_array_equal(m.A_hat, plant.A_hat)
    np.testing.assert_array_equal(m.B_hat, plant.B_hat)
    assert m.lag == plant.lag
    ss = StateSpaceModel(np.array([[0.5, 1.0], [0.0, 0.3]]), np.array([[0.0], [1.0]]), np.array([[1.0, 0.0]]), np.array([[1.0], [0.0]]))
    back = io.model_from_json(io.model_to_json(ss))
    np.testing.assert_array_equal(back.A, ss.A)
    with pytest.raises(DataError):
        io.model_from_json({"kind": "tf"})


def test_trajectory_csv_and_json_roundtrip(tmp_path, plant, spec):
    t = ac.collect(plant, 20, np.random.default_rng(0), spec)
    io.write_trajectory_csv(tmp_path / "t.csv", t)
    back = io.read_trajectory_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.u, t.u)
    np.testing.assert_array_equal(back.y, t.y)
    np.testing.assert_array_equal(back.w, t.w)
    assert back.start == t.start
    io.write_trajectory_csv(tmp_path / "nw.csv", t, include_w=False)
    assert io.read_trajectory_csv(tmp_path / "nw.csv").w is None
    assert "w_1" not in (tmp_path / "nw.csv").read_text().splitlines()[0]
    j = io.trajectory_from_json(io.trajectory_to_json(t))
    np.testing.assert_array_equal(j.y, t.y)


def test_trajectory_csv_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,u_1,y_1\n1,0,0\n")
    with pytest.raises(DataError):
        io.read_trajectory_csv(bad)
    bad.write_text("k,u_1,y_1\n1,0,0\n3,0,0\n")
    with pytest.raises(DataError):
        io.read_trajectory_csv(bad)
    bad.write_text("k,u_1,y_1\n1,0,zero\n")
    with pytest.raises(DataError):
        io.read_trajectory_csv(bad)
    bad.write_text("")
    with pytest.raises(DataError):
        io.read_trajectory_csv(bad)


def test_pce_roundtrip(tmp_path):
    basis = JointBasis(N=3, L_w=3)
    coeffs = np.random.default_rng(1).normal(size=(3, basis.size, 2))
    t = PceTrajectory(coeffs, basis, 1, "y")
    back = io.pce_from_json(io.pce_to_json(t))
    np.testing.assert_array_equal(back.coeffs, coeffs)
    io.write_pce_csv(tmp_path / "p.csv", t)
    csvb = io.read_pce_csv(tmp_path / "p.csv", basis)
    np.testing.assert_array_equal(csvb.coeffs, coeffs)
    with pytest.raises(DataError):
        io.read_pce_csv(tmp_path / "p.csv", JointBasis(N=1, L_w=2))


def test_json_documents_are_deterministic(tmp_path):
    doc = {"b": np.arange(3), "a": np.float64(1.5), "c": np.int64(2)}
    assert io.dumps(doc) == io.dumps(dict(reversed(list(doc.items()))))
    io.write_json(tmp_path / "d.json", doc)
    assert io.read_json(tmp_path / "d.json") == {"a": 1.5, "b": [0, 1, 2], "c": 2}
    (tmp_path / "x.json").write_text("{")
    with pytest.raises(DataError):
        io.read_json(tmp_path / "x.json")
