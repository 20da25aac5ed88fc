import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochlemma.errors import TooShort
from stochlemma.hankel import (
    HankelSystem,
    check_assumption_pe,
    check_lemma1_pe,
    count_nonzero_entries,
    hankel,
    is_persistently_exciting,
)
from stochlemma.lti import RealTrajectory

AIRCRAFT = dict(n_u=1, n_y=3, n_w=3, ell=2)


def _cells(kind, T=90, N=10, convention="published"):
    n_u, n_y, n_w, ell = AIRCRAFT["n_u"], AIRCRAFT["n_y"], AIRCRAFT["n_w"], AIRCRAFT["ell"]
    L = 1 + N * n_w
    return count_nonzero_entries(kind, n_u, n_y, n_w, ell, N, L, T - ell - N + 1, convention)


def test_hankel_layout():
    z = np.arange(12.0).reshape(6, 2)
    H = hankel(z, 3)
    assert H.shape == (6, 4)
    # block (i, t) is z[t + i]
    for i in range(3):
        for t in range(4):
            np.testing.assert_array_equal(H[2 * i : 2 * i + 2, t], z[t + i])


@settings(max_examples=30, deadline=None)
@given(T=st.integers(1, 20), d=st.integers(1, 3), depth=st.integers(1, 20))
def test_hankel_shape_property(T, d, depth):
    z = np.random.default_rng(T * 7 + d).normal(size=(T, d))
    if depth > T:
        with pytest.raises(TooShort):
            hankel(z, depth)
    else:
        assert hankel(z, depth).shape == (depth * d, T - depth + 1)


def test_persistency_of_excitation():
    rng = np.random.default_rng(0)
    assert is_persistently_exciting(rng.normal(size=40), 10).passed
    assert not is_persistently_exciting(np.ones(40), 2).passed
    # sinusoid of one frequency excites order 2 but not 3
    s = np.sin(0.7 * np.arange(40))
    assert is_persistently_exciting(s, 2).passed and not is_persistently_exciting(s, 3).passed


def test_recorded_data_certificates(experiment):
    d = experiment.undisturbed
    cert = check_assumption_pe(d.u, d.y, 2, 10)
    assert cert.passed and cert.required == 12 * 1 + 2 * 3
    w = experiment.disturbed
    assert check_lemma1_pe(w.u, w.y, w.w, 2, 10).passed
    assert np.isfinite(cert.condition_number)
    assert "condition_number" in cert.to_dict()


def test_table_counts():
    # [PAPER: Table 2] Scheme II cells
    assert _cells("lemma1") == 205_716
    # [PAPER: Table 2] Scheme I cells under the published counting rule
    assert _cells("lemma5") == 74_892
    # literal stacked-depth rule, within the documented 15 % band
    assert abs(_cells("lemma5", convention="structural") - 74_892) / 74_892 < 0.15


def test_data_saving_percentage():
    # [PAPER: text] 63.6 % fewer Hankel cells
    saving = 1 - _cells("lemma5") / _cells("lemma1")
    assert saving == pytest.approx(0.636, abs=5e-4)


def test_asymptotic_ratio():
    # (n_u + n_y) / (2 (n_u + 2 n_y)) = 4/14 for long horizons
    r = _cells("lemma5", T=5000, N=1000) / _cells("lemma1", T=5000, N=1000)
    assert r == pytest.approx(4 / 14, rel=0.01)


def test_hankel_system_blocks():
    rng = np.random.default_rng(0)
    t = RealTrajectory(rng.normal(size=(20, 1)), rng.normal(size=(20, 2)), rng.normal(size=(20, 2)))
    hs = HankelSystem(t, depths=(3,))
    np.testing.assert_array_equal(hs.full("y", 3), hankel(t.y, 3))
    np.testing.assert_array_equal(hs.block("u", 3, 1, 2), hankel(t.u, 3)[1:3])
