import numpy as np
import pytest
from scipy.optimize import bisect

from sisr_tail import spectral as sp
from sisr_tail.errors import BracketError


@pytest.fixture(scope="module")
def chain():
    return sp.discretize_example5()


def test_grid_layout(chain):
    assert chain.n_states == 1000
    assert chain.states[0] == pytest.approx(-2.495)
    assert chain.states[499] == pytest.approx(2.495)
    assert chain.states[-1] == pytest.approx(7.495)
    np.testing.assert_allclose(chain.transition.sum(axis=1), 1.0, atol=1e-12)


def test_two_state_chain():
    ch = sp.discretize_example5(2, 0.0, 1.0, drift=lambda x: 0 * x)
    w = np.exp(-0.5 * np.array([1.0, 2.0]) ** 2)
    np.testing.assert_allclose(ch.transition, np.tile(w / w.sum(), (2, 1)), atol=1e-15)


def test_invalid_chains_rejected():
    with pytest.raises(ValueError):
        sp.DiscreteChain(np.array([0.0, 1.0]), np.array([[0.5, 0.6], [0.5, 0.5]]))
    with pytest.raises(ValueError):
        sp.DiscreteChain(np.array([0.0, 1.0]), np.array([[1.5, -0.5], [0.5, 0.5]]))
    with pytest.raises(ValueError):
        sp.discretize_example5(1, 0.0, 1.0)


def test_log_perron_zero_tilt(chain):
    assert abs(sp.log_perron(chain, 0.0)) <= 1e-10
    assert abs(sp.psi_markov(chain, 0.0)) <= 1e-10


def test_one_state_chain():
    ch = sp.DiscreteChain(np.array([1.7]), np.ones((1, 1)))
    assert sp.log_perron(ch, 0.4) == pytest.approx(0.68)
    ch0 = sp.DiscreteChain(np.array([0.0]), np.ones((1, 1)))
    assert sp.psi_markov(ch0, 0.6) == pytest.approx(0.18)
    assert sp.solve_tilt(ch0, 0.5, equation="chord") == pytest.approx(1.0, abs=1e-10)
    assert sp.solve_tilt(ch0, 0.5) == pytest.approx(0.5, abs=1e-10)


def test_log_perron_matches_dense_eigenvalue():
    ch = sp.discretize_example5(200, -2.51, 0.05)
    A = ch.transition * np.exp(0.3 * ch.states)[None, :]
    lam = np.max(np.abs(np.linalg.eigvals(A)))
    assert sp.log_perron(ch, 0.3) == pytest.approx(np.log(lam), abs=1e-10)


def test_perron_vector_positive(chain):
    _, v = sp.perron(chain, 0.273)
    assert np.all(v > 0)


def test_log_perron_convex(chain):
    ts = np.linspace(0.0, 1.0, 11)
    vals = np.array([sp.log_perron(chain, t) for t in ts])
    assert np.all(vals[1:-1] <= 0.5 * (vals[:-2] + vals[2:]) + 1e-9)


def test_slope_matches_finite_difference(chain):
    h = 1e-4
    fd = (sp.psi_markov(chain, 0.3 + h) - sp.psi_markov(chain, 0.3 - h)) / (2 * h)
    assert sp.psi_markov_slope(chain, 0.3) == pytest.approx(fd, abs=1e-6)


def test_solve_tilt_properties(chain):
    th = sp.solve_tilt(chain, 2.5)
    assert th > 1e-6
    assert abs(sp.psi_markov_slope(chain, th) - 2.5) <= 1e-9
    root = sp.solve_tilt(chain, 2.5, equation="chord")
    assert abs(sp.psi_markov(chain, root) - 2.5 * root) <= 1e-9


def test_solve_tilt_against_bisection_oracle():
    ch = sp.DiscreteChain(np.array([-1.0, 1.0]), np.full((2, 2), 0.5))
    for eq, f in [("mean", lambda t: sp.psi_markov_slope(ch, t) - 1.5),
                  ("chord", lambda t: sp.psi_markov(ch, t) - 1.5 * t)]:
        oracle = bisect(f, 0.05, 2.0, xtol=1e-13)
        assert sp.solve_tilt(ch, 1.5, equation=eq) == pytest.approx(oracle, abs=1e-8)


def test_solve_tilt_no_root():
    ch = sp.DiscreteChain(np.array([0.0]), np.ones((1, 1)))
    with pytest.raises(BracketError):
        sp.solve_tilt(ch, 5.0)


def test_grid_refinement_stability(chain):
    fine = sp.discretize_example5(2000, -2.5025, 0.005)
    assert abs(sp.solve_tilt(fine, 2.5) - sp.solve_tilt(chain, 2.5)) < 5e-3
