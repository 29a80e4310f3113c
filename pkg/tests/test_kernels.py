from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from bhdimer import _fallback, kernels
from bhdimer.model import ModelParams, build_hamiltonian
from bhdimer.propagate import _make_leg

try:
    from bhdimer import _kernels
except ImportError:  # extension not built
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def _random_state(n, m, seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=(n, m)) + 1j * rng.normal(size=(n, m))
    return np.ascontiguousarray(psi / np.linalg.norm(psi, axis=0))


def _step_args(N=12, u=-3.0, d0=-0.4, slope=0.05, dt=0.3):
    p = ModelParams(N, u)
    leg = _make_leg(p, d0, d0 + slope * 40 * dt)
    return p, leg, (leg.diag0, leg.pdiag, leg.offd, d0, slope, dt)


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    if _kernels is not None:
        assert kernels.BACKEND == "cython"


@needs_ext
@pytest.mark.parametrize("width", [1, 3])
def test_cf4_compiled_matches_fallback(width):
    _, leg, (d0_, pd, off, d0, slope, dt) = _step_args()
    psi = _random_state(13, width, 1)
    a, b = psi.copy(), psi.copy()
    w = leg.weights(dt)
    _kernels.cf4_steps(a, d0_, pd, off, d0, slope, dt, 7, leg.center, leg.radius, w)
    _fallback.cf4_steps(b, d0_, pd, off, d0, slope, dt, 7, leg.center, leg.radius, w)
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_cf4_step_matches_two_exponentials():
    # one step is exp(-i dt/2 H(t + 5dt/6)) exp(-i dt/2 H(t + dt/6))
    p, leg, (d0_, pd, off, d0, slope, dt) = _step_args()
    psi = _random_state(13, 1, 2)
    out = psi.copy()
    kernels.cf4_steps(out, d0_, pd, off, d0, slope, dt, 1, leg.center, leg.radius,
                      leg.weights(dt))
    H1 = build_hamiltonian(p, d0 + slope * dt / 6).dense()
    H2 = build_hamiltonian(p, d0 + slope * 5 * dt / 6).dense()
    ref = expm(-0.5j * dt * H2) @ expm(-0.5j * dt * H1) @ psi
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_cf4_preserves_norm():
    _, leg, (d0_, pd, off, d0, slope, dt) = _step_args(N=40)
    psi = _random_state(41, 2, 3)
    kernels.cf4_steps(psi, d0_, pd, off, d0, slope, dt, 40, leg.center, leg.radius,
                      leg.weights(dt))
    np.testing.assert_allclose(np.linalg.norm(psi, axis=0), 1.0, atol=1e-12)


@needs_ext
def test_rk4_compiled_matches_fallback():
    rng = np.random.default_rng(4)
    a1 = rng.normal(size=5) + 1j * rng.normal(size=5)
    a2 = rng.normal(size=5) + 1j * rng.normal(size=5)
    x = (a1.copy(), a2.copy())
    y = (a1.copy(), a2.copy())
    _kernels.rk4_mean_field(*x, -0.3, 1.0, -0.5, 0.01, 0.01, 300)
    _fallback.rk4_mean_field(*y, -0.3, 1.0, -0.5, 0.01, 0.01, 300)
    np.testing.assert_allclose(x[0], y[0], atol=1e-13)
    np.testing.assert_allclose(x[1], y[1], atol=1e-13)


def test_rk4_conserves_population():
    a1 = np.array([0.8 + 0.1j])
    a2 = np.array([0.3 - 0.2j])
    n0 = abs(a1[0]) ** 2 + abs(a2[0]) ** 2
    kernels.rk4_mean_field(a1, a2, -3.0, 1.0, -1.0, 0.001, 0.01, 5000)
    assert abs(a1[0]) ** 2 + abs(a2[0]) ** 2 == pytest.approx(n0, rel=1e-8)


@needs_ext
def test_cascade_compiled_matches_fallback():
    rng = np.random.default_rng(5)
    p = rng.random(20)
    p /= p.sum()
    lower = rng.integers(0, 19, 200)
    P = rng.random(200)
    a, b = p.copy(), p.copy()
    _kernels.cascade(a, lower.astype(np.int_), P)
    _fallback.cascade(b, lower, P)
    np.testing.assert_allclose(a, b, atol=1e-15)


@settings(max_examples=50)
@given(st.integers(2, 12), st.lists(st.tuples(st.integers(0, 10), st.fractions(0, 1)),
                                   max_size=60))
def test_cascade_exact_in_rationals(n, steps):
    prob = [Fraction(0)] * n
    prob[0] = Fraction(1)
    steps = [(i % (n - 1), P) for i, P in steps]
    _fallback.cascade(prob, [s[0] for s in steps], [s[1] for s in steps])
    assert sum(prob) == 1
    assert all(x >= 0 for x in prob)
