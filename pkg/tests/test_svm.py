import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtmkl import _smo_py
from mtmkl.errors import ConvergenceError, InputError, UnlearnableTaskError
from mtmkl.kernelbank import KernelBank, KernelSpec, build_bank, gram
from mtmkl.svm import BACKEND, compute_q, predict_labels, solve_dual

from .oracles import svm_dual_bruteforce


def random_instance(rng, n, d=3):
    X = rng.normal(size=(n, d))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0
    spec = [KernelSpec.linear(), KernelSpec.polynomial(), KernelSpec.gaussian(1.0)][rng.integers(3)]
    return gram(spec, X), y


def test_two_point_closed_form():
    k = 0.3
    K = np.array([[1.0, k], [k, 1.0]])
    sol = solve_dual(K, np.array([1.0, -1.0]), C=100.0, tol=1e-12)
    np.testing.assert_allclose(sol.alpha, [1 / (1 - k)] * 2, rtol=1e-12)
    assert sol.bias == pytest.approx(0.0, abs=1e-12)


def test_zero_box():
    K = gram(KernelSpec.gaussian(1.0), np.random.default_rng(0).normal(size=(5, 2)))
    sol = solve_dual(K, np.array([1, -1, 1, -1, 1.0]), C=0.0)
    assert np.all(sol.alpha == 0) and sol.objective == 0.0


@pytest.mark.parametrize("seed", range(25))
def test_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    K, y = random_instance(rng, n)
    C = float(rng.choice([0.1, 1.0, 10.0]))
    best, _ = svm_dual_bruteforce(K, y, C)
    sol = solve_dual(K, y, C, tol=1e-10)
    assert sol.objective == pytest.approx(best, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.sampled_from([0.01, 0.5, 1.0, 8.0, 1e3]))
def test_feasible_and_kkt(seed, n, C):
    rng = np.random.default_rng(seed)
    K, y = random_instance(rng, n)
    sol = solve_dual(K, y, C)
    assert np.all(sol.alpha >= -1e-10) and np.all(sol.alpha <= C + 1e-10)
    assert abs(sol.alpha @ y) <= 1e-8
    assert sol.kkt_violation <= 1e-3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 25))
def test_history_non_decreasing(seed, n):
    rng = np.random.default_rng(seed)
    K, y = random_instance(rng, n)
    sol = solve_dual(K, y, 1.0, record=True)
    h = np.asarray(sol.history)
    assert np.all(np.diff(h) >= -1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_objective_grows_with_c(seed, n):
    rng = np.random.default_rng(seed)
    K, y = random_instance(rng, n)
    vals = [solve_dual(K, y, C, tol=1e-10).objective for C in (0.1, 0.5, 1.0, 4.0)]
    assert np.all(np.diff(vals) >= -1e-9)


def test_single_class():
    with pytest.raises(UnlearnableTaskError):
        solve_dual(np.eye(3), np.ones(3), 1.0)


def test_bad_labels():
    with pytest.raises(InputError):
        solve_dual(np.eye(3), np.array([1.0, 0.0, -1.0]), 1.0)


def test_non_symmetric():
    K = np.eye(3)
    K[0, 1] = 0.5
    with pytest.raises(InputError):
        solve_dual(K, np.array([1.0, -1.0, 1.0]), 1.0)


def test_iteration_cap_carries_best():
    rng = np.random.default_rng(3)
    K, y = random_instance(rng, 30)
    with pytest.raises(ConvergenceError) as exc:
        solve_dual(K, y, 10.0, tol=1e-12, max_iter=2)
    best = exc.value.best
    assert best.iterations == 2 and not best.converged
    assert abs(best.alpha @ y) <= 1e-10


def test_warm_start_same_optimum():
    rng = np.random.default_rng(4)
    K, y = random_instance(rng, 20)
    cold = solve_dual(K, y, 1.0, tol=1e-9)
    warm = solve_dual(K, y, 1.0, tol=1e-9, alpha0=cold.alpha)
    assert warm.iterations <= 1
    assert warm.objective == pytest.approx(cold.objective, abs=1e-9)


def direct_q(G, y, a):
    M, n, _ = G.shape
    out = np.zeros(M)
    for m in range(M):
        s = 0.0
        for i in range(n):
            for j in range(n):
                s += a[i] * y[i] * G[m, i, j] * a[j] * y[j]
        out[m] = -0.5 * s
    return out


class TestQ:
    def test_zero_alpha(self):
        bank = KernelBank([KernelSpec.linear()], [np.eye(3)[None]])
        assert np.all(compute_q(bank, 0, np.array([1.0, -1.0, 1.0]), np.zeros(3)) == 0)

    def test_identity(self):
        bank = KernelBank([KernelSpec.linear()], [np.eye(2)[None]])
        assert compute_q(bank, 0, np.array([1.0, 1.0]), np.array([1.0, 1.0]))[0] == -1.0

    def test_matches_loops_and_nonpositive(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(7, 2))
        bank = build_bank([X], [KernelSpec.linear(), KernelSpec.polynomial(), KernelSpec.gaussian(2.0)])
        y = np.where(rng.random(7) < 0.5, 1.0, -1.0)
        a = rng.random(7)
        q = compute_q(bank, 0, y, a)
        np.testing.assert_allclose(q, direct_q(bank.grams[0], y, a), rtol=1e-12)
        assert np.all(q <= 1e-12)


def test_free_support_vector_on_margin():
    rng = np.random.default_rng(6)
    K, y = random_instance(rng, 15)
    C = 1.0
    sol = solve_dual(K, y, C, tol=1e-8)
    f = K @ (sol.alpha * y) + sol.bias
    free = (sol.alpha > 1e-8) & (sol.alpha < C - 1e-8)
    assert free.any()
    np.testing.assert_allclose(f[free], y[free], atol=1e-6)


def test_sign_zero_is_positive():
    np.testing.assert_array_equal(predict_labels([0.0, -0.0, -1e-300, 2.0]), [1, 1, -1, 1])


@pytest.mark.skipif(BACKEND != "cython", reason="compiled backend not built")
@pytest.mark.parametrize("seed", range(10))
def test_backends_agree(seed):
    from mtmkl import _smo

    rng = np.random.default_rng(seed)
    K, y = random_instance(rng, int(rng.integers(2, 60)))
    a = _smo.smo(K, y, 1.0, 1e-3, 10**6, None, True)
    b = _smo_py.smo(K, y, 1.0, 1e-3, 10**6, None, True)
    assert a[2] == b[2] and a[3] == b[3]
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    np.testing.assert_allclose(a[4], b[4], atol=1e-10)
