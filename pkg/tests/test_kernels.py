import numpy as np
import pytest

from iss_smallgain import _pykernels, kernels
from iss_smallgain.kfun import Linear
from iss_smallgain.network import apply_gamma, example_network, gamma_after_D

ckern = pytest.importorskip("iss_smallgain._ckernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("seed", range(5))
def test_mixed_apply_backends_agree(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    A = rng.uniform(0, 2, (n, n)) * (rng.uniform(size=(n, n)) < 0.6)
    is_max = rng.integers(0, 2, n).astype(np.int32)
    d = rng.uniform(1, 2, n)
    S = rng.uniform(0, 10, (50, n))
    a = ckern.mixed_linear_apply(A, is_max, d, S)
    b = _pykernels.mixed_linear_apply(A, is_max, d, S)
    assert np.allclose(a, b, rtol=1e-14, atol=0)
    # single vector input keeps its shape
    assert ckern.mixed_linear_apply(A, is_max, d, S[0]).shape == (n,)


def test_network_operator_matches_fallback(net):
    S = np.random.default_rng(0).uniform(0, 5, (100, 3))
    A = net.slope_matrix()
    is_max = np.array([g == "max" for g in net.agg], dtype=np.int32)
    d = np.where(is_max == 1, 1.0, 1.1)
    want = _pykernels.mixed_linear_apply(A, is_max, np.ones(3), S * d)
    assert np.allclose(gamma_after_D(net, Linear(0.1), S), want, rtol=1e-14)
    assert np.allclose(apply_gamma(net, S), _pykernels.mixed_linear_apply(A, is_max, np.ones(3), S), rtol=1e-14)


@pytest.mark.parametrize("kind,par", [(0, (1.0, 0.0, 0.0)), (1, (2.0, 0.5, 0.0)), (2, (1.5, 0.3, 1.0))])
def test_rk4_backends_agree(kind, par):
    a = np.array([1.0, 1.0, 1.0])
    G = example_network().slope_matrix()
    is_max = np.array([0, 1, 1], dtype=np.int32)
    B = np.array([[1.0], [0.0], [1.0]])
    args = (a, G, is_max, B, np.array([kind], dtype=np.int32), np.array([par]), np.array([1.0, -0.5, 2.0]), 1e-2, 500)
    Xc, Uc, lc = ckern.rk4_network(*args)
    Xp, Up, lp = _pykernels.rk4_network(*args)
    assert lc == lp == 500
    assert np.allclose(Xc, Xp, rtol=1e-12, atol=1e-14)
    assert np.array_equal(Uc, Up)


def test_rk4_guard_agrees():
    args = (np.array([1.0, 1.0]), np.array([[0, 3.0], [3.0, 0]]), np.zeros(2, dtype=np.int32), np.zeros((2, 0)),
            np.zeros(0, dtype=np.int32), np.zeros((0, 3)), np.array([1.0, 1.0]), 1e-2, 10_000)
    _, _, lc = ckern.rk4_network(*args, 1e6)
    _, _, lp = _pykernels.rk4_network(*args, 1e6)
    assert lc == lp < 10_000
