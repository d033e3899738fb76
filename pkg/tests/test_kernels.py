"""The numba kernels and their numpy twins must agree."""

import numpy as np
import pytest

from liteasc.nn import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


@pytest.fixture(params=[np.float32, np.float64])
def dtype(request):
    return request.param


def _tol(dtype):
    return 1e-5 if dtype == np.float32 else 1e-12


def test_depthwise(dtype):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 7, 9, 5)).astype(dtype)
    k = rng.normal(size=(3, 3, 5)).astype(dtype)
    b = rng.normal(size=5).astype(dtype)
    g = rng.normal(size=x.shape).astype(dtype)
    assert np.allclose(K.depthwise_forward_nb(x, k, b), K.depthwise_forward_np(x, k, b), atol=_tol(dtype))
    for a, c in zip(K.depthwise_backward_nb(x, k, g), K.depthwise_backward_np(x, k, g)):
        assert a.dtype == c.dtype == dtype
        assert np.allclose(a, c, atol=10 * _tol(dtype))


def test_maxpool_including_ties(dtype):
    rng = np.random.default_rng(1)
    x = rng.integers(0, 3, size=(2, 7, 9, 3)).astype(dtype)
    out_nb, idx_nb = K.maxpool_forward_nb(x)
    out_np, idx_np = K.maxpool_forward_np(x)
    assert np.array_equal(out_nb, out_np)
    # ties go to the first window position in both paths
    assert np.array_equal(idx_nb, idx_np)
    g = rng.normal(size=out_np.shape).astype(dtype)
    dx_nb = K.maxpool_backward_nb(g, idx_nb, np.zeros(x.shape, dtype=dtype))
    assert np.array_equal(dx_nb, K.maxpool_backward_np(g, idx_np, x.shape))


def test_batchnorm(dtype):
    rng = np.random.default_rng(2)
    x2 = rng.normal(2.0, 3.0, size=(200, 6)).astype(dtype)
    gamma, beta = rng.normal(size=6).astype(dtype), rng.normal(size=6).astype(dtype)
    fwd_nb = K.bn_train_forward_nb(x2, gamma, beta, 1e-3)
    fwd_np = K.bn_train_forward_np(x2, gamma, beta, 1e-3)
    for a, c in zip(fwd_nb, fwd_np):
        assert np.allclose(a, c, rtol=10 * _tol(dtype), atol=10 * _tol(dtype))
    g2 = rng.normal(size=x2.shape).astype(dtype)
    for train in (True, False):
        bwd_nb = K.bn_backward_nb(g2, fwd_np[1], gamma, fwd_np[4], train)
        bwd_np = K.bn_backward_np(g2, fwd_np[1], gamma, fwd_np[4], train)
        for a, c in zip(bwd_nb, bwd_np):
            assert np.allclose(a, c, rtol=10 * _tol(dtype), atol=100 * _tol(dtype))


def test_dispatch_follows_flag(monkeypatch):
    x = np.random.default_rng(3).normal(size=(1, 4, 4, 2))
    monkeypatch.setattr(K, "USE_NUMBA", False)
    assert K.backend() == "numpy"
    slow = K.maxpool_forward(x)
    monkeypatch.setattr(K, "USE_NUMBA", True)
    assert K.backend() == "numba"
    fast = K.maxpool_forward(x)
    assert np.array_equal(slow[0], fast[0]) and np.array_equal(slow[1], fast[1])


def test_env_flag_selects_numpy(tmp_path):
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "from liteasc.nn import backend; print(backend())"],
                         env={"LITEASC_NUMBA": "0", "PATH": ""}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_network_gradients_agree_across_backends(monkeypatch):
    from liteasc.nn import forward, init_params, network_backward, tiny_config

    cfg = tiny_config()
    rng = np.random.default_rng(4)
    p = init_params(cfg, rng, np.float64)
    x = rng.normal(size=(3, 8, 16, 3))
    y = np.eye(10)[[0, 5, 9]]
    runs = []
    for flag in (True, False):
        monkeypatch.setattr(K, "USE_NUMBA", flag)
        probs, cache = forward(x, p, cfg, "train")
        grads, dx = network_backward(cache, y)
        runs.append((probs, grads, dx))
    (p1, g1, d1), (p2, g2, d2) = runs
    assert np.allclose(p1, p2, rtol=0, atol=1e-12)
    assert np.allclose(d1, d2, rtol=0, atol=1e-12)
    assert all(np.allclose(g1[n], g2[n], rtol=1e-9, atol=1e-12) for n in g1)
