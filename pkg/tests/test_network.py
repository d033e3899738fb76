import struct

import numpy as np
import pytest

import gradcheck
import oracles
from liteasc.nn import (BlockSpec, NetworkConfig, check_params, forward, init_params, network_forward,
                        paper_config, param_shapes, predict_proba, tiny_config)
from liteasc.params import ModelParams, count_parameters, load_model, save_model


def _layer_algebra_count(config):
    """Parameter total from per-layer formulas, independent of param_shapes."""
    total = 0
    r = config.reduction

    def block(c_in, spec):
        e, o = spec.expand, spec.out
        n = (c_in * e + e) + 4 * e + (9 * e + e) + 4 * e + (e * o + o) + 4 * o
        if spec.use_ca:
            n += 2 * (o * o // r) + o // r + o
        return n

    for _ in range(2):
        c = config.input_shape[2]
        for spec in config.pathway:
            total += block(c, spec)
            c = spec.out
    total += block(config.pathway[-1].out, config.trunk)
    total += config.trunk.out * 10 + 10
    return total


def test_paper_config_shapes():
    cfg = paper_config()
    shapes = cfg.shapes()
    assert shapes["low.0"] == shapes["high.0"] == (32, 211, 16)
    assert shapes["trunk"] == (8, 26, 48)


def test_paper_parameter_count():
    cfg = paper_config()
    params = init_params(cfg, np.random.default_rng(0))
    total = _layer_algebra_count(cfg)
    assert total == 23226
    assert count_parameters(params, include_zeros=True) == total
    assert count_parameters(params) <= total <= 65536


def test_tiny_forward_matches_composed_oracle():
    cfg = tiny_config()
    rng = np.random.default_rng(1)
    p = gradcheck.randomise_params(init_params(cfg, rng, np.float64), rng)
    x = rng.normal(size=(8, 16, 3))
    ours = network_forward(x, p, cfg, "infer")
    assert ours.shape == (10,)
    assert np.max(np.abs(ours - oracles.network_infer(x, p, cfg))) <= 1e-5


def test_softmax_contract_and_zero_head():
    cfg = tiny_config()
    rng = np.random.default_rng(2)
    p = init_params(cfg, rng)
    probs = predict_proba(rng.normal(size=(5, 8, 16, 3)), p, cfg)
    assert probs.shape == (5, 10)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((probs > 0) & (probs <= 1))
    p["dense.w"] = np.zeros_like(p["dense.w"])
    assert np.allclose(network_forward(rng.normal(size=(8, 16, 3)), p, cfg), 0.1, atol=1e-7)


def test_infer_is_deterministic_and_batch_independent():
    cfg = tiny_config()
    rng = np.random.default_rng(3)
    p = init_params(cfg, rng, np.float64)
    x = rng.normal(size=(7, 8, 16, 3))
    whole = predict_proba(x, p, cfg, batch_size=64)
    chunked = predict_proba(x, p, cfg, batch_size=2)
    assert np.allclose(whole, chunked, rtol=0, atol=1e-14)
    assert np.array_equal(whole, predict_proba(x, p, cfg))


def test_train_mode_reports_new_stats_without_mutating():
    cfg = tiny_config()
    rng = np.random.default_rng(4)
    p = init_params(cfg, rng)
    before = p.copy()
    _, cache = forward(rng.normal(size=(4, 8, 16, 3)).astype(np.float32), p, cfg, "train")
    assert set(cache.stats) == {n for n in p if n.endswith((".mean", ".var"))}
    assert all(np.array_equal(p[n], before[n]) for n in p)


def test_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig((7, 16, 3), (BlockSpec(4, 4),))
    with pytest.raises(ValueError):
        NetworkConfig((8, 16, 3), ())
    with pytest.raises(ValueError):
        NetworkConfig((8, 16, 3), (BlockSpec(4, 6),), reduction=4)
    with pytest.raises(ValueError):
        # too many pools for a 4x4 half
        NetworkConfig((8, 4, 3), (BlockSpec(4, 4), BlockSpec(4, 4)))
    with pytest.raises(ValueError):
        NetworkConfig((8, 16, 3), (BlockSpec(4, 4),), n_classes=5)


def test_check_params_rejects_mismatch():
    cfg = tiny_config()
    p = init_params(cfg, np.random.default_rng(0))
    check_params(p, cfg)
    bad = p.copy()
    bad["dense.w"] = np.zeros((3, 10), dtype=np.float32)
    with pytest.raises(ValueError, match="dense.w"):
        check_params(bad, cfg)
    with pytest.raises(ValueError):
        check_params(p, tiny_config(channels=8))
    with pytest.raises(ValueError):
        forward(np.zeros((1, 8, 15, 3)), p, cfg)


def test_param_names_unique_and_ordered():
    names = [n for n, _ in param_shapes(paper_config())]
    assert len(names) == len(set(names))
    assert names[0] == "low.0.expand.w" and names[-1] == "dense.b"


def test_count_parameters_simple():
    m = ModelParams({"a": np.array([0, 1.5, -2, 0], dtype=np.float32), "b": np.zeros(8, dtype=np.float32)})
    assert count_parameters(m) == 2
    assert count_parameters(m, include_zeros=True) == 12


def test_model_file_round_trip(tmp_path):
    p = init_params(tiny_config(), np.random.default_rng(5))
    path = tmp_path / "m.lasc"
    save_model(path, p)
    raw = path.read_bytes()
    assert raw[:4] == b"LASC"
    assert struct.unpack_from("<II", raw, 4) == (1, len(p))
    q = load_model(path)
    assert list(q.names()) == list(p.names())
    assert all(q[n].tobytes() == p[n].tobytes() for n in p)
    assert set(q.dtypes.values()) == {"f32"}


def test_model_file_rejects_garbage(tmp_path):
    path = tmp_path / "x.lasc"
    path.write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(ValueError):
        load_model(path)
