import csv
import math

import numpy as np
import pytest

from liteasc.nn import tiny_config
from liteasc.params import load_model
from liteasc.train import (AdamState, Dataset, TrainConfig, adam_step, cosine_lr, cross_entropy, one_hot,
                           train_run)


def test_cross_entropy_cases():
    perfect = np.eye(10)[3]
    assert cross_entropy(perfect, perfect) == -math.log(1 - 1e-15)
    assert cross_entropy(np.full(10, 0.1), perfect) == pytest.approx(math.log(10), abs=1e-12)
    probs = np.array([0.5, 0.5] + [0.0] * 8)
    target = np.array([0.6, 0.4] + [0.0] * 8)
    assert cross_entropy(probs, target) == pytest.approx(0.6 * math.log(2) + 0.4 * math.log(2), abs=1e-15)
    assert np.isfinite(cross_entropy(np.eye(10)[0], np.eye(10)[1]))


def test_cosine_schedule():
    assert cosine_lr(0, 100) == 1e-3
    assert cosine_lr(100, 100) == 1e-7
    assert abs(cosine_lr(50, 100) - (1e-3 + 1e-7) / 2) <= 1e-12
    assert abs(cosine_lr(50, 100) - 5.0005e-4) <= 1e-12
    seq = [cosine_lr(e, 37) for e in range(38)]
    assert all(a >= b for a, b in zip(seq, seq[1:]))
    with pytest.raises(ValueError):
        cosine_lr(101, 100)


def test_adam_first_step():
    for g, sign in ((1.0, -1), (-1.0, 1)):
        p = {"w": np.array([0.0])}
        adam_step(p, {"w": np.array([g])}, AdamState(), 1e-3)
        assert p["w"][0] == pytest.approx(sign * 1e-3 / (1 + 1e-7), rel=1e-12)


def test_adam_null_updates():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(p, {"w": np.zeros(2)}, state, 1e-3)
    assert state.t == 1 and p["w"].tolist() == [1.0, -2.0]
    adam_step(p, {"w": np.array([0.3, -4.0])}, state, 0.0)
    assert p["w"].tolist() == [1.0, -2.0]
    assert np.all(state.v["w"] >= 0)
    with pytest.raises(ValueError):
        adam_step(p, {"w": np.zeros(3)}, state, 1e-3)


def test_config_validation():
    for bad in ({"batch_size": 0}, {"epochs": 0}, {"lr_min": 1.0}, {"seeds": ()}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def _toy_data(seed=0, n=40):
    """Class shows up as a bright mel row so a tiny net learns it quickly."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    x = rng.normal(0, 0.1, size=(n, 8, 16, 3)).astype(np.float32)
    for i, c in enumerate(labels):
        x[i, c % 8, :, 0] += 2.0 + (c >= 8)
    return Dataset(x, labels)


def test_train_run_outputs_and_determinism(tmp_path):
    data = _toy_data()
    cfg = TrainConfig(batch_size=8, epochs=4, seeds=(1, 2))
    net = tiny_config()
    report = train_run(cfg, data, data, net, tmp_path / "a")
    again = train_run(cfg, data, data, net, tmp_path / "b")
    assert report.mean_accuracy == pytest.approx(np.mean(report.best_accuracies), abs=0)
    for r1, r2 in zip(report.results, again.results):
        assert [c.train_loss for c in r1.curve] == [c.train_loss for c in r2.curve]
        assert r1.checkpoint.read_bytes() == r2.checkpoint.read_bytes()
        accs = [c.val_accuracy for c in r1.curve]
        assert r1.best_accuracy == max(accs)
        assert r1.best_epoch == accs.index(max(accs))
        assert all(np.isfinite(c.train_loss) and c.train_loss >= 0 for c in r1.curve)
    with open(tmp_path / "a" / "curve_seed1.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "lr", "train_loss", "val_accuracy"]
    assert len(rows) == 5 and float(rows[1][1]) == 1e-3
    assert "mean_best_val_accuracy=" in (tmp_path / "a" / "report.txt").read_text()
    assert load_model(tmp_path / "a" / "model_seed1.lasc").names() == report.results[0].params.names()


def test_train_with_mixup_is_deterministic():
    data = _toy_data(1, 24)
    cfg = TrainConfig(batch_size=8, epochs=2, seeds=(3,), mixup=True, alpha=0.4)
    a = train_run(cfg, data, data, tiny_config())
    b = train_run(cfg, data, data, tiny_config())
    assert [c.train_loss for c in a.results[0].curve] == [c.train_loss for c in b.results[0].curve]


def test_training_reduces_loss():
    data = _toy_data(2)
    report = train_run(TrainConfig(batch_size=8, epochs=15, seeds=(1,)), data, data, tiny_config())
    curve = report.results[0].curve
    assert curve[-1].train_loss < curve[0].train_loss


def test_train_run_rejects_bad_inputs():
    data = _toy_data()
    cfg = TrainConfig(epochs=1, seeds=(1,))
    with pytest.raises(ValueError):
        train_run(cfg, Dataset(np.zeros((0, 8, 16, 3)), np.zeros(0)), data, tiny_config())
    with pytest.raises(ValueError):
        train_run(cfg, data, data, tiny_config((8, 32, 3)))


def test_one_hot():
    assert one_hot([2, 0], 3).tolist() == [[0, 0, 1], [1, 0, 0]]
