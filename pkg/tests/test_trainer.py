import numpy as np
import pytest

from streamlid.classifier import HeadParams
from streamlid.errors import DegenerateDataError, InvalidInputError
from streamlid.pooling import AttentionParams, PoolingMode, final_pooled
from streamlid.trainer import (GradientInstance, LabeledUtterance, TrainConfig, accuracy, batch_loss,
                               gradient_check, loss_and_gradients, predict, train_head)


def separable(n=60, seed=0, D=4):
    rng = np.random.default_rng(seed)
    data = []
    for i in range(n):
        y = i % 2
        h = rng.normal(0, 0.5, size=(int(rng.integers(3, 9)), D))
        h[:, 0] += 2.0 if y else -2.0
        data.append(LabeledUtterance(h, y, i))
    return data


def params_equal(r1, r2):
    return (np.array_equal(r1.attention.weight_vector, r2.attention.weight_vector)
            and r1.attention.bias == r2.attention.bias
            and all(np.array_equal(getattr(r1.head, k), getattr(r2.head, k))
                    for k in ("hidden_weight", "hidden_bias", "out_weight", "out_bias")))


def test_separable_data_is_learned():
    data = separable()
    cfg = TrainConfig(learning_rate=0.2, steps=500, hidden_dim=16, mode=PoolingMode.WEIGHTED_MEAN)
    res = train_head(data, cfg, 2)
    assert accuracy(data, res.attention, res.head, cfg.mode) >= 0.99
    # the pooled means alone separate the classes
    means = np.array([final_pooled(u.embeddings, None, PoolingMode.MEAN)[0] for u in data])
    assert np.all((means > 0) == np.array([u.truth_index for u in data], dtype=bool))
    assert res.loss_curve[-1] < res.loss_curve[0]


def test_zero_learning_rate_keeps_params():
    data = separable(10)
    head = HeadParams.random(4, 2, seed=3, hidden=8)
    att = AttentionParams(np.full(4, 0.1), 0.2)
    res = train_head(data, TrainConfig(learning_rate=0.0, steps=5, hidden_dim=8), 2, att, head)
    assert np.array_equal(res.attention.weight_vector, att.weight_vector)
    assert np.array_equal(res.head.out_weight, head.out_weight)
    assert len(set(res.loss_curve)) == 1


def test_duplicated_dataset_same_trajectory():
    data = separable(20)
    cfg = TrainConfig(learning_rate=0.1, steps=30, hidden_dim=8)
    a = train_head(data, cfg, 2)
    b = train_head(data + data, cfg, 2)
    np.testing.assert_allclose(a.loss_curve, b.loss_curve, rtol=1e-10)
    np.testing.assert_allclose(a.head.out_weight, b.head.out_weight, rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("optimizer,batch", [("gd", 10**9), ("adam", 7)])
def test_deterministic(optimizer, batch):
    data = separable(30, seed=4)
    cfg = TrainConfig(learning_rate=0.05, steps=20, hidden_dim=8, optimizer=optimizer, batch_size=batch, seed=5)
    assert params_equal(train_head(data, cfg, 2), train_head(data, cfg, 2))


def test_naive_mode_keeps_attention_at_zero():
    data = separable(10)
    res = train_head(data, TrainConfig(steps=10, hidden_dim=8, mode=PoolingMode.MEAN), 2)
    assert np.all(res.attention.weight_vector == 0) and res.attention.bias == 0


def test_output_layer_step_does_not_increase_loss():
    data = separable(20, seed=6)
    att = AttentionParams(np.full(4, 0.1), 0.0)
    head = HeadParams.random(4, 2, seed=1, hidden=8)
    mode = PoolingMode.WEIGHTED_MEAN
    loss0, grads = loss_and_gradients(data, att, head, mode)
    moved = head.copy()
    moved.out_weight = moved.out_weight - 1e-3 * grads["out_weight"]
    moved.out_bias = moved.out_bias - 1e-3 * grads["out_bias"]
    assert batch_loss(data, att, moved, mode) <= loss0


def test_errors():
    with pytest.raises(DegenerateDataError):
        train_head([LabeledUtterance(np.ones((2, 3)), 0), LabeledUtterance(np.ones((2, 3)), 0)],
                   TrainConfig(), 2)
    with pytest.raises(InvalidInputError):
        train_head([], TrainConfig(), 2)
    with pytest.raises(InvalidInputError):
        TrainConfig(optimizer="sgd")
    with pytest.raises(InvalidInputError):
        LabeledUtterance(np.zeros((0, 3)), 0)


@pytest.mark.parametrize("mode", list(PoolingMode))
def test_gradient_check_each_mode(mode):
    rng = np.random.default_rng(7)
    batch = [LabeledUtterance(rng.normal(size=(6, 3)), k % 3) for k in range(3)]
    head = HeadParams.random(mode.output_dim(3), 3, seed=2, hidden=6)
    head.hidden_bias = rng.normal(0, 0.5, size=6)
    inst = GradientInstance(batch, AttentionParams(rng.normal(size=3), 0.1), head, mode)
    assert gradient_check(inst) <= 1e-4
    head_only = gradient_check(inst, groups=("hidden_weight", "hidden_bias", "out_weight", "out_bias"))
    assert head_only <= 1e-4


def test_gradient_check_detached_std():
    rng = np.random.default_rng(8)
    batch = [LabeledUtterance(rng.normal(size=(5, 2)), k % 2) for k in range(2)]
    head = HeadParams.random(4, 2, seed=0, hidden=4)
    inst = GradientInstance(batch, AttentionParams(rng.normal(size=2), 0.0), head,
                            PoolingMode.WEIGHTED_MEAN_STD, train_sigma_path=False)
    assert gradient_check(inst) <= 1e-4


def test_predict_shape_and_loss_csv():
    data = separable(6)
    res = train_head(data, TrainConfig(steps=3, hidden_dim=4), 2)
    assert predict(data, res.attention, res.head, PoolingMode.WEIGHTED_MEAN).shape == (6,)
    lines = res.loss_csv().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 4
