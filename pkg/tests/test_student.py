import math

import numpy as np
import pytest

from edgesync.core_types import HyperParams, ValidationError
from edgesync.student import (
    LabeledBatch,
    StudentModel,
    TrainingDiverged,
    cross_entropy,
    entropy,
    entropy_rows,
    evaluate,
    load_checkpoint,
    loss_and_gradients,
    predict_proba,
    save_checkpoint,
    train_epoch,
)


def random_instance(seed, c=5, d=7, n=13):
    r = np.random.default_rng(seed)
    model = StudentModel(r.normal(size=(c, d)), r.normal(size=c))
    batch = LabeledBatch(r.normal(size=(n, d)), r.integers(0, c, size=n))
    return model, batch


def objective(model, batch, wd):
    # oracle: loss written out directly, with the L2 term the gradient includes
    logits = batch.features @ model.weights.T + model.biases
    logits -= logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(batch)), batch.labels].mean() + 0.5 * wd * np.sum(model.weights**2)


def numeric_grad(model, batch, wd, eps=1e-6):
    gw = np.zeros_like(model.weights)
    gb = np.zeros_like(model.biases)
    for arr, g in ((model.weights, gw), (model.biases, gb)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            up = objective(model, batch, wd)
            arr[idx] = old - eps
            down = objective(model, batch, wd)
            arr[idx] = old
            g[idx] = (up - down) / (2 * eps)
    return gw, gb


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    model, batch = random_instance(seed)
    _, gw, gb = loss_and_gradients(model, batch, 0.01)
    nw, nb = numeric_grad(model, batch, 0.01)
    assert np.max(np.abs(gw - nw)) < 1e-7
    assert np.max(np.abs(gb - nb)) < 1e-7


def test_loss_is_plain_cross_entropy():
    model, batch = random_instance(0)
    loss, _, _ = loss_and_gradients(model, batch, 0.5)
    assert loss == pytest.approx(objective(model, batch, 0.0), abs=1e-12)


def test_softmax_rows_sum_to_one_and_are_stable():
    model = StudentModel(np.array([[1000.0], [0.0]]), np.zeros(2))
    p = predict_proba(model, np.array([[1.0], [-1.0]]))
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.all(np.isfinite(p))


def test_entropy_values():
    assert entropy(np.full(6, 1 / 6)) == pytest.approx(math.log(6), abs=1e-12)
    assert entropy(np.eye(4)[2]) == 0.0
    p = np.array([0.5, 0.25, 0.25])
    assert entropy(p) == pytest.approx(-(0.5 * math.log(0.5) + 0.5 * math.log(0.25)))
    assert np.allclose(entropy_rows(np.stack([p, np.eye(3)[0]])), [entropy(p), 0.0])
    with pytest.raises(ValidationError):
        entropy(np.array([0.5, 0.6]))


def test_cross_entropy_of_certain_correct_prediction():
    assert cross_entropy(np.array([[1.0, 0.0]]), np.array([0])) == 0.0


def test_training_reduces_loss():
    r = np.random.default_rng(0)
    means = r.normal(scale=3, size=(3, 4))
    y = r.integers(0, 3, size=300)
    batch = LabeledBatch(means[y] + r.normal(size=(300, 4)), y)
    model = StudentModel.zeros(3, 4)
    before = evaluate(model, batch)[1]
    h = HyperParams(0.05, 0.9, 1e-4)
    for epoch in range(5):
        model, _ = train_epoch(model, batch, h, r, 32, epoch)
    acc, after = evaluate(model, batch)
    assert after < before
    assert acc > 0.8


def test_train_epoch_does_not_mutate_input():
    model, batch = random_instance(1)
    w = model.weights.copy()
    train_epoch(model, batch, HyperParams(0.1, 0.5, 0.0), None, 4)
    assert np.array_equal(model.weights, w)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    model, batch = random_instance(2)
    batch = LabeledBatch(batch.features * 1e200, batch.labels)
    with pytest.raises(TrainingDiverged):
        for epoch in range(1, 4):
            model, _ = train_epoch(model, batch, HyperParams(1e3, 0.9, 0.0), None, 4, epoch)


def test_checkpoint_round_trip(tmp_path):
    model, _ = random_instance(3)
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert np.array_equal(back.weights, model.weights)
    assert np.array_equal(back.biases, model.biases)


def test_bad_checkpoint_is_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text("2 2\n1 2\n")
    with pytest.raises(ValidationError):
        load_checkpoint(str(path))
