import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from confmia.dataset import SynthSpec, generate_synthetic
from confmia.errors import FormatError, TrainingDivergenceError, ValidationError
from confmia.model import (Architecture, Classifier, TrainConfig, accuracy, cross_entropy,
                           forward, gradient_check, init_classifier, load_model,
                           loss_and_grads, mean_loss, model_from_bytes, model_to_bytes,
                           save_model, softmax, train)
from confmia.rng import generator


def _direct_softmax(z):
    e = [math.exp(v) for v in z]
    s = sum(e)
    return [v / s for v in e]


def _random_model(arch, seed, scale=0.5):
    return init_classifier(arch, TrainConfig(init_scale=scale), generator(seed))


def test_zero_weights_two_class_is_uniform():
    model = Classifier.zeros(Architecture(3, 2, ()))
    assert forward(model, [1.0, -2.0, 5.0]).tolist() == [0.5, 0.5]


def test_softmax_matches_direct_exponentiation():
    oracle = _direct_softmax([1.0, 2.0, 3.0])
    assert oracle == pytest.approx([0.09003057, 0.24472847, 0.66524096], abs=1e-8)
    assert softmax([1.0, 2.0, 3.0]) == pytest.approx(oracle, abs=1e-15)


def test_softmax_is_stable_for_huge_logits():
    p = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p))
    assert p[0] == 1.0 and p[1] < 1e-300


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=2, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariance(z, c):
    a = softmax(z)
    b = softmax(np.asarray(z) + c)
    assert np.max(np.abs(a - b)) < 1e-12
    assert abs(a.sum() - 1.0) < 1e-12
    assert np.all(a >= 0) and np.all(a <= 1)


def test_forward_rejects_wrong_dimension():
    model = Classifier.zeros(Architecture(3, 2, (4,)))
    with pytest.raises(ValidationError):
        forward(model, [1.0, 2.0])


def test_forward_batch_matches_rows():
    arch = Architecture(5, 4, (7,), "tanh")
    model = _random_model(arch, 1)
    X = generator(2).standard_normal((6, 5))
    batch = forward(model, X)
    for i in range(6):
        assert np.allclose(batch[i], forward(model, X[i]), atol=1e-15)


@pytest.mark.parametrize("p, expected", [
    (1.0, 0.0),
    (0.0, 45 * math.log(10)),
    (0.5, math.log(2)),
])
def test_cross_entropy_values(p, expected):
    probs = np.array([p, 1 - p])
    assert cross_entropy(probs, 0) == pytest.approx(expected, abs=1e-12)


def test_cross_entropy_clamp_constant():
    assert cross_entropy(np.array([0.0, 1.0]), 0) == pytest.approx(103.6163, abs=1e-4)


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(ValidationError):
        cross_entropy(np.array([0.5, 0.5]), 2)


def test_zero_logistic_gradient_closed_form():
    arch = Architecture(3, 4, ())
    model = Classifier.zeros(arch)
    x = np.array([0.3, -1.2, 2.0])
    y = 2
    _, grads = loss_and_grads(model, x, [y])
    p = np.full(4, 0.25)
    onehot = np.eye(4)[y]
    assert np.allclose(grads[0], np.outer(x, p - onehot), atol=1e-15)
    assert np.allclose(grads[1], p - onehot, atol=1e-15)
    assert gradient_check(model, x, y, 1e-5) < 1e-6


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_gradient_check_one_hidden_layer(activation):
    arch = Architecture(6, 3, (8,), activation)
    rng = generator(4)
    model = _random_model(arch, 3)
    assert gradient_check(model, rng.standard_normal(6), 1, 1e-5) < 1e-4


def test_gradient_check_two_hidden_layers():
    model = _random_model(Architecture(4, 5, (6, 5), "tanh"), 8)
    assert gradient_check(model, generator(1).standard_normal(4), 4, 1e-5, max_params=500) < 1e-4


@pytest.mark.parametrize("eps", [0.0, -1e-5, 0.1])
def test_gradient_check_rejects_bad_epsilon(eps):
    model = Classifier.zeros(Architecture(2, 2, ()))
    with pytest.raises(ValidationError):
        gradient_check(model, [0.0, 0.0], 0, eps)


def test_epochs_zero_rejected(small_ds):
    with pytest.raises(ValidationError):
        train(small_ds, Architecture(4, 3), TrainConfig(epochs=0))


def test_train_shape_mismatch(small_ds):
    with pytest.raises(ValidationError):
        train(small_ds, Architecture(5, 3), TrainConfig(epochs=1))


def test_training_is_deterministic(small_ds):
    arch = Architecture(4, 3, (16,))
    cfg = TrainConfig(epochs=5, batch_size=4, learning_rate=0.1, seed=42)
    a = train(small_ds, arch, cfg)
    b = train(small_ds, arch, cfg)
    assert model_to_bytes(a) == model_to_bytes(b)
    c = train(small_ds, arch, TrainConfig(epochs=5, batch_size=4, learning_rate=0.1, seed=43))
    assert model_to_bytes(a) != model_to_bytes(c)


def test_separable_two_class_reaches_high_accuracy():
    ds = generate_synthetic(SynthSpec(2, 4, 50, cluster_spread=0.1, class_center_scale=5.0,
                                      seed=2))
    model = train(ds, Architecture(4, 2, (64,)), TrainConfig(epochs=200, learning_rate=0.1))
    assert accuracy(model, ds) >= 0.99


def test_full_batch_loss_non_increasing():
    ds = generate_synthetic(SynthSpec(3, 4, 30, cluster_spread=0.5, class_center_scale=3.0,
                                      seed=4))
    losses = []
    cfg = TrainConfig(epochs=60, batch_size=ds.num_examples, learning_rate=0.05, seed=1)
    train(ds, Architecture(4, 3, (16,)), cfg, on_epoch=lambda e, m: losses.append(mean_loss(m, ds)))
    assert len(losses) == 60
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_divergence_reports_epoch_and_batch(small_ds):
    cfg = TrainConfig(epochs=50, batch_size=5, learning_rate=1e200, seed=0, init_scale=1.0)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergenceError) as info:
        train(small_ds, Architecture(4, 3, (8,)), cfg)
    assert info.value.epoch >= 0 and info.value.batch >= 0
    assert "epoch" in str(info.value)


def test_model_roundtrip(tmp_path):
    model = _random_model(Architecture(4, 3, (5, 6), "tanh"), 0)
    path = tmp_path / "m.cmlp"
    save_model(model, path)
    back = load_model(path)
    assert back == model
    assert back.architecture == model.architecture


def test_model_file_layout():
    model = Classifier.zeros(Architecture(2, 3, (4,)))
    raw = model_to_bytes(model)
    assert raw[:4] == b"CMLP"
    assert int.from_bytes(raw[8:12], "little") == 2
    assert raw[12] == 0
    n_params = 2 * 4 + 4 + 4 * 3 + 3
    assert len(raw) == 13 + 3 * 8 + n_params * 8


def test_model_truncated_is_format_error():
    raw = model_to_bytes(Classifier.zeros(Architecture(2, 3, (4,))))
    with pytest.raises(FormatError):
        model_from_bytes(raw[:-3])
    bad = bytearray(raw)
    bad[12] = 9
    with pytest.raises(FormatError) as info:
        model_from_bytes(bytes(bad))
    assert info.value.offset == 12


def test_architecture_invariants():
    with pytest.raises(ValidationError):
        Architecture(3, 1)
    with pytest.raises(ValidationError):
        Architecture(3, 2, (0,))
    with pytest.raises(ValidationError):
        Architecture(3, 2, (4,), "sigmoid")
