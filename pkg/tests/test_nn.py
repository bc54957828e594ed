import math

import numpy as np
import pytest

from lbtest import datasets, nn
from lbtest.errors import DomainError, ShapeError, TrainingDivergedError

import oracles


def identity_net():
    return nn.Network((nn.Dense(np.eye(2), np.zeros(2)), nn.Softmax()))


def test_forward_hand_values():
    net = identity_net()
    np.testing.assert_allclose(nn.forward(net, [0.0, 0.0]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(nn.forward(net, [math.log(3), 0.0]), [0.75, 0.25], atol=1e-15)


def test_predict_tie_goes_to_lowest_class():
    net = identity_net()
    assert nn.predict(net, [math.log(3), 0.0]) == 0
    assert nn.predict(net, [0.2, 0.2]) == 0
    assert nn.predict(net, [0.0, 1.0]) == 1


def test_predict_batch_preserves_order(rng):
    net = oracles.random_net(rng)
    X = rng.random((7, net.input_dim))
    assert list(nn.predict(net, X)) == [nn.predict(net, x) for x in X]


def test_softmax_outputs_are_distributions(rng):
    for _ in range(50):
        net = oracles.random_net(rng)
        p = nn.forward(net, rng.normal(0, 5, (20, net.input_dim)))
        assert np.all((p >= 0) & (p <= 1))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_dimension_mismatch():
    with pytest.raises(ShapeError):
        nn.forward(identity_net(), [1.0, 2.0, 3.0])


def test_network_structure_checks():
    with pytest.raises(ShapeError):
        nn.Network((nn.Dense(np.eye(2), np.zeros(2)),))
    with pytest.raises(ShapeError):
        nn.Network((nn.Dense(np.eye(2), np.zeros(2)), nn.Softmax(), nn.Dense(np.eye(2), np.zeros(2)),
                    nn.Softmax()))
    with pytest.raises(ShapeError):
        nn.Network((nn.Dense(np.ones((3, 2)), np.zeros(3)), nn.ReLU(), nn.Dense(np.ones((2, 2)), np.zeros(2)),
                    nn.Softmax()))
    with pytest.raises(DomainError):
        nn.Dense(np.array([[np.nan, 0.0]]), np.zeros(1))


def test_zero_weight_net_loss_gradient_identity():
    net = nn.Network((nn.Dense(np.zeros((3, 2)), np.zeros(3)), nn.Softmax()))
    x = np.array([0.3, 0.7])
    (dW, db), = nn.param_gradients(net, x[None, :], [1])
    expected = np.full(3, 1 / 3) - np.array([0, 1, 0])
    np.testing.assert_allclose(db, expected, atol=1e-15)
    np.testing.assert_allclose(dW, np.outer(expected, x), atol=1e-15)


def test_param_gradients_match_finite_differences(rng):
    checked = 0
    while checked < 20:
        net = oracles.random_net(rng)
        X = rng.random((4, net.input_dim))
        if oracles.min_preactivation_margin(net, X) < 1e-3:
            continue
        y = rng.integers(0, net.num_classes, 4)
        for (dW, db), (nW, nb) in zip(nn.param_gradients(net, X, y), oracles.fd_param_gradients(net, X, y)):
            assert oracles.rel_error(dW, nW) <= 1e-5
            assert oracles.rel_error(db, nb) <= 1e-5
        checked += 1


@pytest.mark.parametrize("of", ["logit", "loss"])
def test_input_gradient_matches_finite_differences(rng, of):
    checked = 0
    while checked < 20:
        net = oracles.random_net(rng)
        x = rng.random(net.input_dim)
        if oracles.min_preactivation_margin(net, x[None, :]) < 1e-3:
            continue
        c = int(rng.integers(net.num_classes))
        assert oracles.rel_error(nn.input_gradient(net, x, c, of=of),
                                 oracles.fd_input_gradient(net, x, c, of)) <= 1e-5
        checked += 1


def test_input_gradient_linear_net_is_weight_row(rng):
    W = rng.normal(size=(3, 4))
    net = nn.Network((nn.Dense(W, rng.normal(size=3)), nn.Softmax()))
    for c in range(3):
        np.testing.assert_array_equal(nn.input_gradient(net, rng.random(4), c), W[c])
    np.testing.assert_array_equal(nn.logit_jacobian(net, rng.random(4)), W)


def test_input_gradient_dead_relu_is_zero():
    net = nn.Network((nn.Dense(np.ones((3, 2)), -10 * np.ones(3)), nn.ReLU(),
                      nn.Dense(np.ones((2, 3)), np.zeros(2)), nn.Softmax()))
    np.testing.assert_array_equal(nn.input_gradient(net, [0.5, 0.5], 0), np.zeros(2))


def test_input_gradient_rejects_bad_class():
    with pytest.raises(DomainError):
        nn.input_gradient(identity_net(), [0.1, 0.2], 2)
    with pytest.raises(DomainError):
        nn.input_gradient(identity_net(), [0.1, 0.2], 0, of="prob")


def test_duplicated_rows_same_gradient(rng):
    net = oracles.random_net(rng)
    x = rng.random((1, net.input_dim))
    g1 = nn.param_gradients(net, x, [0])
    g3 = nn.param_gradients(net, np.repeat(x, 3, axis=0), [0, 0, 0])
    for (a, b), (c, d) in zip(g1, g3):
        np.testing.assert_allclose(a, c, rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(b, d, rtol=1e-14, atol=1e-15)


def test_empty_batch_rejected():
    with pytest.raises(DomainError):
        nn.param_gradients(identity_net(), np.zeros((0, 2)), np.zeros(0, int))


def test_sgd_trains_separable_blobs():
    train = datasets.synth_blobs(100, 2, 2, 0.05, seed=0)
    net = nn.sgd_train(nn.init_mlp([2, 16, 2], 1), train, nn.TrainConfig(0.5, 50, 32, seed=2))
    assert nn.accuracy(net, train.xs, train.ys) >= 0.95


def test_sgd_is_deterministic_and_pure(blobs):
    train, _ = blobs
    net0 = nn.init_mlp([2, 8, 2], 5)
    h = net0.weights_hash()
    cfg = nn.TrainConfig(0.3, 3, 16, seed=9)
    a, b = nn.sgd_train(net0, train, cfg), nn.sgd_train(net0, train, cfg)
    assert a.weights_hash() == b.weights_hash()
    assert net0.weights_hash() == h
    assert nn.sgd_train(net0, train, nn.TrainConfig(0.3, 3, 16, seed=10)).weights_hash() != a.weights_hash()


def test_zero_learning_rate_leaves_weights(blobs):
    net0 = nn.init_mlp([2, 8, 2], 5)
    assert nn.sgd_train(net0, blobs[0], nn.TrainConfig(0.0, 4, 16)).same_weights(net0)


def test_divergence_names_epoch():
    # the first logit overflows to inf, so the very first epoch's loss is NaN
    net = nn.Network((nn.Dense(np.array([[1e308, 1e308], [0.0, 1.0]]), np.zeros(2)), nn.Softmax()))
    xs = datasets.LabeledSet(np.ones((4, 2)), [1, 1, 1, 1], 2)
    with pytest.raises(TrainingDivergedError) as err, np.errstate(all="ignore"):
        nn.sgd_train(net, xs, nn.TrainConfig(0.1, 3, 2))
    assert err.value.epoch == 1


def test_argmax_invariant_under_monotone_logit_map(rng):
    net = oracles.random_net(rng)
    X = rng.random((30, net.input_dim))
    z = nn.logits(net, X)
    np.testing.assert_array_equal(np.argmax(np.tanh(z) * 3 + 1, axis=1), nn.predict(net, X))


def test_hidden_activations_are_post_relu(rng):
    net = nn.init_mlp([3, 5, 4, 2], 0)
    acts = nn.hidden_activations(net, rng.random((6, 3)))
    assert [a.shape for a in acts] == [(6, 5), (6, 4)]
    assert all((a >= 0).all() for a in acts)


def test_weights_json_round_trip(tmp_path, rng):
    net = oracles.random_net(rng)
    path = tmp_path / "w.json"
    nn.save(net, path)
    back = nn.load(path)
    assert back.same_weights(net)
    assert [l.kind for l in back.layers] == [l.kind for l in net.layers]


def test_weights_json_validation():
    doc = nn.to_json(identity_net())
    doc["layers"][0]["out"] = 3
    with pytest.raises(ShapeError):
        nn.from_json(doc)
    doc = nn.to_json(identity_net())
    doc["version"] = 99
    with pytest.raises(ShapeError):
        nn.from_json(doc)
    doc = nn.to_json(identity_net())
    doc["layers"][0]["b"] = [float("inf"), 0.0]
    with pytest.raises(DomainError):
        nn.from_json(doc)


def test_weights_are_read_only():
    net = identity_net()
    with pytest.raises(ValueError):
        net.dense_layers[0].W[0, 0] = 5.0
