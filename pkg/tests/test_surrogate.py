import numpy as np
import pytest

from lbtest import datasets, nn, surrogate
from lbtest.errors import DomainError, ShapeError

FAST = nn.TrainConfig(0.5, 30, 16, seed=1)


def test_oracle_counts_rows_and_returns_labels_only(blob_mut, blobs):
    oracle = surrogate.LabelOracle.from_network(blob_mut)
    y = oracle.query(blobs[1].xs[:7])
    assert y.dtype == np.int64 and y.shape == (7,)
    oracle.query(blobs[1].xs[:3])
    assert (oracle.queries, oracle.calls) == (10, 2)
    with pytest.raises(ShapeError):
        oracle.query(blobs[1].xs[0])


def test_oracle_is_deterministic(blob_mut, blobs):
    oracle = surrogate.LabelOracle.from_network(blob_mut)
    np.testing.assert_array_equal(oracle.query(blobs[1].xs), oracle.query(blobs[1].xs))


def test_similarity_examples(blob_mut, blobs):
    val = blobs[1]
    assert surrogate.similarity(blob_mut, nn.predict(blob_mut, val.xs), val.xs) == 1.0
    ones = nn.Network((nn.Dense(np.zeros((2, 2)), np.array([0.0, 1.0])), nn.Softmax()))
    assert surrogate.similarity(ones, np.zeros(len(val), int), val.xs) == 0.0
    with pytest.raises(ShapeError):
        surrogate.similarity(blob_mut, [0, 1], val.xs)


def test_similarity_random_oracle_band():
    rng = np.random.default_rng(0)
    X = rng.random((1000, 5))
    labels = rng.integers(0, 10, 1000)
    B = nn.init_mlp([5, 8, 10], 3)
    assert 0.05 <= surrogate.similarity(B, labels, X) <= 0.15


def test_jacobian_augment_examples(rng):
    X = rng.random((20, 3))
    S = datasets.LabeledSet(X, rng.integers(0, 2, 20), 2)
    B = nn.init_mlp([3, 6, 2], 1)
    np.testing.assert_array_equal(surrogate.jacobian_augment(B, S, 0.0), S.xs)
    aug = surrogate.jacobian_augment(B, S, 0.1)
    assert np.all(np.abs(aug - S.xs) <= 0.1 + 1e-15)
    lin = nn.Network((nn.Dense(np.array([[1.0, 2.0, 0.5], [-1.0, 0.0, 1.0]]), np.zeros(2)), nn.Softmax()))
    S0 = S.with_labels(np.zeros(20, int))
    np.testing.assert_array_equal(surrogate.jacobian_augment(lin, S0, 0.1), np.clip(S.xs + 0.1, 0, 1))


def test_self_oracle_stops_at_round_one(blobs):
    B0 = nn.init_mlp([2, 8, 2], 0)
    oracle = surrogate.LabelOracle(lambda xs: nn.predict(B0, xs), 2)
    cfg = surrogate.SurrogateConfig(tau=0.99, train=nn.TrainConfig(0.0, 1, 16))
    B, trace = surrogate.build_surrogate(B0, oracle, blobs[0].xs[:50], blobs[1].xs, cfg)
    assert trace.reason == surrogate.THRESHOLD
    assert [r.round for r in trace.rounds] == [1]
    assert trace.final_similarity == 1.0 and trace.rounds[0].s_size == 50


def test_random_oracle_stops_by_patience(blobs):
    table = np.random.default_rng(5).integers(0, 2, 10_000)
    oracle = surrogate.LabelOracle(lambda xs: table[(xs[:, 0] * 9_999).astype(int)], 2)
    cfg = surrogate.SurrogateConfig(patience=3, max_rounds=20, train=FAST)
    _, trace = surrogate.build_surrogate(nn.init_mlp([2, 8, 2], 0), oracle, blobs[0].xs[:50],
                                         blobs[1].xs, cfg)
    assert trace.reason == surrogate.PATIENCE
    assert trace.final_similarity < cfg.tau


def test_trace_invariants_and_query_economy(blob_mut, blobs):
    oracle = surrogate.LabelOracle.from_network(blob_mut)
    cfg = surrogate.SurrogateConfig(tau=1.0, patience=3, max_rounds=6, train=FAST)
    _, trace = surrogate.build_surrogate(nn.init_mlp([2, 4, 2], 2), oracle, blobs[0].xs[:30],
                                         blobs[1].xs, cfg)
    sizes = [r.s_size for r in trace.rounds]
    assert sizes == sorted(sizes)
    assert len(trace.rounds) <= cfg.max_rounds
    for prev, r in zip(trace.rounds, trace.rounds[1:]):
        assert r.s_size == prev.s_size + prev.added
        assert prev.queries <= prev.s_size
    assert trace.oracle_queries == oracle.queries == 30 + len(blobs[1]) + sum(r.queries for r in trace.rounds)


def test_max_rounds_guard(blob_mut, blobs):
    oracle = surrogate.LabelOracle.from_network(blob_mut)
    cfg = surrogate.SurrogateConfig(tau=1.0, patience=50, max_rounds=2, train=nn.TrainConfig(0.01, 1, 16))
    _, trace = surrogate.build_surrogate(nn.init_mlp([2, 4, 2], 2), oracle, blobs[0].xs[:30],
                                         blobs[1].xs, cfg)
    assert trace.reason == surrogate.MAX_ROUNDS and len(trace.rounds) == 2


def test_build_is_deterministic(blob_mut, blobs):
    cfg = surrogate.SurrogateConfig(train=FAST)
    runs = [surrogate.build_surrogate(nn.init_mlp([2, 8, 2], 0), surrogate.LabelOracle.from_network(blob_mut),
                                      blobs[0].xs[:50], blobs[1].xs, cfg) for _ in range(2)]
    assert runs[0][0].weights_hash() == runs[1][0].weights_hash()


def test_config_and_input_validation(blob_mut):
    with pytest.raises(DomainError):
        surrogate.SurrogateConfig(tau=1.5)
    with pytest.raises(DomainError):
        surrogate.SurrogateConfig(lam=0.7)
    with pytest.raises(DomainError):
        surrogate.build_surrogate(nn.init_mlp([2, 2], 0), surrogate.LabelOracle.from_network(blob_mut),
                                  np.zeros((0, 2)), np.zeros((3, 2)), surrogate.SurrogateConfig())


def test_trace_csv(tmp_path, blob_mut, blobs):
    _, trace = surrogate.build_surrogate(nn.init_mlp([2, 8, 2], 0), surrogate.LabelOracle.from_network(blob_mut),
                                         blobs[0].xs[:50], blobs[1].xs, surrogate.SurrogateConfig(train=FAST))
    trace.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "round,S_size,similarity,added"
    assert len(lines) == len(trace.rounds) + 1
