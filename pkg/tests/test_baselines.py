import math

import numpy as np
import pytest

from lbtest import baselines, nn
from lbtest.baselines import ActivationProvider
from lbtest.errors import ConfigError, DegenerateClassError, DomainError


def test_gini_examples():
    assert baselines.gini([0.0, 1.0, 0.0]) == 0.0
    assert baselines.gini(np.full(10, 0.1)) == pytest.approx(0.9, abs=1e-12)
    assert baselines.gini([0.6, 0.4]) == pytest.approx(0.48, abs=1e-12)


def test_pe_and_maxp_examples():
    assert baselines.pe([1.0, 0.0]) == 0.0
    assert baselines.maxp([1.0, 0.0]) == 1.0
    for c in (2, 5, 10):
        u = np.full(c, 1 / c)
        assert baselines.pe(u) == pytest.approx(math.log(c), abs=1e-12)
        assert baselines.maxp(u) == pytest.approx(1 / c, abs=1e-12)


def test_confidence_scores_reject_unnormalized():
    for f in (baselines.gini, baselines.pe, baselines.maxp):
        with pytest.raises(DomainError):
            f([0.5, 0.6])
        with pytest.raises(DomainError):
            f([1.2, -0.2])


def test_confidence_score_ranges(rng):
    for c in (2, 3, 7):
        p = rng.dirichlet(np.ones(c), 500)
        g, e, m = baselines.gini(p), baselines.pe(p), baselines.maxp(p)
        assert np.all((g >= 0) & (g <= 1 - 1 / c + 1e-12))
        assert np.all((e >= 0) & (e <= math.log(c) + 1e-12))
        assert np.all((m >= 1 / c - 1e-12) & (m <= 1))


def _tie_groups(order, keys):
    """Sequence of sets of tied keys, in rank order."""
    groups, last = [], None
    for i in order:
        k = keys[i]
        if last is None or k != last:
            groups.append(set())
            last = k
        groups[-1].add(int(i))
    return groups


def test_binary_rankings_agree_up_to_ties(rng):
    for _ in range(100):
        p1 = rng.random(64)
        p1[rng.random(64) < 0.2] = 0.5  # force a few exact ties
        p = np.column_stack([1 - p1, p1])
        ids = np.arange(64)
        keys = np.round(np.abs(p1 - 0.5), 12)
        ref = _tie_groups(np.argsort(keys, kind="stable"), keys)
        for r in (baselines.rank_by(baselines.gini(p), baselines.DESC, ids),
                  baselines.rank_by(baselines.pe(p), baselines.DESC, ids),
                  baselines.rank_by(1 - baselines.maxp(p), baselines.DESC, ids)):
            assert _tie_groups(r.ids, keys) == ref


def test_rank_by_examples():
    r = baselines.rank_by([3, 1, 2], baselines.DESC, ids=np.array(["a", "b", "c"]))
    assert list(r.ids) == ["a", "c", "b"]
    assert list(baselines.rank_by([5.0], ids=[9]).ids) == [9]
    r = baselines.rank_by([1.0, 2.0, 1.0, 2.0], baselines.ASC, ids=[8, 3, 5, 1])
    assert list(r.ids) == [5, 8, 1, 3]
    with pytest.raises(DomainError):
        baselines.rank_by([])


def test_random_rank_seeded():
    a = baselines.random_rank(np.arange(50), 3)
    assert list(a.ids) == list(baselines.random_rank(np.arange(50), 3).ids)
    assert sorted(a.ids) == list(range(50))
    assert list(baselines.random_rank([4], 0).ids) == [4]


def _relu_net(W1, b1, W2=None):
    W1 = np.asarray(W1, float)
    W2 = np.ones((2, W1.shape[0])) if W2 is None else np.asarray(W2, float)
    return nn.Network((nn.Dense(W1, np.asarray(b1, float)), nn.ReLU(),
                       nn.Dense(W2, np.zeros(2)), nn.Softmax()))


def test_nac_examples():
    # negative bias kills every hidden unit
    dead = ActivationProvider(_relu_net(np.zeros((4, 2)), -np.ones(4)))
    assert baselines.nac(dead, np.full((3, 2), 0.5)).tolist() == [0.0] * 3
    assert baselines.nac_score(np.ones((2, 6)), 0.75).tolist() == [1.0, 1.0]
    # hidden activations [0, 1, 2, 3] scale to [0, 1/3, 2/3, 1]: one unit above 0.75
    ramp = ActivationProvider(_relu_net(np.zeros((4, 2)), [0.0, 1.0, 2.0, 3.0]))
    assert baselines.nac(ramp, np.zeros((1, 2)))[0] == 0.25
    with pytest.raises(ConfigError):
        baselines.nac(ramp, np.zeros((1, 2)), t=1.0)


def test_nbc_examples(blob_mut, blobs):
    prov = ActivationProvider(blob_mut)
    train = blobs[0].xs
    bounds = baselines.NeuronBounds.from_training(prov, train)
    assert np.all(baselines.nbc(prov, train, bounds) == 0)
    far = baselines.nbc(prov, np.array([[0.0, 0.0], [1.0, 1.0]]), bounds)
    assert np.all((far >= 0) & (far <= 1))
    with pytest.raises(ConfigError):
        baselines.nbc(prov, train[:2], baselines.NeuronBounds(bounds.low[:3], bounds.high[:3]))
    with pytest.raises(ConfigError):
        baselines.nbc(prov, train[:2], None)


def test_white_box_needs_hidden_layer():
    with pytest.raises(DomainError):
        ActivationProvider(nn.init_mlp([2, 2], 0))


@pytest.fixture(scope="module")
def refs_setup(blob_mut, blobs):
    prov = ActivationProvider(blob_mut)
    train = blobs[0]
    return prov, baselines.SurpriseRefs.from_training(prov, train.xs, nn.predict(blob_mut, train.xs)), train


def test_dsa_duplicate_of_training_point_is_zero(refs_setup):
    prov, refs, train = refs_setup
    s = baselines.dsa(prov, train.xs[:20], refs)
    np.testing.assert_array_equal(s, np.zeros(20))
    assert np.all(baselines.dsa(prov, np.random.default_rng(0).random((50, 2)), refs) >= 0)


def test_kde_scores_are_finite_log_densities(refs_setup):
    prov, refs, _ = refs_setup
    s = baselines.kde_score(prov, np.random.default_rng(1).random((50, 2)), refs)
    assert np.all(np.isfinite(s))  # a finite log-density is a strictly positive density


class _IdentityProvider:
    """Last-hidden activation equal to the input; prediction fixed to class 0."""

    def last_hidden(self, xs):
        return np.atleast_2d(xs)

    def predicted(self, xs):
        return np.zeros(len(np.atleast_2d(xs)), dtype=np.int64)


def _direct_kde(x, r):
    h = baselines.scott_bandwidth(r)
    d = r.shape[1]
    k = np.exp(-np.sum((r - x) ** 2, axis=1) / (2 * h * h)) / (2 * np.pi * h * h) ** (d / 2)
    return k.mean()


def test_kde_midpoint_below_cluster_center(rng):
    a = rng.normal([0.0, 0.0], 0.1, (40, 2))
    b = rng.normal([4.0, 0.0], 0.1, (40, 2))
    acts = np.vstack([a, b, rng.normal(size=(5, 2))])
    refs = baselines.SurpriseRefs(acts, np.r_[np.zeros(80, int), np.ones(5, int)])
    xs = np.array([[0.0, 0.0], [2.0, 0.0]])
    s = baselines.kde_score(_IdentityProvider(), xs, refs)
    assert s[1] < s[0]
    direct = [_direct_kde(x, acts[:80]) for x in xs]
    assert s[0] == pytest.approx(math.log(direct[0]), rel=1e-10)
    assert direct[1] < direct[0]


def test_degenerate_class_named(blob_mut):
    prov = ActivationProvider(blob_mut)
    refs = baselines.SurpriseRefs(np.zeros((3, 16)), np.array([0, 0, 1]))
    xs = np.array([[0.8, 0.8], [0.2, 0.2]])
    with pytest.raises(DegenerateClassError) as err:
        baselines.dsa(prov, xs, refs)
    assert "1" in str(err.value)
    with pytest.raises(DegenerateClassError):
        baselines.kde_score(prov, xs, refs)


def test_rank_method_directions(blob_mut, blobs, refs_setup):
    prov, refs, train = refs_setup
    xs, ids = blobs[1].xs[:40], blobs[1].ids[:40]
    bounds = baselines.NeuronBounds.from_training(prov, train.xs)
    for m in baselines.ALL_METHODS:
        r = baselines.rank_method(m, prov, xs, ids, seed=1, bounds=bounds, refs=refs)
        assert sorted(r.ids) == sorted(ids)
        if m in ("maxp", "kde"):
            assert np.all(np.diff(r.scores) >= 0)
        elif m != "random":
            assert np.all(np.diff(r.scores) <= 0)
    with pytest.raises(ConfigError):
        baselines.rank_method("dr", prov, xs, ids)


def test_scores_deterministic(blob_mut, blobs):
    prov = ActivationProvider(blob_mut)
    xs = blobs[1].xs
    np.testing.assert_array_equal(baselines.nac(prov, xs), baselines.nac(prov, xs))
    np.testing.assert_array_equal(baselines.gini(prov.probs(xs)), baselines.gini(prov.probs(xs)))
