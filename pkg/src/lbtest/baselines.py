"""Reference prioritizers: softmax-confidence scores and white-box coverage/surprise scores.

White-box scores read the model under test only through
:class:`ActivationProvider`. The LBT modules never import this one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, nn
from .errors import ConfigError, DegenerateClassError, DomainError

DESC, ASC = "desc", "asc"
NAC_THRESHOLD = 0.75


class ActivationProvider:
    """Per-input softmax output, last-hidden activations and all hidden activations of a network."""

    def __init__(self, net):
        if len(net.dense_layers) < 2:
            raise DomainError("white-box baselines need a network with a hidden layer")
        self._net = net

    @property
    def num_classes(self):
        return self._net.num_classes

    def probs(self, xs):
        return nn.forward(self._net, np.atleast_2d(xs))

    def predicted(self, xs):
        return nn.predict(self._net, np.atleast_2d(xs))

    def layers(self, xs):
        return nn.hidden_activations(self._net, np.atleast_2d(xs))

    def last_hidden(self, xs):
        return self.layers(xs)[-1]

    def neurons(self, xs):
        return np.hstack(self.layers(xs))


def _check_probs(p):
    p = np.asarray(p, dtype=np.float64)
    p2 = np.atleast_2d(p)
    if np.any(np.abs(p2.sum(axis=1) - 1.0) > 1e-6) or np.any(p2 < 0):
        raise DomainError("expected a probability vector (non-negative, summing to 1)")
    return p2, p.ndim == 1


def gini(probs):
    """``1 - sum p_i^2``; higher means higher priority."""
    p, single = _check_probs(probs)
    s = 1.0 - np.sum(p * p, axis=1)
    return float(s[0]) if single else s


def pe(probs):
    """Prediction entropy ``-sum p ln p`` with ``0 ln 0 = 0``; higher means higher priority."""
    p, single = _check_probs(probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    s = -terms.sum(axis=1)
    return float(s[0]) if single else s


def maxp(probs):
    """Largest class probability; LOWER means higher priority."""
    p, single = _check_probs(probs)
    s = p.max(axis=1)
    return float(s[0]) if single else s


def minmax_scale(layers):
    """Scale each layer's activations to [0, 1] per input; constant layers map to 0."""
    out = []
    for a in layers:
        lo = a.min(axis=1, keepdims=True)
        span = a.max(axis=1, keepdims=True) - lo
        out.append(np.divide(a - lo, span, out=np.zeros_like(a), where=span > 0))
    return np.hstack(out)


def nac_score(scaled, t=NAC_THRESHOLD):
    scaled = np.atleast_2d(scaled)
    return np.mean(scaled > t, axis=1)


def nac(provider, xs, t=NAC_THRESHOLD):
    """Fraction of neurons whose per-layer min-max scaled activation exceeds ``t``."""
    if not 0 < t < 1:
        raise ConfigError("NAC threshold must lie in (0, 1)")
    return nac_score(minmax_scale(provider.layers(xs)), t)


@dataclass(frozen=True)
class NeuronBounds:
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def from_training(cls, provider, train_xs):
        a = provider.neurons(train_xs)
        return cls(a.min(axis=0), a.max(axis=0))


def nbc(provider, xs, bounds):
    """Fraction of neurons whose activation lies outside the training-observed [low, high]."""
    a = provider.neurons(xs)
    if bounds is None or bounds.low.shape != (a.shape[1],) or bounds.high.shape != (a.shape[1],):
        raise ConfigError(f"neuron bounds must cover all {a.shape[1]} neurons")
    return np.mean((a < bounds.low) | (a > bounds.high), axis=1)


@dataclass(frozen=True)
class SurpriseRefs:
    """Last-hidden activations of the training set, grouped by label."""

    acts: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_training(cls, provider, train_xs, train_labels):
        return cls(provider.last_hidden(train_xs), np.asarray(train_labels, dtype=np.int64))

    def of_class(self, c):
        a = self.acts[self.labels == c]
        if a.shape[0] < 2:
            raise DegenerateClassError(int(c), a.shape[0])
        return a


def dsa(provider, xs, refs):
    """Distance-based surprise: ``|a - a_same| / |a_same - a_other|``; higher means higher priority.

    ``a_same`` is the nearest reference of the input's predicted class and
    ``a_other`` the nearest reference of any other class to ``a_same``.
    """
    a = provider.last_hidden(xs)
    pred = provider.predicted(xs)
    out = np.empty(a.shape[0])
    for c in np.unique(pred):
        rows = np.flatnonzero(pred == c)
        same = refs.of_class(c)
        other = refs.acts[refs.labels != c]
        if other.shape[0] == 0:
            raise DegenerateClassError(-1, 0)
        d_same, j = _kernels.nearest(a[rows], same)
        d_other, _ = _kernels.nearest(same[j], other)
        with np.errstate(divide="ignore", invalid="ignore"):
            # coincident same/other references leave the ratio unbounded
            out[rows] = np.where(d_other > 0, np.sqrt(d_same) / np.sqrt(d_other),
                                 np.where(d_same > 0, np.inf, 0.0))
    return out


def scott_bandwidth(refs):
    """Scott's factor ``n^(-1/(d+4))`` times the mean per-dimension standard deviation."""
    n, d = refs.shape
    sd = float(np.mean(refs.std(axis=0, ddof=1)))
    return max(sd, 1e-12) * n ** (-1.0 / (d + 4))


def kde_score(provider, xs, refs):
    """Log-density of the last-hidden activation under an isotropic Gaussian KDE.

    References are the training activations of the input's predicted class.
    LOWER means higher priority. Reported in log space so deep layers do not
    underflow to zero density.
    """
    a = provider.last_hidden(xs)
    pred = provider.predicted(xs)
    out = np.empty(a.shape[0])
    for c in np.unique(pred):
        rows = np.flatnonzero(pred == c)
        r = refs.of_class(c)
        h = scott_bandwidth(r)
        n, d = r.shape
        out[rows] = _kernels.gauss_lse(a[rows], r, h) - np.log(n) - 0.5 * d * np.log(2 * np.pi * h * h)
    return out


@dataclass(frozen=True)
class RankedList:
    ids: np.ndarray
    scores: np.ndarray
    direction: str

    def top(self, k):
        return self.ids[:k]


def rank_by(scores, direction=DESC, ids=None):
    """Stable priority order: by score in ``direction``, ties broken by ascending id."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise DomainError("nothing to rank")
    ids = np.arange(scores.size) if ids is None else np.asarray(ids)
    if direction not in (DESC, ASC):
        raise DomainError(f"direction must be {DESC!r} or {ASC!r}")
    key = -scores if direction == DESC else scores
    order = np.lexsort((ids, key))
    return RankedList(ids[order], scores[order], direction)


def random_rank(ids, seed):
    ids = np.asarray(ids)
    if ids.size == 0:
        raise DomainError("nothing to rank")
    perm = np.random.default_rng(seed).permutation(ids.size)
    return RankedList(ids[perm], np.arange(ids.size, dtype=np.float64), "random")


BLACK_BOX = ("deepgini", "pe", "maxp")
WHITE_BOX = ("nac", "nbc", "dsa", "kde")
ALL_METHODS = BLACK_BOX + WHITE_BOX + ("random",)


def rank_method(method, provider, xs, ids, *, seed=0, nac_t=NAC_THRESHOLD, bounds=None, refs=None):
    """Full priority ranking of ``xs`` by one named baseline."""
    if method == "random":
        return random_rank(ids, seed)
    if method in BLACK_BOX:
        p = provider.probs(xs)
        if method == "deepgini":
            return rank_by(gini(p), DESC, ids)
        if method == "pe":
            return rank_by(pe(p), DESC, ids)
        return rank_by(maxp(p), ASC, ids)
    if method == "nac":
        return rank_by(nac(provider, xs, nac_t), DESC, ids)
    if method == "nbc":
        return rank_by(nbc(provider, xs, bounds), DESC, ids)
    if method == "dsa":
        return rank_by(dsa(provider, xs, refs), DESC, ids)
    if method == "kde":
        return rank_by(kde_score(provider, xs, refs), ASC, ids)
    raise ConfigError(f"unknown baseline {method!r}")
