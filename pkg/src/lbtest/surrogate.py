"""Behavioral-model construction against a label-only oracle.

The model under test is reachable only through :class:`LabelOracle`, which
returns class indices and counts how many inputs it was asked about. A
surrogate network is trained on oracle-labeled inputs, and the training set
grows with Jacobian-perturbed inputs on which the oracle and the surrogate
disagree, until validation agreement clears a threshold or stops improving.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .datasets import LabeledSet
from .errors import DomainError, ShapeError
from .seeding import child_seed

THRESHOLD, PATIENCE, MAX_ROUNDS = "threshold", "patience", "max_rounds"
IMPROVEMENT_EPS = 1e-6


class LabelOracle:
    """Label-only view of a classifier.

    ``fn`` maps an input matrix to labels. Nothing but class indices crosses
    this boundary; ``queries`` counts every input row submitted.
    """

    def __init__(self, fn, num_classes):
        self._fn = fn
        self.num_classes = int(num_classes)
        self.queries = 0
        self.calls = 0

    @classmethod
    def from_network(cls, net):
        return cls(lambda xs: nn.predict(net, xs), net.num_classes)

    def query(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 2:
            raise ShapeError("oracle queries take an input matrix")
        self.queries += xs.shape[0]
        self.calls += 1
        labels = np.asarray(self._fn(xs), dtype=np.int64)
        if labels.shape != (xs.shape[0],):
            raise ShapeError("oracle returned the wrong number of labels")
        return labels


@dataclass(frozen=True)
class SurrogateConfig:
    tau: float = 0.95
    patience: int = 5
    lam: float = 0.1
    max_rounds: int = 20
    train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(learning_rate=0.1, epochs=30,
                                                                           batch_size=16))

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise DomainError("tau must lie in (0, 1]")
        if self.patience < 1 or self.max_rounds < 1:
            raise DomainError("patience and max_rounds must be positive")
        if not 0.0 < self.lam <= 0.5:
            raise DomainError("lambda must lie in (0, 0.5]")


@dataclass
class RoundRecord:
    round: int
    s_size: int
    similarity: float
    added: int
    queries: int


@dataclass
class SimilarityTrace:
    rounds: list = field(default_factory=list)
    reason: str = ""
    oracle_queries: int = 0

    @property
    def final_similarity(self):
        return self.rounds[-1].similarity if self.rounds else float("nan")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "S_size", "similarity", "added"])
            for r in self.rounds:
                w.writerow([r.round, r.s_size, repr(r.similarity), r.added])


def similarity(B, oracle_labels, X_val):
    """Fraction of validation rows where the surrogate's label matches the oracle's."""
    xs = getattr(X_val, "xs", X_val)
    oracle_labels = np.asarray(oracle_labels)
    if oracle_labels.shape[0] != np.asarray(xs).shape[0]:
        raise ShapeError(f"{oracle_labels.shape[0]} oracle labels for {np.asarray(xs).shape[0]} rows")
    return float(np.mean(nn.predict(B, xs) == oracle_labels))


def jacobian_augment(B, S, lam):
    """Step every row of S by ``lam * sign(d logit_y / dx)`` for its oracle label y, clipped to [0, 1]."""
    xs = getattr(S, "xs", S)
    ys = S.ys
    g = nn.input_gradient(B, xs, ys, of="logit")
    return np.clip(np.asarray(xs) + lam * np.sign(g), 0.0, 1.0)


def build_surrogate(B0, oracle, X, X_val, cfg):
    """Grow a behavioral model of ``oracle`` starting from ``B0``.

    Each round warm-starts from the previous round's weights. Returns
    ``(B, trace)``; ``trace.reason`` is one of ``threshold``, ``patience``
    or ``max_rounds``.
    """
    X_xs = getattr(X, "xs", X)
    V_xs = getattr(X_val, "xs", X_val)
    if len(X_xs) == 0 or len(V_xs) == 0:
        raise DomainError("initial and validation sets must be non-empty")
    start_queries = oracle.queries
    Y = oracle.query(X_xs)
    Y_val = oracle.query(V_xs)
    S_x, S_y = np.array(X_xs, dtype=np.float64), Y
    trace = SimilarityTrace()
    B = B0
    best = 0.0
    stale = 0
    for rnd in range(1, cfg.max_rounds + 1):
        q0 = oracle.queries
        tcfg = replace(cfg.train, seed=child_seed(cfg.train.seed, "round", rnd))
        B = nn.sgd_train(B, S_x, tcfg, ys=S_y)
        sim = similarity(B, Y_val, V_xs)
        rec = RoundRecord(rnd, len(S_y), sim, 0, 0)
        trace.rounds.append(rec)
        if sim > cfg.tau:
            trace.reason = THRESHOLD
            break
        if sim > best + IMPROVEMENT_EPS:
            best = sim
            stale = 0
        else:
            stale += 1
        if stale >= cfg.patience:
            trace.reason = PATIENCE
            break
        if rnd == cfg.max_rounds:
            trace.reason = MAX_ROUNDS
            break
        aug = jacobian_augment(B, LabeledSet(S_x, S_y, oracle.num_classes), cfg.lam)
        y_aug = oracle.query(aug)
        disagree = nn.predict(B, aug) != y_aug
        S_x = np.vstack([S_x, aug[disagree]])
        S_y = np.concatenate([S_y, y_aug[disagree]])
        rec.added = int(disagree.sum())
        rec.queries = oracle.queries - q0
    trace.oracle_queries = oracle.queries - start_queries
    return B, trace
