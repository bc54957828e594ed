"""Model-level mutation of a surrogate network.

Operators (all structure-preserving):

* ``GF``  Gaussian fuzzing of a sampled fraction of all weights.
* ``WS``  shuffle the incoming weights of sampled neurons.
* ``NAI`` negate incoming weights and bias of sampled neurons.
* ``NS``  exchange incoming weights and biases of disjoint neuron pairs in a layer.

Neuron-level operators act on hidden Dense layers, or on the output layer
of a network without hidden layers. Selection depends only on the MutantSpec seed
and the layer shapes, so re-applying a spec hits the same neurons.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import DomainError, OperatorInapplicableError, PoolExhaustedError
from .seeding import child_seed

GF, WS, NAI, NS = "GF", "WS", "NAI", "NS"
OPERATORS = (GF, WS, NAI, NS)
DEFAULT_RATE = 0.01
DEFAULT_SIGMA = 1.0
DEFAULT_MIN_AGREEMENT = 0.90


@dataclass(frozen=True)
class MutantSpec:
    operator: str
    rate: float = DEFAULT_RATE
    gf_sigma: float = DEFAULT_SIGMA
    seed: int = 0

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise DomainError(f"unknown mutation operator {self.operator!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise DomainError("mutation rate must lie in [0, 1]")
        if self.gf_sigma < 0:
            raise DomainError("gf_sigma must be non-negative")


def _neuron_layers(dense):
    return list(range(len(dense) - 1)) if len(dense) > 1 else [0]


def _sample_neurons(dense, rate, rng):
    layers = _neuron_layers(dense)
    pool = [(li, j) for li in layers for j in range(dense[li].n_out)]
    k = int(round(rate * len(pool)))
    if k == 0:
        return []
    pick = np.sort(rng.choice(len(pool), size=k, replace=False))
    return [pool[i] for i in pick]


def _sample_pairs(dense, rate, rng):
    layers = _neuron_layers(dense)
    n_neurons = sum(dense[li].n_out for li in layers)
    k = int(round(rate * n_neurons / 2))
    if k == 0:
        return []
    pairs = []
    for li in layers:
        perm = rng.permutation(dense[li].n_out)
        pairs += [(li, int(perm[2 * t]), int(perm[2 * t + 1])) for t in range(dense[li].n_out // 2)]
    if k > len(pairs):
        raise OperatorInapplicableError(
            f"NS needs {k} disjoint neuron pairs but the mutable layers only offer {len(pairs)}")
    pick = np.sort(rng.choice(len(pairs), size=k, replace=False))
    return [pairs[i] for i in pick]


def mutate(base, spec):
    """Return a fresh mutant of ``base``; ``base`` itself is never modified."""
    dense = base.dense_layers
    rng = np.random.default_rng(spec.seed)
    Ws = [l.W.copy() for l in dense]
    bs = [l.b.copy() for l in dense]
    if spec.operator == GF:
        sizes = [W.size for W in Ws]
        total = sum(sizes)
        k = int(round(spec.rate * total))
        if k:
            flat = np.sort(rng.choice(total, size=k, replace=False))
            noise = rng.standard_normal(k)
            offsets = np.cumsum([0] + sizes)
            for li, W in enumerate(Ws):
                sel = (flat >= offsets[li]) & (flat < offsets[li + 1])
                if not sel.any():
                    continue
                std = float(dense[li].W.std())
                W.reshape(-1)[flat[sel] - offsets[li]] += spec.gf_sigma * std * noise[sel]
    elif spec.operator in (WS, NAI):
        for li, j in _sample_neurons(dense, spec.rate, rng):
            if spec.operator == WS:
                Ws[li][j] = Ws[li][j][rng.permutation(Ws[li].shape[1])]
            else:
                Ws[li][j] = -Ws[li][j]
                bs[li][j] = -bs[li][j]
    else:
        for li, a, b in _sample_pairs(dense, spec.rate, rng):
            Ws[li][[a, b]] = Ws[li][[b, a]]
            bs[li][[a, b]] = bs[li][[b, a]]
    return base.replace_dense([nn.Dense(W, b) for W, b in zip(Ws, bs)])


@dataclass(frozen=True)
class GateResult:
    accepted: bool
    agreement: float


def agreement(base, mutant, X_val, base_labels=None):
    xs = getattr(X_val, "xs", X_val)
    if len(xs) == 0:
        raise DomainError("validation set is empty")
    ref = nn.predict(base, xs) if base_labels is None else base_labels
    return float(np.mean(nn.predict(mutant, xs) == ref))


def sanity_gate(base, mutant, X_val, min_agreement=DEFAULT_MIN_AGREEMENT, base_labels=None):
    a = agreement(base, mutant, X_val, base_labels)
    return GateResult(a >= min_agreement, a)


@dataclass
class Candidate:
    index: int
    spec: MutantSpec
    agreement: float
    accepted: bool


@dataclass
class MutantPool:
    """Ordered, seed-derived sequence of gate-accepted mutants of ``base``.

    Candidate ``i`` uses seed ``child_seed(base_seed, operator, i)``; rejected
    candidates are skipped without consuming a pool index, so growing by 5
    twice yields the same pool as growing by 10 once.
    """

    base: nn.Network
    X_val: np.ndarray
    operators: tuple = (GF,)
    rate: float = DEFAULT_RATE
    gf_sigma: float = DEFAULT_SIGMA
    base_seed: int = 0
    min_agreement: float = DEFAULT_MIN_AGREEMENT
    candidates: list = field(default_factory=list)
    mutants: list = field(default_factory=list)

    def __post_init__(self):
        self.X_val = np.asarray(getattr(self.X_val, "xs", self.X_val), dtype=np.float64)
        if isinstance(self.operators, str):
            self.operators = (self.operators,)
        self.operators = tuple(self.operators)
        self._base_labels = nn.predict(self.base, self.X_val)

    def __len__(self):
        return len(self.mutants)

    @property
    def specs(self):
        return [c.spec for c in self.candidates if c.accepted]

    @property
    def agreements(self):
        return [c.agreement for c in self.candidates if c.accepted]

    def candidate_spec(self, i):
        op = self.operators[i % len(self.operators)]
        return MutantSpec(op, self.rate, self.gf_sigma, child_seed(self.base_seed, op, i))

    def manifest(self):
        return {
            "base_weights_sha256": self.base.weights_hash(),
            "operators": list(self.operators),
            "rate": self.rate,
            "gf_sigma": self.gf_sigma,
            "base_seed": self.base_seed,
            "min_agreement": self.min_agreement,
            "accepted_count": len(self.mutants),
            "candidates": [{"index": c.index, **asdict(c.spec), "agreement": c.agreement,
                            "accepted": c.accepted} for c in self.candidates],
        }

    def save_manifest(self, path):
        Path(path).write_text(json.dumps(self.manifest(), indent=1))


def grow_pool(pool, k):
    """Append ``k`` accepted mutants (in place) and return the pool."""
    if k < 0:
        raise DomainError("k must be non-negative")
    target = len(pool.mutants) + k
    tried = 0
    while len(pool.mutants) < target:
        if tried >= 10 * k:
            raise PoolExhaustedError(
                f"only {len(pool.mutants) - (target - k)} of {k} mutants passed the "
                f"{pool.min_agreement:.2f} agreement gate in {tried} candidates "
                f"(operators={pool.operators}, rate={pool.rate})")
        i = len(pool.candidates)
        spec = pool.candidate_spec(i)
        mutant = mutate(pool.base, spec)
        gate = sanity_gate(pool.base, mutant, pool.X_val, pool.min_agreement, pool._base_labels)
        pool.candidates.append(Candidate(i, spec, gate.agreement, gate.accepted))
        if gate.accepted:
            pool.mutants.append(mutant)
        tried += 1
    return pool


def differs(base, mutants, xs, base_labels=None):
    """Boolean matrix ``(len(mutants), len(xs))``: mutant label != base label."""
    xs = getattr(xs, "xs", xs)
    ref = nn.predict(base, xs) if base_labels is None else base_labels
    return np.stack([nn.predict(m, xs) != ref for m in mutants]) if mutants else np.zeros((0, len(xs)), bool)


def mutation_score(base, mutants, x):
    """``(z, n)``: how many of the ``n`` mutants change the base label of ``x``."""
    if not mutants:
        raise DomainError("no mutants")
    x = np.asarray(x, dtype=np.float64)
    d = differs(base, mutants, x[None, :] if x.ndim == 1 else x)
    z = d.sum(axis=0)
    return (int(z[0]), len(mutants)) if x.ndim == 1 else (z, len(mutants))
