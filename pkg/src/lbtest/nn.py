"""Minimal feedforward classifier: Dense / ReLU / Softmax stacks in float64.

Networks are immutable values. Weight arrays are flagged read-only and every
operation that changes parameters (training, mutation) returns a new
:class:`Network`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, ShapeError, TrainingDivergedError

WEIGHTS_VERSION = 1


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dense:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    kind = "dense"

    def __post_init__(self):
        W, b = _frozen(self.W), _frozen(self.b)
        if W.ndim != 2 or b.ndim != 1 or b.shape[0] != W.shape[0]:
            raise ShapeError(f"dense layer needs W (out, in) and b (out,), got {W.shape} and {b.shape}")
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise DomainError("dense layer parameters must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]


@dataclass(frozen=True)
class ReLU:
    kind = "relu"


@dataclass(frozen=True)
class Softmax:
    kind = "softmax"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise DomainError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be positive")
        if self.l2 < 0:
            raise DomainError("l2 must be non-negative")


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple
    input_dim: int = field(init=False)
    num_classes: int = field(init=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers or not isinstance(layers[-1], Softmax):
            raise ShapeError("last layer must be Softmax")
        if any(isinstance(l, Softmax) for l in layers[:-1]):
            raise ShapeError("Softmax is only allowed as the final layer")
        dense = [l for l in layers if isinstance(l, Dense)]
        if not dense:
            raise ShapeError("network needs at least one Dense layer")
        for a, b in zip(dense, dense[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"dense layers do not chain: {a.n_out} outputs feed {b.n_in} inputs")
        if not isinstance(layers[-2], Dense):
            raise ShapeError("Softmax must directly follow a Dense layer")
        if dense[-1].n_out < 2:
            raise ShapeError("need at least 2 classes")
        object.__setattr__(self, "input_dim", dense[0].n_in)
        object.__setattr__(self, "num_classes", dense[-1].n_out)

    @property
    def dense_layers(self):
        return [l for l in self.layers if isinstance(l, Dense)]

    def replace_dense(self, new_dense):
        """Return a copy with Dense layers replaced in order by ``new_dense``."""
        it = iter(new_dense)
        return Network(tuple(next(it) if isinstance(l, Dense) else l for l in self.layers))

    def weights_hash(self):
        h = hashlib.sha256()
        for l in self.dense_layers:
            h.update(np.ascontiguousarray(l.W).tobytes())
            h.update(np.ascontiguousarray(l.b).tobytes())
        return h.hexdigest()

    def same_weights(self, other):
        a, b = self.dense_layers, other.dense_layers
        return len(a) == len(b) and all(
            np.array_equal(x.W, y.W) and np.array_equal(x.b, y.b) for x, y in zip(a, b))


def init_mlp(sizes, seed):
    """Build ``Dense, ReLU, ..., Dense, Softmax`` with Glorot-uniform weights and zero biases."""
    if len(sizes) < 2:
        raise ShapeError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        layers.append(Dense(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out)))
        layers.append(ReLU() if i < len(sizes) - 2 else Softmax())
    return Network(tuple(layers))


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"expected input dimension {net.input_dim}, got shape {x.shape}")
    if not np.isfinite(X).all():
        raise DomainError("inputs must be finite")
    return X, single


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _trace(net, X):
    """Forward pass keeping every layer input; the last entry is the logits."""
    acts = [X]
    a = X
    for l in net.layers[:-1]:
        if l.kind == "dense":
            a = a @ l.W.T + l.b
        else:
            a = np.maximum(a, 0.0)
        acts.append(a)
    return acts


def logits(net, x):
    X, single = _as_batch(net, x)
    z = _trace(net, X)[-1]
    return z[0] if single else z


def forward(net, x):
    """Class probabilities for one input (1-D) or a batch (2-D)."""
    X, single = _as_batch(net, x)
    p = _softmax(_trace(net, X)[-1])
    return p[0] if single else p


def predict(net, xs):
    """Argmax labels; exact ties resolve to the lowest class index."""
    X, single = _as_batch(net, getattr(xs, "xs", xs))
    labels = np.argmax(_trace(net, X)[-1], axis=1)
    return int(labels[0]) if single else labels


def hidden_activations(net, x):
    """Post-ReLU outputs of every hidden layer, one ``(n, width)`` array per layer."""
    X, _ = _as_batch(net, x)
    acts = _trace(net, X)
    out = []
    for i, l in enumerate(net.layers[:-1]):
        if isinstance(l, ReLU):
            out.append(acts[i + 1])
    return out


def _backward(net, acts, dz):
    """Backpropagate ``dz`` (gradient w.r.t. logits) through the stack.

    Returns ``(param_grads, input_grad)`` where param_grads is a list of
    ``(dW, db)`` per Dense layer in order.
    """
    grads = []
    g = dz
    for i in range(len(net.layers) - 2, -1, -1):
        l = net.layers[i]
        a_in = acts[i]
        if l.kind == "dense":
            grads.append((g.T @ a_in, g.sum(axis=0)))
            g = g @ l.W
        else:
            g = g * (a_in > 0)
    grads.reverse()
    return grads, g


def _check_labels(net, y, n):
    y = np.asarray(y)
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if n and (y.min() < 0 or y.max() >= net.num_classes):
        raise DomainError(f"labels must lie in [0, {net.num_classes})")
    return y.astype(np.int64)


def loss(net, xs, ys):
    """Mean cross-entropy."""
    X, _ = _as_batch(net, xs)
    y = _check_labels(net, ys, X.shape[0])
    lp = _log_softmax(_trace(net, X)[-1])
    return float(-lp[np.arange(len(y)), y].mean())


def param_gradients(net, xs, ys=None):
    """Gradient of the mean cross-entropy w.r.t. every Dense ``(W, b)``.

    ``xs`` may be a :class:`~lbtest.datasets.LabeledSet` (labels taken from it)
    or an input matrix with ``ys`` given separately.
    """
    if ys is None:
        xs, ys = xs.xs, xs.ys
    X, _ = _as_batch(net, xs)
    if X.shape[0] == 0:
        raise DomainError("empty batch")
    y = _check_labels(net, ys, X.shape[0])
    acts = _trace(net, X)
    dz = _softmax(acts[-1])
    dz[np.arange(len(y)), y] -= 1.0
    dz /= len(y)
    grads, _ = _backward(net, acts, dz)
    return grads


def input_gradient(net, x, class_c, of="logit"):
    """Gradient w.r.t. the input of the class logit or of the cross-entropy at that label.

    ``x`` may be one input or a batch; ``class_c`` is a scalar or one label per row.
    """
    X, single = _as_batch(net, x)
    c = np.broadcast_to(np.asarray(class_c), (X.shape[0],)).astype(np.int64)
    if c.size and (c.min() < 0 or c.max() >= net.num_classes):
        raise DomainError(f"class index must lie in [0, {net.num_classes})")
    acts = _trace(net, X)
    rows = np.arange(X.shape[0])
    if of == "logit":
        dz = np.zeros_like(acts[-1])
        dz[rows, c] = 1.0
    elif of == "loss":
        dz = _softmax(acts[-1])
        dz[rows, c] -= 1.0
    else:
        raise DomainError(f"unknown gradient target {of!r}; use 'logit' or 'loss'")
    _, g = _backward(net, acts, dz)
    return g[0] if single else g


def logit_jacobian(net, x):
    """Per-class logit gradients for one input, shape ``(C, input_dim)``."""
    X, _ = _as_batch(net, x)
    X = np.repeat(X[:1], net.num_classes, axis=0)
    return input_gradient(net, X, np.arange(net.num_classes), of="logit")


def sgd_train(net, train, cfg, ys=None):
    """Mini-batch SGD on mean cross-entropy (+ optional L2 on weights).

    Returns a new network; ``net`` is untouched. Shuffling is driven by
    ``cfg.seed`` so identical inputs give bit-identical weights.
    """
    if ys is None:
        X, y = train.xs, train.ys
    else:
        X, y = train, ys
    X, _ = _as_batch(net, X)
    if X.shape[0] == 0:
        raise DomainError("training set is empty")
    y = _check_labels(net, y, X.shape[0])
    if cfg.learning_rate == 0:
        return net
    rng = np.random.default_rng(cfg.seed)
    work = _Scratch(net)
    n = X.shape[0]
    lr = cfg.learning_rate
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            acts = _trace(work, xb)
            lp = _log_softmax(acts[-1])
            rows = np.arange(len(yb))
            total += -lp[rows, yb].sum()
            dz = np.exp(lp)
            dz[rows, yb] -= 1.0
            dz /= len(yb)
            grads, _ = _backward(work, acts, dz)
            for l, (dW, db) in zip(work.dense_layers, grads):
                if cfg.l2:
                    dW = dW + cfg.l2 * l.W
                l.W -= lr * dW
                l.b -= lr * db
        mean_loss = total / n
        if not np.isfinite(mean_loss) or not all(np.isfinite(l.W).all() for l in work.dense_layers):
            raise TrainingDivergedError(epoch, mean_loss)
    return net.replace_dense([Dense(l.W, l.b) for l in work.dense_layers])


class _MutableDense:
    __slots__ = ("W", "b")
    kind = "dense"

    def __init__(self, layer):
        self.W = layer.W.copy()
        self.b = layer.b.copy()


class _Scratch:
    """Writable copy of a network's layer stack used inside the training loop."""

    def __init__(self, net):
        self.layers = [_MutableDense(l) if l.kind == "dense" else l for l in net.layers]
        self.dense_layers = [l for l in self.layers if l.kind == "dense"]


def accuracy(net, xs, ys):
    if len(ys) == 0:
        raise DomainError("accuracy of an empty set")
    return float(np.mean(predict(net, xs) == np.asarray(ys)))


# ---------------------------------------------------------------------------
# persistence


def to_json(net):
    layers = []
    for l in net.layers:
        if isinstance(l, Dense):
            layers.append({"kind": "dense", "in": l.n_in, "out": l.n_out,
                           "W": l.W.tolist(), "b": l.b.tolist()})
        else:
            layers.append({"kind": l.kind})
    return {"version": WEIGHTS_VERSION, "input_dim": net.input_dim,
            "num_classes": net.num_classes, "layers": layers}


def from_json(doc):
    if doc.get("version") != WEIGHTS_VERSION:
        raise ShapeError(f"unsupported weights version {doc.get('version')!r}")
    layers = []
    for spec in doc["layers"]:
        kind = spec["kind"]
        if kind == "dense":
            W = np.asarray(spec["W"], dtype=np.float64)
            b = np.asarray(spec["b"], dtype=np.float64)
            if W.shape != (spec["out"], spec["in"]) or b.shape != (spec["out"],):
                raise ShapeError(f"dense layer declared {spec['in']}->{spec['out']} "
                                 f"but W is {W.shape} and b is {b.shape}")
            layers.append(Dense(W, b))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "softmax":
            layers.append(Softmax())
        else:
            raise ShapeError(f"unknown layer kind {kind!r}")
    net = Network(tuple(layers))
    if net.input_dim != doc["input_dim"] or net.num_classes != doc["num_classes"]:
        raise ShapeError("declared input_dim/num_classes do not match the layers")
    return net


def save(net, path):
    Path(path).write_text(json.dumps(to_json(net)))


def load(path):
    return from_json(json.loads(Path(path).read_text()))
