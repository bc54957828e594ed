"""Adversarial test-set generation against the model under test.

FGSM takes one signed-gradient step on the cross-entropy; JSMA greedily
perturbs the single most salient feature toward the most likely wrong
class. ``tune_attack`` picks the weakest strength whose adversarial
accuracy lands in the evaluation band.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import datasets, nn
from .errors import AttackTuningError, DomainError

FGSM, JSMA = "FGSM", "JSMA"
MIN_ADV_ACCURACY = 0.40
MIN_ACCURACY_DROP = 0.30


@dataclass(frozen=True)
class AttackConfig:
    kind: str = FGSM
    epsilon: float = 0.1
    theta: float = 1.0
    gamma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (FGSM, JSMA):
            raise DomainError(f"unknown attack kind {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise DomainError("epsilon must lie in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise DomainError("gamma must lie in (0, 1]")

    def strength(self):
        return self.epsilon if self.kind == FGSM else self.theta


@dataclass(frozen=True, eq=False)
class AdvSet:
    originals: datasets.LabeledSet
    adversarials: np.ndarray
    config: AttackConfig
    fooled: np.ndarray

    def as_labeled(self):
        """Adversarial rows carrying the originals' ground truth and ids."""
        return self.originals.with_xs(self.adversarials)


def fgsm_inputs(mut, xs, ys, epsilon):
    g = nn.input_gradient(mut, xs, ys, of="loss")
    return np.clip(np.asarray(xs) + epsilon * np.sign(g), 0.0, 1.0)


def fgsm(mut, ds, epsilon):
    if ds.ys is None:
        raise DomainError("FGSM needs ground-truth labels")
    adv = fgsm_inputs(mut, ds.xs, ds.ys, epsilon)
    fooled = nn.predict(mut, adv) != ds.ys
    return AdvSet(ds, adv, AttackConfig(FGSM, epsilon=epsilon), fooled)


def _jsma_budget(gamma, d):
    if gamma * d < 1 - 1e-12:
        raise DomainError(f"gamma*d = {gamma * d:.3g} allows no feature to change")
    return int(math.floor(gamma * d + 1e-9))


def jsma_batch(mut, xs, ys, theta, gamma):
    """Single-feature JSMA over a batch, run in lockstep.

    Returns ``(adversarials, fooled)``. When no feature satisfies the strict
    saliency sign conditions the step falls back to the largest positive
    ``sign(theta) * (d target_logit - d other_logits)``; a row with neither
    stops early, unfooled.
    """
    X = np.array(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.int64)
    n, d = X.shape
    budget = _jsma_budget(gamma, d)
    if theta == 0 or n == 0:
        return X, nn.predict(mut, X) != y if n else np.zeros(0, dtype=bool)
    C = mut.num_classes
    probs = nn.forward(mut, X)
    wrong = probs.copy()
    wrong[np.arange(n), y] = -np.inf
    target = np.argmax(wrong, axis=1)
    touched = np.zeros((n, d), dtype=bool)
    active = nn.predict(mut, X) == y
    direction = 1.0 if theta > 0 else -1.0
    for _ in range(budget):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        Xa = X[rows]
        J = np.stack([nn.input_gradient(mut, Xa, c, of="logit") for c in range(C)])
        alpha = J[target[rows], np.arange(rows.size)]
        beta = J.sum(axis=0) - alpha
        movable = ~touched[rows] & ((Xa < 1.0) if theta > 0 else (Xa > 0.0))
        if theta > 0:
            ok = (alpha > 0) & (beta < 0)
            sal = alpha * np.abs(beta)
        else:
            ok = (alpha < 0) & (beta > 0)
            sal = np.abs(alpha) * beta
        sal = np.where(ok & movable, sal, 0.0)
        fallback = np.where(movable, direction * (alpha - beta), 0.0)
        strict = sal.max(axis=1) > 0
        score = np.where(strict[:, None], sal, fallback)
        pick = np.argmax(score, axis=1)
        has_move = score[np.arange(rows.size), pick] > 0
        r, f = rows[has_move], pick[has_move]
        X[r, f] = np.clip(X[r, f] + theta, 0.0, 1.0)
        touched[r, f] = True
        active[rows[~has_move]] = False
        if r.size:
            still = nn.predict(mut, X[r]) == y[r]
            active[r[~still]] = False
    fooled = nn.predict(mut, X) != y
    return X, fooled


def jsma(mut, x, y_true, cfg):
    """Attack one input; returns ``(x_adv, fooled)``."""
    if cfg.kind != JSMA:
        raise DomainError("jsma needs a JSMA config")
    adv, fooled = jsma_batch(mut, np.asarray(x, dtype=np.float64)[None, :], [y_true], cfg.theta, cfg.gamma)
    return adv[0], bool(fooled[0])


def attack(mut, ds, cfg):
    """Run the attack described by ``cfg`` on every row of ``ds``."""
    if ds.ys is None:
        raise DomainError("attacks need ground-truth labels")
    if cfg.kind == FGSM:
        adv = fgsm_inputs(mut, ds.xs, ds.ys, cfg.epsilon)
        fooled = nn.predict(mut, adv) != ds.ys
    else:
        adv, fooled = jsma_batch(mut, ds.xs, ds.ys, cfg.theta, cfg.gamma)
    return AdvSet(ds, adv, cfg, fooled)


def in_band(acc_adv, acc_benign, min_acc=MIN_ADV_ACCURACY, drop=MIN_ACCURACY_DROP):
    return acc_adv >= min_acc and acc_adv <= acc_benign - drop + 1e-12


def tune_attack(mut, benign, kind, gamma=0.1, min_acc=MIN_ADV_ACCURACY, drop=MIN_ACCURACY_DROP,
                quantized=False):
    """Weakest grid strength whose adversarial accuracy falls in the band.

    FGSM scans epsilon over 0.05, 0.10, ..., 1.0; JSMA scans theta over
    0.1, ..., 1.0 with ``gamma`` fixed. With ``quantized`` the accuracy is
    measured after snapping adversarials to the 1/255 byte grid, matching
    what an IDX round trip stores.
    """
    acc_b = nn.accuracy(mut, benign.xs, benign.ys)
    if acc_b - drop < min_acc:
        raise AttackTuningError(
            f"benign accuracy {acc_b:.4f} leaves an empty band "
            f"([{min_acc:.2f}, {acc_b - drop:.4f}]); needs benign accuracy >= {min_acc + drop:.2f}")
    grid = [round(0.05 * k, 2) for k in range(1, 21)] if kind == FGSM else [round(0.1 * k, 1) for k in range(1, 11)]
    frontier = []
    for s in grid:
        cfg = AttackConfig(FGSM, epsilon=s) if kind == FGSM else AttackConfig(JSMA, theta=s, gamma=gamma)
        adv = attack(mut, benign, cfg).adversarials
        if quantized:
            adv = datasets.quantize(adv)
        acc = nn.accuracy(mut, adv, benign.ys)
        frontier.append((s, acc))
        if in_band(acc, acc_b, min_acc, drop):
            return cfg
    raise AttackTuningError(f"no {kind} strength reaches the band [{min_acc:.2f}, {acc_b - drop:.4f}]",
                            frontier)


# ---------------------------------------------------------------------------
# persistence: paired IDX files plus a JSON sidecar


def save_advset(adv, stem):
    stem = Path(stem)
    paths = {
        "original_images": stem.with_name(stem.name + "-orig-images.idx"),
        "original_labels": stem.with_name(stem.name + "-orig-labels.idx"),
        "adversarial_images": stem.with_name(stem.name + "-adv-images.idx"),
    }
    datasets.write_idx(adv.originals, paths["original_images"], paths["original_labels"])
    datasets.write_idx_images(adv.adversarials, paths["adversarial_images"])
    sidecar = {
        "config": asdict(adv.config),
        "num_classes": adv.originals.num_classes,
        "ids": adv.originals.ids.tolist(),
        "fooled": [bool(f) for f in adv.fooled],
        "files": {k: p.name for k, p in paths.items()},
    }
    stem.with_name(stem.name + ".json").write_text(json.dumps(sidecar, indent=1))
    return stem.with_name(stem.name + ".json")


def load_advset(sidecar_path):
    sidecar_path = Path(sidecar_path)
    meta = json.loads(sidecar_path.read_text())
    files = {k: sidecar_path.parent / v for k, v in meta["files"].items()}
    orig = datasets.load_idx(files["original_images"], files["original_labels"], meta["num_classes"])
    orig = datasets.LabeledSet(orig.xs, orig.ys, meta["num_classes"], meta["ids"])
    adv = datasets.load_idx_images(files["adversarial_images"]).astype(np.float64) / 255.0
    return AdvSet(orig, adv, AttackConfig(**meta["config"]), np.asarray(meta["fooled"], dtype=bool))
