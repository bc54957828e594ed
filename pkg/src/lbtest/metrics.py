"""Evaluation of prioritized test suites.

A *fault* is an adversarial input the model under test misclassifies; its
*fault type* is the ``(true label, predicted label)`` pair.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import _kernels, nn
from .errors import DomainError


@dataclass(frozen=True)
class FaultRecord:
    input_id: int
    true_label: int
    predicted: int

    @property
    def is_fault(self):
        return self.true_label != self.predicted

    @property
    def fault_type(self):
        return (self.true_label, self.predicted) if self.is_fault else None


def fault_records(ids, y_true, y_pred):
    return {int(i): FaultRecord(int(i), int(t), int(p)) for i, t, p in zip(ids, y_true, y_pred)}


def total_faults(records):
    return sum(r.is_fault for r in records.values())


def fdr(selected_ids, records, n_faults=None):
    """Faults among the selected inputs over ``min(|S|, |F|)``.

    ``n_faults`` is the fault count of the whole adversarial set; it defaults
    to the faults present in ``records``.
    """
    selected_ids = list(selected_ids)
    if not selected_ids:
        raise DomainError("FDR of an empty selection is undefined")
    F = total_faults(records) if n_faults is None else int(n_faults)
    found = sum(records[int(i)].is_fault for i in selected_ids)
    if F == 0:
        return 0.0
    return found / min(len(selected_ids), F)


def _apfd_raw(positions, n):
    k = len(positions)
    return 1.0 - sum(positions) / (k * n) + 1.0 / (2 * n)


def apfd(permutation_ids, records):
    """``(raw, normalized)`` APFD of a permutation.

    Normalization maps the faults-last ordering to 0 and faults-first to 1.
    When every test is a fault the two coincide and the ordering is scored 1.
    """
    perm = [int(i) for i in permutation_ids]
    n = len(perm)
    positions = [p for p, i in enumerate(perm, 1) if records[i].is_fault]
    k = len(positions)
    if k == 0:
        raise DomainError("APFD needs at least one fault in the permutation")
    raw = _apfd_raw(positions, n)
    best = _apfd_raw(range(1, k + 1), n)
    worst = _apfd_raw(range(n - k + 1, n + 1), n)
    if best == worst:
        return raw, 1.0
    return raw, (raw - worst) / (best - worst)


def fault_types(records, ids=None):
    keys = records.keys() if ids is None else ids
    return {records[int(i)].fault_type for i in keys if records[int(i)].is_fault}


def type_curve(permutation_ids, records, num_classes):
    """Cumulative count of distinct fault types over permutation prefixes."""
    codes = np.full(len(permutation_ids), -1, dtype=np.int64)
    for p, i in enumerate(permutation_ids):
        r = records[int(i)]
        if r.is_fault:
            codes[p] = r.true_label * num_classes + r.predicted
    return _kernels.distinct_prefix(codes, num_classes * num_classes)


def rauc(permutation_ids, records, num_classes=None):
    """Area under the distinct-fault-type curve relative to the ideal ``min(i, T)``."""
    perm = [int(i) for i in permutation_ids]
    if num_classes is None:
        num_classes = 1 + max(max(records[i].true_label, records[i].predicted) for i in perm) if perm else 1
    T = len(fault_types(records, perm))
    if T == 0:
        raise DomainError("RAUC needs at least one fault type in the permutation")
    curve = type_curve(perm, records, num_classes)
    ideal = np.minimum(np.arange(1, len(perm) + 1), T)
    return float(curve.sum() / ideal.sum())


def retrain_eval(mut, selected, eval_set, cfg):
    """Accuracy change on ``eval_set`` after fine-tuning a copy of ``mut`` on ``selected``."""
    if len(selected) == 0:
        raise DomainError("nothing selected to retrain on")
    if selected.ys is None or eval_set.ys is None:
        raise DomainError("retraining needs ground-truth labels")
    overlap = np.intersect1d(selected.ids, eval_set.ids)
    if overlap.size:
        raise DomainError(f"selected and evaluation sets share {overlap.size} id(s)")
    before = nn.accuracy(mut, eval_set.xs, eval_set.ys)
    tuned = nn.sgd_train(mut, selected, cfg)
    return nn.accuracy(tuned, eval_set.xs, eval_set.ys) - before


@dataclass
class EvalReport:
    method: str
    k: int
    fdr: float
    apfd_raw: float
    apfd_norm: float
    rauc: float
    retrain_delta: float
    seed: int

    def check(self):
        for name in ("fdr", "apfd_raw", "apfd_norm", "rauc"):
            v = getattr(self, name)
            if not math.isnan(v) and not -1e-12 <= v <= 1 + 1e-12:
                raise DomainError(f"{self.method}: {name}={v} outside [0, 1]")
        if not math.isnan(self.retrain_delta) and not -1 <= self.retrain_delta <= 1:
            raise DomainError(f"{self.method}: retrain_delta={self.retrain_delta} outside [-1, 1]")
        return self


REPORT_FIELDS = [f.name for f in fields(EvalReport)]


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(round(v, 12))
    return str(v)


def write_reports(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow([_fmt(v) for v in asdict(r).values()])


def read_reports(path):
    out = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            out.append(EvalReport(row["method"], int(row["k"]), *(float(row[f]) for f in REPORT_FIELDS[2:7]),
                                  int(row["seed"])))
    return out


def evaluate_ranking(method, ranked_ids, records, n_faults, num_classes, seed, retrain_delta=float("nan")):
    """Metrics for one method's ordered selection (FDR, APFD and RAUC over the selection)."""
    ranked_ids = [int(i) for i in ranked_ids]
    k = len(ranked_ids)
    nan = float("nan")
    if k == 0:
        return EvalReport(method, 0, nan, nan, nan, nan, retrain_delta, seed)
    f = fdr(ranked_ids, records, n_faults)
    has_fault = any(records[i].is_fault for i in ranked_ids)
    raw, norm = apfd(ranked_ids, records) if has_fault else (nan, nan)
    ra = rauc(ranked_ids, records, num_classes) if has_fault else nan
    return EvalReport(method, k, f, raw, norm, ra, retrain_delta, seed).check()
