"""Sequential (Wald) selection of adversarial inputs by mutation sensitivity.

For each input, every mutant is one Bernoulli trial: does the mutant's label
differ from the surrogate's? The likelihood ratio compares a "sensitive"
rate ``p1 = zeta_h + delta`` against a "benign-like" rate
``p0 = zeta_h - delta``. Crossing the upper threshold ``(1 - beta) / alpha``
selects the input, crossing ``beta / (1 - alpha)`` discards it.

The flow is three steps: ``calibrate_zeta`` on benign inputs,
``calibrate_nmax`` on a probe subset (growing the mutant pool as needed),
then ``prioritize`` on the remaining inputs with the budget fixed.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels, nn
from ._kernels import DISCARDED, SELECTED, UNDECIDED
from .errors import CalibrationError, ContractViolation, DomainError
from .mutation import differs, grow_pool

STATUS_NAMES = {UNDECIDED: "undecided", SELECTED: "selected", DISCARDED: "discarded"}
CALIBRATION_MUTANTS = 100


@dataclass(frozen=True)
class SprtConfig:
    alpha: float = 0.05
    beta: float = 0.05
    delta: float = 0.05
    zeta_h: float = 0.0
    p_clamp: float = 1e-3
    subset_fraction: float = 0.1
    subset_min: int = 30
    decided_target: float = 0.9
    nmax_ceiling: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.alpha < 1 and 0 < self.beta < 1) or self.alpha + self.beta >= 1:
            raise DomainError("need alpha, beta in (0, 1) with alpha + beta < 1")
        if self.delta <= 0:
            raise DomainError("delta must be positive")
        if not 0 <= self.zeta_h <= 1:
            raise DomainError("zeta_h must lie in [0, 1]")
        if not 0 < self.p_clamp < 0.5:
            raise DomainError("p_clamp must lie in (0, 0.5)")
        if not 0 < self.subset_fraction <= 1:
            raise DomainError("subset_fraction must lie in (0, 1]")
        if self.p0 >= self.p1:
            raise DomainError(f"clamped hypotheses collapse: p0={self.p0}, p1={self.p1}")

    def with_zeta(self, zeta_h):
        return SprtConfig(**{**asdict(self), "zeta_h": float(zeta_h)})

    @property
    def p0(self):
        return min(max(self.zeta_h - self.delta, self.p_clamp), 1 - self.p_clamp)

    @property
    def p1(self):
        return min(max(self.zeta_h + self.delta, self.p_clamp), 1 - self.p_clamp)

    @property
    def upper(self):
        return (1 - self.beta) / self.alpha

    @property
    def lower(self):
        return self.beta / (1 - self.alpha)

    def kernel_args(self):
        """``(llr_diff, llr_same, log_upper, log_lower)`` for the step kernels."""
        return (math.log(self.p1 / self.p0), math.log((1 - self.p1) / (1 - self.p0)),
                math.log(self.upper), math.log(self.lower))


def _llr(n, z, cfg):
    a, b, _, _ = cfg.kernel_args()
    return z * a + (n - z) * b


def sprt_ratio(n, z, cfg):
    """Bernoulli likelihood ratio ``p1^z (1-p1)^(n-z) / (p0^z (1-p0)^(n-z))``."""
    if n < 1 or not 0 <= z <= n:
        raise DomainError(f"need n >= 1 and 0 <= z <= n, got n={n}, z={z}")
    return math.exp(_llr(n, z, cfg))


@dataclass(frozen=True)
class SprtState:
    input_id: int
    n: int = 0
    z: int = 0
    status: int = UNDECIDED
    iteration: int | None = None

    @property
    def decision(self):
        return STATUS_NAMES[self.status]


def sprt_step(state, differs_now, cfg, iteration):
    """One trial for one input; thresholds are compared in log space."""
    if state.status != UNDECIDED:
        raise ContractViolation(f"input {state.input_id} already {state.decision}")
    n = state.n + 1
    z = state.z + int(bool(differs_now))
    _, _, log_up, log_low = cfg.kernel_args()
    llr = _llr(n, z, cfg)
    if llr >= log_up:
        return SprtState(state.input_id, n, z, SELECTED, iteration)
    if llr <= log_low:
        return SprtState(state.input_id, n, z, DISCARDED, iteration)
    return SprtState(state.input_id, n, z)


class _Batch:
    """Vectorized SPRT accumulators for a set of inputs."""

    def __init__(self, ids):
        m = len(ids)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.n = np.zeros(m, dtype=np.int64)
        self.z = np.zeros(m, dtype=np.int64)
        self.status = np.zeros(m, dtype=np.int8)
        self.iters = np.zeros(m, dtype=np.int64)

    def undecided(self):
        return np.flatnonzero(self.status == UNDECIDED)

    def step(self, diff_full, cfg, it):
        _kernels.sprt_step(self.n, self.z, self.status, self.iters, diff_full, *cfg.kernel_args(), it)


def _run_trials(batch, xs, base, base_labels, mutant, cfg, it):
    live = batch.undecided()
    if live.size == 0:
        return
    d = np.zeros(len(batch.ids), dtype=bool)
    d[live] = nn.predict(mutant, xs[live]) != base_labels[live]
    batch.step(d, cfg, it)


def calibrate_zeta(base, pool, X_val, n_mutants=CALIBRATION_MUTANTS):
    """Mean benign mutation score over the first ``n_mutants`` pool members."""
    mutants = getattr(pool, "mutants", pool)
    xs = getattr(X_val, "xs", X_val)
    if len(xs) == 0:
        raise DomainError("validation set is empty")
    if len(mutants) < n_mutants:
        raise DomainError(f"need {n_mutants} accepted mutants, pool has {len(mutants)}")
    z = differs(base, list(mutants[:n_mutants]), xs).sum(axis=0)
    return float(np.mean(z / n_mutants))


@dataclass
class Calibration:
    n_max: int
    subset_positions: np.ndarray
    ids: np.ndarray
    n: np.ndarray
    z: np.ndarray
    status: np.ndarray
    iters: np.ndarray


def subset_size(total, cfg):
    return min(total, max(cfg.subset_min, math.ceil(cfg.subset_fraction * total)))


def calibrate_nmax(pool, X_adv, cfg, ids=None, grow=True):
    """Probe a seeded subset until ``decided_target`` of it is decided.

    One mutant per iteration gives every still-undecided probe input one
    trial; the pool grows by one mutant whenever it runs out. Returns a
    :class:`Calibration` whose ``n_max`` is the number of mutants consumed.
    """
    xs = np.asarray(getattr(X_adv, "xs", X_adv), dtype=np.float64)
    all_ids = np.asarray(getattr(X_adv, "ids", np.arange(len(xs))) if ids is None else ids)
    if len(xs) == 0:
        raise DomainError("no adversarial inputs to calibrate on")
    rng = np.random.default_rng(cfg.seed)
    pos = np.sort(rng.choice(len(xs), size=subset_size(len(xs), cfg), replace=False))
    sub = xs[pos]
    base = pool.base
    base_labels = nn.predict(base, sub)
    batch = _Batch(all_ids[pos])
    it = 0
    while True:
        it += 1
        if it > cfg.nmax_ceiling:
            raise CalibrationError(
                f"decided fraction stayed below {cfg.decided_target} after {cfg.nmax_ceiling} mutants "
                f"({np.mean(batch.status != UNDECIDED):.3f} decided)")
        if it > len(pool.mutants):
            if not grow:
                raise CalibrationError(f"pool exhausted at {len(pool.mutants)} mutants and growth disabled")
            grow_pool(pool, 1)
        _run_trials(batch, sub, base, base_labels, pool.mutants[it - 1], cfg, it)
        if np.mean(batch.status != UNDECIDED) >= cfg.decided_target:
            break
    return Calibration(it, pos, batch.ids, batch.n, batch.z, batch.status, batch.iters)


@dataclass
class SuiteEntry:
    input_id: int
    selection_iter: int
    z: int
    n: int


@dataclass
class PrioritizedSuite:
    selected: list = field(default_factory=list)
    discarded: list = field(default_factory=list)
    undecided: list = field(default_factory=list)
    n_max: int = 0
    zeta_h: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def ids(self):
        return [e.input_id for e in self.selected]

    def __len__(self):
        return len(self.selected)

    def to_csv(self, path=None):
        buf = io.StringIO()
        header = {**self.config, "n_max": self.n_max, "zeta_h": self.zeta_h}
        buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["input_id", "rank", "selection_iter", "z", "n", "decision"])
        for r, e in enumerate(self.selected, 1):
            w.writerow([e.input_id, r, e.selection_iter, e.z, e.n, "selected"])
        for e in self.discarded:
            w.writerow([e.input_id, "", e.selection_iter, e.z, e.n, "discarded"])
        for e in self.undecided:
            w.writerow([e.input_id, "", "", e.z, e.n, "undecided"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def read_suite_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = json.loads(lines[0][2:]) if lines and lines[0].startswith("# ") else {}
    rows = list(csv.DictReader(l for l in lines if not l.startswith("#")))
    suite = PrioritizedSuite(n_max=int(header.get("n_max", 0)), zeta_h=float(header.get("zeta_h", 0.0)),
                             config={k: v for k, v in header.items() if k not in ("n_max", "zeta_h")})
    for r in rows:
        it = int(r["selection_iter"]) if r["selection_iter"] else 0
        e = SuiteEntry(int(r["input_id"]), it, int(r["z"]), int(r["n"]))
        getattr(suite, r["decision"]).append(e)
    return suite


def _order_key(e):
    frac = e.z / e.n if e.n else 0.0
    return (e.selection_iter, -frac, e.input_id)


def _collect(ids, n, z, status, iters):
    sel, dis, und = [], [], []
    for i in range(len(ids)):
        e = SuiteEntry(int(ids[i]), int(iters[i]), int(z[i]), int(n[i]))
        (sel if status[i] == SELECTED else dis if status[i] == DISCARDED else und).append(e)
    return sel, dis, und


def prioritize(pool, X_rest, n_max, cfg, ids=None, calibration=None):
    """Run the fixed-budget SPRT over ``X_rest`` and assemble the ordered suite.

    Inputs still undecided after ``n_max`` mutants are dropped (reported as
    ``undecided``). Decisions from ``calibration`` are merged in; their
    iteration numbers are comparable because both loops walk the same pool
    order.
    """
    if n_max < 1:
        raise DomainError("n_max must be at least 1")
    if len(pool.mutants) < n_max:
        raise DomainError(f"pool has {len(pool.mutants)} mutants, n_max is {n_max}")
    xs = np.asarray(getattr(X_rest, "xs", X_rest), dtype=np.float64)
    rest_ids = np.asarray(getattr(X_rest, "ids", np.arange(len(xs))) if ids is None else ids)
    sel, dis, und = [], [], []
    if len(xs):
        base_labels = nn.predict(pool.base, xs)
        batch = _Batch(rest_ids)
        for it in range(1, n_max + 1):
            if batch.undecided().size == 0:
                break
            _run_trials(batch, xs, pool.base, base_labels, pool.mutants[it - 1], cfg, it)
        sel, dis, und = _collect(batch.ids, batch.n, batch.z, batch.status, batch.iters)
    if calibration is not None:
        s2, d2, u2 = _collect(calibration.ids, calibration.n, calibration.z, calibration.status,
                              calibration.iters)
        sel, dis, und = sel + s2, dis + d2, und + u2
    sel.sort(key=_order_key)
    dis.sort(key=lambda e: e.input_id)
    und.sort(key=lambda e: e.input_id)
    return PrioritizedSuite(sel, dis, und, n_max, cfg.zeta_h, asdict(cfg))


def lbt_select(pool, X_adv, cfg):
    """Steps 2 and 3 end to end: calibrate ``n_max`` on a probe subset, then prioritize the rest."""
    xs = np.asarray(getattr(X_adv, "xs", X_adv), dtype=np.float64)
    ids = np.asarray(getattr(X_adv, "ids", np.arange(len(xs))))
    if len(xs) == 0:
        return PrioritizedSuite(zeta_h=cfg.zeta_h, config=asdict(cfg))
    cal = calibrate_nmax(pool, xs, cfg, ids=ids)
    rest = np.setdiff1d(np.arange(len(xs)), cal.subset_positions)
    return prioritize(pool, xs[rest], cal.n_max, cfg, ids=ids[rest], calibration=cal)


def simulate_error_rates(cfg, p, streams=10_000, horizon=500, seed=0):
    """Fractions ``(selected, discarded, undecided)`` for Bernoulli(p) trial streams.

    Streams still undecided after ``horizon`` trials count as undecided.
    """
    u = np.random.default_rng(seed).random((streams, horizon))
    status, _ = _kernels.sprt_simulate(u, p, *cfg.kernel_args())
    return (float(np.mean(status == SELECTED)), float(np.mean(status == DISCARDED)),
            float(np.mean(status == UNDECIDED)))
