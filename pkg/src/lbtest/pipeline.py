"""Stage-by-stage experiment driver with on-disk caching.

Stages run in a fixed order and each one writes its artifacts plus a stamp
``stamps/<stage>.json`` holding a key derived from the config sections it
reads and the key of the stage before it. A stage whose stamp key matches
and whose outputs exist is skipped. The stamp is written last, so a crashed
stage leaves its partial files behind without marking them valid.
"""
from __future__ import annotations

import contextlib
import csv
import dataclasses
import json
import logging
import os
import time
from pathlib import Path

import numpy as np

from . import attacks, baselines, datasets, metrics, mutation, nn, sprt, surrogate
from .config import ExperimentConfig, digest
from .errors import ConfigError, LbtError, StageError
from .seeding import child_seed

log = logging.getLogger("lbtest.pipeline")

STAGES = ("train-mut", "gen-adv", "build-surrogate", "calibrate", "prioritize", "retrain", "evaluate",
          "report")
LBT = "lbt"
FORMAT_VERSION = 1

# config sections each stage reads, on top of everything its predecessors read
_READS = {
    "train-mut": ("seed", "dataset", "mut"),
    "gen-adv": ("attack", "eval_fraction"),
    "build-surrogate": ("surrogate",),
    "calibrate": ("mutation", "sprt"),
    "prioritize": ("baselines",),
    "retrain": ("retrain",),
    "evaluate": (),
    "report": (),
}

_OUTPUTS = {
    "train-mut": ("mut.json",),
    "gen-adv": ("adv/adv.json", "split.json"),
    "build-surrogate": ("surrogate.json", "similarity.csv", "oracle.json"),
    "calibrate": ("pool_manifest.json", "calibration.json"),
    "prioritize": ("suite_lbt.csv", "rankings"),
    "retrain": ("retrain.json",),
    "evaluate": ("reports.csv", "reports.json"),
    "report": ("table.csv",),
}


def stage_keys(cfg):
    """Cache key of every stage; each key folds in its predecessor's."""
    d = cfg.to_dict()
    keys, prev = {}, str(FORMAT_VERSION)
    for st in STAGES:
        prev = digest({"stage": st, "prev": prev, **{k: d[k] for k in _READS[st]}})
        keys[st] = prev
    return keys


@contextlib.contextmanager
def output_lock(out):
    """Exclusive writer lock on an output directory."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{out} is locked by another run (remove {lock} if that run is gone)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _train_cfg(t, seed):
    return nn.TrainConfig(t.learning_rate, t.epochs, t.batch_size, seed, t.l2)


class Run:
    """One experiment directory: loads upstream artifacts and runs stages."""

    def __init__(self, cfg, out=None, methods=None):
        self.cfg = cfg
        self.out = Path(out if out is not None else cfg.out)
        self.keys = stage_keys(cfg)
        self.methods = methods
        self._memo = {}

    # -- bookkeeping ---------------------------------------------------------

    def path(self, name):
        return self.out / name

    def seed(self, *keys):
        return child_seed(self.cfg.seed, *keys)

    def is_fresh(self, stage):
        stamp = self.path(f"stamps/{stage}.json")
        if not stamp.exists():
            return False
        if json.loads(stamp.read_text()).get("key") != self.keys[stage]:
            return False
        return all(self.path(o).exists() for o in _OUTPUTS[stage])

    def require(self, stage, consumer):
        if not self.is_fresh(stage):
            missing = [o for o in _OUTPUTS[stage] if not self.path(o).exists()]
            what = f"missing {', '.join(missing)}" if missing else "artifacts are stale for this config"
            raise StageError(consumer, f"{what}; run `lbtest {stage}` first")

    def _stamp(self, stage, seconds):
        _write_json(self.path(f"stamps/{stage}.json"),
                    {"key": self.keys[stage], "outputs": list(_OUTPUTS[stage]), "seconds": round(seconds, 3)})

    def memo(self, name, fn):
        if name not in self._memo:
            self._memo[name] = fn()
        return self._memo[name]

    # -- shared loaders ------------------------------------------------------

    def data(self):
        """``(train, val)`` benign sets of the model under test."""
        def load():
            d = self.cfg.dataset
            if d.kind == "blobs":
                full = datasets.synth_blobs(d.n_per_class, d.num_classes, d.dim, d.spread, self.seed("data"))
                train, val = datasets.split(full, datasets.SplitSpec((d.train_fraction, 1 - d.train_fraction),
                                                                     self.seed("data-split")))
                return train, val
            try:
                train = datasets.load_idx(d.train_images, d.train_labels)
                val = datasets.load_idx(d.val_images, d.val_labels)
            except FileNotFoundError as exc:
                raise ConfigError(f"dataset file not found: {exc.filename}") from None
            C = max(train.num_classes, val.num_classes)
            if d.n_train:
                train = train.take(np.arange(min(d.n_train, len(train))))
            if d.n_val:
                val = val.take(np.arange(min(d.n_val, len(val))))
            return (datasets.LabeledSet(train.xs, train.ys, C, train.ids),
                    datasets.LabeledSet(val.xs, val.ys, C, val.ids))
        return self.memo("data", load)

    def mut(self):
        return self.memo("mut", lambda: nn.load(self.path("mut.json")))

    def adv(self):
        return self.memo("adv", lambda: attacks.load_advset(self.path("adv/adv.json")))

    def splits(self):
        """``(prioritization set, evaluation set)`` of adversarial inputs with true labels."""
        def load():
            s = json.loads(self.path("split.json").read_text())
            adv = self.adv().as_labeled()
            return adv.by_ids(s["prioritize"]), adv.by_ids(s["evaluate"])
        return self.memo("splits", load)

    def surrogate(self):
        return self.memo("surrogate", lambda: nn.load(self.path("surrogate.json")))

    def sprt_config(self, zeta_h=0.0):
        return sprt.SprtConfig(**dataclasses.asdict(self.cfg.sprt), zeta_h=zeta_h, seed=self.seed("sprt"))

    def new_pool(self):
        m = self.cfg.mutation
        return mutation.MutantPool(self.surrogate(), self.data()[1].xs, m.operators, m.rate, m.gf_sigma,
                                   self.seed("pool"), m.min_agreement)

    def calibrated(self):
        """Pool regrown to its calibrated size, the calibration record and the SPRT config."""
        def load():
            c = json.loads(self.path("calibration.json").read_text())
            pool = mutation.grow_pool(self.new_pool(), c["pool_size"])
            manifest = json.loads(self.path("pool_manifest.json").read_text())
            if pool.manifest() != manifest:
                raise StageError("calibrate", "regrown mutant pool does not match pool_manifest.json")
            p = c["probe"]
            cal = sprt.Calibration(c["n_max"], np.asarray(p["positions"]), *(np.asarray(p[k]) for k in
                                   ("ids", "n", "z", "status", "iters")))
            return pool, cal, self.sprt_config(c["zeta_h"])
        return self.memo("calibrated", load)

    def suite(self):
        return sprt.read_suite_csv(self.path("suite_lbt.csv"))

    def ranking(self, method):
        if method == LBT:
            return np.asarray(self.suite().ids, dtype=np.int64)
        path = self.path(f"rankings/{method}.csv")
        if not path.exists():
            raise StageError("evaluate", f"missing rankings/{method}.csv; run `lbtest prioritize` first")
        with open(path) as fh:
            return np.asarray([int(r["input_id"]) for r in csv.DictReader(fh)], dtype=np.int64)

    def selection_size(self):
        return len(self.suite())

    def active_methods(self):
        all_methods = (LBT,) + tuple(self.cfg.baselines.methods)
        if self.methods is None:
            return all_methods
        unknown = [m for m in self.methods if m not in all_methods]
        if unknown:
            raise ConfigError(f"unknown or disabled method(s): {', '.join(unknown)}")
        return tuple(self.methods)

    # -- stages ---------------------------------------------------------------

    def stage_train_mut(self):
        train, val = self.data()
        sizes = [train.dim, *self.cfg.mut.hidden, train.num_classes]
        net = nn.sgd_train(nn.init_mlp(sizes, self.seed("mut-init")), train,
                           _train_cfg(self.cfg.mut.train, self.seed("mut-train")))
        nn.save(net, self.path("mut.json"))
        self._memo["mut"] = net
        log.info("MUT %s: train acc %.4f, val acc %.4f", sizes, nn.accuracy(net, train.xs, train.ys),
                 nn.accuracy(net, val.xs, val.ys))

    def stage_gen_adv(self):
        a = self.cfg.attack
        mut = self.mut()
        _, val = self.data()
        if a.kind == attacks.FGSM and a.epsilon > 0:
            acfg = attacks.AttackConfig(attacks.FGSM, epsilon=a.epsilon)
        elif a.kind == attacks.JSMA and a.theta > 0:
            acfg = attacks.AttackConfig(attacks.JSMA, theta=a.theta, gamma=a.gamma)
        else:
            acfg = attacks.tune_attack(mut, val, a.kind, a.gamma, a.min_accuracy, a.min_drop, quantized=True)
        raw = attacks.attack(mut, val, acfg)
        # adversarials are stored as IDX bytes, so fooled flags refer to the stored values
        xq = datasets.quantize(raw.adversarials)
        adv = attacks.AdvSet(val, xq, acfg, nn.predict(mut, xq) != val.ys)
        self.path("adv").mkdir(parents=True, exist_ok=True)
        attacks.save_advset(adv, self.path("adv/adv"))
        prio, ev = datasets.split(adv.as_labeled(), datasets.SplitSpec((1 - self.cfg.eval_fraction,
                                                                        self.cfg.eval_fraction),
                                                                       self.seed("eval-split")))
        acc_b = nn.accuracy(mut, val.xs, val.ys)
        acc_a = float(1.0 - adv.fooled.mean())
        _write_json(self.path("split.json"), {
            "prioritize": sorted(prio.ids.tolist()), "evaluate": sorted(ev.ids.tolist()),
            "attack": dataclasses.asdict(acfg), "acc_benign": acc_b, "acc_adv": acc_a,
            "in_band": attacks.in_band(acc_a, acc_b, a.min_accuracy, a.min_drop)})
        self._memo.pop("adv", None)
        self._memo.pop("splits", None)
        log.info("%s strength %.2f: benign acc %.4f, adversarial acc %.4f", acfg.kind, acfg.strength(), acc_b,
                 acc_a)

    def stage_build_surrogate(self):
        s = self.cfg.surrogate
        train, val = self.data()
        mut = self.mut()
        oracle = surrogate.LabelOracle.from_network(mut)
        rng = np.random.default_rng(self.seed("surrogate-seeds"))
        X0 = train.xs[np.sort(rng.choice(len(train), size=min(s.seed_points, len(train)), replace=False))]
        B0 = nn.init_mlp([train.dim, *s.hidden, mut.num_classes], self.seed("surrogate-init"))
        scfg = surrogate.SurrogateConfig(s.tau, s.patience, s.lam, s.max_rounds,
                                         _train_cfg(s.train, self.seed("surrogate-train")))
        B, trace = surrogate.build_surrogate(B0, oracle, X0, val.xs, scfg)
        nn.save(B, self.path("surrogate.json"))
        trace.to_csv(self.path("similarity.csv"))
        _write_json(self.path("oracle.json"), {
            "queries": {"build-surrogate": oracle.queries},
            "calls": oracle.calls,
            "total": oracle.queries,
            "rounds": len(trace.rounds),
            "reason": trace.reason,
            "final_similarity": trace.final_similarity})
        self._memo["surrogate"] = B
        log.info("surrogate: %d rounds (%s), similarity %.4f, %d oracle queries", len(trace.rounds),
                 trace.reason, trace.final_similarity, oracle.queries)

    def stage_calibrate(self):
        m = self.cfg.mutation
        pool = mutation.grow_pool(self.new_pool(), m.calibration_mutants)
        zeta = sprt.calibrate_zeta(pool.base, pool, self.data()[1].xs, m.calibration_mutants)
        scfg = self.sprt_config(zeta)
        prio, _ = self.splits()
        cal = sprt.calibrate_nmax(pool, prio.xs, scfg, ids=prio.ids)
        pool.save_manifest(self.path("pool_manifest.json"))
        _write_json(self.path("calibration.json"), {
            "zeta_h": zeta, "n_max": cal.n_max, "pool_size": len(pool), "sprt": dataclasses.asdict(scfg),
            "mutation": dataclasses.asdict(m),
            "probe": {"positions": cal.subset_positions.tolist(), "ids": cal.ids.tolist(),
                      "n": cal.n.tolist(), "z": cal.z.tolist(), "status": cal.status.tolist(),
                      "iters": cal.iters.tolist()}})
        self._memo["calibrated"] = (pool, cal, scfg)
        log.info("zeta_h %.6f, n_max %d, pool %d mutants", zeta, cal.n_max, len(pool))

    def stage_prioritize(self):
        prio, _ = self.splits()
        methods = self.active_methods()
        if LBT in methods:
            pool, cal, scfg = self.calibrated()
            rest = np.setdiff1d(np.arange(len(prio)), cal.subset_positions)
            suite = sprt.prioritize(pool, prio.xs[rest], cal.n_max, scfg, ids=prio.ids[rest], calibration=cal)
            suite.to_csv(self.path("suite_lbt.csv"))
            log.info("LBT selected %d of %d inputs", len(suite), len(prio))
        rank_dir = self.path("rankings")
        rank_dir.mkdir(parents=True, exist_ok=True)
        wanted = [m for m in methods if m != LBT]
        if not wanted:
            return
        mut = self.mut()
        train, _ = self.data()
        provider = baselines.ActivationProvider(mut)
        bounds = baselines.NeuronBounds.from_training(provider, train.xs) if "nbc" in wanted else None
        refs = (baselines.SurpriseRefs.from_training(provider, train.xs, train.ys)
                if {"dsa", "kde"} & set(wanted) else None)
        for method in wanted:
            r = baselines.rank_method(method, provider, prio.xs, prio.ids, seed=self.seed("random-rank"),
                                      nac_t=self.cfg.baselines.nac_threshold, bounds=bounds, refs=refs)
            with open(rank_dir / f"{method}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["input_id", "rank", "score"])
                for k, (i, s) in enumerate(zip(r.ids, r.scores), 1):
                    w.writerow([int(i), k, repr(float(s))])

    def stage_retrain(self):
        prio, ev = self.splits()
        k = self.selection_size()
        mut = self.mut()
        deltas = {}
        for method in self.active_methods():
            top = self.ranking(method)[:k]
            if len(top) == 0:
                deltas[method] = float("nan")
                continue
            tcfg = _train_cfg(self.cfg.retrain, self.seed("retrain", method))
            deltas[method] = metrics.retrain_eval(mut, prio.by_ids(top), ev, tcfg)
        path = self.path("retrain.json")
        old = json.loads(path.read_text())["delta"] if path.exists() and self.methods else {}
        _write_json(path, {"k": k, "eval_size": len(ev),
                           "delta": {**old, **{m: (None if np.isnan(v) else v) for m, v in deltas.items()}}})

    def stage_evaluate(self):
        prio, _ = self.splits()
        mut = self.mut()
        adv = self.adv()
        records = metrics.fault_records(prio.ids, prio.ys, nn.predict(mut, prio.xs))
        # |F| counts faults over the whole adversarial set
        n_faults = int(adv.fooled.sum())
        k = self.selection_size()
        deltas = json.loads(self.path("retrain.json").read_text())["delta"] if self.path("retrain.json").exists() \
            else {}
        reports = []
        for method in self.active_methods():
            d = deltas.get(method)
            reports.append(metrics.evaluate_ranking(method, self.ranking(method)[:k], records, n_faults,
                                                    prio.num_classes, self.cfg.seed,
                                                    float("nan") if d is None else d))
        metrics.write_reports(reports, self.path("reports.csv"))
        split = json.loads(self.path("split.json").read_text())
        cal = json.loads(self.path("calibration.json").read_text())
        oracle = json.loads(self.path("oracle.json").read_text())
        _write_json(self.path("reports.json"), {
            "config": self.cfg.to_dict(),
            "stage_keys": self.keys,
            "seeds": {"global": self.cfg.seed, "sprt": self.seed("sprt"), "pool": self.seed("pool")},
            "attack": split["attack"], "acc_benign": split["acc_benign"], "acc_adv": split["acc_adv"],
            "zeta_h": cal["zeta_h"], "n_max": cal["n_max"], "k": k,
            "total_faults": n_faults, "prioritized": len(prio),
            "oracle_queries": oracle["queries"], "oracle_total": oracle["total"],
            "reports": [{f: (None if isinstance(v, float) and np.isnan(v) else v)
                         for f, v in dataclasses.asdict(r).items()} for r in reports]})

    def stage_report(self):
        reports = metrics.read_reports(self.path("reports.csv"))
        rows = [["method", "k", "FDR", "APFD", "APFD_norm", "RAUC", "retrain_delta"]]
        for r in reports:
            rows.append([r.method, r.k, *(_cell(v) for v in (r.fdr, r.apfd_raw, r.apfd_norm, r.rauc,
                                                           r.retrain_delta))])
        with open(self.path("table.csv"), "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        self._memo["table"] = rows

    # -- driver -----------------------------------------------------------------

    def run_stage(self, stage, force=False):
        i = STAGES.index(stage)
        for up in STAGES[:i]:
            if up in ("retrain", "report"):
                continue
            self.require(up, stage)
        if not force and self.methods is None and self.is_fresh(stage):
            log.info("%s: cached", stage)
            return False
        log.info("%s: running", stage)
        t0 = time.perf_counter()
        try:
            getattr(self, "stage_" + stage.replace("-", "_"))()
        except (StageError, ConfigError):
            raise
        except (LbtError, ValueError, ArithmeticError, OSError, KeyError) as exc:
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        if self.methods is None:
            self._stamp(stage, time.perf_counter() - t0)
        return True


def _cell(v):
    return "nan" if np.isnan(v) else f"{v:.4f}"


def run_pipeline(cfg, out=None, until=None):
    """Run every stage (through ``until``) and return the evaluation reports.

    Stages whose artifacts are already on disk for this config are reused.
    """
    if until is not None and until not in STAGES:
        raise ConfigError(f"unknown stage {until!r}; choose from {', '.join(STAGES)}")
    run = Run(cfg, out)
    last = STAGES.index(until) if until else len(STAGES) - 1
    with output_lock(run.out):
        for st in STAGES[:last + 1]:
            run.run_stage(st)
    q = json.loads(run.path("oracle.json").read_text())["total"] if run.path("oracle.json").exists() else 0
    log.info("label-oracle queries: %d", q)
    return metrics.read_reports(run.path("reports.csv")) if run.path("reports.csv").exists() else []
