"""CVM-CV: grid-search model selection on a 3-fold partition, then evaluation on seeded splits.

Selection (CVM) runs once per experiment on the proposed 3-fold partition
drawn with ``cvm_seed``.  Evaluation (CV) then retrains the chosen
configuration for the tuned number of epochs on each evaluation split and
scores the held-out conditions.  Every split is audited for leakage and every
run re-checks that its normalization came from training segments only.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dsp
from .catalog import ACCELEROMETERS, SignalRecord, truncate_half
from .dsp import FeatureSet, FeatureStore, NormStats, Representation, fit_zscore
from .evaluation import RunReport, ScoredSet, UndefinedAurocError, aggregate, evaluate_realization, macro_auroc, score
from .nn.model import WdcnnConfig
from .nn.optim import NonFiniteGradientError
from .nn.train import BATCH_SIZES, LEARNING_RATES, MAX_EPOCHS, HyperParams, TrainedModel, train
from .splitgen import (
    CVM_SEED, EVAL_SEEDS, FOLDS, PRNG_ID, TEST, TRAIN, Mode, SplitPlan, audit_no_leakage, audit_records,
    by_fault_size_for_run, gen_three_fold, generate, materialize,
)

log = logging.getLogger(__name__)

MODEL_FAMILIES = ("WDCNN", "external-export")


class Scope(str, enum.Enum):
    SINGLE = "Single"
    SEPARATE = "SeparateDEFE"


class SignalLength(str, enum.Enum):
    FULL = "Full"
    HALF = "Half"


class ProtocolError(RuntimeError):
    pass


class LeakageError(ProtocolError):
    pass


_MODES = {
    ("Proposed", "2:1"): Mode.PROPOSED_HOLDOUT,
    ("Proposed", "1:2"): Mode.PROPOSED_HOLDOUT_INVERTED,
    ("ByFaultSize", "2:1"): Mode.BY_FAULT_SIZE,
    ("ByFaultSize", "1:2"): Mode.BY_FAULT_SIZE_INVERTED,
}


@dataclass(frozen=True)
class Experiment:
    """One row of an evaluation table."""

    representation: Representation = Representation.POWER_CEPSTRUM
    model_family: str = "WDCNN"
    split_type: str = "Proposed"
    split_ratio: str = "2:1"
    scope: Scope = Scope.SINGLE
    signal_length: SignalLength = SignalLength.FULL
    seeds: tuple[int, ...] = EVAL_SEEDS
    batch_sizes: tuple[int, ...] = BATCH_SIZES
    learning_rates: tuple[float, ...] = LEARNING_RATES
    max_epochs: int = MAX_EPOCHS
    cvm_seed: int = CVM_SEED
    overlap: float = dsp.OVERLAP
    level: str = "segment"
    retune: bool = True
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "representation", Representation(self.representation))
        object.__setattr__(self, "scope", Scope(self.scope))
        object.__setattr__(self, "signal_length", SignalLength(self.signal_length))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "batch_sizes", tuple(int(b) for b in self.batch_sizes))
        object.__setattr__(self, "learning_rates", tuple(float(x) for x in self.learning_rates))
        if not self.seeds:
            raise ValueError("experiment needs at least one seed")
        if not self.batch_sizes or not self.learning_rates:
            raise ValueError("hyperparameter grid is empty")
        if (self.split_type, self.split_ratio) not in _MODES:
            raise ValueError(f"unknown split {self.split_type} {self.split_ratio}")
        if self.model_family not in MODEL_FAMILIES:
            raise ValueError(f"model family must be one of {MODEL_FAMILIES}")
        if self.level not in ("segment", "signal"):
            raise ValueError("level must be 'segment' or 'signal'")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")

    @property
    def mode(self) -> Mode:
        return _MODES[(self.split_type, self.split_ratio)]

    @property
    def grid(self) -> list[HyperParams]:
        return [HyperParams(b, lr, self.max_epochs) for b in self.batch_sizes for lr in self.learning_rates]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("representation", "scope", "signal_length"):
            d[k] = d[k].value
        for k in ("seeds", "batch_sizes", "learning_rates"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Experiment":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown experiment fields: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "Experiment":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        """Content hash of everything that affects results (the name is excluded)."""
        d = self.to_dict()
        d.pop("name")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def results_dir(self, root: str | Path) -> Path:
        return Path(root) / f"{self.name or 'experiment'}-{self.digest()[:12]}"


def default_experiment(**overrides) -> Experiment:
    return Experiment(**overrides)


# --------------------------------------------------------------------------- training helpers


def prepare_records(exp: Experiment, records: Sequence[SignalRecord]) -> list[SignalRecord]:
    return truncate_half(list(records)) if exp.signal_length is SignalLength.HALF else list(records)


def plan_for(exp: Experiment, seed: int) -> SplitPlan:
    if exp.mode in (Mode.BY_FAULT_SIZE, Mode.BY_FAULT_SIZE_INVERTED):
        return by_fault_size_for_run(seed, inverted=exp.mode is Mode.BY_FAULT_SIZE_INVERTED)
    return generate(exp.mode, seed)


def check_normalization(train_fs: FeatureSet, stats: NormStats, train_ids: set[str], tol: float = 1e-6) -> None:
    """Recompute the z-score statistics from train-side segments and compare.

    Raises :class:`LeakageError` if any segment came from outside the
    training records or the stored statistics differ from the recomputation.
    """
    foreign = set(train_fs.record_ids.tolist()) - train_ids
    if foreign:
        raise LeakageError(f"training features include non-train records: {sorted(foreign)[:3]}")
    x = train_fs.inputs.astype(np.float64)
    mean = float(x.mean())
    std = float(np.sqrt(((x - mean) ** 2).mean()))
    if abs(mean - stats.mean) > tol * max(1.0, abs(mean)) or abs(std - stats.std) > tol * max(1.0, std):
        raise LeakageError(f"normalization stats ({stats.mean}, {stats.std}) do not match train data ({mean}, {std})")


@dataclass
class FitResult:
    scored: ScoredSet
    models: list[TrainedModel]
    best_epochs: list[int]
    val_metric: float | None = None


def _groups(exp: Experiment, records: Sequence[SignalRecord]):
    if exp.scope is Scope.SINGLE:
        return [(None, list(records))]
    return [(acc, [r for r in records if r.accelerometer is acc]) for acc in ACCELEROMETERS]


def fit_and_score(exp: Experiment, train_records: Sequence[SignalRecord], test_records: Sequence[SignalRecord],
                  hyper: HyperParams, seed: int, store: FeatureStore, epochs: int | None = None,
                  checkpoint: bool = False) -> FitResult:
    """Train on ``train_records`` (one model, or one per accelerometer) and score ``test_records``.

    With ``checkpoint`` the test side doubles as validation data and each
    model keeps its best epoch; otherwise it trains for exactly ``epochs``.
    """
    train_ids = {r.record_id for r in train_records}
    test_ids = {r.record_id for r in test_records}
    if train_ids & test_ids:
        raise LeakageError(f"records on both sides: {sorted(train_ids & test_ids)[:3]}")
    parts, models, best = [], [], []
    train_groups = dict(_groups(exp, train_records))
    for acc, test_group in _groups(exp, test_records):
        train_group = train_groups[acc]
        if not train_group or not test_group:
            raise ProtocolError(f"empty train or test side for {acc or 'all accelerometers'}")
        raw_train = store.features(train_group, exp.representation)
        stats = fit_zscore(raw_train.inputs)
        check_normalization(raw_train, stats, train_ids)
        tr = raw_train.normalized(stats)
        te = store.features(test_group, exp.representation).normalized(stats)
        config = WdcnnConfig(input_length=tr.input_shape[-1], seed=seed)
        model = train(tr, hyper, seed, validation=te if checkpoint else None, config=config, epochs=epochs)
        models.append(model)
        best.append(model.epoch)
        parts.append(score(model, te))
    scored = ScoredSet.concat(parts)
    if exp.level == "signal":
        scored = scored.signal_level()
    return FitResult(scored, models, best, macro_auroc(scored) if checkpoint else None)


# --------------------------------------------------------------------------- worker pool
#
# Jobs receive records through a module global set before forking so that the
# catalog is not pickled once per job.

_SHARED: dict = {}


def _init_shared(records, cache_dir, overlap):
    _SHARED["records"] = records
    _SHARED["store"] = FeatureStore(cache_dir, overlap)


def _map(fn: Callable, jobs: list, records, store: FeatureStore, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        _SHARED["records"], _SHARED["store"] = records, store
        return [fn(j) for j in jobs]
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_init_shared,
                             initargs=(records, store.cache_dir, store.overlap)) as pool:
        return list(pool.map(fn, jobs))


# --------------------------------------------------------------------------- CVM


def cvm_folds(exp: Experiment) -> list[SplitPlan]:
    """Train/validation views of the CVM partition.

    For a 2:1 ratio each fold is validated on once with the other two for
    training; for 1:2 each fold is trained on once and the other two validate.
    Healthy records are always on the validation side.
    """
    part = gen_three_fold(exp.cvm_seed)
    views = []
    for k in range(3):
        if exp.split_ratio == "2:1":
            views.append(part.fold_holdout(k))
        else:
            assignment = {c: TRAIN if f == FOLDS[k] else TEST for c, f in part.assignment.items()}
            views.append(SplitPlan(Mode.PROPOSED_HOLDOUT_INVERTED, part.seed, assignment, TEST))
    return views


@dataclass
class Selection:
    hyper: HyperParams
    epochs: int
    scores: list[dict]
    cvm_seed: int

    def to_dict(self) -> dict:
        return {"hyper": self.hyper.to_dict(), "epochs": self.epochs, "cvm_seed": self.cvm_seed, "grid": self.scores}

    @classmethod
    def from_dict(cls, d: dict) -> "Selection":
        return cls(HyperParams(**d["hyper"]), d["epochs"], d.get("grid", []), d.get("cvm_seed", CVM_SEED))


def _cvm_job(job):
    exp, hyper, k = job
    records, store = _SHARED["records"], _SHARED["store"]
    view = cvm_folds(exp)[k]
    tr, va = materialize(view, records, TRAIN), materialize(view, records, TEST)
    violations = audit_records({TRAIN: tr, TEST: va})
    if violations:
        raise LeakageError(f"CVM fold {k}: {violations[0]}")
    try:
        res = fit_and_score(exp, tr, va, hyper, exp.cvm_seed + k, store, checkpoint=True)
    except (NonFiniteGradientError, UndefinedAurocError) as exc:
        return {"fold": k, "error": str(exc)}
    return {"fold": k, "val_macro_auroc": res.val_metric, "best_epoch": int(np.median(res.best_epochs))}


def cvm_select(exp: Experiment, records: Sequence[SignalRecord], store: FeatureStore | None = None,
               workers: int = 1) -> Selection:
    """Pick the grid point with the highest mean validation macro AUROC.

    Ties go to the smaller learning rate, then the smaller batch.  The tuned
    epoch count is the median of the checkpointed best epochs across folds.
    """
    records = prepare_records(exp, records)
    store = store or FeatureStore(None, exp.overlap)
    grid = exp.grid
    jobs = [(exp, h, k) for h in grid for k in range(3)]
    results = _map(_cvm_job, jobs, records, store, workers)
    table = []
    for i, h in enumerate(grid):
        folds = results[3 * i : 3 * i + 3]
        ok = [f for f in folds if "error" not in f]
        row = {"batch_size": h.batch_size, "learning_rate": h.learning_rate, "folds": folds,
               "mean_val_macro_auroc": float(np.mean([f["val_macro_auroc"] for f in ok])) if ok else None,
               "epochs": int(np.median([f["best_epoch"] for f in ok])) if ok else None}
        table.append(row)
        log.info("cvm batch=%d lr=%g -> %s", h.batch_size, h.learning_rate, row["mean_val_macro_auroc"])
    usable = [r for r in table if r["mean_val_macro_auroc"] is not None]
    if not usable:
        raise ProtocolError("training failed on every fold of every grid point")
    best = min(usable, key=lambda r: (-r["mean_val_macro_auroc"], r["learning_rate"], r["batch_size"]))
    return Selection(HyperParams(best["batch_size"], best["learning_rate"], exp.max_epochs), best["epochs"],
                     table, exp.cvm_seed)


# --------------------------------------------------------------------------- CV


def _cv_job(job):
    exp, hyper, epochs, seed = job
    records, store = _SHARED["records"], _SHARED["store"]
    try:
        return seed, run_seed(exp, hyper, epochs, seed, records, store), None
    except (NonFiniteGradientError, UndefinedAurocError, ProtocolError) as exc:
        if isinstance(exc, LeakageError):
            raise
        return seed, None, f"{type(exc).__name__}: {exc}"


def run_seed(exp: Experiment, hyper: HyperParams, epochs: int, seed: int, records: Sequence[SignalRecord],
             store: FeatureStore):
    plan = plan_for(exp, seed)
    report = audit_no_leakage(plan, records)
    if not report.passed:
        raise LeakageError(f"seed {seed}: " + "; ".join(map(str, report.violations)))
    tr, te = materialize(plan, records, TRAIN), materialize(plan, records, TEST)
    res = fit_and_score(exp, tr, te, hyper, seed, store, epochs=epochs)
    real = evaluate_realization(res.scored, seed)
    real.test_records = sorted(r.record_id for r in te)
    return real


def cv_evaluate(exp: Experiment, hyper: HyperParams, epochs: int, records: Sequence[SignalRecord],
                store: FeatureStore | None = None, workers: int = 1, metadata: dict | None = None) -> RunReport:
    records = prepare_records(exp, records)
    store = store or FeatureStore(None, exp.overlap)
    jobs = [(exp, hyper, epochs, s) for s in exp.seeds]
    out = _map(_cv_job, jobs, records, store, workers)
    reals = [r for _, r, err in out if r is not None]
    failed = {s: err for s, _, err in out if err is not None}
    if not reals:
        raise ProtocolError(f"every evaluation seed failed: {failed}")
    meta = provenance(exp)
    meta.update({"hyper": hyper.to_dict(), "epochs": epochs, "normalization_audit": "passed",
                 "test_records": {r.seed: r.test_records for r in reals},
                 "duplicate_plans": duplicate_plans(exp)})
    meta.update(metadata or {})
    return aggregate(reals, failed, meta)


def duplicate_plans(exp: Experiment) -> list[list[int]]:
    """Groups of evaluation seeds that drew the same split (kept, not redrawn)."""
    groups: dict = {}
    for s in exp.seeds:
        groups.setdefault(plan_for(exp, s).signature(), []).append(s)
    return [g for g in groups.values() if len(g) > 1]


def provenance(exp: Experiment) -> dict:
    from .catalog import load_manifest

    return {
        "experiment": exp.to_dict(),
        "experiment_hash": exp.digest(),
        "manifest_digest": load_manifest().digest(),
        "prng": PRNG_ID,
        "dsp": dict(dsp.METADATA),
        "evaluation_level": exp.level,
        "std_conventions": {"cells": "sample", "location_average": "sample", "macro": "population"},
    }


@dataclass
class ExperimentResult:
    experiment: Experiment
    selection: Selection
    report: RunReport

    def to_dict(self) -> dict:
        return {"experiment": self.experiment.to_dict(), "selection": self.selection.to_dict(),
                "report": self.report.to_dict()}


def run_experiment(exp: Experiment, records: Sequence[SignalRecord], store: FeatureStore | None = None,
                   workers: int = 1, selection: Selection | None = None) -> ExperimentResult:
    if exp.model_family != "WDCNN":
        raise ProtocolError(f"{exp.model_family} experiments are exported, not trained here")
    store = store or FeatureStore(None, exp.overlap)
    if selection is None:
        selection = cvm_select(exp, records, store, workers)
    report = cv_evaluate(exp, selection.hyper, selection.epochs, records, store, workers)
    return ExperimentResult(exp, selection, report)


# --------------------------------------------------------------------------- ablation

ABLATION_ROWS = (
    (Scope.SINGLE, "Proposed", "2:1", SignalLength.FULL),
    (Scope.SEPARATE, "Proposed", "2:1", SignalLength.FULL),
    (Scope.SINGLE, "ByFaultSize", "2:1", SignalLength.FULL),
    (Scope.SINGLE, "Proposed", "1:2", SignalLength.FULL),
    (Scope.SINGLE, "Proposed", "2:1", SignalLength.HALF),
    (Scope.SEPARATE, "ByFaultSize", "1:2", SignalLength.FULL),
)


def ablation_experiments(base: Experiment) -> list[Experiment]:
    return [
        replace(base, scope=s, split_type=t, split_ratio=r, signal_length=l,
                name=f"{s.value}-{t}-{r.replace(':', 'to')}-{l.value}")
        for s, t, r, l in ABLATION_ROWS
    ]


@dataclass
class AblationReport:
    rows: list[ExperimentResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows]}


def run_ablation_suite(base: Experiment, records: Sequence[SignalRecord], store: FeatureStore | None = None,
                       workers: int = 1) -> AblationReport:
    """All six ablation rows with shared seeds; rows re-tune unless ``base.retune`` is false."""
    store = store or FeatureStore(None, base.overlap)
    out = AblationReport()
    base_selection = None
    for exp in ablation_experiments(base):
        sel = None if base.retune else base_selection
        res = run_experiment(exp, records, store, workers, selection=sel)
        base_selection = base_selection or res.selection
        out.rows.append(res)
    return out
