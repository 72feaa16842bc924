"""Leakage-free train/test divisions of the 19 fault conditions.

Every split assigns whole bearing configurations (all six signals of a
condition) to one side, and the healthy configuration is always on the test
side.  Random choices come from :class:`SplitMix64` so that a seed names the
same plan on every platform.

SplitMix64 (Steele, Lea & Flood 2014), all arithmetic modulo 2**64::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

``below(n)`` draws ``z`` repeatedly until ``z < 2**64 - (2**64 % n)`` and
returns ``z % n`` (unbiased rejection sampling).
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .catalog import (
    COLUMNS,
    FAULT_SIZES,
    FAULTY_CONDITIONS,
    HEALTHY,
    Accelerometer,
    FaultCondition,
    SignalRecord,
)

PRNG_ID = "splitmix64/v1"
EVAL_SEEDS = tuple(range(30))
CVM_SEED = 1000

_MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            z = self.next_u64()
            if z < limit:
                return z % n


class Mode(str, enum.Enum):
    PROPOSED_HOLDOUT = "ProposedHoldout"
    PROPOSED_THREE_FOLD = "ProposedThreeFold"
    BY_FAULT_SIZE = "ByFaultSize"
    PROPOSED_HOLDOUT_INVERTED = "ProposedHoldoutInverted"
    BY_FAULT_SIZE_INVERTED = "ByFaultSizeInverted"


TRAIN, TEST = "train", "test"
FOLDS = ("fold1", "fold2", "fold3")
HOLDOUT_MODES = {Mode.PROPOSED_HOLDOUT, Mode.PROPOSED_HOLDOUT_INVERTED, Mode.BY_FAULT_SIZE, Mode.BY_FAULT_SIZE_INVERTED}


@dataclass(frozen=True)
class SplitPlan:
    """Assignment of each faulty condition to a side.

    Values are a side name, or a tuple of side names (only ever produced by
    hand-edited plans, which the audit then rejects).  ``healthy`` records
    where the healthy configuration goes; anything other than ``"test"`` is a
    violation.
    """

    mode: Mode
    seed: int | None
    assignment: dict
    healthy: str | tuple = TEST
    fault_size: int | None = None

    @property
    def sides(self) -> tuple[str, ...]:
        return FOLDS if self.mode is Mode.PROPOSED_THREE_FOLD else (TRAIN, TEST)

    def sides_of(self, condition: FaultCondition) -> tuple[str, ...]:
        if condition.is_healthy:
            v = self.healthy
        else:
            v = self.assignment.get(condition, ())
        return (v,) if isinstance(v, str) else tuple(v)

    def conditions_on(self, side: str) -> list[FaultCondition]:
        return [c for c in FAULTY_CONDITIONS if side in self.sides_of(c)]

    def fold_holdout(self, k: int, train_folds: Sequence[int] | None = None) -> "SplitPlan":
        """Hold-out view of a 3-fold plan: fold ``k`` is test; train is ``train_folds`` (default: the rest)."""
        if self.mode is not Mode.PROPOSED_THREE_FOLD:
            raise ValueError("fold_holdout needs a three-fold plan")
        if train_folds is None:
            train_folds = [j for j in range(3) if j != k]
        train_names = {FOLDS[j] for j in train_folds}
        assignment = {}
        for c in FAULTY_CONDITIONS:
            fold = self.assignment[c]
            if fold == FOLDS[k]:
                assignment[c] = TEST
            elif fold in train_names:
                assignment[c] = TRAIN
            else:
                assignment[c] = ()  # unused in this view
        return SplitPlan(Mode.PROPOSED_HOLDOUT, self.seed, assignment, TEST)

    def to_dict(self) -> dict:
        def enc(v):
            return v if isinstance(v, str) else list(v)

        return {
            "mode": self.mode.value,
            "seed": self.seed,
            "fault_size": self.fault_size,
            "prng": PRNG_ID,
            "healthy": enc(self.healthy),
            "assignment": {c.key: enc(self.assignment[c]) for c in FAULTY_CONDITIONS if c in self.assignment},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        def dec(v):
            return v if isinstance(v, str) else tuple(v)

        try:
            assignment = {FaultCondition.from_key(k): dec(v) for k, v in d["assignment"].items()}
            return cls(Mode(d["mode"]), d.get("seed"), assignment, dec(d.get("healthy", TEST)), d.get("fault_size"))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"malformed split plan: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        return cls.from_dict(json.loads(text))

    def signature(self):
        """Hashable content of the plan (mode and assignment, not seed)."""
        return (self.mode, tuple(self.sides_of(c) for c in FAULTY_CONDITIONS), self.sides_of(HEALTHY))


def _column_conditions(column) -> list[FaultCondition]:
    loc, ft = column
    return [FaultCondition(loc, ft, s) for s in FAULT_SIZES]


def _holdout(seed: int, inverted: bool) -> SplitPlan:
    rng = SplitMix64(seed)
    chosen, other = (TRAIN, TEST) if inverted else (TEST, TRAIN)
    assignment = {}
    for column in COLUMNS:
        pick = rng.below(3)
        for i, cond in enumerate(_column_conditions(column)):
            assignment[cond] = chosen if i == pick else other
    mode = Mode.PROPOSED_HOLDOUT_INVERTED if inverted else Mode.PROPOSED_HOLDOUT
    return SplitPlan(mode, seed, assignment)


def gen_holdout(seed: int) -> SplitPlan:
    """One random fault size per (location, type) column goes to test (2:1 ratio)."""
    return _holdout(seed, inverted=False)


def gen_holdout_inverted(seed: int) -> SplitPlan:
    """One random fault size per column goes to train (1:2 ratio)."""
    return _holdout(seed, inverted=True)


def gen_three_fold(seed: int) -> SplitPlan:
    """Random 3-fold partition; fold 1 is drawn exactly as :func:`gen_holdout`'s test side."""
    rng = SplitMix64(seed)
    first = [rng.below(3) for _ in COLUMNS]
    assignment = {}
    for column, pick in zip(COLUMNS, first):
        conds = _column_conditions(column)
        rest = [c for i, c in enumerate(conds) if i != pick]
        if rng.below(2):
            rest.reverse()
        assignment[conds[pick]] = FOLDS[0]
        assignment[rest[0]] = FOLDS[1]
        assignment[rest[1]] = FOLDS[2]
    return SplitPlan(Mode.PROPOSED_THREE_FOLD, seed, assignment)


def gen_by_fault_size(size: int, inverted: bool = False, seed: int | None = None) -> SplitPlan:
    """All conditions of ``size`` go to test (or, inverted, to train)."""
    if size not in FAULT_SIZES:
        raise ValueError(f"size must be one of {FAULT_SIZES}")
    chosen, other = (TRAIN, TEST) if inverted else (TEST, TRAIN)
    assignment = {c: (chosen if c.fault_size_mils == size else other) for c in FAULTY_CONDITIONS}
    mode = Mode.BY_FAULT_SIZE_INVERTED if inverted else Mode.BY_FAULT_SIZE
    return SplitPlan(mode, seed, assignment, TEST, size)


def by_fault_size_for_run(run_seed: int, inverted: bool = False, repetitions: int = 10) -> SplitPlan:
    """Runs 0..9 test 7 mils, 10..19 test 14 mils, 20..29 test 21 mils."""
    size = FAULT_SIZES[(run_seed // repetitions) % len(FAULT_SIZES)]
    return gen_by_fault_size(size, inverted, seed=run_seed)


def generate(mode: Mode | str, seed: int) -> SplitPlan:
    mode = Mode(mode)
    if mode is Mode.PROPOSED_HOLDOUT:
        return gen_holdout(seed)
    if mode is Mode.PROPOSED_HOLDOUT_INVERTED:
        return gen_holdout_inverted(seed)
    if mode is Mode.PROPOSED_THREE_FOLD:
        return gen_three_fold(seed)
    return by_fault_size_for_run(seed, inverted=mode is Mode.BY_FAULT_SIZE_INVERTED)


# --------------------------------------------------------------------------- enumeration


def enumerate_holdout_plans() -> list[SplitPlan]:
    """Every distinct proposed hold-out assignment (one test size per column)."""
    plans = []
    for picks in itertools.product(range(3), repeat=len(COLUMNS)):
        assignment = {}
        for column, pick in zip(COLUMNS, picks):
            for i, cond in enumerate(_column_conditions(column)):
                assignment[cond] = TEST if i == pick else TRAIN
        plans.append(SplitPlan(Mode.PROPOSED_HOLDOUT, None, assignment))
    return plans


def three_fold_partition_key(plan: SplitPlan) -> frozenset:
    """The plan as an unordered set of folds (fold labels ignored)."""
    return frozenset(frozenset(plan.conditions_on(f)) for f in FOLDS)


def enumerate_three_fold_partitions() -> set[frozenset]:
    """All distinct unordered 3-fold partitions with one size per column in each fold."""
    keys = set()
    for perms in itertools.product(list(itertools.permutations(range(3))), repeat=len(COLUMNS)):
        folds = [[], [], []]
        for column, perm in zip(COLUMNS, perms):
            for cond, f in zip(_column_conditions(column), perm):
                folds[f].append(cond)
        keys.add(frozenset(frozenset(f) for f in folds))
    return keys


# --------------------------------------------------------------------------- audit


@dataclass(frozen=True)
class Violation:
    kind: str
    condition: str
    detail: str

    def __str__(self):
        return f"{self.kind}: {self.condition}: {self.detail}"


@dataclass
class AuditReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def audit_records(sides: dict[str, Iterable[SignalRecord]]) -> list[Violation]:
    """Brute-force leakage check over explicit record sets.

    ``sides`` maps side names to records; the name ``"train"`` (or any fold
    when a fold is used for training) is the training side.  A condition may
    appear on only one side, no record on two, and healthy never on a side
    named ``train``.
    """
    violations = []
    where: dict[str, set[str]] = {}
    record_sides: dict[str, set[str]] = {}
    for side, recs in sides.items():
        for r in recs:
            where.setdefault(r.condition.key, set()).add(side)
            record_sides.setdefault(r.record_id, set()).add(side)
            if r.condition.is_healthy and side == TRAIN:
                violations.append(Violation("healthy-in-train", r.condition.key, r.record_id))
    for key, s in sorted(where.items()):
        if len(s) > 1:
            violations.append(Violation("condition-on-multiple-sides", key, ", ".join(sorted(s))))
    for rid, s in sorted(record_sides.items()):
        if len(s) > 1:
            violations.append(Violation("record-on-multiple-sides", rid, ", ".join(sorted(s))))
    # collapse duplicate healthy-in-train entries to one per condition
    seen, out = set(), []
    for v in violations:
        k = (v.kind, v.condition) if v.kind == "healthy-in-train" else v
        if k not in seen:
            seen.add(k)
            out.append(v)
    return out


def _structure_violations(plan: SplitPlan) -> list[Violation]:
    out = []
    if plan.healthy != TEST:
        out.append(Violation("healthy-not-test", "healthy", f"placed on {plan.healthy!r}"))
    for c in FAULTY_CONDITIONS:
        s = plan.sides_of(c)
        if len(s) != 1 or s[0] not in plan.sides:
            out.append(Violation("bad-assignment", c.key, f"sides {list(s)}"))
    if out:
        return out
    for column in COLUMNS:
        conds = _column_conditions(column)
        sides = [plan.sides_of(c)[0] for c in conds]
        name = f"{conds[0].location.value}/{conds[0].fault_type.value}"
        if plan.mode is Mode.PROPOSED_HOLDOUT and sides.count(TEST) != 1:
            out.append(Violation("column-structure", name, "needs exactly one test size"))
        elif plan.mode is Mode.PROPOSED_HOLDOUT_INVERTED and sides.count(TRAIN) != 1:
            out.append(Violation("column-structure", name, "needs exactly one train size"))
        elif plan.mode is Mode.PROPOSED_THREE_FOLD and sorted(sides) != list(FOLDS):
            out.append(Violation("column-structure", name, "sizes must map one-to-one onto folds"))
    if plan.mode in (Mode.BY_FAULT_SIZE, Mode.BY_FAULT_SIZE_INVERTED):
        want = TRAIN if plan.mode is Mode.BY_FAULT_SIZE_INVERTED else TEST
        for c in FAULTY_CONDITIONS:
            on = plan.sides_of(c)[0] == want
            if on != (c.fault_size_mils == plan.fault_size):
                out.append(Violation("column-structure", c.key, f"inconsistent with fault size {plan.fault_size}"))
    return out


def audit_no_leakage(plan: SplitPlan, records: Sequence[SignalRecord]) -> AuditReport:
    """Check a plan against actual records; an empty violation list is a pass."""
    violations = _structure_violations(plan)
    if plan.mode is Mode.PROPOSED_THREE_FOLD:
        for k in range(3):
            view = {TRAIN: [], TEST: []}
            for r in records:
                for side in plan.sides_of(r.condition):
                    # "test" (healthy) joins every fold's test side
                    view[TEST if side in (FOLDS[k], TEST) else TRAIN].append(r)
            violations += [v for v in audit_records(view) if v not in violations]
    else:
        groups = {s: materialize(plan, records, s) for s in set(plan.sides) | {"train", "test"}}
        violations += [v for v in audit_records(groups) if v not in violations]
    return AuditReport(violations)


def materialize(plan: SplitPlan, records: Sequence[SignalRecord], side: str,
                accelerometer: Accelerometer | str | None = None) -> list[SignalRecord]:
    """Records on ``side``, optionally restricted to one accelerometer."""
    valid = set(plan.sides) | {TRAIN, TEST}
    if side not in valid:
        raise ValueError(f"unknown side {side!r} for {plan.mode.value} (valid: {sorted(valid)})")
    acc = Accelerometer(accelerometer) if accelerometer is not None else None
    out = []
    for r in records:
        if acc is not None and r.accelerometer is not acc:
            continue
        sides = plan.sides_of(r.condition)
        if r.condition.is_healthy and plan.mode is Mode.PROPOSED_THREE_FOLD:
            # healthy sits in every fold's test side, never in a fold used for training
            if side == TEST:
                out.append(r)
            continue
        if side in sides:
            out.append(r)
    return out
