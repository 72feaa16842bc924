import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwrubench.catalog import COLUMNS, FAULT_SIZES, FAULTY_CONDITIONS, HEALTHY, Accelerometer, FaultCondition, skeleton_catalog
from cwrubench.splitgen import (
    EVAL_SEEDS,
    FOLDS,
    TEST,
    TRAIN,
    Mode,
    SplitMix64,
    SplitPlan,
    audit_no_leakage,
    by_fault_size_for_run,
    enumerate_holdout_plans,
    enumerate_three_fold_partitions,
    gen_by_fault_size,
    gen_holdout,
    gen_holdout_inverted,
    gen_three_fold,
    generate,
    materialize,
    three_fold_partition_key,
)

RECORDS = skeleton_catalog()
seeds = st.integers(0, 2**64 - 1)


def _column(plan, column):
    loc, ft = column
    return [plan.sides_of(FaultCondition(loc, ft, s))[0] for s in FAULT_SIZES]


# --------------------------------------------------------------------------- PRNG


def test_splitmix64_reference_vector():
    r = SplitMix64(0)
    assert [r.next_u64() for _ in range(4)] == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F, 0xF88BB8A8724C81EC,
    ]


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(1, 1000))
def test_below_in_range(seed, n):
    r = SplitMix64(seed)
    assert all(0 <= r.below(n) < n for _ in range(5))


# --------------------------------------------------------------------------- generators


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_holdout_structure(seed):
    plan = gen_holdout(seed)
    for column in COLUMNS:
        assert _column(plan, column).count(TEST) == 1
    assert plan.sides_of(HEALTHY) == (TEST,)
    assert audit_no_leakage(plan, RECORDS).passed


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_inverted_structure(seed):
    plan = gen_holdout_inverted(seed)
    for column in COLUMNS:
        assert _column(plan, column).count(TRAIN) == 1
    assert audit_no_leakage(plan, RECORDS).passed


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_three_fold_structure(seed):
    plan = gen_three_fold(seed)
    for column in COLUMNS:
        assert sorted(_column(plan, column)) == list(FOLDS)
    for f in FOLDS:
        assert len(plan.conditions_on(f)) == 6
    assert audit_no_leakage(plan, RECORDS).passed
    # fold 1 is the hold-out generator's test side for the same seed
    assert set(plan.conditions_on(FOLDS[0])) == set(gen_holdout(seed).conditions_on(TEST))


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_determinism(seed):
    for mode in Mode:
        assert generate(mode, seed).signature() == generate(mode, seed).signature()


def test_by_fault_size():
    for size in FAULT_SIZES:
        plan = gen_by_fault_size(size)
        test = plan.conditions_on(TEST)
        assert len(test) == 6 and {c.fault_size_mils for c in test} == {size}
        assert len(plan.conditions_on(TRAIN)) == 12
        assert audit_no_leakage(plan, RECORDS).passed
    union = [c for s in FAULT_SIZES for c in gen_by_fault_size(s).conditions_on(TEST)]
    assert sorted(union) == sorted(FAULTY_CONDITIONS)


def test_by_fault_size_runs():
    sizes = [by_fault_size_for_run(s).fault_size for s in EVAL_SEEDS]
    assert Counter(sizes) == {7: 10, 14: 10, 21: 10}
    assert sizes[:10] == [7] * 10 and sizes[-10:] == [21] * 10
    inv = by_fault_size_for_run(25, inverted=True)
    assert {c.fault_size_mils for c in inv.conditions_on(TRAIN)} == {21}


def test_unknown_fault_size():
    with pytest.raises(ValueError):
        gen_by_fault_size(28)


# --------------------------------------------------------------------------- counting


def test_holdout_space_is_729():
    plans = enumerate_holdout_plans()
    assert len({p.signature() for p in plans}) == 729 == 3**6
    assert all(audit_no_leakage(p, RECORDS).passed for p in plans[::37])


def test_three_fold_space_is_7776():
    assert len(enumerate_three_fold_partitions()) == 7776 == 3**6 * 2**6 // 6


def test_generated_plans_live_in_enumerated_spaces():
    space = {p.signature()[1] for p in enumerate_holdout_plans()}
    parts = enumerate_three_fold_partitions()
    for s in range(300):
        assert gen_holdout(s).signature()[1] in space
        assert three_fold_partition_key(gen_three_fold(s)) in parts


def test_holdout_marginal_uniformity():
    counts = np.zeros((len(COLUMNS), 3))
    for seed in range(10000):
        plan = gen_holdout(seed)
        for i, column in enumerate(COLUMNS):
            counts[i, _column(plan, column).index(TEST)] += 1
    freq = counts / 10000
    assert np.all(np.abs(freq - 1 / 3) <= 0.02)


# --------------------------------------------------------------------------- audit


def test_audit_all_modes_seeds_0_to_999():
    for mode in Mode:
        for seed in range(1000):
            assert audit_no_leakage(generate(mode, seed), RECORDS).passed, (mode, seed)


def _tampered(**changes):
    plan = gen_holdout(0)
    assignment = dict(plan.assignment)
    assignment.update(changes.get("assignment", {}))
    return SplitPlan(plan.mode, plan.seed, assignment, changes.get("healthy", TEST))


def test_condition_on_both_sides_is_named():
    cond = FaultCondition("DriveEnd", "Inner", 7)
    plan = _tampered(assignment={cond: (TRAIN, TEST)})
    rep = audit_no_leakage(plan, RECORDS)
    assert not rep.passed
    assert any(v.condition == "drive-inner-07" for v in rep.violations)
    assert {v.condition for v in rep.violations if v.kind == "condition-on-multiple-sides"} == {"drive-inner-07"}


def test_healthy_in_train_is_flagged():
    rep = audit_no_leakage(_tampered(healthy=TRAIN), RECORDS)
    assert any(v.kind == "healthy-in-train" for v in rep.violations)


def test_broken_column_structure_is_flagged():
    plan = gen_holdout(0)
    cond = next(c for c in FAULTY_CONDITIONS if plan.sides_of(c) == (TRAIN,))
    rep = audit_no_leakage(_tampered(assignment={cond: TEST}), RECORDS)
    assert any(v.kind == "column-structure" for v in rep.violations)


# --------------------------------------------------------------------------- materialize


def test_materialize_counts():
    plan = gen_holdout(3)
    train, test = materialize(plan, RECORDS, TRAIN), materialize(plan, RECORDS, TEST)
    assert len(train) == 72 and len(test) == 42
    assert not {r.record_id for r in train} & {r.record_id for r in test}
    assert len(train) + len(test) == len(RECORDS)
    assert len(materialize(plan, RECORDS, TRAIN, Accelerometer.DE)) == 36
    assert len(materialize(plan, RECORDS, TEST, "FE")) == 21


def test_materialize_three_fold():
    plan = gen_three_fold(1000)
    for f in FOLDS:
        assert len(materialize(plan, RECORDS, f)) == 36
    assert all(r.condition.is_healthy for r in materialize(plan, RECORDS, TEST))


def test_materialize_unknown_side():
    with pytest.raises(ValueError):
        materialize(gen_holdout(0), RECORDS, "fold1")


def test_fold_holdout_view():
    plan = gen_three_fold(1000)
    view = plan.fold_holdout(1)
    assert set(view.conditions_on(TEST)) == set(plan.conditions_on(FOLDS[1]))
    assert len(materialize(view, RECORDS, TRAIN)) == 72
    assert len(materialize(view, RECORDS, TEST)) == 42


# --------------------------------------------------------------------------- serialization


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(list(Mode)), st.integers(0, 10**6))
def test_json_round_trip(mode, seed):
    plan = generate(mode, seed)
    again = SplitPlan.from_json(plan.to_json())
    assert again.signature() == plan.signature()
    assert again.seed == plan.seed and again.fault_size == plan.fault_size
    assert json.loads(plan.to_json())["prng"] == "splitmix64/v1"


@pytest.mark.parametrize("text", ["{}", "[1]", '{"mode": "Nope", "assignment": {}}', "not json",
                                  '{"mode": "ProposedHoldout", "seed": 0, "assignment": {"bogus-key": "train"}}'])
def test_malformed_plan_json(text):
    with pytest.raises(ValueError):
        SplitPlan.from_json(text)
