import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwrubench.catalog import ALL_CONDITIONS, HEALTHY, Accelerometer, FaultCondition, FaultType, Location, label_for
from cwrubench.evaluation import (
    DETECTOR_NAMES,
    TPR_GRID,
    RocCurve,
    ScoredSet,
    UndefinedAurocError,
    aggregate,
    average_rocs_horizontal,
    detection_curves,
    detector_aurocs,
    evaluate_realization,
    fault_detection,
    fpr_at_tpr,
    logit_summaries,
    macro_auroc,
    roc,
    summarize_cells,
)
from cwrubench.nn.functional import sigmoid


def pair_auroc(scores, labels):
    """P(score+ > score-) + 0.5 P(tie), by counting every pair."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def random_instance(rng, n=None):
    n = n or int(rng.integers(2, 51))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    scores = rng.integers(0, max(2, n // 3), n).astype(float)  # coarse grid forces ties
    return scores, labels


# --------------------------------------------------------------------------- ROC


def test_perfect_separation():
    assert roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auroc == 1.0


def test_all_equal_scores():
    c = roc([0.3] * 6, [0, 1, 0, 1, 1, 0])
    np.testing.assert_array_equal(c.fpr, [0, 1])
    np.testing.assert_array_equal(c.tpr, [0, 1])
    assert c.auroc == 0.5


def test_single_class_is_undefined():
    with pytest.raises(UndefinedAurocError):
        roc([1, 2, 3], [1, 1, 1])
    with pytest.raises(UndefinedAurocError):
        roc([1, 2, 3], [0, 0, 0])


def test_nan_scores_rejected():
    with pytest.raises(ValueError):
        roc([np.nan, 1.0], [0, 1])


@pytest.mark.parametrize("seed", range(20))
def test_roc_matches_pair_oracle(seed):
    s, y = random_instance(np.random.default_rng(seed), 20)
    assert abs(roc(s, y).auroc - pair_auroc(s, y)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=50))
def test_roc_oracle_property(pairs):
    s = [float(a) for a, _ in pairs]
    y = [int(b) for _, b in pairs]
    if len(set(y)) < 2:
        return
    assert abs(roc(s, y).auroc - pair_auroc(s, y)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_roc_curve_invariants(seed):
    s, y = random_instance(np.random.default_rng(seed))
    c = roc(s, y)
    assert c.fpr[0] == 0 and c.tpr[0] == 0 and c.fpr[-1] == 1 and c.tpr[-1] == 1
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert c.auroc == pytest.approx(np.trapezoid(c.tpr, c.fpr), abs=1e-15)
    assert 0 <= c.auroc <= 1


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 10), st.floats(-10, 10))
def test_auroc_invariant_under_increasing_transforms(seed, a, b):
    rng = np.random.default_rng(seed)
    s, y = random_instance(rng)
    s = s / max(1.0, s.max())
    base = roc(s, y).auroc
    assert roc(a * s + b, y).auroc == base
    assert roc(np.exp(s), y).auroc == base


def test_tied_scores_collapse_to_one_point():
    c = roc([1, 1, 2, 2], [0, 1, 0, 1])
    assert c.fpr.size == 3
    assert c.auroc == 0.5


# --------------------------------------------------------------------------- averaging


def _curve(points):
    f, t = map(np.array, zip(*points))
    return RocCurve(f, t, np.zeros(f.size), float(np.trapezoid(t, f)))


def test_average_of_one_curve_is_itself():
    c = roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    avg = average_rocs_horizontal([c])
    # step interpolation: the smallest FPR reaching each TPR
    assert avg.mean_fpr[0] == 0
    assert avg.mean_fpr[np.searchsorted(TPR_GRID, 0.5)] == 0
    assert avg.mean_fpr[-1] == 0.5
    assert not avg.std_fpr.any()


def test_identical_curves_have_zero_std():
    c = roc([0.1, 0.4, 0.35, 0.8, 0.2], [0, 0, 1, 1, 1])
    avg = average_rocs_horizontal([c] * 5)
    assert not avg.std_fpr.any()
    np.testing.assert_array_equal(avg.mean_fpr, average_rocs_horizontal([c]).mean_fpr)


def test_hand_built_step_curves():
    # A reaches TPR 1 at FPR 0; B reaches TPR 0.5 at FPR 0.5 and TPR 1 at FPR 1
    a = _curve([(0, 0), (0, 1), (1, 1)])
    b = _curve([(0, 0), (0.5, 0), (0.5, 0.5), (1, 0.5), (1, 1)])
    grid = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    avg = average_rocs_horizontal([a, b], grid)
    np.testing.assert_allclose(avg.mean_fpr, [0.0, 0.25, 0.25, 0.5, 0.5])
    np.testing.assert_allclose(avg.std_fpr, np.std([[0, 0, 0, 0, 0], [0, 0.5, 0.5, 1, 1]], axis=0, ddof=1))


def test_empty_inputs_rejected():
    c = roc([0, 1], [0, 1])
    with pytest.raises(ValueError):
        average_rocs_horizontal([])
    with pytest.raises(ValueError):
        average_rocs_horizontal([c], grid=[])


def test_fpr_at_tpr():
    perfect = average_rocs_horizontal([roc([0, 0, 1, 1], [0, 0, 1, 1])])
    assert fpr_at_tpr(perfect, 0.9) == 0.0
    chance = average_rocs_horizontal([_curve([(0, 0), (1, 1)])])
    # a straight diagonal has only its end points, so any TPR > 0 costs FPR 1 under step interpolation
    assert fpr_at_tpr(chance, 0.9) == 1.0
    n = 1000
    diag = roc(np.arange(2 * n) // 2, np.tile([0, 1], n))
    assert fpr_at_tpr(average_rocs_horizontal([diag]), 0.9) == pytest.approx(0.9, abs=1e-3)
    with pytest.raises(ValueError):
        fpr_at_tpr(perfect, 0)
    with pytest.raises(ValueError):
        fpr_at_tpr(perfect, 1.5)


# --------------------------------------------------------------------------- scored sets


def synthetic_scored(rng, per_record=3, shift=2.0):
    """Segments of all 114 records with logits that separate by ``shift``."""
    logits, labels, accs, conds, rids = [], [], [], [], []
    for cond in ALL_CONDITIONS:
        for acc in Accelerometer:
            for load in (1, 2, 3):
                lab = np.array(label_for(cond, acc))
                for _ in range(per_record):
                    logits.append(rng.standard_normal(3) + shift * lab)
                    labels.append(lab)
                    accs.append(acc.value)
                    conds.append(cond.key)
                    rids.append(f"{cond.key}/{load}hp/{acc.value}")
    return ScoredSet(np.array(logits), np.array(labels), np.array(accs, object), np.array(conds, object),
                     np.array(rids, object))


def test_healthy_and_cross_location_are_negatives():
    sc = synthetic_scored(np.random.default_rng(0))
    healthy = sc.conditions == "healthy"
    assert not sc.labels[healthy].any()
    fe_faults = np.array([FaultCondition.from_key(k).location is Location.FAN_END if k != "healthy" else False
                          for k in sc.conditions])
    assert not sc.labels[fe_faults & (sc.accelerometers == "DE")].any()


def test_detector_aurocs_and_macro():
    sc = synthetic_scored(np.random.default_rng(1), shift=50)
    aurocs = detector_aurocs(sc)
    assert list(aurocs) == list(DETECTOR_NAMES)
    assert all(v == 1.0 for v in aurocs.values())
    assert macro_auroc(sc) == 1.0


def test_macro_over_present_location_only():
    sc = synthetic_scored(np.random.default_rng(1), shift=50)
    de = sc.subset(sc.accelerometers == "DE")
    assert macro_auroc(de) == 1.0


def test_signal_level_means():
    sc = synthetic_scored(np.random.default_rng(2), per_record=4)
    sig = sc.signal_level()
    assert len(sig) == 114
    rid = sig.record_ids[0]
    np.testing.assert_allclose(sig.logits[0], sc.logits[sc.record_ids == rid].mean(axis=0))


# --------------------------------------------------------------------------- fault detection


def test_detection_arithmetic():
    z = np.log(np.array([[0.9, 0.3, 0.3]]) / (1 - np.array([[0.9, 0.3, 0.3]])))
    sc = ScoredSet(z, np.array([[0, 0, 0]]), np.array(["DE"], object), np.array(["healthy"], object),
                   np.array(["r"], object))
    assert fault_detection(sc).probability[0] == pytest.approx(0.5, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_detection_mean_and_or(seed):
    rng = np.random.default_rng(seed)
    sc = synthetic_scored(rng, per_record=1)
    det = fault_detection(sc)
    want = (sigmoid(sc.logits[:, 0]) + sigmoid(sc.logits[:, 1]) + sigmoid(sc.logits[:, 2])) / 3
    assert np.max(np.abs(det.probability - want)) <= 1e-12
    np.testing.assert_array_equal(det.label, np.any(sc.labels == 1, axis=1).astype(int))


def test_detection_auroc_between_label_aurocs():
    rng = np.random.default_rng(3)
    n = 600
    labels = np.zeros((n, 3), int)
    which = rng.integers(0, 4, n)  # 0..2 fault type, 3 healthy
    labels[which < 3, which[which < 3]] = 1
    logits = rng.standard_normal((n, 3))
    logits[:, 0] = np.where(labels[:, 0] == 1, 6.0, -6.0) + 0.01 * rng.standard_normal(n)
    sc = ScoredSet(logits, labels, np.array(["DE"] * n, object), np.array(["x"] * n, object),
                   np.array([str(i) for i in range(n)], object))
    per_label = [roc(logits[:, j], labels[:, j]).auroc for j in range(3)]
    det = roc(fault_detection(sc).probability, labels.max(axis=1)).auroc
    assert min(per_label) < det < max(per_label)


def test_detection_curves_per_location():
    sc = synthetic_scored(np.random.default_rng(4))
    curves = detection_curves(fault_detection(sc))
    assert set(curves) == {"fan", "drive"}


# --------------------------------------------------------------------------- logit summaries


def test_logit_summaries_shape_and_pools():
    rng = np.random.default_rng(5)
    full = synthetic_scored(rng)
    # realization 1 omits every 7-mil condition from its test set
    part = full.subset(np.array(["-07" not in k for k in full.conditions]))
    out = logit_summaries([(0, full), (1, part)])
    assert len(out) == 6
    assert all(len(v) == 19 for v in out.values())
    assert out["fan-ball"]["healthy"]["realizations"] == [0, 1]
    assert out["fan-ball"]["drive-inner-07"]["realizations"] == [0]
    s = out["drive-inner"]["drive-inner-14"]
    assert s["min"] <= s["q1"] <= s["median"] <= s["q3"] <= s["max"]


# --------------------------------------------------------------------------- aggregation


def test_aggregate_structure():
    reals = [evaluate_realization(synthetic_scored(np.random.default_rng(s)), s) for s in range(5)]
    rep = aggregate(reals)
    six = [rep.cells[n][0] for n in DETECTOR_NAMES]
    assert rep.macro[0] == pytest.approx(np.mean(six), abs=0)
    for n in DETECTOR_NAMES:
        vals = [r.aurocs[n] for r in reals]
        assert rep.cells[n] == (pytest.approx(np.mean(vals)), pytest.approx(np.std(vals, ddof=1)))
    assert rep.type_curves["ball"].n_curves == 10
    assert set(rep.fpr_at_90_tpr) == {"ball", "inner", "outer"}
    assert not rep.single_realization


def test_aggregate_single_realization():
    rep = aggregate([evaluate_realization(synthetic_scored(np.random.default_rng(0)), 0)])
    assert rep.single_realization
    assert all(s == 0 for _, s in rep.cells.values())


def test_aggregate_needs_input():
    with pytest.raises(ValueError):
        aggregate([])


def test_to_dict_macro_recomputes():
    reals = [evaluate_realization(synthetic_scored(np.random.default_rng(s)), s) for s in range(3)]
    d = aggregate(reals).to_dict()
    assert d["macro"]["mean"] == np.mean([d["cells"][n]["mean"] for n in DETECTOR_NAMES])


# Published rows: six detector cell means and the reported macro (mean, std).
PUBLISHED_ROWS = {
    "resnet18-proposed-2:1": ((99.7, 85.7, 89.7, 89.5, 92.9, 88.9), (91.1, 4.4)),
    "resnet18-separate": ((99.1, 82.7, 89.5, 90.6, 92.0, 76.5), (88.4, 7.2)),
    "resnet18-by-fault-size": ((94.5, 80.5, 88.9, 81.5, 84.3, 76.6), (84.4, 5.9)),
    "wdcnn-1:2-time": ((91.9, 68.4, 82.7, 68.6, 83.7, 81.0), (79.4, 8.4)),
    "wdcnn-1:2-spectrum": ((85.0, 68.3, 83.0, 85.5, 85.5, 88.9), (82.7, 6.7)),
    "wdcnn-1:2-cepstrum": ((93.8, 82.3, 89.5, 97.5, 95.4, 79.4), (89.7, 6.7)),
}


@pytest.mark.parametrize("row", sorted(PUBLISHED_ROWS))
def test_macro_column_is_population_std_of_cells(row):
    six, (mean, std) = PUBLISHED_ROWS[row]
    _, macro = summarize_cells({n: (v, 0.0) for n, v in zip(DETECTOR_NAMES, six)})
    # cell inputs are themselves rounded, so the mean may sit on a rounding edge
    assert abs(macro[0] - mean) <= 0.05 + 1e-9
    assert round(macro[1], 1) == std


def test_location_average_is_sample_std_of_pair():
    six, _ = PUBLISHED_ROWS["resnet18-proposed-2:1"]
    fe_de, _ = summarize_cells({n: (v, 0.0) for n, v in zip(DETECTOR_NAMES, six)})
    assert (round(fe_de["ball"][0], 1), round(fe_de["ball"][1], 1)) == (94.6, 7.2)
    assert (round(fe_de["inner"][0], 1), round(fe_de["inner"][1], 1)) == (89.3, 5.1)
