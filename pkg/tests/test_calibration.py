import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from claimfilter.calibration import (
    DegenerateCalibrationWarning,
    calibrate,
    conformal_quantile,
    conformity_from_labels,
    conformity_records,
    conformity_score,
    filter_corpus,
    filter_with_model,
    weighted_conformal_quantile,
)
from claimfilter.core import CalibrationModel, ConformityConvention, ValidationError, make_document
from claimfilter.ensemble import MARGINAL_KEY
from claimfilter.filter import apply_filter

from conftest import random_labeled_doc

CONVENTIONS = [
    ConformityConvention(),
    ConformityConvention("log_sum"),
    ConformityConvention("power_mean", lam=2.0),
    ConformityConvention("worst_case"),
]


def test_conformity_examples():
    assert conformity_from_labels([0.9, 0.7, 0.6], [1, 0, 1], 0.5) == pytest.approx(0.765)
    assert conformity_from_labels([0.9, 0.5], [0, 1], 0.2) == pytest.approx(0.98)
    assert conformity_from_labels([0.3, 0.2], [1, 1], 0.7) == 0.0
    d = make_document("a", "g", [0.9, 0.7, 0.6], [1, 0, 1])
    assert conformity_score(d, [0.9, 0.7, 0.6], 0.5) == pytest.approx(0.765)


def _brute_E(scores, labels, u, conv, grid):
    good = {j for j, y in enumerate(labels) if y == 1}
    ok = [t for t in grid if apply_filter(scores, t, u, conv) <= good]
    return min(ok)


def test_conformity_matches_grid_infimum():
    grid = np.linspace(0, 1, 10_001)
    for scores, labels, u in [([0.9, 0.7, 0.6], [1, 0, 1], 0.5), ([0.9, 0.5], [0, 1], 0.2)]:
        e = conformity_from_labels(scores, labels, u)
        assert _brute_E(scores, labels, u, ConformityConvention(), grid) == pytest.approx(e, abs=1e-4)


@pytest.mark.parametrize("conv", CONVENTIONS, ids=lambda c: c.tag)
def test_event_equivalence_random(conv, rng):
    taus = np.concatenate([np.linspace(0, 1, 101), rng.random(50)])
    for i in range(300):
        d = random_labeled_doc(rng, f"d{i}")
        s = d.score_matrix[:, 0]
        u = rng.random()
        e = conformity_from_labels(s, d.labels, u, conv)
        assert 0.0 <= e <= 1.0
        for t in taus:
            assert (e <= t) == (apply_filter(s, t, u, conv) <= d.true_claims), (s, d.labels, u, t, e)


@settings(max_examples=200, deadline=None)
@given(
    data=st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=8),
    u=st.floats(0, 0.999999),
    t=st.floats(0, 1),
)
def test_event_equivalence_property(data, u, t):
    s = [x for x, _ in data]
    y = [lab for _, lab in data]
    e = conformity_from_labels(s, y, u)
    good = {j for j, lab in enumerate(y) if lab}
    assert (e <= t) == (apply_filter(s, t, u, ConformityConvention()) <= good)


def test_quantile_examples():
    assert conformal_quantile([0.1, 0.2, 0.3, 0.4], 0.2) == 0.4
    assert conformal_quantile([0.5], 0.5) == 0.5
    assert conformal_quantile([0.1, 0.2], 0.05) == 1.0
    assert conformal_quantile([0.3, 0.1, 0.3, 0.2], 0.5) == 0.3
    with pytest.raises(ValidationError):
        conformal_quantile([], 0.1)


@settings(max_examples=100, deadline=None)
@given(es=st.lists(st.floats(0, 1), min_size=1, max_size=40), a1=st.floats(0.01, 0.99), a2=st.floats(0.01, 0.99))
def test_quantile_monotone_in_alpha(es, a1, a2):
    lo, hi = sorted((a1, a2))
    assert conformal_quantile(es, lo) >= conformal_quantile(es, hi)


@settings(max_examples=100, deadline=None)
@given(es=st.lists(st.floats(0, 1), min_size=1, max_size=40), a=st.floats(0.01, 0.99))
def test_quantile_scan(es, a):
    # smallest observed value q with #{E <= q} >= (1 - a)(n + 1), else 1
    n = len(es)
    cands = [q for q in sorted(es) if sum(e <= q for e in es) >= (1 - a) * (n + 1) - 1e-9]
    assert conformal_quantile(es, a) == (cands[0] if cands else 1.0)


def test_weighted_quantile_examples():
    assert weighted_conformal_quantile([0.1, 0.2, 0.3, 0.4], [1, 1, 1, 1], 0.25) == 0.3
    assert weighted_conformal_quantile([0.1, 0.2, 0.3], [0, 1, 0], 0.5) == 0.2
    assert weighted_conformal_quantile([0.7, 0.7, 0.7], [1, 2, 3], 0.1) == 0.7
    with pytest.raises(ValidationError):
        weighted_conformal_quantile([0.1], [0], 0.1)


def _docs(es_groups):
    return [make_document(f"d{i}", g, [0.5], [1]) for i, g in enumerate(es_groups)]


def test_marginal_calibration_example():
    # scores chosen so E = 1 - u * (1 - p) with the false claim first
    docs = [make_document(f"d{i}", "g", [p, 0.01], [0, 1]) for i, p in enumerate([0.1, 0.2, 0.3, 0.4])]
    model = calibrate(docs, 0.2, mode="marginal", draws=[0.0] * 4)
    assert model.marginal_threshold == 1.0
    model = calibrate(docs, 0.2, mode="marginal", draws=[1 - 1e-16] * 4)
    e = [r.E for r in conformity_records(docs, (1.0,), draws=[1 - 1e-16] * 4)]
    assert model.marginal_threshold == conformal_quantile(e, 0.2)
    assert model.thresholds == {} and model.mode == "marginal"


def test_small_group_degenerate_warning(rng):
    docs = [random_labeled_doc(rng, f"a{i}", "A") for i in range(50)]
    docs += [random_labeled_doc(rng, f"b{i}", "B") for i in range(3)]
    with pytest.warns(DegenerateCalibrationWarning, match="'B'"):
        model = calibrate(docs, 0.05)
    assert model.thresholds["B"] == 1.0 and "B" in model.degenerate_groups
    assert model.calibration_counts == {"A": 50, "B": 3}


def test_all_true_corpus():
    docs = [make_document(f"d{i}", "g", [0.4, 0.2], [1, 1]) for i in range(30)]
    model = calibrate(docs, 0.1)
    assert model.thresholds["g"] == 0.0 and model.marginal_threshold == 0.0
    res = filter_corpus(model, docs)
    assert all(r.retained == {0, 1} for r in res)


def test_calibrate_needs_labels():
    with pytest.raises(ValidationError):
        calibrate([make_document("a", "g", [0.5])], 0.1)
    with pytest.raises(ValidationError):
        calibrate([], 0.1)


def _model(tau=0.8, m=1):
    w = tuple([1.0 / m] * m)
    return CalibrationModel(0.1, ConformityConvention(), "group", m, {"A": w}, {"A": tau}, w, 0.5, {"A": 10})


def test_filter_with_model_examples():
    d = make_document("x", "A", [0.9, 0.8])
    r = filter_with_model(_model(), d, 0.3)
    assert r.retained == {0, 1} and r.group_used == "A" and not r.fallback and r.threshold == 0.8
    z = filter_with_model(_model(), make_document("z", "Z", [0.9, 0.8]), 0.3)
    assert z.fallback and z.group_used is None and z.threshold == 0.5
    assert filter_with_model(_model(1.0), d, 0.3).retained == frozenset()
    with pytest.raises(ValidationError, match="M=1.*M=2"):
        filter_with_model(_model(m=2), d, 0.3)
    assert r.to_record() == {
        "id": "x", "retained_indices": [0, 1], "threshold": 0.8, "group_used": "A", "fallback_flag": False
    }


def test_single_group_collapses_to_marginal(rng):
    docs = [random_labeled_doc(rng, f"d{i}") for i in range(200)]
    g = calibrate(docs, 0.1, mode="group", rng_seed=4)
    m = calibrate(docs, 0.1, mode="marginal", rng_seed=4)
    assert g.thresholds["g"] == m.marginal_threshold
    a = filter_corpus(g, docs, rng_seed=9)
    b = filter_corpus(m, docs, rng_seed=9)
    assert [x.retained for x in a] == [x.retained for x in b]


def test_group_weights_used(rng):
    docs = [random_labeled_doc(rng, f"d{i}", "A" if i % 2 else "B", m=2) for i in range(100)]
    w = {"A": (1.0, 0.0), "B": (0.0, 1.0), MARGINAL_KEY: (0.5, 0.5)}
    model = calibrate(docs, 0.2, weights_per_group=w, rng_seed=1)
    assert model.weights == {"A": (1.0, 0.0), "B": (0.0, 1.0)}
    assert model.marginal_weights == (0.5, 0.5)
    recs = conformity_records(docs, w, rng_seed=1)
    es_a = [r.E for r in recs if r.group == "A"]
    assert model.thresholds["A"] == conformal_quantile(es_a, 0.2)


def test_seeded_determinism(rng):
    docs = [random_labeled_doc(rng, f"d{i}") for i in range(100)]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = calibrate(docs, 0.1, rng_seed=3)
    assert a == calibrate(docs, 0.1, rng_seed=3)
