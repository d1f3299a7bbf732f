import warnings

import numpy as np
import pytest

from claimfilter.core import ValidationError, make_document
from claimfilter.ensemble import (
    MARGINAL_KEY,
    InfeasibleWeightsWarning,
    WeightSearchConfig,
    delta_threshold,
    doc_rates,
    ensemble_scores,
    evaluate_weights,
    optimize_group_weights,
    optimize_weights,
)
from claimfilter.filter import apply_threshold_filter
from claimfilter.synth import GroupSpec, SimConfig, generate_corpus


def test_ensemble_scores_examples():
    s = np.array([[0.9, 0.6, 0.3], [0.2, 0.4, 0.6]])
    assert np.allclose(ensemble_scores(s, [1, 0, 0]), s[:, 0])
    assert ensemble_scores(s, [1 / 3] * 3)[0] == pytest.approx(0.6)
    assert ensemble_scores([[0.8, 0.4]], [0.5, 0.5])[0] == pytest.approx(0.6)
    with pytest.raises(ValidationError):
        ensemble_scores(s, [0.5, 0.5])
    with pytest.raises(ValidationError):
        ensemble_scores(s, [0.5, 0.5, 0.5])


def test_delta_threshold_examples():
    doc = make_document("a", "g", [0.2, 0.4, 0.6, 0.8, 1.0, 0.1], [1, 1, 1, 1, 1, 0])
    assert delta_threshold([doc], [1.0], 0.2) == 0.2
    assert delta_threshold([doc], [1.0], 1 - 1e-12) == 1.0
    assert delta_threshold([make_document("b", "g", [0.7], [1])], [1.0], 0.5) == 0.7
    with pytest.raises(ValidationError):
        delta_threshold([make_document("c", "g", [0.7], [0])], [1.0], 0.5)


def test_doc_rates_examples():
    d = make_document("a", "g", [0.9, 0.1, 0.8, 0.2], [1, 1, 0, 0])
    assert doc_rates(d, [0.9, 0.1, 0.8, 0.2], 0.5) == (0.5, 0.5)
    t = make_document("b", "g", [0.9, 0.8], [1, 1])
    assert doc_rates(t, [0.9, 0.8], 0.5) == (1.0, 0.0)
    assert doc_rates(d, [0.9, 0.1, 0.8, 0.2], 0.95) == (0.0, 0.0)


def test_retention_decomposition(rng):
    docs = generate_corpus(SimConfig(n_docs=300, scorer_noise=(0.1,)), seed=3)
    for tau in (0.2, 0.5, 0.8):
        kept = [apply_threshold_filter(d.score_matrix[:, 0], tau) for d in docs]
        n = sum(d.n_claims for d in docs)
        n1 = sum(len(d.true_claims) for d in docs)
        kt = sum(len(k & d.true_claims) for k, d in zip(kept, docs))
        kf = sum(len(k) for k in kept) - kt
        rho = n1 / n
        r = sum(len(k) for k in kept) / n
        assert r == pytest.approx(rho * kt / n1 + (1 - rho) * kf / (n - n1), abs=1e-12)


def _oracle_plus_noise(seed=0, n_docs=300):
    cfg = SimConfig(n_docs=n_docs, scorer_noise=(0.01,), groups=(GroupSpec("g", 1.0, 2, 2),))
    docs = generate_corpus(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    out = []
    for d in docs:
        s = np.column_stack([d.score_matrix[:, 0], rng.random(d.n_claims), rng.random(d.n_claims)])
        out.append(make_document(d.id, d.group, s.tolist(), d.labels.tolist()))
    return out


def test_informative_scorer_dominates():
    # at a few hundred documents the search can overfit a sliver of noise weight
    docs = _oracle_plus_noise(n_docs=1000)
    cfg = WeightSearchConfig(delta=0.1, budget=256, seed=1)
    res = optimize_weights(docs, cfg)
    assert res.feasible and res.weights[0] >= 0.9
    for k in range(3):
        assert res.fpr <= evaluate_weights(docs, np.eye(3)[k], cfg.delta)[1] + 1e-9
    tpr, fpr, tau = evaluate_weights(docs, res.weights, cfg.delta)
    assert (tpr, fpr, tau) == (res.tpr, res.fpr, res.tau) and tpr >= 1 - cfg.delta


def test_identical_columns_give_uniform():
    docs = []
    rng = np.random.default_rng(5)
    for i in range(40):
        p = rng.random(5)
        docs.append(make_document(f"d{i}", "g", np.column_stack([p, p, p]).tolist(), (rng.random(5) < p).astype(int).tolist()))
    res = optimize_weights(docs, WeightSearchConfig(budget=64))
    assert np.allclose(res.weights, 1 / 3)
    assert res.fpr == pytest.approx(evaluate_weights(docs, [1, 0, 0], 0.1)[1], abs=1e-12)


def test_infeasible_falls_back_to_uniform():
    # one true claim per short document at low scores, many high true claims in one long document:
    # the per-document TPR mean at the delta-threshold is 2/6, far below 0.7
    docs = [make_document(f"d{i}", "g", [[0.1 * (i + 1)] * 2], [1]) for i in range(5)]
    docs.append(make_document("z", "g", [[0.9, 0.9]] * 10, [1] * 10))
    with pytest.warns(InfeasibleWeightsWarning):
        res = optimize_weights(docs, WeightSearchConfig(delta=0.3, budget=16, tpr_aggregate="doc_mean"))
    assert not res.feasible and res.weights == (0.5, 0.5)
    assert optimize_weights(docs, WeightSearchConfig(delta=0.3, budget=16)).feasible


def test_seed_determinism_and_groups():
    docs = _oracle_plus_noise(n_docs=120)
    docs = [make_document(d.id, "A" if i % 3 else "B", d.score_matrix.tolist(), d.labels.tolist()) for i, d in enumerate(docs)]
    cfg = WeightSearchConfig(budget=64, seed=7)
    a = optimize_group_weights(docs, cfg)
    b = optimize_group_weights(docs, cfg)
    assert a == b
    assert set(a) == {"A", "B", MARGINAL_KEY}


def test_config_validation():
    with pytest.raises(ValidationError):
        WeightSearchConfig(delta=0.0)
    with pytest.raises(ValidationError):
        WeightSearchConfig(budget=0)
    with pytest.raises(ValidationError):
        optimize_weights([])
