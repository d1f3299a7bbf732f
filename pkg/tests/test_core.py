import numpy as np
import pytest

from claimfilter.core import (
    CalibrationModel,
    Claim,
    ConformityConvention,
    Document,
    ValidationError,
    check_simplex,
    make_document,
    uniform_weights,
    validate_corpus,
)


def test_prevalence_by_hand():
    docs = [
        make_document("a", "g", [0.9, 0.8, 0.1], [1, 1, 0]),
        make_document("b", "g", [0.9, 0.2, 0.1], [1, 0, 0]),
    ]
    stats = validate_corpus(docs, require_labels=True)
    assert stats.prevalence == 0.5
    assert (stats.n_docs, stats.n_claims, stats.n_scorers) == (2, 6, 1)


def test_all_true_prevalence():
    assert validate_corpus([make_document("a", "g", [0.3, 0.4], [1, 1])]).prevalence == 1.0


def test_score_out_of_range():
    with pytest.raises(ValidationError, match="score out of range"):
        make_document("a", "g", [1.2])


@pytest.mark.parametrize("bad", [-0.1, float("nan")])
def test_bad_scores_rejected(bad):
    with pytest.raises(ValidationError):
        Claim(0, (bad,))


def test_empty_claims_and_corpus():
    with pytest.raises(ValidationError, match="empty claim list"):
        Document("a", "g", ())
    with pytest.raises(ValidationError, match="empty corpus"):
        validate_corpus([])


def test_inconsistent_m():
    with pytest.raises(ValidationError, match="inconsistent"):
        Document("a", "g", (Claim(0, (0.1,)), Claim(1, (0.1, 0.2))))
    docs = [make_document("a", "g", [[0.1, 0.2]]), make_document("b", "g", [[0.1]])]
    with pytest.raises(ValidationError, match="inconsistent M"):
        validate_corpus(docs)


def test_missing_labels_only_when_required():
    docs = [make_document("a", "g", [0.5, 0.6], [1, None])]
    assert validate_corpus(docs).n_labeled == 1
    with pytest.raises(ValidationError, match="missing label"):
        validate_corpus(docs, require_labels=True)
    with pytest.raises(ValidationError):
        docs[0].true_claims


def test_prevalence_matches_brute_force(rng):
    docs = [make_document(f"d{i}", "g", rng.random(5).tolist(), rng.integers(0, 2, 5).tolist()) for i in range(30)]
    brute = sum(c.label for d in docs for c in d.claims) / sum(d.n_claims for d in docs)
    assert validate_corpus(docs).prevalence == brute


def test_document_arrays_are_read_only():
    d = make_document("a", "g", [[0.2, 0.3]], [1])
    with pytest.raises(ValueError):
        d.score_matrix[0, 0] = 1.0
    assert d.true_claims == frozenset({0})


def test_convention_validation_and_parse():
    assert ConformityConvention.parse("power-mean:2").lam == 2.0
    assert ConformityConvention.parse("log-sum").variant == "log_sum"
    assert ConformityConvention.parse("worst-case").tag == "worst-case"
    assert ConformityConvention("power_mean", lam=0.5).tag == "power-mean:0.5"
    for bad in ("power-mean", "power-mean:x", "product:3", "bogus"):
        with pytest.raises(ValidationError):
            ConformityConvention.parse(bad)
    with pytest.raises(ValidationError):
        ConformityConvention("power_mean", lam=0.0)
    with pytest.raises(ValidationError):
        ConformityConvention("product", epsilon=1e-2)


def test_simplex():
    assert np.allclose(uniform_weights(4), 0.25)
    check_simplex([0.5, 0.5 + 5e-10])
    with pytest.raises(ValidationError):
        check_simplex([0.5, 0.6])
    with pytest.raises(ValidationError):
        check_simplex([1.5, -0.5])
    with pytest.raises(ValidationError, match="expected M=3"):
        check_simplex([0.5, 0.5], 3)


def _model(**kw):
    base = dict(
        alpha=0.1,
        convention=ConformityConvention(),
        mode="group",
        n_scorers=2,
        weights={"a": (0.5, 0.5)},
        thresholds={"a": 0.4},
        marginal_weights=(0.5, 0.5),
        marginal_threshold=0.5,
        calibration_counts={"a": 3},
    )
    base.update(kw)
    return CalibrationModel(**base)


def test_model_invariants():
    assert not _model().is_degenerate
    assert _model(thresholds={"a": 1.0}, marginal_threshold=1.0).is_degenerate
    with pytest.raises(ValidationError):
        _model(weights={"a": (0.7, 0.7)})
    with pytest.raises(ValidationError):
        _model(thresholds={"a": 1.2})
    with pytest.raises(ValidationError):
        _model(calibration_counts={"a": 0})
    with pytest.raises(ValidationError):
        _model(alpha=1.0)
