"""Conformity scores, conformal quantiles and (group-)conditional calibration.

Each calibration document gets a conformity score ``E``: the smallest
threshold at which its filtered set holds only true claims, under its own
randomization draw ``u``.  The calibrated threshold is the
``ceil((1 - alpha)(n + 1))``-th order statistic of those scores, either
pooled (marginal mode) or within each group (group mode).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    PRODUCT,
    CalibrationModel,
    ConformityConvention,
    Document,
    ValidationError,
    check_simplex,
    uniform_weights,
    validate_corpus,
)
from .ensemble import MARGINAL_KEY, ensemble_scores
from .filter import apply_filter, prefix_aggregate

log = logging.getLogger(__name__)


class DegenerateCalibrationWarning(UserWarning):
    """A group is too small for the requested alpha; its threshold is 1.0."""


@dataclass(frozen=True)
class ConformityRecord:
    doc_id: str
    group: str
    E: float
    u: float


def conformity_from_labels(combined_scores, labels, u: float, convention: ConformityConvention = PRODUCT) -> float:
    """Closed-form conformity score for one document.

    With ``m`` leading true claims in rank order and prefix aggregates
    ``G``, the filter stays inside the true set exactly when
    ``tau > G[m] - u * (G[m] - G[m + 1])``.
    """
    y = np.asarray(labels)
    if not (0.0 <= u < 1.0):
        raise ValidationError(f"randomization draw u must lie in [0, 1), got {u!r}")
    p = np.asarray(combined_scores, dtype=float)
    if y.shape != p.shape:
        raise ValidationError("labels and scores differ in length")
    if np.all(y == 1):
        return 0.0
    if convention.variant == "worst_case":
        worst = float(np.max(p[y == 0]))
        # smallest representable tau that drops the worst false claim
        return min(1.0, float(np.nextafter(worst, np.inf)))
    agg = prefix_aggregate(p, convention)
    ranked_labels = y[agg.permutation]
    m = int(np.argmax(ranked_labels == 0))
    g = agg.values
    return float(g[m] - u * (g[m] - g[m + 1]))


def conformity_score(
    doc: Document, combined_scores, u: float, convention: ConformityConvention = PRODUCT
) -> float:
    if not doc.is_labeled:
        raise ValidationError(f"document {doc.id!r}: conformity score needs every claim labeled")
    return conformity_from_labels(combined_scores, doc.labels, u, convention)


def _rank(alpha: float, n: int) -> int:
    # ceil((1 - alpha)(n + 1)); the 1e-9 guards against products like 0.9 * 10 = 9.000000000000002
    return max(1, math.ceil((1.0 - alpha) * (n + 1) - 1e-9))


def conformal_quantile(E_values: Sequence[float], alpha: float) -> float:
    """The ``ceil((1 - alpha)(n + 1))``-th smallest score, or 1.0 past ``n``."""
    if not (0.0 < alpha < 1.0):
        raise ValidationError("alpha must lie in (0, 1)")
    e = np.sort(np.asarray(E_values, dtype=float))
    if e.size == 0:
        raise ValidationError("empty list of conformity scores")
    k = _rank(alpha, e.size)
    if k > e.size:
        return 1.0
    return float(e[k - 1])


def weighted_conformal_quantile(scores: Sequence[float], weights: Sequence[float], alpha: float) -> float:
    """Smallest candidate ``q`` whose weighted upper-tail mass is at most ``alpha``.

    Candidates are the observed scores plus 1.0.
    """
    s = np.asarray(scores, dtype=float)
    w = np.asarray(weights, dtype=float)
    if s.shape != w.shape or s.ndim != 1 or s.size == 0:
        raise ValidationError("scores and weights must be nonempty vectors of equal length")
    if np.any(w < 0):
        raise ValidationError("weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise ValidationError("all weights are zero")
    order = np.argsort(s, kind="stable")
    s, w = s[order], w[order]
    cand = np.unique(np.append(s, 1.0))
    # tail mass above each candidate: total minus weight of scores <= q
    below = np.cumsum(w)
    idx = np.searchsorted(s, cand, side="right") - 1
    at_or_below = np.where(idx >= 0, below[np.clip(idx, 0, None)], 0.0)
    tail = (total - at_or_below) / total
    ok = np.flatnonzero(tail <= alpha + 1e-12)
    return float(cand[ok[0]])


def _draws(n: int, rng_seed: int, draws: Optional[Sequence[float]]) -> np.ndarray:
    if draws is None:
        return np.random.default_rng(rng_seed).random(n)
    u = np.asarray(draws, dtype=float)
    if u.shape != (n,):
        raise ValidationError(f"expected {n} randomization draws, got {u.shape}")
    return u


def conformity_records(
    corpus: Sequence[Document],
    weights: Mapping[str, Sequence[float]] | Sequence[float],
    convention: ConformityConvention = PRODUCT,
    draws: Optional[Sequence[float]] = None,
    rng_seed: int = 0,
) -> list[ConformityRecord]:
    """Conformity score of every document.

    ``weights`` is either one vector for every document or a map keyed by
    group (missing groups use uniform weights).
    """
    u = _draws(len(corpus), rng_seed, draws)
    per_group = isinstance(weights, Mapping)
    out = []
    for d, ui in zip(corpus, u):
        if per_group:
            w = weights.get(d.group, uniform_weights(d.n_scorers))
        else:
            w = weights
        e = conformity_score(d, ensemble_scores(d.score_matrix, w), float(ui), convention)
        out.append(ConformityRecord(d.id, d.group, e, float(ui)))
    return out


def calibrate(
    corpus: Sequence[Document],
    alpha: float,
    convention: ConformityConvention = PRODUCT,
    mode: str = "group",
    weights_per_group: Optional[Mapping[str, Sequence[float]]] = None,
    rng_seed: int = 0,
    delta: Optional[float] = None,
    draws: Optional[Sequence[float]] = None,
) -> CalibrationModel:
    """Calibrate filtering thresholds on a labeled corpus.

    Parameters
    ----------
    corpus : sequence of Document
        Labeled calibration documents.
    alpha : float
        Target miscoverage in (0, 1).
    convention : ConformityConvention
        Prefix-aggregation rule used both here and at filter time.
    mode : {"group", "marginal"}
        One threshold per group, or a single pooled threshold.
    weights_per_group : mapping, optional
        Ensemble weights keyed by group; the key ``"__all__"`` gives the
        pooled weights used in marginal mode and for unseen groups.
        Missing entries default to uniform weights.
    rng_seed : int
        Seed for the per-document randomization draws when ``draws`` is
        not given.
    delta : float, optional
        TPR tolerance used to fit the weights, recorded for audit.
    draws : sequence of float, optional
        Explicit Unif[0, 1) draw per document, aligned with ``corpus``.

    Returns
    -------
    CalibrationModel
    """
    stats = validate_corpus(corpus, require_labels=True)
    if mode not in ("marginal", "group"):
        raise ValidationError(f"mode must be 'marginal' or 'group', got {mode!r}")
    m = stats.n_scorers
    given = dict(weights_per_group or {})
    for g, w in given.items():
        check_simplex(w, m)
    marginal_w = tuple(given.get(MARGINAL_KEY, uniform_weights(m)))
    u = _draws(len(corpus), rng_seed, draws)

    pooled = conformity_records(corpus, marginal_w, convention, draws=u)
    marginal_t = conformal_quantile([r.E for r in pooled], alpha)

    thresholds: dict[str, float] = {}
    weights: dict[str, tuple[float, ...]] = {}
    degenerate: list[str] = []
    if mode == "group":
        for g in stats.group_counts:
            weights[g] = tuple(given.get(g, uniform_weights(m)))
        if all(w == marginal_w for w in weights.values()):
            records = pooled
        else:
            records = conformity_records(corpus, weights, convention, draws=u)
        by_group: dict[str, list[float]] = {}
        for r in records:
            by_group.setdefault(r.group, []).append(r.E)
        for g, es in by_group.items():
            if _rank(alpha, len(es)) > len(es):
                degenerate.append(g)
                warnings.warn(
                    f"group {g!r} has {len(es)} calibration documents, too few for alpha={alpha:g}; "
                    "its threshold is 1.0 and the filter will retain nothing",
                    DegenerateCalibrationWarning,
                    stacklevel=2,
                )
            thresholds[g] = conformal_quantile(es, alpha)
    elif _rank(alpha, len(corpus)) > len(corpus):
        degenerate.append(MARGINAL_KEY)
        warnings.warn(
            f"{len(corpus)} calibration documents are too few for alpha={alpha:g}; threshold is 1.0",
            DegenerateCalibrationWarning,
            stacklevel=2,
        )

    return CalibrationModel(
        alpha=alpha,
        convention=convention,
        mode=mode,
        n_scorers=m,
        weights=weights,
        thresholds=thresholds,
        marginal_weights=marginal_w,
        marginal_threshold=marginal_t,
        calibration_counts=stats.group_counts,
        seed=rng_seed,
        delta=delta,
        degenerate_groups=tuple(degenerate),
    )


@dataclass(frozen=True)
class FilterResult:
    doc_id: str
    retained: frozenset[int]
    threshold: float
    group_used: Optional[str]
    fallback: bool

    def to_record(self) -> dict:
        return {
            "id": self.doc_id,
            "retained_indices": sorted(self.retained),
            "threshold": self.threshold,
            "group_used": self.group_used,
            "fallback_flag": self.fallback,
        }


def filter_with_model(model: CalibrationModel, doc: Document, u: float) -> FilterResult:
    """Apply a calibrated model to one (possibly unlabeled) document.

    In group mode a document whose group was not calibrated uses the
    marginal threshold and weights and is flagged ``fallback``.
    """
    if doc.n_scorers != model.n_scorers:
        raise ValidationError(
            f"document {doc.id!r} has M={doc.n_scorers} scores per claim but the model expects M={model.n_scorers}"
        )
    fallback = False
    group_used: Optional[str] = None
    if model.mode == "group" and doc.group in model.thresholds:
        tau = model.thresholds[doc.group]
        w = model.weights[doc.group]
        group_used = doc.group
    else:
        tau = model.marginal_threshold
        w = model.marginal_weights
        if model.mode == "group":
            fallback = True
            log.debug("document %r: group %r unseen at calibration, using marginal threshold", doc.id, doc.group)
    retained = apply_filter(ensemble_scores(doc.score_matrix, w), tau, u, model.convention)
    return FilterResult(doc.id, retained, tau, group_used, fallback)


def filter_corpus(
    model: CalibrationModel,
    docs: Sequence[Document],
    draws: Optional[Sequence[float]] = None,
    rng_seed: int = 0,
) -> list[FilterResult]:
    u = _draws(len(docs), rng_seed, draws)
    return [filter_with_model(model, d, float(ui)) for d, ui in zip(docs, u)]
