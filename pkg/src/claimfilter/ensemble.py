"""Convex combination of base scorers and the FPR-minimizing weight search.

For a candidate weight vector ``w`` the combined score of each claim is
``sum_m w_m * p_m``.  The threshold is set at the empirical
``delta``-quantile of the combined scores of true claims, which keeps
roughly ``1 - delta`` of them, and the search picks the ``w`` with the
smallest mean per-document false-positive rate at that threshold.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Document, ValidationError, check_simplex, uniform_weights
from .filter import apply_threshold_filter

log = logging.getLogger(__name__)

MARGINAL_KEY = "__all__"


class InfeasibleWeightsWarning(UserWarning):
    pass


def ensemble_scores(score_matrix, w) -> np.ndarray:
    s = np.asarray(score_matrix, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    wv = check_simplex(w)
    if s.shape[1] != wv.size:
        raise ValidationError(f"score matrix has M={s.shape[1]} columns but weights have length {wv.size}")
    return np.clip(s @ wv, 0.0, 1.0)


def _quantile_rank(delta: float, n: int) -> int:
    # smallest k with k / n >= delta; the 1e-9 guards float noise in delta * n
    return min(max(math.ceil(delta * n - 1e-9), 1), n)


def delta_threshold(corpus: Sequence[Document], w, delta: float) -> float:
    """Smallest observed true-claim score whose empirical CDF reaches ``delta``."""
    if not (0.0 < delta <= 1.0):
        raise ValidationError("delta must lie in (0, 1]")
    true_scores = [
        ensemble_scores(d.score_matrix, w)[d.labels == 1] for d in corpus
    ]
    return _delta_threshold_flat(np.concatenate(true_scores) if true_scores else np.empty(0), delta)


def _delta_threshold_flat(true_scores: np.ndarray, delta: float) -> float:
    if true_scores.size == 0:
        raise ValidationError("no true claims: the delta-threshold is undefined")
    s = np.sort(true_scores)
    return float(s[_quantile_rank(delta, s.size) - 1])


def doc_rates(doc: Document, combined_scores, tau: float) -> tuple[float, float]:
    """Per-document (TPR, FPR) of the claim-wise threshold filter.

    Denominators use ``max(1, count)`` so a document without false (true)
    claims has FPR (TPR) zero.
    """
    kept = apply_threshold_filter(combined_scores, tau)
    y = doc.labels
    kept_mask = np.zeros(y.size, dtype=bool)
    kept_mask[list(kept)] = True
    n_true = int(np.sum(y == 1))
    n_false = y.size - n_true
    tpr = int(np.sum(kept_mask & (y == 1))) / max(1, n_true)
    fpr = int(np.sum(kept_mask & (y == 0))) / max(1, n_false)
    return tpr, fpr


@dataclass(frozen=True)
class WeightSearchConfig:
    """Settings for :func:`optimize_weights`.

    ``tpr_aggregate`` selects how the recall constraint is measured:
    ``"pooled"`` over all true claims of the group (the population the
    threshold is computed on) or ``"doc_mean"`` as the unweighted mean of
    per-document TPR over documents holding at least one true claim.
    """

    delta: float = 0.1
    budget: int = 512
    polish_steps: int = 3
    seed: int = 0
    tpr_aggregate: str = "pooled"

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValidationError("delta must lie in (0, 1)")
        if self.budget < 1:
            raise ValidationError("budget must be >= 1")
        if self.polish_steps < 0:
            raise ValidationError("polish_steps must be >= 0")
        if self.tpr_aggregate not in ("pooled", "doc_mean"):
            raise ValidationError("tpr_aggregate must be 'pooled' or 'doc_mean'")


@dataclass(frozen=True)
class WeightSearchResult:
    weights: tuple[float, ...]
    tpr: float
    fpr: float
    tau: float
    feasible: bool
    n_evaluated: int


class _FlatGroup:
    """Claim-level arrays for fast repeated objective evaluation."""

    def __init__(self, corpus: Sequence[Document]):
        if not corpus:
            raise ValidationError("empty group: cannot optimize weights")
        self.scores = np.concatenate([d.score_matrix for d in corpus], axis=0)
        self.y = np.concatenate([d.labels for d in corpus]).astype(bool)
        self.doc = np.repeat(np.arange(len(corpus)), [d.n_claims for d in corpus])
        self.n_docs = len(corpus)
        self.n_true = np.bincount(self.doc, weights=self.y, minlength=self.n_docs)
        self.n_false = np.bincount(self.doc, weights=~self.y, minlength=self.n_docs)
        if not self.y.any():
            raise ValidationError("group has no true claims: the delta-threshold is undefined")
        self.has_true = self.n_true > 0

    def evaluate(self, w: np.ndarray, delta: float, tpr_aggregate: str) -> tuple[float, float, float]:
        p = np.clip(self.scores @ w, 0.0, 1.0)
        tau = _delta_threshold_flat(p[self.y], delta)
        kept = p >= tau
        kept_false = np.bincount(self.doc, weights=kept & ~self.y, minlength=self.n_docs)
        fpr = float(np.mean(kept_false / np.maximum(1.0, self.n_false)))
        if tpr_aggregate == "pooled":
            tpr = float(np.count_nonzero(kept & self.y) / np.count_nonzero(self.y))
        else:
            kept_true = np.bincount(self.doc, weights=kept & self.y, minlength=self.n_docs)
            tpr = float(np.mean(kept_true[self.has_true] / self.n_true[self.has_true]))
        return tpr, fpr, tau


def evaluate_weights(
    corpus: Sequence[Document], w, delta: float, tpr_aggregate: str = "pooled"
) -> tuple[float, float, float]:
    """``(tpr, fpr, tau)`` of weights ``w`` under the search objective."""
    w = check_simplex(w, corpus[0].n_scorers if corpus else None)
    return _FlatGroup(corpus).evaluate(w, delta, tpr_aggregate)


def _key(tpr: float, fpr: float, w: np.ndarray) -> tuple:
    # rounding keeps ulp-level noise from deciding ties
    spread = float(np.sum((w - 1.0 / w.size) ** 2))
    return (round(fpr, 12), -round(tpr, 12), round(spread, 12), tuple(np.round(w, 12)))


def optimize_weights(corpus: Sequence[Document], config: WeightSearchConfig = WeightSearchConfig()) -> WeightSearchResult:
    """Budgeted random search over the simplex followed by coordinate polish.

    Candidates are the ``M`` vertices, the uniform vector and
    ``config.budget`` symmetric Dirichlet(1) draws.  Among candidates that
    meet ``TPR >= 1 - delta`` the lowest mean FPR wins; ties go to higher
    TPR, then to the vector closest to uniform, then lexicographic order.
    When nothing is feasible the uniform vector is returned with
    ``feasible=False``.
    """
    flat = _FlatGroup(corpus)
    m = flat.scores.shape[1]
    target = 1.0 - config.delta
    rng = np.random.default_rng(config.seed)
    cands = np.vstack([np.eye(m), np.full((1, m), 1.0 / m), rng.dirichlet(np.ones(m), size=config.budget)])

    best = None
    n_eval = 0

    def consider(w):
        nonlocal best, n_eval
        n_eval += 1
        tpr, fpr, tau = flat.evaluate(w, config.delta, config.tpr_aggregate)
        if tpr < target:
            return False
        k = _key(tpr, fpr, w)
        if best is None or k < best[0]:
            best = (k, w.copy(), tpr, fpr, tau)
            return True
        return False

    for w in cands:
        consider(w)

    if best is None:
        w = np.full(m, 1.0 / m)
        tpr, fpr, tau = flat.evaluate(w, config.delta, config.tpr_aggregate)
        warnings.warn(
            f"no weight vector reaches TPR >= {target:g}; falling back to uniform weights",
            InfeasibleWeightsWarning,
            stacklevel=2,
        )
        return WeightSearchResult(uniform_weights(m), tpr, fpr, tau, False, n_eval + 1)

    step = 0.25
    for _ in range(config.polish_steps):
        improved = True
        rounds = 0
        while improved and rounds < 200:
            improved = False
            rounds += 1
            w0 = best[1]
            for i in range(m):
                for j in range(m):
                    if i == j or w0[j] <= 0.0:
                        continue
                    t = min(step, w0[j])
                    w = w0.copy()
                    w[i] += t
                    w[j] -= t
                    w = np.maximum(w, 0.0)
                    w /= w.sum()
                    if consider(w):
                        improved = True
                        break
                if improved:
                    break
        step /= 2.0

    _, w, tpr, fpr, tau = best
    return WeightSearchResult(tuple(float(x) for x in w), tpr, fpr, tau, True, n_eval)


def optimize_group_weights(
    corpus: Sequence[Document],
    config: WeightSearchConfig = WeightSearchConfig(),
    groups: Optional[Sequence[str]] = None,
) -> dict[str, WeightSearchResult]:
    """Run :func:`optimize_weights` per group plus once on the pooled corpus.

    The pooled result is stored under :data:`MARGINAL_KEY`.  Groups with
    no true claims get uniform weights and are reported infeasible.
    """
    by_group: dict[str, list[Document]] = {}
    for d in corpus:
        by_group.setdefault(d.group, []).append(d)
    keys = sorted(by_group) if groups is None else list(groups)
    out: dict[str, WeightSearchResult] = {}
    for g in keys:
        docs = by_group.get(g, [])
        out[g] = _optimize_or_uniform(docs, config, corpus[0].n_scorers, g)
    out[MARGINAL_KEY] = _optimize_or_uniform(list(corpus), config, corpus[0].n_scorers, MARGINAL_KEY)
    return out


def _optimize_or_uniform(docs, config, m, name) -> WeightSearchResult:
    if not docs or not any(np.any(d.labels == 1) for d in docs):
        log.warning("group %s has no true claims in the optimization split; using uniform weights", name)
        return WeightSearchResult(uniform_weights(m), 0.0, 0.0, 0.0, False, 0)
    return optimize_weights(docs, config)


def weights_map(results: Mapping[str, WeightSearchResult]) -> dict[str, tuple[float, ...]]:
    return {g: r.weights for g, r in results.items()}
