"""Document-level claim filters.

The multiplicative filter sorts claims by decreasing score and keeps the
longest prefix whose aggregate stays above the threshold ``tau``.  One
extra claim is admitted with probability ``gamma`` so that, with oracle
scores, the probability of keeping only true claims is exactly ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PRODUCT, ConformityConvention, ValidationError


@dataclass(frozen=True)
class PrefixAggregate:
    """Claims ordered by decreasing score and their prefix aggregates.

    ``values[k]`` is the aggregate of the first ``k`` ranked claims for
    ``k = 0..N``, padded with the identity (1) at ``k = 0`` and the floor
    (0) at ``k = N + 1``.
    """

    permutation: np.ndarray
    values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.permutation)


def _as_scores(scores) -> np.ndarray:
    p = np.asarray(scores, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError("combined scores must be a nonempty 1-d vector")
    # NaN fails both comparisons
    if not (p.min() >= 0.0 and p.max() <= 1.0):
        raise ValidationError("score out of range [0, 1]")
    return p


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not (0.0 <= tau <= 1.0):
        raise ValidationError(f"threshold tau out of range [0, 1]: {tau!r}")
    return tau


def _check_u(u: float) -> float:
    u = float(u)
    if not (0.0 <= u < 1.0):
        raise ValidationError(f"randomization draw u must lie in [0, 1), got {u!r}")
    return u


def rank_claims(scores) -> np.ndarray:
    """Indices by decreasing score; ties keep ascending claim index."""
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def prefix_aggregate(combined_scores, convention: ConformityConvention = PRODUCT) -> PrefixAggregate:
    p = _as_scores(combined_scores)
    order = rank_claims(p)
    ranked = p[order]
    eps = convention.epsilon
    k = np.arange(1, p.size + 1, dtype=float)
    if convention.variant == "worst_case":
        # k-th largest raw score: the cutoff then counts claims with p >= tau
        agg = ranked
    else:
        q = np.clip(ranked, eps, 1.0 - eps)
        if convention.variant == "product":
            agg = np.exp(np.cumsum(np.log(q)))
        elif convention.variant == "log_sum":
            # exp(log(prefix mean)); the log is a monotone relabeling, thresholds stay in [0, 1]
            agg = np.exp(np.log(np.cumsum(q) / k))
        else:
            lam = convention.lam
            agg = (np.cumsum(q**lam) / k) ** (1.0 / lam)
        # rounding in cumulative sums can break monotonicity by an ulp
        agg = np.minimum.accumulate(agg)
    values = np.concatenate(([1.0], np.minimum(agg, 1.0), [0.0]))
    values.flags.writeable = False
    order.flags.writeable = False
    return PrefixAggregate(order, values)


def cutoff_and_gamma(agg: PrefixAggregate, tau: float) -> tuple[int, float]:
    """Return the cutoff ``K*`` and the boundary inclusion probability."""
    tau = _check_tau(tau)
    n = agg.n
    g = agg.values
    k = int(np.count_nonzero(g[1 : n + 1] >= tau))
    if k == n:
        return k, 0.0
    denom = g[k] - g[k + 1]
    if denom <= 0.0:
        return k, 0.0
    gamma = (g[k] - tau) / denom
    return k, float(min(max(gamma, 0.0), 1.0))


def retained_from_aggregate(agg: PrefixAggregate, tau: float, u: float) -> frozenset[int]:
    u = _check_u(u)
    k, gamma = cutoff_and_gamma(agg, tau)
    if u < gamma:
        k = min(k + 1, agg.n)
    return frozenset(int(j) for j in agg.permutation[:k])


def apply_multiplicative_filter(
    combined_scores, tau: float, u: float, convention: ConformityConvention = PRODUCT
) -> frozenset[int]:
    """Randomized prefix filter; returns original claim indices.

    ``u`` is the document's single Unif[0, 1) draw.  The boundary claim is
    admitted when ``u < gamma``.
    """
    if convention.variant == "worst_case":
        raise ValidationError("worst_case convention filters claim-wise; use apply_threshold_filter")
    return retained_from_aggregate(prefix_aggregate(combined_scores, convention), tau, u)


def apply_threshold_filter(combined_scores, tau: float) -> frozenset[int]:
    """Keep every claim with score ``>= tau``."""
    p = _as_scores(combined_scores)
    tau = _check_tau(tau)
    return frozenset(int(j) for j in np.flatnonzero(p >= tau))


def apply_filter(
    combined_scores, tau: float, u: float, convention: ConformityConvention = PRODUCT
) -> frozenset[int]:
    """Dispatch on the convention: claim-wise for worst_case, prefix rule otherwise."""
    if convention.variant == "worst_case":
        _check_u(u)
        return apply_threshold_filter(combined_scores, tau)
    return apply_multiplicative_filter(combined_scores, tau, u, convention)


def apply_complement_budget_filter(
    combined_scores, budget: float, epsilon: float = 1e-12
) -> frozenset[int]:
    """Alternate log-budget form over complement scores.

    Claims are visited in ascending score order and the longest prefix
    with ``sum(-log(1 - p + epsilon)) <= budget`` is kept.  This follows
    the complement-product bookkeeping literally; it is not equivalent to
    :func:`apply_multiplicative_filter` and is never used by default.
    """
    p = _as_scores(combined_scores)
    if budget < 0:
        raise ValidationError("budget must be nonnegative")
    order = np.argsort(p, kind="stable")
    cost = np.cumsum(-np.log(1.0 - p[order] + epsilon))
    k = int(np.count_nonzero(cost <= budget))
    return frozenset(int(j) for j in order[:k])
