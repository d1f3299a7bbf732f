"""Domain types shared by every stage of the filtering pipeline.

A corpus is a list of :class:`Document` objects, each holding an ordered
list of :class:`Claim` objects.  Every claim carries ``M`` raw factuality
scores (one per base scorer), an optional binary label and, for synthetic
data only, the oracle probability that the claim is true.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional, Sequence

import numpy as np

DEFAULT_EPSILON = 1e-12

VARIANTS = ("product", "log_sum", "power_mean", "worst_case")


class ValidationError(ValueError):
    """Raised when a corpus, model or configuration violates its contract."""


@dataclass(frozen=True)
class Claim:
    index: int
    scores: tuple[float, ...]
    label: Optional[int] = None
    oracle_score: Optional[float] = None

    def __post_init__(self):
        scores = tuple(map(float, self.scores))
        object.__setattr__(self, "scores", scores)
        if not scores:
            raise ValidationError(f"claim {self.index}: empty score vector")
        if not (0.0 <= min(scores) and max(scores) <= 1.0):
            bad = next(s for s in scores if not 0.0 <= s <= 1.0)
            raise ValidationError(f"claim {self.index}: score out of range [0, 1]: {bad!r}")
        if self.label is not None and self.label not in (0, 1):
            raise ValidationError(f"claim {self.index}: label must be 0, 1 or absent, got {self.label!r}")
        if self.oracle_score is not None and not (0.0 <= self.oracle_score <= 1.0):
            raise ValidationError(
                f"claim {self.index}: oracle score out of range [0, 1]: {self.oracle_score!r}"
            )


@dataclass(frozen=True)
class Document:
    """One prompt with its decomposed, scored claims.

    ``group`` is a caller-supplied label; it is never derived from text.
    """

    id: str
    group: str
    claims: tuple[Claim, ...]
    prompt_len: Optional[int] = None
    response_len: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "claims", tuple(self.claims))
        if not self.claims:
            raise ValidationError(f"document {self.id!r}: empty claim list")
        m = len(self.claims[0].scores)
        if any(len(c.scores) != m for c in self.claims):
            raise ValidationError(f"document {self.id!r}: inconsistent number of scores across claims")
        for name in ("prompt_len", "response_len"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValidationError(f"document {self.id!r}: {name} must be nonnegative")

    @property
    def n_claims(self) -> int:
        return len(self.claims)

    @property
    def n_scorers(self) -> int:
        return len(self.claims[0].scores)

    @property
    def is_labeled(self) -> bool:
        return all(c.label is not None for c in self.claims)

    @cached_property
    def score_matrix(self) -> np.ndarray:
        """Read-only ``(N, M)`` array of raw scores."""
        arr = np.array([c.scores for c in self.claims], dtype=float)
        arr.flags.writeable = False
        return arr

    @cached_property
    def labels(self) -> np.ndarray:
        if not self.is_labeled:
            raise ValidationError(f"document {self.id!r}: missing claim labels")
        arr = np.array([c.label for c in self.claims], dtype=np.int8)
        arr.flags.writeable = False
        return arr

    @property
    def true_claims(self) -> frozenset[int]:
        """Index set of claims labeled true."""
        return frozenset(int(j) for j in np.flatnonzero(self.labels == 1))

    @cached_property
    def oracle_scores(self) -> np.ndarray:
        if any(c.oracle_score is None for c in self.claims):
            raise ValidationError(f"document {self.id!r}: missing oracle scores")
        arr = np.array([c.oracle_score for c in self.claims], dtype=float)
        arr.flags.writeable = False
        return arr


@dataclass(frozen=True)
class ConformityConvention:
    """How per-claim scores are folded into prefix aggregates.

    ``product`` multiplies the sorted scores (computed in log space),
    ``log_sum`` uses the log of the prefix mean, ``power_mean`` uses the
    prefix power mean with exponent ``lam`` and ``worst_case`` reduces to
    plain claim-wise thresholding.

    Because the aggregate is mapped back through ``exp``, ``log_sum``
    produces the same prefix values as ``power_mean`` with ``lam=1``; it
    is kept as its own tag so reports record what was asked for.
    """

    variant: str = "product"
    lam: Optional[float] = None
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown conformity convention {self.variant!r}")
        if self.variant == "power_mean":
            if self.lam is None or not self.lam > 0:
                raise ValidationError("power_mean requires lam > 0")
        elif self.lam is not None:
            raise ValidationError(f"lam is only meaningful for power_mean, not {self.variant}")
        if not (0.0 < self.epsilon <= 1e-3):
            raise ValidationError("epsilon must lie in (0, 1e-3]")

    @property
    def tag(self) -> str:
        if self.variant == "power_mean":
            return f"power-mean:{self.lam:g}"
        return self.variant.replace("_", "-")

    @classmethod
    def parse(cls, text: str, epsilon: float = DEFAULT_EPSILON) -> "ConformityConvention":
        """Parse ``product``, ``log-sum``, ``power-mean:2`` or ``worst-case``."""
        name, _, arg = text.strip().partition(":")
        variant = name.replace("-", "_")
        if variant == "power_mean":
            if not arg:
                raise ValidationError("power-mean needs an exponent, e.g. power-mean:2")
            try:
                lam = float(arg)
            except ValueError:
                raise ValidationError(f"bad power-mean exponent {arg!r}") from None
            return cls("power_mean", lam=lam, epsilon=epsilon)
        if arg:
            raise ValidationError(f"convention {name!r} takes no argument")
        return cls(variant, epsilon=epsilon)


PRODUCT = ConformityConvention("product")


def uniform_weights(m: int) -> tuple[float, ...]:
    return tuple([1.0 / m] * m)


def check_simplex(w: Sequence[float], m: Optional[int] = None, tol: float = 1e-9) -> np.ndarray:
    arr = np.asarray(w, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("weight vector must be a nonempty 1-d sequence")
    if m is not None and arr.size != m:
        raise ValidationError(f"weight vector has length {arr.size}, expected M={m}")
    if not arr.min() >= 0.0:
        raise ValidationError("weights must be finite and nonnegative")
    if not abs(arr.sum() - 1.0) <= tol:
        raise ValidationError(f"weights must sum to 1 (got {arr.sum()!r})")
    return arr


@dataclass(frozen=True)
class CalibrationModel:
    """Frozen result of calibration.

    ``thresholds``/``weights`` hold per-group values (empty thresholds in
    marginal mode); ``marginal_threshold``/``marginal_weights`` serve the
    marginal mode and documents whose group was never calibrated.
    """

    alpha: float
    convention: ConformityConvention
    mode: str
    n_scorers: int
    weights: Mapping[str, tuple[float, ...]]
    thresholds: Mapping[str, float]
    marginal_weights: tuple[float, ...]
    marginal_threshold: float
    calibration_counts: Mapping[str, int]
    seed: int = 0
    delta: Optional[float] = None
    degenerate_groups: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError("alpha must lie in (0, 1)")
        if self.mode not in ("marginal", "group"):
            raise ValidationError(f"mode must be 'marginal' or 'group', got {self.mode!r}")
        if self.delta is not None and not (0.0 < self.delta < 1.0):
            raise ValidationError("delta must lie in (0, 1)")
        object.__setattr__(self, "weights", {g: tuple(map(float, w)) for g, w in self.weights.items()})
        object.__setattr__(self, "thresholds", {g: float(t) for g, t in self.thresholds.items()})
        object.__setattr__(self, "calibration_counts", dict(self.calibration_counts))
        object.__setattr__(self, "marginal_weights", tuple(map(float, self.marginal_weights)))
        for w in [*self.weights.values(), self.marginal_weights]:
            check_simplex(w, self.n_scorers)
        for t in [*self.thresholds.values(), self.marginal_threshold]:
            if not (0.0 <= t <= 1.0):
                raise ValidationError(f"threshold out of range [0, 1]: {t!r}")
        for g, c in self.calibration_counts.items():
            if c < 1:
                raise ValidationError(f"group {g!r} has no calibration documents")

    @property
    def is_degenerate(self) -> bool:
        """True when every stored threshold is 1.0 (the filter retains nothing)."""
        ts = list(self.thresholds.values()) if self.mode == "group" else []
        return all(t >= 1.0 for t in ts + [self.marginal_threshold])


@dataclass(frozen=True)
class CorpusStats:
    n_docs: int
    n_claims: int
    n_scorers: int
    group_counts: dict[str, int]
    n_labeled: int
    n_true: int

    @property
    def prevalence(self) -> Optional[float]:
        """Fraction of labeled claims that are true, ``None`` without labels."""
        if self.n_labeled == 0:
            return None
        return self.n_true / self.n_labeled


def validate_corpus(docs: Sequence[Document], require_labels: bool = False) -> CorpusStats:
    """Check corpus-level consistency and return summary counts.

    Per-claim bounds are enforced when the objects are built; this adds
    the cross-document checks (shared ``M``, label presence).
    """
    if not docs:
        raise ValidationError("empty corpus")
    m = docs[0].n_scorers
    n_claims = n_labeled = n_true = 0
    groups: Counter[str] = Counter()
    for d in docs:
        if d.n_scorers != m:
            raise ValidationError(
                f"document {d.id!r}: inconsistent M across claims (expected {m}, got {d.n_scorers})"
            )
        groups[d.group] += 1
        n_claims += d.n_claims
        for c in d.claims:
            if c.label is None:
                if require_labels:
                    raise ValidationError(f"document {d.id!r}: missing label on claim {c.index}")
                continue
            n_labeled += 1
            n_true += c.label
    return CorpusStats(
        n_docs=len(docs),
        n_claims=n_claims,
        n_scorers=m,
        group_counts=dict(sorted(groups.items())),
        n_labeled=n_labeled,
        n_true=n_true,
    )


def make_document(
    doc_id: str,
    group: str,
    scores: Sequence[Sequence[float]],
    labels: Optional[Sequence[Optional[int]]] = None,
    oracle: Optional[Sequence[float]] = None,
    prompt_len: Optional[int] = None,
    response_len: Optional[int] = None,
) -> Document:
    """Convenience constructor from parallel per-claim sequences."""
    n = len(scores)
    labels = list(labels) if labels is not None else [None] * n
    oracle = list(oracle) if oracle is not None else [None] * n
    if len(labels) != n or len(oracle) != n:
        raise ValidationError(f"document {doc_id!r}: scores, labels and oracle lengths differ")
    claims = []
    for j in range(n):
        row = scores[j]
        if isinstance(row, (int, float)) and not isinstance(row, bool):
            row = (row,)
        lab = labels[j]
        claims.append(
            Claim(
                index=j,
                scores=tuple(row),
                label=None if lab is None else int(lab),
                oracle_score=None if oracle[j] is None else float(oracle[j]),
            )
        )
    return Document(doc_id, group, tuple(claims), prompt_len=prompt_len, response_len=response_len)

