"""Evaluation statistics for filtered corpora."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Document, ValidationError

FLAG_THRESHOLD = 0.5


def coverage(filter_results: Iterable[tuple[Iterable[int], Iterable[int]]]) -> float:
    """Fraction of documents whose retained set lies inside the true set."""
    hits = [set(kept) <= set(true) for kept, true in filter_results]
    if not hits:
        raise ValidationError("coverage of an empty result list")
    return float(np.mean(hits))


def retention(filter_results: Iterable[tuple[Iterable[int], int]]) -> float:
    """Mean over documents of ``|retained| / N``."""
    fracs = [len(set(kept)) / n for kept, n in filter_results]
    if not fracs:
        raise ValidationError("retention of an empty result list")
    return float(np.mean(fracs))


def mse_vs_oracle(scores, oracle_scores) -> float:
    if oracle_scores is None:
        raise ValidationError("oracle scores are required for MSE")
    p = np.asarray(scores, dtype=float)
    q = np.asarray(oracle_scores, dtype=float)
    if p.shape != q.shape or p.size == 0:
        raise ValidationError("scores and oracle scores must be nonempty and aligned")
    if np.isnan(q).any():
        raise ValidationError("oracle scores are required for MSE (missing values found)")
    return float(np.mean((p - q) ** 2))


def jaccard_distance(a: Iterable, b: Iterable) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 0.0
    return 1.0 - len(a & b) / len(union)


def flagged_false_sets(docs: Sequence[Document], threshold: float = FLAG_THRESHOLD) -> list[set]:
    """Per scorer, the ground-truth-false claims it scores below ``threshold``.

    Elements are ``(doc_id, claim_index)`` pairs.
    """
    m = docs[0].n_scorers
    out: list[set] = [set() for _ in range(m)]
    for d in docs:
        false = np.flatnonzero(d.labels == 0)
        for k in range(m):
            col = d.score_matrix[:, k]
            out[k].update((d.id, int(j)) for j in false if col[j] < threshold)
    return out


def jaccard_matrix(docs: Sequence[Document], threshold: float = FLAG_THRESHOLD) -> np.ndarray:
    sets = flagged_false_sets(docs, threshold)
    m = len(sets)
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            out[i, j] = jaccard_distance(sets[i], sets[j])
    return out


@dataclass(frozen=True)
class GroupEval:
    """Evaluation of one group (or of the whole corpus).

    ``coverage`` and ``retention`` average over documents; ``tpr``,
    ``fpr`` and ``pooled_retention`` pool over claims, so that
    ``pooled_retention == prevalence * tpr + (1 - prevalence) * fpr``.
    """

    n_docs: int
    n_claims: int
    coverage: float
    retention: float
    tpr: float
    fpr: float
    pooled_retention: float
    prevalence: float
    n_true: int
    n_retained_true: int
    n_retained_false: int


def _group_eval(docs: Sequence[Document], kept: Sequence[frozenset]) -> GroupEval:
    n_claims = sum(d.n_claims for d in docs)
    cov = coverage((k, d.true_claims) for d, k in zip(docs, kept))
    ret = retention((k, d.n_claims) for d, k in zip(docs, kept))
    n_true = sum(len(d.true_claims) for d in docs)
    kt = sum(len(k & d.true_claims) for d, k in zip(docs, kept))
    kf = sum(len(k - d.true_claims) for d, k in zip(docs, kept))
    n_false = n_claims - n_true
    return GroupEval(
        n_docs=len(docs),
        n_claims=n_claims,
        coverage=cov,
        retention=ret,
        tpr=kt / n_true if n_true else 0.0,
        fpr=kf / n_false if n_false else 0.0,
        pooled_retention=(kt + kf) / n_claims,
        prevalence=n_true / n_claims,
        n_true=n_true,
        n_retained_true=kt,
        n_retained_false=kf,
    )


@dataclass
class EvalReport:
    alpha: Optional[float]
    convention: str
    overall: GroupEval
    groups: dict[str, GroupEval]
    n_fallback: int = 0
    mse: Optional[list[float]] = None
    jaccard: Optional[list[list[float]]] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "convention": self.convention,
            "overall": asdict(self.overall),
            "groups": {g: asdict(v) for g, v in self.groups.items()},
            "n_fallback": self.n_fallback,
            "mse": self.mse,
            "jaccard": self.jaccard,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = list(GroupEval.__dataclass_fields__)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", *fields])
        for g, v in [*self.groups.items(), ("__overall__", self.overall)]:
            row = asdict(v)
            w.writerow([g, *(_fmt(row[f]) for f in fields)])
        return buf.getvalue()


def _fmt(x):
    return repr(x) if isinstance(x, float) else x


def evaluate(
    docs: Sequence[Document],
    kept: Sequence[Iterable[int]],
    alpha: Optional[float] = None,
    convention: str = "product",
    n_fallback: int = 0,
    diagnostics: bool = True,
) -> EvalReport:
    """Build an :class:`EvalReport` from labeled documents and retained sets.

    With ``diagnostics`` the report also carries per-scorer MSE against
    oracle scores (when every claim has one) and the Jaccard distance
    matrix between scorers' false-claim flags.
    """
    if not docs:
        raise ValidationError("cannot evaluate an empty corpus")
    if len(docs) != len(kept):
        raise ValidationError("documents and filter results differ in length")
    kept = [frozenset(k) for k in kept]
    by_group: dict[str, list[int]] = {}
    for i, d in enumerate(docs):
        if not d.is_labeled:
            raise ValidationError(f"document {d.id!r}: evaluation needs labels")
        by_group.setdefault(d.group, []).append(i)
    groups = {
        g: _group_eval([docs[i] for i in idx], [kept[i] for i in idx]) for g, idx in sorted(by_group.items())
    }
    report = EvalReport(alpha, convention, _group_eval(docs, kept), groups, n_fallback=n_fallback)
    if diagnostics:
        if all(c.oracle_score is not None for d in docs for c in d.claims):
            s = np.concatenate([d.score_matrix for d in docs])
            o = np.concatenate([d.oracle_scores for d in docs])
            report.mse = [mse_vs_oracle(s[:, k], o) for k in range(s.shape[1])]
        report.jaccard = jaccard_matrix(docs).tolist()
    return report
