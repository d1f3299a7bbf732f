"""Density-ratio correction of the calibration corpus under covariate shift.

A logistic classifier separates source (calibration) from target
(deployment) documents on label-free features; its odds estimate the
density ratio, and the calibration corpus is importance-resampled with
probabilities proportional to those ratios before calibrating as usual.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import Document, ValidationError

FEATURE_NAMES = ("mean_score", "std_score", "prompt_len", "response_len", "bias")


@dataclass(frozen=True)
class FeatureVector:
    mean_score: float
    std_score: float
    prompt_len: float
    response_len: float
    bias: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.array([self.mean_score, self.std_score, self.prompt_len, self.response_len, self.bias])


def extract_features(doc: Document) -> FeatureVector:
    """Mean/std (population) of per-claim scores plus length statistics.

    A claim's score is the mean over its ``M`` scorers; absent lengths
    count as 0.
    """
    s = doc.score_matrix.mean(axis=1)
    return FeatureVector(
        float(s.mean()),
        float(s.std()),
        float(doc.prompt_len or 0),
        float(doc.response_len or 0),
        1.0,
    )


def feature_matrix(docs: Sequence[Document]) -> np.ndarray:
    return np.array([extract_features(d).as_array() for d in docs]).reshape(len(docs), len(FEATURE_NAMES))


@dataclass(frozen=True)
class RatioModel:
    coefficients: tuple[float, ...]
    means: tuple[float, ...]
    scales: tuple[float, ...]
    clip_bounds: tuple[float, float] = (0.01, 100.0)

    def __post_init__(self):
        lo, hi = self.clip_bounds
        if not (0 < lo < hi):
            raise ValidationError("clip bounds must satisfy 0 < lower < upper")
        if any(s <= 0 for s in self.scales):
            raise ValidationError("feature scales must be positive")

    def logits(self, x: np.ndarray) -> np.ndarray:
        z = (x - np.asarray(self.means)) / np.asarray(self.scales)
        return z @ np.asarray(self.coefficients)

    def ratios(self, docs: Sequence[Document]) -> np.ndarray:
        """Estimated target/source density ratio, clipped."""
        lo, hi = self.clip_bounds
        return np.clip(np.exp(self.logits(feature_matrix(docs))), lo, hi)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"] = list(FEATURE_NAMES)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RatioModel":
        return cls(
            tuple(d["coefficients"]), tuple(d["means"]), tuple(d["scales"]), tuple(d.get("clip_bounds", (0.01, 100.0)))
        )


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_density_ratio(
    source_docs: Sequence[Document],
    target_docs: Sequence[Document],
    iters: int = 500,
    step: float = 0.1,
    clip_bounds: tuple[float, float] = (0.01, 100.0),
) -> RatioModel:
    """Logistic source-vs-target classifier by full-batch gradient descent.

    Features are standardized on the pooled sample (the bias column is left
    at 1) and each class gets half the total weight, so the fitted odds
    estimate ``p_target(x) / p_source(x)``.  Starts from zero
    coefficients, hence ``iters=0`` gives ratio 1 everywhere.
    """
    if not source_docs or not target_docs:
        raise ValidationError("density-ratio fit needs nonempty source and target sets")
    xs, xt = feature_matrix(source_docs), feature_matrix(target_docs)
    x = np.vstack([xs, xt])
    y = np.concatenate([np.zeros(len(xs)), np.ones(len(xt))])
    means = x.mean(axis=0)
    scales = x.std(axis=0)
    bias = FEATURE_NAMES.index("bias")
    means[bias], scales[bias] = 0.0, 1.0
    scales[scales <= 0] = 1.0
    z = (x - means) / scales
    c = np.where(y == 1, 0.5 / len(xt), 0.5 / len(xs))
    beta = np.zeros(z.shape[1])
    for _ in range(iters):
        grad = z.T @ (c * (_sigmoid(z @ beta) - y))
        beta -= step * grad
    return RatioModel(tuple(beta.tolist()), tuple(means.tolist()), tuple(scales.tolist()), tuple(clip_bounds))


def resample_calibration(
    docs: Sequence[Document], ratios, seed: int = 0
) -> tuple[list[Document], np.ndarray]:
    """Draw ``n`` documents with replacement, probability proportional to ``ratios``.

    Returns the resampled documents (shared references) and the drawn
    indices.
    """
    r = np.asarray(ratios, dtype=float)
    if r.shape != (len(docs),):
        raise ValidationError("ratios must align with the documents")
    if np.any(r < 0) or not np.all(np.isfinite(r)):
        raise ValidationError("ratios must be finite and nonnegative")
    total = r.sum()
    if not total > 0:
        raise ValidationError("all density ratios are zero")
    idx = np.random.default_rng(seed).choice(len(docs), size=len(docs), replace=True, p=r / total)
    return [docs[i] for i in idx], idx
