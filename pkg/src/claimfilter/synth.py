"""Synthetic oracle corpora and Monte-Carlo experiment harness.

Claims have a known oracle probability ``p*`` drawn from a per-group Beta
law, labels are independent ``Bernoulli(p*)`` and each base scorer reports
``clip(p* + N(0, sigma_m^2), eps, 1 - eps)``.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .calibration import DegenerateCalibrationWarning, calibrate, filter_corpus
from .core import (
    DEFAULT_EPSILON,
    PRODUCT,
    Claim,
    ConformityConvention,
    Document,
    ValidationError,
    uniform_weights,
)
from .ensemble import (
    MARGINAL_KEY,
    WeightSearchConfig,
    evaluate_weights,
    optimize_group_weights,
    optimize_weights,
    weights_map,
)
from .shift import FEATURE_NAMES, feature_matrix, fit_density_ratio, resample_calibration


@dataclass(frozen=True)
class GroupSpec:
    name: str
    proportion: float
    a: float
    b: float


@dataclass(frozen=True)
class SimConfig:
    n_docs: int = 1250
    claims_per_doc: tuple[int, int] = (3, 10)
    groups: tuple[GroupSpec, ...] = (GroupSpec("all", 1.0, 2.0, 2.0),)
    scorer_noise: tuple[float, ...] = (0.0,)
    seed: int = 0
    alphas: tuple[float, ...] = (0.1,)
    trials: int = 30
    split: tuple[float, float, float] = (0.4, 0.4, 0.2)
    exact_group_counts: bool = False
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "claims_per_doc", tuple(self.claims_per_doc))
        object.__setattr__(
            self, "groups", tuple(g if isinstance(g, GroupSpec) else GroupSpec(**g) for g in self.groups)
        )
        object.__setattr__(self, "scorer_noise", tuple(float(s) for s in self.scorer_noise))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "split", tuple(float(s) for s in self.split))
        lo, hi = self.claims_per_doc
        if self.n_docs < 1:
            raise ValidationError("n_docs must be >= 1")
        if not (1 <= lo <= hi):
            raise ValidationError("claims_per_doc must satisfy 1 <= min <= max")
        if not self.groups:
            raise ValidationError("at least one group is required")
        if abs(sum(g.proportion for g in self.groups) - 1.0) > 1e-9:
            raise ValidationError("group proportions must sum to 1")
        if len({g.name for g in self.groups}) != len(self.groups):
            raise ValidationError("group names must be unique")
        for g in self.groups:
            if g.proportion < 0 or not (g.a > 0 and g.b > 0):
                raise ValidationError(f"group {g.name!r}: need proportion >= 0 and Beta a, b > 0")
        if not self.scorer_noise or any(s < 0 for s in self.scorer_noise):
            raise ValidationError("scorer noise levels must be a nonempty list of values >= 0")
        if len(self.split) != 3 or any(s < 0 for s in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValidationError("split must be three nonnegative fractions summing to 1")
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")
        for a in self.alphas:
            if not (0.0 < a < 1.0):
                raise ValidationError("every alpha must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "groups" in d:
            d["groups"] = tuple(GroupSpec(**g) for g in d["groups"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}: malformed config: {e}") from None

    def to_dict(self) -> dict:
        return asdict(self)


def trial_seed(master: int, index: int) -> int:
    """Order-independent per-trial seed."""
    h = hashlib.sha256(f"{master}:{index}".encode()).digest()
    return int.from_bytes(h[:8], "little")


@dataclass
class ClaimArrays:
    """Flat claim-level sample; ``doc`` maps claims to documents."""

    doc: np.ndarray
    group: np.ndarray
    oracle: np.ndarray
    labels: np.ndarray
    scores: np.ndarray
    n_claims: np.ndarray
    prompt_len: np.ndarray
    response_len: np.ndarray

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.n_claims)))


def sample_claims(config: SimConfig, rng: np.random.Generator, n_docs: Optional[int] = None) -> ClaimArrays:
    n = config.n_docs if n_docs is None else n_docs
    props = np.array([g.proportion for g in config.groups])
    if config.exact_group_counts:
        raw = props * n
        counts = np.floor(raw).astype(int)
        rest = n - counts.sum()
        counts[np.argsort(-(raw - counts), kind="stable")[:rest]] += 1
        group = rng.permutation(np.repeat(np.arange(len(props)), counts))
    else:
        group = rng.choice(len(props), size=n, p=props)
    lo, hi = config.claims_per_doc
    n_claims = rng.integers(lo, hi + 1, size=n)
    doc = np.repeat(np.arange(n), n_claims)
    a = np.array([g.a for g in config.groups])[group][doc]
    b = np.array([g.b for g in config.groups])[group][doc]
    eps = config.epsilon
    oracle = np.clip(rng.beta(a, b), eps, 1.0 - eps)
    labels = (rng.random(oracle.size) < oracle).astype(np.int8)
    sig = np.array(config.scorer_noise)
    noise = rng.standard_normal((oracle.size, sig.size)) * sig
    scores = np.clip(oracle[:, None] + noise, eps, 1.0 - eps)
    prompt_len = rng.integers(5, 60, size=n)
    response_len = n_claims * rng.integers(8, 25, size=n)
    return ClaimArrays(doc, group, oracle, labels, scores, n_claims, prompt_len, response_len)


def documents_from_arrays(arr: ClaimArrays, config: SimConfig, prefix: str = "d") -> list[Document]:
    names = [g.name for g in config.groups]
    off = arr.offsets
    docs = []
    for i in range(arr.n_claims.size):
        lo, hi = off[i], off[i + 1]
        claims = tuple(
            Claim(j, tuple(arr.scores[c].tolist()), int(arr.labels[c]), float(arr.oracle[c]))
            for j, c in enumerate(range(lo, hi))
        )
        docs.append(
            Document(
                f"{prefix}{i:06d}",
                names[arr.group[i]],
                claims,
                prompt_len=int(arr.prompt_len[i]),
                response_len=int(arr.response_len[i]),
            )
        )
    return docs


def generate_corpus(config: SimConfig, seed: Optional[int] = None) -> list[Document]:
    """Labeled corpus with oracle scores; deterministic given the seed."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return documents_from_arrays(sample_claims(config, rng), config)


def split_corpus(
    docs: Sequence[Document], fractions: Sequence[float], rng: np.random.Generator
) -> tuple[list[Document], ...]:
    """Split into disjoint parts, stratified by group."""
    by_group: dict[str, list[int]] = {}
    for i, d in enumerate(docs):
        by_group.setdefault(d.group, []).append(i)
    parts: list[list[int]] = [[] for _ in fractions]
    cum = np.cumsum(fractions)
    for g in sorted(by_group):
        idx = np.array(by_group[g])[rng.permutation(len(by_group[g]))]
        cuts = np.rint(cum * idx.size).astype(int)
        start = 0
        for k, stop in enumerate(cuts):
            parts[k].extend(idx[start:stop].tolist())
            start = stop
    return tuple([docs[i] for i in sorted(p)] for p in parts)


def ks_statistic(values) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF and Unif[0, 1]."""
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    if n == 0:
        raise ValidationError("KS statistic of an empty sample")
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    se: float

    @classmethod
    def of(cls, xs) -> "Summary":
        x = np.asarray(xs, dtype=float)
        if x.size == 0:
            return cls(float("nan"), float("nan"), float("nan"))
        sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        return cls(float(np.mean(x)), sd, sd / math.sqrt(x.size))


@dataclass
class GroupTrials:
    coverage: list[float] = field(default_factory=list)
    retention: list[float] = field(default_factory=list)
    n_cal: list[int] = field(default_factory=list)
    n_test: list[int] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "coverage": asdict(Summary.of(self.coverage)),
            "retention": asdict(Summary.of(self.retention)),
            "mean_n_cal": float(np.mean(self.n_cal)) if self.n_cal else 0.0,
            "mean_n_test": float(np.mean(self.n_test)) if self.n_test else 0.0,
            "trials": len(self.coverage),
        }


@dataclass
class TrialReport:
    alpha: float
    mode: str
    convention: str
    use_ensemble: bool
    trials: int
    overall: GroupTrials
    groups: dict[str, GroupTrials]
    degenerate_trials: int = 0
    weights: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "mode": self.mode,
            "convention": self.convention,
            "use_ensemble": self.use_ensemble,
            "trials": self.trials,
            "degenerate_trials": self.degenerate_trials,
            "overall": self.overall.summary(),
            "groups": {g: t.summary() for g, t in self.groups.items()},
        }


def _trial_coverage(test, results):
    hits = np.array([r.retained <= d.true_claims for d, r in zip(test, results)], dtype=float)
    fracs = np.array([len(r.retained) / d.n_claims for d, r in zip(test, results)])
    return hits, fracs


def coverage_experiment(
    config: SimConfig,
    alpha: float,
    mode: str = "group",
    convention: ConformityConvention = PRODUCT,
    use_ensemble: bool = False,
    weight_config: Optional[WeightSearchConfig] = None,
    trials: Optional[int] = None,
) -> TrialReport:
    """Repeat optimize / calibrate / filter on fresh synthetic corpora.

    Each trial draws a corpus from its own seed, splits it (stratified by
    group) into optimization, calibration and test parts, fits ensemble
    weights on the first when ``use_ensemble`` is set, calibrates on the
    second and records coverage and retention on the third.  Trials whose
    calibration hit the small-group degenerate path are counted in
    ``degenerate_trials`` rather than failing.
    """
    n_trials = config.trials if trials is None else trials
    names = [g.name for g in config.groups]
    overall = GroupTrials()
    groups = {g: GroupTrials() for g in names}
    report = TrialReport(alpha, mode, convention.tag, use_ensemble, n_trials, overall, groups)
    for t in range(n_trials):
        seed = trial_seed(config.seed, t)
        rng = np.random.default_rng(seed)
        docs = documents_from_arrays(sample_claims(config, rng), config)
        opt, cal, test = split_corpus(docs, config.split, rng)
        weights = None
        if use_ensemble:
            wcfg = weight_config or WeightSearchConfig(seed=seed % (2**32))
            weights = weights_map(optimize_group_weights(opt, wcfg, groups=names))
            report.weights.append(weights)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateCalibrationWarning)
            model = calibrate(
                cal,
                alpha,
                convention,
                mode,
                weights,
                rng_seed=int(rng.integers(2**63)),
                delta=weight_config.delta if (use_ensemble and weight_config) else None,
            )
        if any(issubclass(w.category, DegenerateCalibrationWarning) for w in caught):
            report.degenerate_trials += 1
        results = filter_corpus(model, test, rng_seed=int(rng.integers(2**63)))
        hits, fracs = _trial_coverage(test, results)
        overall.coverage.append(float(hits.mean()))
        overall.retention.append(float(fracs.mean()))
        overall.n_cal.append(len(cal))
        overall.n_test.append(len(test))
        gl = np.array([d.group for d in test])
        cl = np.array([d.group for d in cal])
        for g in names:
            mask = gl == g
            if not mask.any():
                continue
            groups[g].coverage.append(float(hits[mask].mean()))
            groups[g].retention.append(float(fracs[mask].mean()))
            groups[g].n_cal.append(int(np.sum(cl == g)))
            groups[g].n_test.append(int(mask.sum()))
    return report


@dataclass(frozen=True)
class GapRow:
    sigma: float
    mse: float
    r_hat: float
    r_star: float
    gap: float


def retention_gap_sweep(
    config: SimConfig,
    tau: float,
    noise_levels: Sequence[float] = (0.02, 0.05, 0.1, 0.2),
    seeds: int = 50,
) -> list[GapRow]:
    """Claim-wise threshold retention with noisy vs oracle scores.

    For each noise level the retention ``P(score >= tau)`` is pooled over
    claims and averaged over ``seeds`` corpora; ``gap`` is the absolute
    difference of the averaged retentions.
    """
    if not (0.0 <= tau <= 1.0):
        raise ValidationError("tau must lie in [0, 1]")
    rows = []
    for sigma in noise_levels:
        cfg = replace(config, scorer_noise=(float(sigma),))
        mse, rh, rs = [], [], []
        for s in range(seeds):
            arr = sample_claims(cfg, np.random.default_rng(trial_seed(config.seed, s)))
            p_hat = arr.scores[:, 0]
            mse.append(float(np.mean((p_hat - arr.oracle) ** 2)))
            rh.append(float(np.mean(p_hat >= tau)))
            rs.append(float(np.mean(arr.oracle >= tau)))
        r_hat, r_star = float(np.mean(rh)), float(np.mean(rs))
        rows.append(GapRow(float(sigma), float(np.mean(mse)), r_hat, r_star, abs(r_hat - r_star)))
    return rows


@dataclass(frozen=True)
class EnsembleTrial:
    seed: int
    weights: tuple[float, ...]
    opt_fpr: float
    best_vertex_fpr: float
    retention: dict[str, float]
    coverage: dict[str, float]


def ensemble_experiment(
    config: SimConfig,
    alpha: float = 0.1,
    seeds: int = 50,
    weight_config: Optional[WeightSearchConfig] = None,
) -> list[EnsembleTrial]:
    """Compare optimized, uniform and single-scorer weights at the same alpha.

    Every seed draws a corpus, fits weights on the optimization part
    (marginal mode, one pooled group), calibrates each weighting on the
    same calibration part with the same draws, and records test coverage
    and retention.  Retention is keyed ``optimized``, ``uniform`` and
    ``scorer{m}``.
    """
    m = len(config.scorer_noise)
    out = []
    for s in range(seeds):
        seed = trial_seed(config.seed, s)
        rng = np.random.default_rng(seed)
        docs = documents_from_arrays(sample_claims(config, rng), config)
        opt, cal, test = split_corpus(docs, config.split, rng)
        wcfg = replace(weight_config or WeightSearchConfig(), seed=seed % (2**32))
        res = optimize_weights(opt, wcfg)
        vertex_fpr = [evaluate_weights(opt, np.eye(m)[k], wcfg.delta, wcfg.tpr_aggregate)[1] for k in range(m)]
        candidates = {"optimized": res.weights, "uniform": uniform_weights(m)}
        for k in range(m):
            candidates[f"scorer{k}"] = tuple(np.eye(m)[k].tolist())
        cal_u = rng.random(len(cal))
        test_u = rng.random(len(test))
        ret, cov = {}, {}
        for name, w in candidates.items():
            model = calibrate(cal, alpha, mode="marginal", weights_per_group={MARGINAL_KEY: w}, draws=cal_u)
            results = filter_corpus(model, test, draws=test_u)
            hits, fracs = _trial_coverage(test, results)
            ret[name] = float(fracs.mean())
            cov[name] = float(hits.mean())
        out.append(EnsembleTrial(seed, tuple(res.weights), res.fpr, float(min(vertex_fpr)), ret, cov))
    return out


def shifted_split(docs: Sequence[Document], tilt: float, rng: np.random.Generator):
    """Split by a logistic tilt on standardized mean score.

    A document goes to the source (calibration) side with probability
    ``sigmoid(tilt * z)``, so high-score documents dominate the source
    and low-score documents the target.
    """
    s = feature_matrix(docs)[:, FEATURE_NAMES.index("mean_score")]
    sd = s.std()
    z = (s - np.median(s)) / (sd if sd > 0 else 1.0)
    to_source = rng.random(len(docs)) < 1.0 / (1.0 + np.exp(-tilt * z))
    source = [d for d, f in zip(docs, to_source) if f]
    target = [d for d, f in zip(docs, to_source) if not f]
    return source, target


@dataclass(frozen=True)
class ShiftTrial:
    seed: int
    deviation_plain: float
    deviation_dre: float
    coverage_plain: dict[str, float]
    coverage_dre: dict[str, float]
    ratio_model: dict


def shift_experiment(
    config: SimConfig,
    alpha: float = 0.1,
    tilt: float = 2.0,
    trials: int = 100,
) -> list[ShiftTrial]:
    """Group coverage on a shifted target with and without DRE resampling.

    ``deviation_*`` is the mean over groups of ``|coverage - (1 - alpha)|``
    on the target side.  Both arms share the target draws.
    """
    out = []
    for t in range(trials):
        seed = trial_seed(config.seed, t)
        rng = np.random.default_rng(seed)
        docs = documents_from_arrays(sample_claims(config, rng), config)
        source, target = shifted_split(docs, tilt, rng)
        ratio = fit_density_ratio(source, target)
        resampled, _ = resample_calibration(source, ratio.ratios(source), seed=int(rng.integers(2**32)))
        cal_seed = int(rng.integers(2**63))
        test_u = rng.random(len(target))
        covs = []
        for cal in (source, resampled):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateCalibrationWarning)
                model = calibrate(cal, alpha, mode="group", rng_seed=cal_seed)
            results = filter_corpus(model, target, draws=test_u)
            hits, _ = _trial_coverage(target, results)
            gl = np.array([d.group for d in target])
            covs.append({g: float(hits[gl == g].mean()) for g in sorted(set(gl))})
        dev = [float(np.mean([abs(c - (1 - alpha)) for c in cv.values()])) for cv in covs]
        out.append(ShiftTrial(seed, dev[0], dev[1], covs[0], covs[1], ratio.to_dict()))
    return out
