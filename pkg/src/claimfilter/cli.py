"""Command-line front end.

Exit codes: 0 success, 2 invalid input or arguments, 3 degenerate
calibration (every threshold is 1.0, so the filter retains nothing).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io as cio
from .calibration import DegenerateCalibrationWarning, calibrate, filter_corpus
from .core import ConformityConvention, ValidationError, validate_corpus
from .ensemble import InfeasibleWeightsWarning, WeightSearchConfig, optimize_group_weights, weights_map
from .metrics import evaluate
from .shift import fit_density_ratio, resample_calibration
from .synth import SimConfig, coverage_experiment, retention_gap_sweep, split_corpus

log = logging.getLogger("claimfilter")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DEGENERATE = 3


class DegenerateModel(Exception):
    pass


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1)")
    return v


def _convention(text: str) -> ConformityConvention:
    try:
        return ConformityConvention.parse(text)
    except ValidationError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _fit_weights(docs, delta, budget, seed):
    groups = sorted({d.group for d in docs})
    cfg = WeightSearchConfig(delta=delta, budget=budget, seed=seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InfeasibleWeightsWarning)
        results = optimize_group_weights(docs, cfg, groups=groups)
    for w in caught:
        log.warning("%s", w.message)
    return results


def cmd_calibrate(args) -> int:
    docs = cio.parse_corpus(args.input)
    validate_corpus(docs, require_labels=True)
    weights = None
    if args.ensemble:
        if args.opt_input:
            opt, cal = cio.parse_corpus(args.opt_input), docs
        else:
            opt, cal = split_corpus(docs, (args.opt_fraction, 1 - args.opt_fraction), np.random.default_rng(args.seed))
            if not opt or not cal:
                raise ValidationError("corpus too small to split into optimization and calibration parts")
        weights = weights_map(_fit_weights(opt, args.delta, args.budget, args.seed))
    else:
        cal = docs
    u = cio.corpus_draws(args.seed, cal, "calibrate")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateCalibrationWarning)
        model = calibrate(
            cal,
            args.alpha,
            args.convention,
            args.mode,
            weights,
            rng_seed=args.seed,
            delta=args.delta if args.ensemble else None,
            draws=u,
        )
    for w in caught:
        log.warning("%s", w.message)
    cio.save_model(model, args.out)
    log.info("wrote %s (%d calibration documents)", args.out, len(cal))
    if model.is_degenerate:
        raise DegenerateModel("every calibrated threshold is 1.0; the filter would retain nothing")
    return EXIT_OK


def _filter(model, docs, seed):
    return filter_corpus(model, docs, draws=cio.corpus_draws(seed, docs, "filter"))


def cmd_filter(args) -> int:
    model = cio.load_model(args.model)
    docs = cio.parse_corpus(args.input)
    results = _filter(model, docs, args.seed)
    cio.write_jsonl((r.to_record() for r in results), args.out)
    n_fb = sum(r.fallback for r in results)
    if n_fb:
        log.warning("%d documents used the marginal fallback threshold", n_fb)
    return EXIT_OK


def _read_filtered(path, docs):
    kept, n_fb = [], 0
    with open(path, encoding="utf-8") as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    if len(recs) != len(docs):
        raise ValidationError(f"{path}: {len(recs)} filter records for {len(docs)} documents")
    for i, (rec, d) in enumerate(zip(recs, docs), start=1):
        if rec.get("id") != d.id:
            raise ValidationError(f"{path}: line {i}: id {rec.get('id')!r} does not match document {d.id!r}")
        idx = rec["retained_indices"]
        if any(not 0 <= j < d.n_claims for j in idx):
            raise ValidationError(f"{path}: line {i}: retained index out of range")
        kept.append(frozenset(idx))
        n_fb += bool(rec.get("fallback_flag"))
    return kept, n_fb


def cmd_evaluate(args) -> int:
    model = cio.load_model(args.model)
    docs = cio.parse_corpus(args.input)
    validate_corpus(docs, require_labels=True)
    if args.filtered:
        kept, n_fb = _read_filtered(args.filtered, docs)
    else:
        results = _filter(model, docs, args.seed)
        kept, n_fb = [r.retained for r in results], sum(r.fallback for r in results)
    report = evaluate(docs, kept, model.alpha, model.convention.tag, n_fb)
    report.extra["mode"] = model.mode
    cio.dump_json(report.to_dict(), args.out)
    Path(args.out).with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    o = report.overall
    print(f"coverage={o.coverage:.4f} retention={o.retention:.4f} docs={o.n_docs}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    docs = cio.parse_corpus(args.input)
    validate_corpus(docs, require_labels=True)
    results = _fit_weights(docs, args.delta, args.budget, args.seed)
    out = {
        "delta": args.delta,
        "budget": args.budget,
        "seed": args.seed,
        "groups": {g: {**asdict(r), "weights": list(r.weights)} for g, r in sorted(results.items())},
    }
    cio.dump_json(out, args.out)
    return EXIT_OK


def cmd_shift_resample(args) -> int:
    source = cio.parse_corpus(args.source)
    target = cio.parse_corpus(args.target)
    if source[0].n_scorers != target[0].n_scorers:
        raise ValidationError(
            f"source has M={source[0].n_scorers} scorers but target has M={target[0].n_scorers}"
        )
    model = fit_density_ratio(source, target, iters=args.iters, step=args.step)
    ratios = model.ratios(source)
    resampled, idx = resample_calibration(source, ratios, seed=args.seed)
    cio.write_corpus(resampled, args.out)
    pi = ratios / ratios.sum()
    audit = {
        "ratio_model": model.to_dict(),
        "n_source": len(source),
        "n_target": len(target),
        "effective_sample_size": float(1.0 / np.sum(pi**2)),
        "clipped_low": int(np.sum(ratios <= model.clip_bounds[0])),
        "clipped_high": int(np.sum(ratios >= model.clip_bounds[1])),
        "ratios": {d.id: float(r) for d, r in zip(source, ratios)},
        "drawn_indices": idx.tolist(),
    }
    audit_path = args.audit or str(Path(args.out).with_suffix(".audit.json"))
    cio.dump_json(audit, audit_path)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .plotting import gap_curve, group_bars

    cfg = SimConfig.from_file(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateCalibrationWarning)
        for alpha in cfg.alphas:
            for mode in ("marginal", "group"):
                log.info("alpha=%g mode=%s: %d trials", alpha, mode, cfg.trials)
                runs.append(coverage_experiment(cfg, alpha, mode, args.convention, use_ensemble=args.ensemble))
    gap = retention_gap_sweep(cfg, args.gap_tau, seeds=args.gap_seeds)
    report = {
        "config": cfg.to_dict(),
        "runs": [r.to_dict() for r in runs],
        "retention_gap": {"tau": args.gap_tau, "rows": [asdict(g) for g in gap]},
    }
    cio.dump_json(report, out / "report.json")

    with open(out / "coverage.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "mode", "group", "coverage_mean", "coverage_se", "retention_mean", "retention_se", "trials"])
        for r in report["runs"]:
            for g, s in [*r["groups"].items(), ("__overall__", r["overall"])]:
                c, t = s["coverage"], s["retention"]
                w.writerow([r["alpha"], r["mode"], g, repr(c["mean"]), repr(c["se"]), repr(t["mean"]), repr(t["se"]), s["trials"]])
    with open(out / "retention_gap.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma", "mse", "r_hat", "r_star", "gap"])
        for g in gap:
            w.writerow([repr(v) for v in asdict(g).values()])

    for metric in ("coverage", "retention"):
        series = {
            f"{r['mode']}, a={r['alpha']:g}": {g: (s[metric]["mean"], s[metric]["se"]) for g, s in r["groups"].items()}
            for r in report["runs"]
        }
        target = None
        if metric == "coverage" and len(cfg.alphas) == 1:
            target = 1 - cfg.alphas[0]
        group_bars(series, metric, out / f"{metric}.png", target)
    gap_curve([g.mse for g in gap], [g.gap for g in gap], [g.sigma for g in gap], out / "retention_gap.png", args.gap_tau)
    log.info("wrote report and figures to %s", out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="claimfilter", description="Calibrated claim filtering with coverage guarantees.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="repeat for more detail")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="fit per-group thresholds on a labeled corpus")
    c.add_argument("--input", required=True)
    c.add_argument("--alpha", type=_unit, required=True)
    c.add_argument("--mode", choices=("marginal", "group"), default="group")
    c.add_argument("--convention", type=_convention, default=ConformityConvention())
    c.add_argument("--delta", type=_unit, default=0.1, help="TPR tolerance for the weight search")
    c.add_argument("--ensemble", type=_on_off, default=False, metavar="on|off")
    c.add_argument("--opt-input", help="labeled corpus for the weight search (default: split --input)")
    c.add_argument("--opt-fraction", type=_unit, default=0.5)
    c.add_argument("--budget", type=int, default=512)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    f = sub.add_parser("filter", help="apply a calibrated model")
    f.add_argument("--model", required=True)
    f.add_argument("--input", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_filter)

    e = sub.add_parser("evaluate", help="coverage/retention report on a labeled corpus")
    e.add_argument("--model", required=True)
    e.add_argument("--input", required=True)
    e.add_argument("--filtered", help="existing filter output to score instead of refiltering")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    o = sub.add_parser("optimize", help="per-group ensemble weight search")
    o.add_argument("--input", required=True)
    o.add_argument("--delta", type=_unit, default=0.1)
    o.add_argument("--budget", type=int, default=512)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_optimize)

    s = sub.add_parser("shift-resample", help="density-ratio resampling of a calibration corpus")
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--step", type=float, default=0.1)
    s.add_argument("--out", required=True)
    s.add_argument("--audit", help="ratio audit JSON (default: next to --out)")
    s.set_defaults(func=cmd_shift_resample)

    m = sub.add_parser("simulate", help="Monte-Carlo coverage experiments from a config file")
    m.add_argument("--config", required=True)
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--convention", type=_convention, default=ConformityConvention())
    m.add_argument("--ensemble", type=_on_off, default=False, metavar="on|off")
    m.add_argument("--gap-tau", type=float, default=0.7)
    m.add_argument("--gap-seeds", type=int, default=50)
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except DegenerateModel as e:
        print(f"claimfilter: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ValidationError, FileNotFoundError, KeyError) as e:
        print(f"claimfilter: error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
