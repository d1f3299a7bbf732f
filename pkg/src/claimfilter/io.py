"""Corpus JSONL, model JSON and report serialization.

One document per line::

    {"id": "q1", "group": "low", "prompt_len": 12, "response_len": 80,
     "claims": [{"label": 1, "scores": [0.9, 0.8], "oracle": 0.93}, ...]}

``label`` may be null where labels are unused (filtering).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .core import CalibrationModel, Claim, ConformityConvention, Document, ValidationError

MODEL_FORMAT = "claimfilter-model/1"


class CorpusError(ValidationError):
    """A corpus file failed to parse or validate; carries the line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _document_from_record(rec, line: int) -> Document:
    if not isinstance(rec, dict):
        raise CorpusError(line, "record must be a JSON object")
    for key in ("id", "group", "claims"):
        if key not in rec:
            raise CorpusError(line, f"missing field {key!r}")
    if not isinstance(rec["id"], str) or not isinstance(rec["group"], str):
        raise CorpusError(line, "'id' and 'group' must be strings")
    raw_claims = rec["claims"]
    if not isinstance(raw_claims, list):
        raise CorpusError(line, "'claims' must be a list")
    for key in ("prompt_len", "response_len"):
        v = rec.get(key)
        if v is not None and (not isinstance(v, int) or isinstance(v, bool)):
            raise CorpusError(line, f"{key!r} must be an integer")
    claims = []
    try:
        for j, c in enumerate(raw_claims):
            if not isinstance(c, dict) or "scores" not in c:
                raise CorpusError(line, f"claim {j}: expected an object with 'scores'")
            scores = c["scores"]
            if not isinstance(scores, list) or not all(
                isinstance(s, (int, float)) and not isinstance(s, bool) for s in scores
            ):
                raise CorpusError(line, f"claim {j}: 'scores' must be a list of numbers")
            label = c.get("label")
            if label is not None and (label not in (0, 1) or isinstance(label, bool)):
                raise CorpusError(line, f"claim {j}: label must be 0, 1 or null")
            oracle = c.get("oracle")
            claims.append(Claim(j, tuple(scores), label, None if oracle is None else float(oracle)))
        return Document(
            rec["id"],
            rec["group"],
            tuple(claims),
            prompt_len=rec.get("prompt_len"),
            response_len=rec.get("response_len"),
        )
    except CorpusError:
        raise
    except ValidationError as e:
        raise CorpusError(line, str(e)) from None


def iter_corpus(path) -> Iterator[Document]:
    """Stream documents from a JSONL file; blank lines are skipped."""
    m = None
    with open(path, encoding="utf-8") as fh:
        for line_no, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                rec = json.loads(text)
            except json.JSONDecodeError as e:
                raise CorpusError(line_no, f"malformed JSON: {e.msg}") from None
            doc = _document_from_record(rec, line_no)
            if m is None:
                m = doc.n_scorers
            elif doc.n_scorers != m:
                raise CorpusError(line_no, f"inconsistent M across claims (expected {m}, got {doc.n_scorers})")
            yield doc


def parse_corpus(path) -> list[Document]:
    docs = list(iter_corpus(path))
    if not docs:
        raise ValidationError(f"{path}: empty corpus")
    return docs


def document_record(doc: Document) -> dict:
    rec: dict = {"id": doc.id, "group": doc.group}
    if doc.prompt_len is not None:
        rec["prompt_len"] = doc.prompt_len
    if doc.response_len is not None:
        rec["response_len"] = doc.response_len
    claims = []
    for c in doc.claims:
        cr: dict = {"label": c.label, "scores": list(c.scores)}
        if c.oracle_score is not None:
            cr["oracle"] = c.oracle_score
        claims.append(cr)
    rec["claims"] = claims
    return rec


def write_jsonl(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def write_corpus(docs: Iterable[Document], path) -> None:
    write_jsonl((document_record(d) for d in docs), path)


def model_to_dict(model: CalibrationModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "alpha": model.alpha,
        "mode": model.mode,
        "convention": {
            "variant": model.convention.variant,
            "lam": model.convention.lam,
            "epsilon": model.convention.epsilon,
        },
        "n_scorers": model.n_scorers,
        "seed": model.seed,
        "delta": model.delta,
        "thresholds": dict(sorted(model.thresholds.items())),
        "weights": {g: list(w) for g, w in sorted(model.weights.items())},
        "marginal_threshold": model.marginal_threshold,
        "marginal_weights": list(model.marginal_weights),
        "calibration_counts": dict(sorted(model.calibration_counts.items())),
        "degenerate_groups": list(model.degenerate_groups),
    }


def model_from_dict(d: dict) -> CalibrationModel:
    if d.get("format") != MODEL_FORMAT:
        raise ValidationError(f"unsupported model format {d.get('format')!r}")
    try:
        conv = d["convention"]
        return CalibrationModel(
            alpha=d["alpha"],
            convention=ConformityConvention(conv["variant"], lam=conv.get("lam"), epsilon=conv["epsilon"]),
            mode=d["mode"],
            n_scorers=d["n_scorers"],
            weights={g: tuple(w) for g, w in d["weights"].items()},
            thresholds=d["thresholds"],
            marginal_weights=tuple(d["marginal_weights"]),
            marginal_threshold=d["marginal_threshold"],
            calibration_counts=d["calibration_counts"],
            seed=d.get("seed", 0),
            delta=d.get("delta"),
            degenerate_groups=tuple(d.get("degenerate_groups", ())),
        )
    except KeyError as e:
        raise ValidationError(f"model file is missing field {e.args[0]!r}") from None


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def save_model(model: CalibrationModel, path) -> None:
    dump_json(model_to_dict(model), path)


def load_model(path) -> CalibrationModel:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: malformed model JSON: {e.msg}") from None
    return model_from_dict(d)


def document_draw(seed: int, doc_id: str, salt: str = "filter", occurrence: int = 0) -> float:
    """Unif[0, 1) draw keyed by (seed, salt, document id, occurrence)."""
    h = hashlib.sha256(f"{seed}\x1f{salt}\x1f{doc_id}\x1f{occurrence}".encode()).digest()
    return (int.from_bytes(h[:8], "big") >> 11) / float(1 << 53)


def corpus_draws(seed: int, docs: Sequence[Document], salt: str) -> list[float]:
    """One draw per document; repeated ids get distinct draws by occurrence."""
    seen: dict[str, int] = {}
    out = []
    for d in docs:
        k = seen.get(d.id, 0)
        seen[d.id] = k + 1
        out.append(document_draw(seed, d.id, salt, k))
    return out
