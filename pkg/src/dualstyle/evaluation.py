"""Automatic evaluation: multi-reference corpus BLEU, ACC, and overall scores.

``corpus_bleu`` reproduces the classic tokenized corpus-level BLEU-4: clipped
n-gram counts against the maximum per-reference count, brevity penalty from
the closest reference length (ties broken toward the shorter reference), and
a hard zero when any n-gram order has no match corpus-wide.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Sentence, StyleLabel, load_references, tokenize
from .errors import LengthMismatchError, MissingReferenceError

MAX_ORDER = 4


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(cand_len: int, ref_lens) -> int:
    best = None
    for length in ref_lens:
        if best is None:
            best = length
            continue
        diff, best_diff = abs(length - cand_len), abs(best - cand_len)
        if diff < best_diff or (diff == best_diff and length < best):
            best = length
    return best


def corpus_bleu(candidates, references) -> float:
    """Corpus-level BLEU-4 in [0, 100] over token sequences.

    ``candidates`` is a list of token sequences; ``references`` a parallel
    list of reference sets (each a list of token sequences).
    """
    if len(candidates) != len(references):
        raise LengthMismatchError(
            f"{len(candidates)} candidates vs {len(references)} reference sets"
        )
    if not candidates:
        raise LengthMismatchError("empty evaluation set")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    cand_length = 0
    ref_length = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise MissingReferenceError("a candidate has no references")
        cand = list(cand)
        refs = [list(r) for r in refs]
        cand_length += len(cand)
        ref_length += _closest_ref_length(len(cand), [len(r) for r in refs])
        for n in range(1, MAX_ORDER + 1):
            counts = _ngram_counts(cand, n)
            if not counts:
                continue
            max_ref = Counter()
            for ref in refs:
                for gram, cnt in _ngram_counts(ref, n).items():
                    if cnt > max_ref[gram]:
                        max_ref[gram] = cnt
            totals[n - 1] += sum(counts.values())
            matches[n - 1] += sum(min(cnt, max_ref[gram]) for gram, cnt in counts.items())
    if cand_length == 0 or any(m == 0 for m in matches) or any(t == 0 for t in totals):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / MAX_ORDER
    bp = 1.0 if cand_length > ref_length else math.exp(1.0 - ref_length / cand_length)
    return 100.0 * bp * math.exp(log_precision)


def sentence_bleu_smoothed(candidate, references) -> float:
    """Sentence-level BLEU-4 in [0, 100] with add-1 smoothing on orders >= 2.

    This is the reward-side matcher; reported metrics always use the
    unsmoothed corpus-level score above.
    """
    cand = list(candidate)
    refs = [list(r) for r in references]
    if not refs:
        raise MissingReferenceError("sentence BLEU needs at least one reference")
    log_precision = 0.0
    for n in range(1, MAX_ORDER + 1):
        counts = _ngram_counts(cand, n)
        total = sum(counts.values())
        max_ref = Counter()
        for ref in refs:
            for gram, cnt in _ngram_counts(ref, n).items():
                if cnt > max_ref[gram]:
                    max_ref[gram] = cnt
        match = sum(min(cnt, max_ref[gram]) for gram, cnt in counts.items())
        if n >= 2:
            match += 1
            total += 1
        if total == 0 or match == 0:
            return 0.0
        log_precision += math.log(match / total) / MAX_ORDER
    ref_len = _closest_ref_length(len(cand), [len(r) for r in refs])
    bp = 1.0 if len(cand) > ref_len else math.exp(1.0 - ref_len / max(len(cand), 1))
    return 100.0 * bp * math.exp(log_precision)


def g2h2(acc: float, bleu: float) -> tuple[float, float]:
    """Geometric and harmonic means of two percentages."""
    g2 = math.sqrt(acc * bleu)
    h2 = 0.0 if acc + bleu == 0 else 2.0 * acc * bleu / (acc + bleu)
    return g2, h2


@dataclass
class EvalReport:
    acc: float
    bleu: float
    g2: float
    h2: float
    n_sentences: int
    config_hash: str
    records: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "acc": self.acc,
            "bleu": self.bleu,
            "g2": self.g2,
            "h2": self.h2,
            "n_sentences": self.n_sentences,
            "config_hash": self.config_hash,
        }


def evaluate_sentences(outputs: list[Sentence], references: list[list[Sentence]],
                       clf, target: StyleLabel, inputs: list[Sentence] | None = None,
                       ) -> EvalReport:
    """Score already-loaded outputs against reference sets."""
    if len(outputs) != len(references):
        raise LengthMismatchError(
            f"{len(outputs)} outputs vs {len(references)} reference sets"
        )
    if any(not r for r in references):
        raise MissingReferenceError("every output needs at least one reference")
    scored = [clf.vocab.to_ids(o) if o.ids is None else o for o in outputs]
    probs = clf.classify_prob_batch(scored)
    # exact 0.5/0.5 ties resolve to class 0, matching TextClassifier.predict
    preds = (probs[:, 1] > probs[:, 0]).astype(int)
    acc = 100.0 * float((preds == target.index).mean())
    bleu = corpus_bleu([o.surface for o in outputs],
                       [[r.surface for r in refs] for refs in references])
    g2, h2 = g2h2(acc, bleu)
    config_hash = hashlib.sha256(json.dumps({
        "vocab": clf.vocab.content_hash(),
        "target": target.name,
    }, sort_keys=True).encode()).hexdigest()[:16]
    records = []
    for i, (out, refs) in enumerate(zip(outputs, references)):
        best_ref = max(
            sentence_bleu_smoothed(out.surface, [r.surface]) for r in refs
        )
        records.append({
            "input": inputs[i].text() if inputs else "",
            "output": out.text(),
            "p_target_style": float(probs[i, target.index]),
            "best_ref_bleu": best_ref,
        })
    return EvalReport(acc=acc, bleu=bleu, g2=g2, h2=h2, n_sentences=len(outputs),
                      config_hash=config_hash, records=records)


def evaluate(outputs_path, reference_paths, clf, target: StyleLabel,
             report_dir=None, inputs_path=None) -> EvalReport:
    """Score a file of transferred sentences against line-aligned references."""
    out_lines = Path(outputs_path).read_text(encoding="utf-8").splitlines()
    outputs = [tokenize(ln) for ln in out_lines]
    if not reference_paths:
        raise MissingReferenceError("no reference files given")
    columns = []
    for path in reference_paths:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) != len(outputs):
            raise LengthMismatchError(
                f"{path} has {len(lines)} lines, outputs have {len(outputs)}"
            )
        columns.append([tokenize(ln) for ln in lines])
    references = [[col[i] for col in columns] for i in range(len(outputs))]
    inputs = None
    if inputs_path is not None:
        in_lines = Path(inputs_path).read_text(encoding="utf-8").splitlines()
        if len(in_lines) != len(outputs):
            raise LengthMismatchError("inputs file is not line-aligned with outputs")
        inputs = [tokenize(ln) for ln in in_lines]
    report = evaluate_sentences(outputs, references, clf, target, inputs)
    if report_dir is not None:
        write_report(report, report_dir)
    return report


def write_report(report: EvalReport, report_dir) -> None:
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report.summary(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    with open(out / "sentences.tsv", "w", encoding="utf-8") as fh:
        fh.write("input\toutput\tp_target_style\tbest_ref_bleu\n")
        for rec in report.records:
            fh.write(f"{rec['input']}\t{rec['output']}\t"
                     f"{rec['p_target_style']!r}\t{rec['best_ref_bleu']!r}\n")


def load_reference_sets(data_dir, style: str, split: str) -> list[list[Sentence]]:
    refs = load_references(data_dir, style, split)
    if not refs:
        raise MissingReferenceError(f"no reference files for {style}.{split}")
    return refs


def emit_curves(history: list[dict], path) -> str:
    """Write the per-epoch training history as a plot-ready CSV."""
    columns = ["epoch", "iteration", "mean_r_style", "mean_r_content", "mean_r_total",
               "dev_acc", "dev_bleu", "dev_score", "dev_gold_bleu", "dev_gold_h2"]
    lines = [",".join(columns)]
    for row in history:
        lines.append(",".join(_fmt(row.get(c)) for c in columns))
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float):
        return repr(value)
    return str(value)
