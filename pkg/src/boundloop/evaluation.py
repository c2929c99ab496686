"""Segmentation metrics and report tables.

Scores are precision/recall/F1 pooled over all utterances of a corpus.
A hypothesis boundary matches a reference boundary when they are at most
``tolerance`` seconds apart; a token matches when both of its boundaries
match. Matching is one-to-one and greedy in time order, which is optimal
for sorted sequences with interval tolerances.
"""

from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from .corpus_io import vad_spans

DEFAULT_TOLERANCE = 0.03
# absorbs float noise on millisecond-precision times
_EPS = 1e-9


def f1_from_counts(n_match, n_hyp, n_ref):
    p = n_match / n_hyp if n_hyp else 0.0
    r = n_match / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def match_boundaries(hyp, ref, tolerance):
    """Number of one-to-one matches between two sorted time arrays."""
    i = j = n = 0
    tol = tolerance + _EPS
    while i < len(hyp) and j < len(ref):
        diff = hyp[i] - ref[j]
        if abs(diff) <= tol:
            n += 1
            i += 1
            j += 1
        elif diff < 0:
            i += 1
        else:
            j += 1
    return n


def match_tokens(hyp, ref, tolerance):
    """Number of one-to-one matches between two time-ordered token lists.

    Tokens are ``(start, end)`` pairs; both lists must be sorted and
    non-overlapping.
    """
    tol = tolerance + _EPS
    j = n = 0
    for a, b in hyp:
        while j < len(ref) and (ref[j][0] < a - tol or ref[j][1] < b - tol):
            j += 1
        if j == len(ref):
            break
        g1, g2 = ref[j]
        if abs(g1 - a) <= tol and abs(g2 - b) <= tol:
            n += 1
            j += 1
    return n


def tokens_of(boundaries):
    b = np.asarray(boundaries, dtype=np.float64)
    return list(zip(b[:-1], b[1:]))


def boundary_counts(hyp, ref, tolerance):
    return np.array([match_boundaries(hyp, ref, tolerance), len(hyp), len(ref)], dtype=float)


def token_counts(hyp, ref, tolerance):
    """Counts for hypothesis boundaries against reference boundaries or words."""
    ref_tokens = ref if _is_word_list(ref) else tokens_of(ref)
    ref_tokens = [(w[-2], w[-1]) for w in ref_tokens]
    hyp_tokens = tokens_of(hyp)
    return np.array([match_tokens(hyp_tokens, ref_tokens, tolerance),
                     len(hyp_tokens), len(ref_tokens)], dtype=float)


def _is_word_list(ref):
    return isinstance(ref, list) and (not ref or isinstance(ref[0], tuple))


def _check_utts(hyp, gold):
    if set(hyp) != set(gold):
        missing = sorted(set(gold) ^ set(hyp))
        raise ValueError(f"hypothesis and reference cover different utterances, e.g. {missing[:3]}")


def token_f1(hyp_seg, gold_alignment, tolerance=DEFAULT_TOLERANCE):
    """Token precision, recall and F1 of a segmentation against gold words."""
    _check_utts(hyp_seg, gold_alignment)
    totals = np.zeros(3)
    for utt in sorted(hyp_seg):
        totals += token_counts(hyp_seg[utt], list(gold_alignment[utt]), tolerance)
    return f1_from_counts(*totals)


def boundary_f1(hyp_seg, gold_seg, tolerance=DEFAULT_TOLERANCE):
    """Boundary precision, recall and F1 (VAD edges included on both sides)."""
    _check_utts(hyp_seg, gold_seg)
    totals = np.zeros(3)
    for utt in sorted(hyp_seg):
        totals += boundary_counts(hyp_seg[utt], gold_seg[utt], tolerance)
    return f1_from_counts(*totals)


def tokens_per_second(seg, vads):
    """Token count over total VAD duration (both pooled over utterances)."""
    spans = vads if isinstance(vads, dict) else vad_spans(vads)
    duration = sum(spans[u][1] - spans[u][0] for u in seg)
    if duration <= 0:
        raise ValueError("total VAD duration is zero")
    return sum(len(seg[u]) - 1 for u in seg) / duration


def transcribe(token, words):
    """Gold words covered at least half by ``token``, as a space-joined string."""
    a, b = token
    covered = [w.label for w in words
               if min(b, w.end_s) - max(a, w.start_s) >= 0.5 * (w.end_s - w.start_s) - _EPS]
    return " ".join(covered) if covered else "∅"


def transcriptions(seg, gold_alignment):
    return [transcribe(tok, gold_alignment.get(u, []))
            for u in sorted(seg) for tok in tokens_of(seg[u])]


def tokens_per_type(seg, gold_alignment):
    """Number of tokens over number of distinct transcriptions."""
    names = transcriptions(seg, gold_alignment)
    return len(names) / len(set(names)) if names else 0.0


def evaluate(hyp_seg, gold_alignment, gold_seg, spans, tolerance=DEFAULT_TOLERANCE):
    """All metrics for one corpus; P/R/F1 are scaled to percentages."""
    tp, tr, tf = token_f1(hyp_seg, gold_alignment, tolerance)
    bp, br, bf = boundary_f1(hyp_seg, gold_seg, tolerance)
    return {
        "token_precision": 100 * tp, "token_recall": 100 * tr, "token_f1": 100 * tf,
        "boundary_precision": 100 * bp, "boundary_recall": 100 * br, "boundary_f1": 100 * bf,
        "tokens_per_second": tokens_per_second(hyp_seg, spans),
        "tokens_per_type": tokens_per_type(hyp_seg, gold_alignment),
    }


# ---------------------------------------------------------------------------
# reports

METRICS = ("token_precision", "token_recall", "token_f1",
           "boundary_precision", "boundary_recall", "boundary_f1",
           "tokens_per_second", "tokens_per_type")
_DECIMALS = {"tokens_per_second": 2, "tokens_per_type": 2}


def fmt(value, decimals=1):
    """Round half to even at ``decimals`` places from the shortest repr."""
    q = Decimal(1).scaleb(-decimals)
    return str(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_EVEN))


@dataclass
class EvalReport:
    records: dict                                  # corpus -> {metric: value}
    averages: dict = field(default_factory=dict)   # metric -> value
    baseline: dict | None = None                   # metric -> baseline average
    improvement: dict = field(default_factory=dict)  # metric -> percent

    def metrics(self):
        present = {m for r in self.records.values() for m in r}
        return [m for m in METRICS if m in present] + sorted(present - set(METRICS))

    def render(self):
        """Aligned plain-text table."""
        metrics = self.metrics()
        names = list(self.records) + ["average"]
        width = max(len(n) for n in names + ["corpus"])
        cols = [max(len(m), 7) for m in metrics]
        lines = ["  ".join(["corpus".ljust(width)] + [m.rjust(c) for m, c in zip(metrics, cols)])]
        rows = list(self.records.items()) + [("average", self.averages)]
        for name, rec in rows:
            cells = [fmt(rec[m], _DECIMALS.get(m, 1)) if m in rec else "-" for m in metrics]
            lines.append("  ".join([name.ljust(width)] + [c.rjust(w) for c, w in zip(cells, cols)]))
        for m, pct in self.improvement.items():
            lines.append(f"improvement {m}: {fmt(pct)}% "
                         f"({fmt(self.averages[m])} vs {fmt(self.baseline[m])})")
        return "\n".join(lines)

    def key_values(self):
        """``corpus metric value`` lines."""
        lines = []
        for name, rec in list(self.records.items()) + [("average", self.averages)]:
            for m in self.metrics():
                if m in rec:
                    lines.append(f"{name} {m} {fmt(rec[m], _DECIMALS.get(m, 1))}")
        for m, pct in self.improvement.items():
            lines.append(f"improvement {m} {fmt(pct)}%")
        return "\n".join(lines)


def average(records):
    metrics = {m for r in records.values() for m in r}
    return {m: float(np.mean([r[m] for r in records.values() if m in r])) for m in sorted(metrics)}


def make_report(records, baseline=None, improvement_metrics=("token_f1",)):
    """Average per-corpus metrics and compare against a baseline.

    ``baseline`` is either per-corpus records or already averaged values.
    Percent improvements use the averages rounded to the one decimal they
    are displayed with, so that the printed numbers are self-consistent.
    """
    if not records:
        raise ValueError("report needs at least one corpus")
    report = EvalReport(dict(records), average(records))
    if baseline is not None:
        if all(isinstance(v, dict) for v in baseline.values()):
            baseline = average(baseline)
        report.baseline = dict(baseline)
        for m in improvement_metrics:
            if m in report.averages and m in baseline:
                new = Decimal(fmt(report.averages[m]))
                old = Decimal(fmt(baseline[m]))
                if old != 0:
                    report.improvement[m] = float(100 * (new - old) / old)
    return report


def read_key_values(path):
    """Parse ``corpus metric value`` lines back into records."""
    records = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'corpus metric value'")
            corpus, metric, value = parts
            if corpus in ("average", "improvement"):
                continue
            records.setdefault(corpus, {})[metric] = float(value.rstrip("%"))
    return records
