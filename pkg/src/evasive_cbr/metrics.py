"""Maneuver accuracy and reference-based text metrics (BLEU4, METEOR, ROUGE-L, CIDEr).

All text scores are sentence level on a 0-100 scale, computed over one fixed
tokenization: lowercase, words as ``\\w+`` runs, every other non-space
character its own token.

METEOR here keeps only the exact and stem matching stages (Porter stemmer);
there is no synonym or paraphrase module.
"""

from __future__ import annotations

import math
import re
import statistics
from collections import Counter
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import snowballstemmer

from .errors import AlignmentError, DataError, LengthMismatch
from .taxonomy import TEXT_VALUE_FIELDS, AnnotatedEvent, EvasiveManeuver, RiskType, ScdsEvent

_TOKEN = re.compile(r"\w+|[^\w\s]", re.UNICODE)

METRIC_NAMES = ("bleu4", "meteor", "rouge_l", "cider")
SMOOTHING_METHODS = ("add1", "none", "epsilon")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


# -- accuracy --------------------------------------------------------------

def micro_accuracy(pred: Sequence[EvasiveManeuver | None], gold: Sequence[EvasiveManeuver]) -> float:
    """Fraction of exact maneuver matches; ``None`` (a failed decision) never matches."""
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gold)} gold labels")
    if not gold:
        return 0.0
    return sum(p is not None and p == g for p, g in zip(pred, gold)) / len(gold)


# -- BLEU ------------------------------------------------------------------

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: str, reference: str, smoothing: str = "add1") -> float:
    """Sentence BLEU with uniform weights over 1..4-grams.

    ``add1`` adds one to matched and total counts for n >= 2. An order at
    which the candidate has no n-grams contributes a precision of 1.
    """
    if smoothing not in SMOOTHING_METHODS:
        raise DataError(f"unknown BLEU smoothing {smoothing!r}")
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return 0.0
    log_p = 0.0
    for n in range(1, 5):
        c_counts = _ngrams(cand, n)
        total = sum(c_counts.values())
        if total == 0:
            continue
        r_counts = _ngrams(ref, n)
        matched = sum(min(c, r_counts[g]) for g, c in c_counts.items())
        if smoothing == "add1" and n >= 2:
            matched, total = matched + 1, total + 1
        elif smoothing == "epsilon" and matched == 0:
            matched = 0.1
        if matched == 0:
            return 0.0
        log_p += math.log(matched / total)
    c, r = len(cand), len(ref)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return min(100.0, 100.0 * bp * math.exp(log_p / 4))


# -- ROUGE-L ---------------------------------------------------------------

def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str, beta: float = 1.2) -> float:
    cand, ref = tokenize(candidate), tokenize(reference)
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 100.0 * ((1 + beta ** 2) * r * p) / (r + beta ** 2 * p)


# -- METEOR ----------------------------------------------------------------

_stemmer = snowballstemmer.stemmer("porter")


@lru_cache(maxsize=65536)
def stem(token: str) -> str:
    return _stemmer.stemWord(token)


def count_chunks(pairs: Sequence[tuple[int, int]]) -> int:
    """Runs of matches contiguous in both candidate and reference."""
    chunks = 0
    prev = None
    for i, j in sorted(pairs):
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def _greedy_alignment(c, r, sc, sr) -> list[tuple[int, int]]:
    """Longest-run-first alignment: exact stage, then stem stage on leftovers."""
    free_c = [True] * len(c)
    free_r = [True] * len(r)
    pairs: list[tuple[int, int]] = []
    for a, b in ((c, r), (sc, sr)):
        while True:
            best_len, best_end = 0, None
            prev = [0] * (len(r) + 1)
            for i in range(len(c)):
                cur = [0] * (len(r) + 1)
                if free_c[i]:
                    ai = a[i]
                    for j in range(len(r)):
                        if free_r[j] and ai == b[j]:
                            v = prev[j] + 1
                            cur[j + 1] = v
                            if v > best_len:
                                best_len, best_end = v, (i, j)
                prev = cur
            if not best_len:
                break
            i, j = best_end
            for d in range(best_len):
                free_c[i - d] = free_r[j - d] = False
                pairs.append((i - d, j - d))
    return sorted(pairs)


ALIGN_BUDGET = 5000


def align(cand: Sequence[str], ref: Sequence[str], budget: int = ALIGN_BUDGET) -> list[tuple[int, int]]:
    """Two-stage unigram alignment with the fewest chunks.

    Exact matches are maximized first; stem matches are then maximized over
    the remaining words. Among all alignments meeting both counts, a
    branch-and-bound search seeded with the greedy solution looks for fewer
    chunks. ``budget`` caps visited nodes; past it the best found is kept.
    """
    return align_search(cand, ref, budget)[0]


def align_search(cand: Sequence[str], ref: Sequence[str],
                 budget: int = ALIGN_BUDGET) -> tuple[list[tuple[int, int]], bool]:
    """Like :func:`align`, also reporting whether the search was exhaustive."""
    c, r = list(cand), list(ref)
    sc, sr = [stem(t) for t in c], [stem(t) for t in r]
    best_pairs = _greedy_alignment(c, r, sc, sr)
    best = [count_chunks(best_pairs), best_pairs]
    if best[0] <= 1:
        return best_pairs, True

    cc, cr = Counter(c), Counter(r)
    exact_need = {t: min(cc[t], cr[t]) for t in cc}
    stem_of = {t: stem(t) for t in set(c) | set(r)}
    left_c: Counter = Counter()
    left_r: Counter = Counter()
    for t, k in cc.items():
        left_c[stem_of[t]] += k - exact_need[t]
    for t, k in cr.items():
        left_r[stem_of[t]] += k - min(cc[t], k)
    stem_need = {s: min(left_c[s], left_r[s]) for s in left_c}
    refs_by_type: dict[str, list[int]] = {}
    refs_by_stem: dict[str, list[int]] = {}
    for j, t in enumerate(r):
        refs_by_type.setdefault(t, []).append(j)
        refs_by_stem.setdefault(sr[j], []).append(j)

    cand_left = Counter(c)          # unvisited candidate positions per type
    cand_left_stem = Counter(sc)    # ... per stem class
    free_ref = Counter(r)           # unpaired reference positions per type
    exact_need_stem = Counter()
    for t, k in exact_need.items():
        exact_need_stem[stem_of[t]] += k
    used_r = [False] * len(r)
    pairs: list[tuple[int, int]] = []
    nodes = 0

    def dfs(i: int, last: tuple[int, int] | None, chunks: int) -> None:
        nonlocal nodes
        nodes += 1
        if nodes > budget or chunks >= best[0]:
            return
        if i == len(c):
            if not any(exact_need.values()) and not any(stem_need.values()):
                best[0], best[1] = chunks, sorted(pairs)
            return
        t, s = c[i], sc[i]
        cand_left[t] -= 1
        cand_left_stem[s] -= 1
        options = []
        if exact_need.get(t, 0) > 0:
            options += [(j, "exact") for j in refs_by_type[t] if not used_r[j]]
        if stem_need.get(s, 0) > 0 and cand_left[t] >= exact_need.get(t, 0):
            options += [(j, "stem") for j in refs_by_stem.get(s, ()) if not used_r[j]
                        and r[j] != t and free_ref[r[j]] - 1 >= exact_need.get(r[j], 0)]
        if last is not None:
            options.sort(key=lambda o: o[0] != last[1] + 1 or i != last[0] + 1)
        for j, kind in options:
            ext = last is not None and last == (i - 1, j - 1)
            used_r[j] = True
            free_ref[r[j]] -= 1
            if kind == "exact":
                exact_need[t] -= 1
                exact_need_stem[s] -= 1
            else:
                stem_need[s] -= 1
            pairs.append((i, j))
            dfs(i + 1, (i, j), chunks + (0 if ext else 1))
            pairs.pop()
            if kind == "exact":
                exact_need[t] += 1
                exact_need_stem[s] += 1
            else:
                stem_need[s] += 1
            free_ref[r[j]] += 1
            used_r[j] = False
        # Leave word i unaligned only if the remaining words can still meet every quota.
        if cand_left[t] >= exact_need.get(t, 0) and \
                cand_left_stem[s] >= exact_need_stem[s] + stem_need.get(s, 0):
            dfs(i + 1, last, chunks)
        cand_left[t] += 1
        cand_left_stem[s] += 1

    dfs(0, None, 0)
    return best[1], nodes <= budget


def meteor(candidate: str, reference: str, alpha: float = 0.9, beta: float = 3.0,
           gamma: float = 0.5) -> float:
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return 0.0
    pairs = align(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    fmean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (count_chunks(pairs) / m) ** beta
    return 100.0 * fmean * (1 - penalty)


# -- CIDEr -----------------------------------------------------------------

def cider(candidates: Sequence[str], references: Sequence[str]) -> tuple[list[float], float]:
    """Plain CIDEr with one reference per candidate; returns (per-item, mean).

    IDF is log(N / df) over the reference corpus with df floored at 1. An
    n-gram order is averaged in only when the reference has a nonzero
    TF-IDF vector at that order, so a sentence too short for 4-grams can
    still reach 100 against itself.
    """
    if len(candidates) != len(references):
        raise LengthMismatch(f"{len(candidates)} candidates vs {len(references)} references")
    if not references:
        raise DataError("CIDEr needs at least one reference")
    n_docs = len(references)
    cand_tok = [tokenize(x) for x in candidates]
    ref_tok = [tokenize(x) for x in references]
    totals = [0.0] * n_docs
    counted = [0] * n_docs
    for n in range(1, 5):
        ref_grams = [_ngrams(t, n) for t in ref_tok]
        df: Counter = Counter()
        for g in ref_grams:
            df.update(g.keys())

        def weights(counts: Counter) -> dict:
            return {g: k * math.log(n_docs / max(1, df[g])) for g, k in counts.items()}

        for idx in range(n_docs):
            rv = weights(ref_grams[idx])
            rn = math.sqrt(sum(v * v for v in rv.values()))
            if rn == 0.0:
                continue
            counted[idx] += 1
            cv = weights(_ngrams(cand_tok[idx], n))
            cn = math.sqrt(sum(v * v for v in cv.values()))
            if cn == 0.0:
                continue
            dot = sum(v * rv.get(g, 0.0) for g, v in cv.items())
            totals[idx] += min(1.0, dot / (cn * rn))
    per_item = [100.0 * totals[i] / counted[i] if counted[i] else 0.0 for i in range(n_docs)]
    return per_item, sum(per_item) / n_docs


# -- aggregation -----------------------------------------------------------

def sample_variance(values: Sequence[float]) -> float:
    return statistics.variance(values) if len(values) > 1 else 0.0


@dataclass
class ScoredField:
    bleu4: float
    meteor: float
    rouge_l: float
    cider: float
    variance: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_scores(cls, scores: dict[str, list[float]]) -> ScoredField:
        means = {k: (statistics.fmean(v) if v else 0.0) for k, v in scores.items()}
        return cls(**means, variance={k: sample_variance(v) for k, v in scores.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricReport:
    event_context: ScoredField | None
    justification: ScoredField | None
    maneuver_micro_accuracy: float
    per_scenario_accuracy: dict[RiskType, float]
    per_scenario_count: dict[RiskType, int]
    n: int
    n_failed: int = 0
    bleu_smoothing: str = "add1"

    def to_dict(self) -> dict:
        return {
            "event_context": self.event_context.to_dict() if self.event_context else None,
            "justification": self.justification.to_dict() if self.justification else None,
            "maneuver_micro_accuracy": self.maneuver_micro_accuracy,
            "per_scenario_accuracy": {r.value: a for r, a in self.per_scenario_accuracy.items()},
            "per_scenario_count": {r.value: k for r, k in self.per_scenario_count.items()},
            "n": self.n,
            "n_failed": self.n_failed,
            "bleu_smoothing": self.bleu_smoothing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MetricReport:
        def sf(x):
            return ScoredField(**x) if x else None
        return cls(
            event_context=sf(d["event_context"]),
            justification=sf(d["justification"]),
            maneuver_micro_accuracy=d["maneuver_micro_accuracy"],
            per_scenario_accuracy={RiskType(k): v for k, v in d["per_scenario_accuracy"].items()},
            per_scenario_count={RiskType(k): v for k, v in d["per_scenario_count"].items()},
            n=d["n"],
            n_failed=d.get("n_failed", 0),
            bleu_smoothing=d.get("bleu_smoothing", "add1"),
        )


def score_texts(candidates: Sequence[str], references: Sequence[str],
                smoothing: str = "add1") -> ScoredField:
    per_cider, _ = cider(candidates, references)
    return ScoredField.from_scores({
        "bleu4": [bleu4(c, r, smoothing) for c, r in zip(candidates, references)],
        "meteor": [meteor(c, r) for c, r in zip(candidates, references)],
        "rouge_l": [rouge_l(c, r) for c, r in zip(candidates, references)],
        "cider": per_cider,
    })


def aggregate(records: Sequence, gold: Sequence[AnnotatedEvent | ScdsEvent], smoothing: str = "add1") -> MetricReport:
    """Score run records against gold events, aligned by event id.

    Failed records count as wrong maneuvers with empty texts. Text metrics
    are reported only when every aligned gold event carries case values.
    """
    gold = [AnnotatedEvent(g) if isinstance(g, ScdsEvent) else g for g in gold]
    by_id = {g.event_id: g for g in gold}
    aligned = []
    seen = set()
    for rec in records:
        g = by_id.get(rec.event_id)
        if g is None or rec.event_id in seen:
            raise AlignmentError(rec.event_id)
        seen.add(rec.event_id)
        aligned.append((rec, g))
    n = len(aligned)
    preds = [rec.decision.ego_car_evasive_maneuver if rec.decision else None for rec, _ in aligned]
    truth = [g.event.ground_truth_maneuver for _, g in aligned]

    correct: Counter = Counter()
    count: Counter = Counter()
    for p, (_, g) in zip(preds, aligned):
        rt = g.event.risk_type
        count[rt] += 1
        correct[rt] += p is not None and p == g.event.ground_truth_maneuver
    present = [r for r in RiskType if count[r]]
    per_acc = {r: correct[r] / count[r] for r in present}
    overall = micro_accuracy(preds, truth)

    fields = {}
    if n and all(g.values and all(g.values.get(k) for k in TEXT_VALUE_FIELDS) for _, g in aligned):
        for name, key in (("event_context", "event_context"),
                          ("justification", "ego_car_maneuver_justification")):
            cands = [getattr(rec.decision, key) if rec.decision else "" for rec, _ in aligned]
            refs = [g.values[key] for _, g in aligned]
            fields[name] = score_texts(cands, refs, smoothing)
    return MetricReport(
        event_context=fields.get("event_context"),
        justification=fields.get("justification"),
        maneuver_micro_accuracy=overall,
        per_scenario_accuracy=per_acc,
        per_scenario_count={r: count[r] for r in present},
        n=n,
        n_failed=sum(p is None for p in preds),
        bleu_smoothing=smoothing,
    )


def recompose_accuracy(report: MetricReport) -> float:
    """Overall accuracy rebuilt from the per-scenario rows.

    count * acc is an integer up to float rounding; rounding it back before
    summing makes the result bit-equal to the directly computed accuracy.
    """
    if not report.n:
        return 0.0
    hits = sum(round(report.per_scenario_count[r] * a) for r, a in report.per_scenario_accuracy.items())
    return hits / report.n
