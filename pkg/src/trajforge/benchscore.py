"""Deterministic benchmark scoring: VQA answers, caption alignment counts, human correlation."""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import _jsonio
from .errors import ScoringError
from .mixsample import splitmix64
from .model import DIMENSIONS

logger = logging.getLogger(__name__)

ANSWER_TYPES = ("multiple_choice", "yes_no", "number")
LETTERS = "ABCDEFGH"

AXES = {
    "grounding": ("active_actor", "target_object", "initial_config"),
    "action": ("action_sequence", "contact_approach", "trajectory_orientation", "body_motion"),
    "state": ("object_interaction", "final_config", "failure_recovery"),
}

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def fnv1a64(text):
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * FNV_PRIME) & _MASK
    return h


def _shuffle_stream(seed):
    """SplitMix64 generator: state advances by the golden gamma, output is the finalizer."""
    state = seed
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _MASK
        yield int(splitmix64(np.uint64(state)))


def shuffle_permutation(question_id, n):
    """Fisher-Yates permutation of ``range(n)`` seeded by the FNV-1a hash of ``question_id``.

    ``perm[k]`` is the original index shown at position ``k``.
    """
    perm = list(range(n))
    rng = _shuffle_stream(fnv1a64(question_id))
    for i in range(n - 1, 0, -1):
        j = next(rng) % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def shuffle_options(question_id, options):
    """Shuffle answer options; returns ``(shuffled, remap)`` with ``remap[old_letter] = new_letter``."""
    if not 2 <= len(options) <= len(LETTERS):
        raise ScoringError(f"question {question_id!r}: need 2-8 options, got {len(options)}")
    perm = shuffle_permutation(question_id, len(options))
    shuffled = [options[p] for p in perm]
    remap = {LETTERS[old]: LETTERS[new] for new, old in enumerate(perm)}
    return shuffled, remap


# -- answers --------------------------------------------------------------------------------

_NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")
_LETTER = re.compile(r"(?<![A-Za-z])([A-Ha-h])(?![A-Za-z])")


def _canonical_number(x):
    if x == int(x) and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def normalize_answer(raw, answer_type):
    """Canonical answer string, or ``None`` when the text cannot be parsed.

    >>> normalize_answer(" Yes.", "yes_no")
    'yes'
    >>> normalize_answer("(B) the blue cup", "multiple_choice")
    'B'
    """
    if raw is None:
        return None
    text = str(raw).strip()
    if answer_type == "yes_no":
        text = text.lower().rstrip(".!?,;: ").strip()
        return text if text in ("yes", "no") else None
    if answer_type == "number":
        m = _NUMBER.search(text)
        if m is None:
            return None
        value = float(m.group(0))
        return _canonical_number(value) if math.isfinite(value) else None
    if answer_type == "multiple_choice":
        m = _LETTER.search(text)
        return m.group(1).upper() if m else None
    raise ScoringError(f"unknown answer type {answer_type!r}")


@dataclass(frozen=True)
class VQAQuestion:
    question_id: str
    answer_type: str
    answer_key: str
    dimension: str
    options: tuple | None = None

    def __post_init__(self):
        qid = self.question_id
        if self.answer_type not in ANSWER_TYPES:
            raise ScoringError(f"question {qid!r}: unknown answer_type {self.answer_type!r}")
        if self.dimension not in DIMENSIONS:
            raise ScoringError(f"question {qid!r}: unknown dimension {self.dimension!r}")
        if self.options is not None:
            object.__setattr__(self, "options", tuple(self.options))
        if self.answer_type == "multiple_choice":
            if self.options is None or not 2 <= len(self.options) <= len(LETTERS):
                raise ScoringError(f"question {qid!r}: multiple_choice needs 2-8 options")
            key = normalize_answer(self.answer_key, "multiple_choice")
            if key is None or LETTERS.index(key) >= len(self.options):
                raise ScoringError(f"question {qid!r}: key {self.answer_key!r} is not a valid option letter")
        elif normalize_answer(self.answer_key, self.answer_type) is None:
            raise ScoringError(f"question {qid!r}: key {self.answer_key!r} does not parse as {self.answer_type}")

    @property
    def canonical_key(self):
        return normalize_answer(self.answer_key, self.answer_type)

    def shuffled(self):
        """Same question with options shuffled by id and the key remapped."""
        if self.answer_type != "multiple_choice":
            return self
        opts, remap = shuffle_options(self.question_id, list(self.options))
        return replace(self, options=tuple(opts), answer_key=remap[self.canonical_key])

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                question_id=d["question_id"],
                answer_type=d["answer_type"],
                answer_key=str(d["answer"]),
                dimension=d["dimension"],
                options=d.get("options"),
            )
        except KeyError as exc:
            raise ScoringError(f"question missing field {exc}") from None


def load_questions(path):
    data = _jsonio.load_file(path)
    if isinstance(data, dict):
        data = data.get("questions", [])
    return [VQAQuestion.from_dict(d) for d in data]


def load_predictions(path):
    data = _jsonio.load_file(path)
    if not isinstance(data, dict) or not isinstance(data.get("answers"), dict):
        raise ScoringError(f"{path}: expected {{\"answers\": {{question_id: answer}}}}")
    return {str(k): v for k, v in data["answers"].items()}


def _mean(xs):
    return sum(xs) / len(xs) if xs else None


def score_vqa(predictions, questions):
    """Score predictions against keys.

    Dimension accuracy is the fraction of its questions answered correctly;
    axis accuracy and the overall score are unweighted means over dimensions
    that have at least one question. Missing answers count as incorrect;
    unparseable ones are incorrect and also counted as invalid.
    """
    known = {q.question_id for q in questions}
    if len(known) != len(questions):
        raise ScoringError("duplicate question ids")
    unknown = sorted(set(predictions) - known)
    if unknown:
        logger.warning("ignoring %d predictions for unknown question ids (e.g. %s)", len(unknown), unknown[0])

    per_question = {}
    invalid = missing = 0
    by_dim = {d: [] for d in DIMENSIONS}
    for q in sorted(questions, key=lambda q: q.question_id):
        if q.question_id not in predictions:
            missing += 1
            ok = False
        else:
            ans = normalize_answer(predictions[q.question_id], q.answer_type)
            if ans is None:
                invalid += 1
            ok = ans is not None and ans == q.canonical_key
        per_question[q.question_id] = ok
        by_dim[q.dimension].append(ok)

    dims = {d: (sum(v) / len(v) if v else None) for d, v in by_dim.items()}
    axes = {a: _mean([dims[d] for d in ds if dims[d] is not None]) for a, ds in AXES.items()}
    return {
        "overall": _mean([v for v in dims.values() if v is not None]),
        "question_accuracy": _mean([float(v) for v in per_question.values()]),
        "dimensions": dims,
        "axes": axes,
        "counts": {
            "questions": len(questions),
            "correct": sum(per_question.values()),
            "missing": missing,
            "invalid": invalid,
            "per_dimension": {d: len(v) for d, v in by_dim.items()},
        },
        "per_question": per_question,
    }


def vqa_report(result):
    """Table-style report: overall, three axes and ten dimensions as percentages at 1 decimal."""
    pct = lambda x: None if x is None else round(100.0 * x, 1)  # noqa: E731
    return {
        "overall": pct(result["overall"]),
        "axes": {a: pct(v) for a, v in result["axes"].items()},
        "dimensions": {d: pct(v) for d, v in result["dimensions"].items()},
        "counts": result["counts"],
        "per_question": result["per_question"],
    }


# -- captions ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class AlignmentCounts:
    sample_id: str
    M: int
    P: int
    C: int
    O: int  # noqa: E741
    H: int
    S: int
    total_gt_facts: int | None = None

    def __post_init__(self):
        for name in ("M", "P", "C", "O", "H", "S"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 0:
                raise ScoringError(f"sample {self.sample_id!r}: {name} must be a non-negative integer, got {v!r}")
        if self.H > self.S:
            raise ScoringError(f"sample {self.sample_id!r}: H={self.H} exceeds S={self.S}")
        if self.total_gt_facts is not None and self.G != self.total_gt_facts:
            raise ScoringError(
                f"sample {self.sample_id!r}: match+partial+contradiction+omission = {self.G} "
                f"!= total_gt_facts {self.total_gt_facts}"
            )

    @property
    def A(self):
        return self.M + self.P + self.C

    @property
    def G(self):
        return self.M + self.P + self.C + self.O

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                sample_id=str(d["sample_id"]),
                M=d["M"], P=d["P"], C=d["C"], O=d["O"], H=d["H"], S=d["S"],
                total_gt_facts=d.get("total_gt_facts"),
            )
        except KeyError as exc:
            raise ScoringError(f"alignment record missing field {exc}") from None


@dataclass(frozen=True)
class CaptionScores:
    consistency: float
    coverage: float
    anti_hallucination: float
    overall: float
    flags: tuple = field(default=(), compare=False)

    def to_dict(self):
        return {
            "consistency": self.consistency,
            "coverage": self.coverage,
            "anti_hallucination": self.anti_hallucination,
            "overall": self.overall,
        }


def _caption_from_sums(credit, A, G, H, S):
    flags = []
    if A == 0:
        consistency = 0.0
        flags.append("no-facts-addressed")
    else:
        consistency = credit / A
    if G == 0:
        coverage = 0.0
        flags.append("no-gt-facts")
    else:
        coverage = credit / G
    anti = 1.0 if S == 0 else 1.0 - H / S
    return CaptionScores(consistency, coverage, anti, (consistency + coverage + anti) / 3.0, tuple(flags))


def caption_scores(c):
    """Consistency ``(M + P/2) / A``, coverage ``(M + P/2) / G``, anti-hallucination ``1 - H/S``, and their mean."""
    return _caption_from_sums(c.M + 0.5 * c.P, c.A, c.G, c.H, c.S)


def aggregate_captions(per_sample, micro=False):
    """Corpus caption scores.

    Default is the macro average of per-sample :class:`CaptionScores`. With
    ``micro=True`` ``per_sample`` must be :class:`AlignmentCounts`; their
    counts are pooled before applying the formulas.
    """
    items = list(per_sample)
    if not items:
        raise ScoringError("no caption samples to aggregate")
    if micro:
        if not all(isinstance(c, AlignmentCounts) for c in items):
            raise ScoringError("micro averaging needs AlignmentCounts")
        tot = lambda name: sum(getattr(c, name) for c in items)  # noqa: E731
        return _caption_from_sums(
            tot("M") + 0.5 * tot("P"), tot("M") + tot("P") + tot("C"),
            tot("M") + tot("P") + tot("C") + tot("O"), tot("H"), tot("S"),
        )
    if any(isinstance(c, AlignmentCounts) for c in items):
        items = [caption_scores(c) for c in items]
    n = len(items)
    cons = sum(s.consistency for s in items) / n
    cov = sum(s.coverage for s in items) / n
    anti = sum(s.anti_hallucination for s in items) / n
    return CaptionScores(cons, cov, anti, sum(s.overall for s in items) / n)


def load_alignments(path):
    return [AlignmentCounts.from_dict(d) for d in _jsonio.load_jsonl(path)]


def caption_report(counts, micro=False):
    """Per-sample scores plus the corpus average in percent (1 decimal)."""
    ordered = sorted(counts, key=lambda c: c.sample_id)
    scores = [caption_scores(c) for c in ordered]
    corpus = aggregate_captions(ordered if micro else scores, micro=micro)
    return {
        "averaging": "micro" if micro else "macro",
        "corpus": {k: round(100.0 * v, 1) for k, v in corpus.to_dict().items()},
        "samples": {
            c.sample_id: {**s.to_dict(), "flags": list(s.flags)} for c, s in zip(ordered, scores)
        },
    }


# -- correlation ------------------------------------------------------------------------------


def pearson(x, y):
    """Pearson correlation; ``None`` if either vector is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ScoringError("pearson needs two equal-length vectors")
    # exact check; a rounded mean leaves tiny nonzero deviations
    if x.size == 0 or np.all(x == x[0]) or np.all(y == y[0]):
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def average_ranks(x):
    """1-based ranks, ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y):
    return pearson(average_ranks(x), average_ranks(y))


def normalize_human_rank(r, worst=6):
    """Map a mean rank in ``[1, worst]`` to ``[0, 1]`` with rank 1 -> 1.0."""
    return (worst - r) / (worst - 1)


def rank_correlation(model_scores, human_ranks, worst_rank=6):
    """Pearson and Spearman correlation between model scores and normalized human ranks."""
    if set(model_scores) != set(human_ranks):
        raise ScoringError("model score and human rank keys differ")
    if len(model_scores) < 3:
        raise ScoringError("need at least 3 models for a correlation")
    models = sorted(model_scores)
    x = [float(model_scores[m]) for m in models]
    y = [normalize_human_rank(float(human_ranks[m]), worst_rank) for m in models]
    return pearson(x, y), spearman(x, y)
