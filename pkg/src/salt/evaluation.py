"""Zero-shot evaluation: per-language accuracy, generalized language pairs, seed statistics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import TaskExample
from .errors import DataError, InputError
from .trainer import accuracy


@dataclass
class EvaluationReport:
    per_language_accuracy: dict[str, float]
    source_language: str = "en"
    seeds: list[int] = field(default_factory=list)
    per_seed_matrix: list[list[float]] = field(default_factory=list)

    @property
    def languages(self) -> list[str]:
        return list(self.per_language_accuracy)

    @property
    def avg_excl_source(self) -> float:
        vals = [v for k, v in self.per_language_accuracy.items() if k != self.source_language]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def avg_incl_source(self) -> float:
        return float(np.mean(list(self.per_language_accuracy.values())))

    def to_dict(self) -> dict:
        return {
            "per_language_accuracy": self.per_language_accuracy,
            "avg_excl_source": self.avg_excl_source,
            "avg_incl_source": self.avg_incl_source,
            "source_language": self.source_language,
            "seeds": self.seeds,
            "per_seed_matrix": self.per_seed_matrix,
        }


@dataclass
class GeneralizedReport:
    languages: list[str]
    matrix: np.ndarray  # [premise language, hypothesis language]

    @property
    def average(self) -> float:
        return float(self.matrix.mean())

    def cell(self, premise_lang: str, hypothesis_lang: str) -> float:
        return float(self.matrix[self.languages.index(premise_lang), self.languages.index(hypothesis_lang)])

    def to_dict(self) -> dict:
        return {"languages": self.languages, "matrix": self.matrix.tolist(), "average": self.average}


def evaluate(model, tokenizer, test_sets: dict[str, list[TaskExample]], source_language: str = "en", batch_size: int = 256) -> EvaluationReport:
    acc = {}
    for lang, examples in test_sets.items():
        if not examples:
            raise InputError(f"test set for {lang!r} is empty")
        acc[lang] = accuracy(model, tokenizer, examples, batch_size)
    return EvaluationReport(acc, source_language)


def _check_aligned(test_sets: dict[str, list[TaskExample]]) -> list[int]:
    langs = list(test_sets)
    ref = test_sets[langs[0]]
    ref_index = [ex.index for ex in ref]
    if len(set(ref_index)) != len(ref_index):
        raise DataError(f"duplicate example indices in {langs[0]!r} test set")
    labels = {ex.index: ex.label for ex in ref}
    for lang in langs[1:]:
        idx = [ex.index for ex in test_sets[lang]]
        if sorted(idx) != sorted(ref_index):
            raise DataError(f"test sets {langs[0]!r} and {lang!r} are not aligned by example index")
        for ex in test_sets[lang]:
            if labels[ex.index] != ex.label:
                raise DataError(f"label disagreement at index {ex.index} between {langs[0]!r} and {lang!r}")
    return sorted(ref_index)


def cross_language_pairs(test_sets, premise_lang: str, hypothesis_lang: str) -> list[TaskExample]:
    prem = {ex.index: ex for ex in test_sets[premise_lang]}
    hyp = {ex.index: ex for ex in test_sets[hypothesis_lang]}
    # follow the premise language's file order so the diagonal is the plain test set
    return [
        TaskExample(p.sentence_a, hyp[i].sentence_b, p.label, f"{premise_lang}-{hypothesis_lang}", i)
        for i, p in prem.items()
    ]


def evaluate_generalized(model, tokenizer, test_sets: dict[str, list[TaskExample]], batch_size: int = 256) -> GeneralizedReport:
    """Premise from one language, hypothesis from another, for every ordered pair."""
    if not test_sets:
        raise InputError("no test sets given")
    for lang, examples in test_sets.items():
        if not examples:
            raise InputError(f"test set for {lang!r} is empty")
    _check_aligned(test_sets)
    langs = list(test_sets)
    mat = np.zeros((len(langs), len(langs)))
    for i, l1 in enumerate(langs):
        for j, l2 in enumerate(langs):
            mat[i, j] = accuracy(model, tokenizer, cross_language_pairs(test_sets, l1, l2), batch_size)
    return GeneralizedReport(langs, mat)


def aggregate(reports: list[EvaluationReport], seeds: list[int]) -> EvaluationReport:
    """Mean per-language accuracy over seeds, keeping the seeds x languages matrix."""
    if not reports:
        raise InputError("no reports to aggregate")
    langs = reports[0].languages
    matrix = [[r.per_language_accuracy[lang] for lang in langs] for r in reports]
    mean = np.mean(matrix, axis=0)
    return EvaluationReport(
        {lang: float(m) for lang, m in zip(langs, mean)},
        reports[0].source_language,
        list(seeds),
        matrix,
    )


@dataclass(frozen=True)
class SignificanceResult:
    statistic: float
    p_value: float
    alpha: float = 0.05

    @property
    def significant(self) -> bool:
        return self.p_value <= self.alpha


def significance(samples_a, samples_b, variant: str = "student", alpha: float = 0.05) -> SignificanceResult:
    """Two-sample t-test of ``a`` against ``b``.

    variant: "student" (pooled variance), "welch" or "paired". Constant
    samples give p = 1 when the means tie and p = 0 otherwise.
    """
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InputError("t-test needs at least two samples per side")
    if variant not in ("student", "welch", "paired"):
        raise InputError(f"unknown t-test variant {variant!r}")
    if variant == "paired" and a.size != b.size:
        raise InputError("paired t-test needs equal sample counts")
    spread = np.ptp(a - b) if variant == "paired" else max(np.ptp(a), np.ptp(b))
    scale = max(1.0, float(np.abs(a).max()), float(np.abs(b).max()))
    if spread <= 1e-12 * scale:
        # constant samples: the statistic is degenerate
        gap = float(a.mean() - b.mean())
        return SignificanceResult(0.0, 1.0, alpha) if abs(gap) <= 1e-12 * scale else SignificanceResult(math.copysign(math.inf, gap), 0.0, alpha)
    if variant == "paired":
        res = stats.ttest_rel(a, b)
    elif variant in ("student", "welch"):
        res = stats.ttest_ind(a, b, equal_var=variant == "student")
    t, p = float(res.statistic), float(res.pvalue)
    if math.isnan(p):
        t, p = 0.0, 1.0
    return SignificanceResult(t, p, alpha)


def format_table(rows: dict[str, EvaluationReport], source_language: str = "en") -> str:
    """Aligned text table: one row per model, languages as columns, then both averages."""
    first = next(iter(rows.values()))
    langs = [source_language] + [lang for lang in first.languages if lang != source_language]
    header = ["model", *langs, "avg.", f"w/ {source_language}"]
    body = []
    for name, rep in rows.items():
        cells = [f"{100 * rep.per_language_accuracy[lang]:.1f}" for lang in langs]
        body.append([name, *cells, f"{100 * rep.avg_excl_source:.1f}", f"{100 * rep.avg_incl_source:.1f}"])
    widths = [max(len(r[c]) for r in [header, *body]) for c in range(len(header))]
    lines = ["  ".join(cell.rjust(w) if c else cell.ljust(w) for c, (cell, w) in enumerate(zip(r, widths))) for r in [header, *body]]
    return "\n".join(lines)


def format_matrix(report: GeneralizedReport) -> str:
    langs = report.languages
    w = max(5, *(len(x) for x in langs))
    lines = [" " * w + " " + " ".join(lang.rjust(w) for lang in langs) + " " + "avg.".rjust(w)]
    for i, lang in enumerate(langs):
        row = " ".join(f"{100 * v:.1f}".rjust(w) for v in report.matrix[i])
        lines.append(f"{lang.ljust(w)} {row} {100 * report.matrix[i].mean():.1f}".rstrip())
    col = " ".join(f"{100 * v:.1f}".rjust(w) for v in report.matrix.mean(axis=0))
    lines.append(f"{'avg.'.ljust(w)} {col} {100 * report.average:.1f}")
    return "\n".join(lines)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, default=lambda o: o.tolist() if isinstance(o, np.ndarray) else str(o))
