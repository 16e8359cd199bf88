"""Set-based QA scoring: exact-match accuracy and micro-averaged precision/recall/F1."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EvaluationError
from .kg_store import KnowledgeGraph, normalize_label

QTYPES = ("direct", "multihop", "comparative")


@dataclass(frozen=True)
class QaExample:
    id: str
    question: str
    qtype: str
    gold_entities: frozenset[str]

    def __post_init__(self) -> None:
        if self.qtype not in QTYPES:
            raise EvaluationError(f"{self.id}: unknown question type {self.qtype!r}")
        if not self.gold_entities:
            raise EvaluationError(f"{self.id}: empty gold set")

    @classmethod
    def from_dict(cls, obj: dict) -> "QaExample":
        try:
            return cls(
                str(obj["id"]),
                str(obj["question"]),
                str(obj["type"]),
                frozenset(normalize_label(g) for g in obj["gold"]),
            )
        except KeyError as exc:
            raise EvaluationError(f"QA record missing field {exc}") from exc


@dataclass(frozen=True)
class PredictionScore:
    tp: int
    fp: int
    fn: int
    exact_match: bool


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    questions: int
    tp: int
    fp: int
    fn: int

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "counts": {"questions": self.questions, "TP": self.tp, "FP": self.fp, "FN": self.fn},
        }


@dataclass
class MetricsReport:
    overall: Metrics
    per_type: dict[str, Metrics] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.overall.accuracy

    @property
    def precision(self) -> float:
        return self.overall.precision

    @property
    def recall(self) -> float:
        return self.overall.recall

    @property
    def f1(self) -> float:
        return self.overall.f1

    @property
    def counts(self) -> tuple[int, int, int, int]:
        o = self.overall
        return o.questions, o.tp, o.fp, o.fn

    def as_dict(self) -> dict:
        out = self.overall.as_dict()
        out["per_type"] = {k: v.as_dict() for k, v in self.per_type.items()}
        return out


def score_prediction(predicted: Iterable[str], gold: Iterable[str]) -> PredictionScore:
    p, g = set(predicted), set(gold)
    return PredictionScore(len(p & g), len(p - g), len(g - p), p == g)


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def _pool(scores: Sequence[PredictionScore]) -> Metrics:
    tp = sum(s.tp for s in scores)
    fp = sum(s.fp for s in scores)
    fn = sum(s.fn for s in scores)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    accuracy = sum(s.exact_match for s in scores) / len(scores)
    return Metrics(accuracy, precision, recall, f1_score(precision, recall), len(scores), tp, fp, fn)


def compute_metrics(per_question: Sequence[tuple[QaExample, PredictionScore]]) -> MetricsReport:
    """Micro-averaged metrics overall and per question type (types present only)."""
    if not per_question:
        raise EvaluationError("no questions to evaluate")
    by_type: dict[str, list[PredictionScore]] = {}
    for example, score in per_question:
        by_type.setdefault(example.qtype, []).append(score)
    per_type = {q: _pool(by_type[q]) for q in QTYPES if q in by_type}
    return MetricsReport(_pool([s for _, s in per_question]), per_type)


def load_qa_dataset(path: str | Path, store: KnowledgeGraph | None = None) -> list[QaExample]:
    """Read JSON-lines QA records; with ``store``, gold labels must name known entities."""
    examples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvaluationError(f"line {lineno}: invalid JSON ({exc})") from exc
            examples.append(QaExample.from_dict(obj))
    if store is not None:
        check_gold_labels(examples, store)
    return examples


def check_gold_labels(examples: Iterable[QaExample], store: KnowledgeGraph) -> None:
    known = set(store.entity_labels)
    for ex in examples:
        missing = sorted(ex.gold_entities - known)
        if missing:
            raise EvaluationError(f"{ex.id}: gold labels not in the knowledge graph: {missing}")


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


CSV_FIELDS = ("method", "qtype", "questions", "accuracy", "precision", "recall", "f1", "TP", "FP", "FN")


def report_rows(method: str, report: MetricsReport) -> list[dict]:
    rows = []
    for qtype, m in [("all", report.overall), *report.per_type.items()]:
        rows.append({
            "method": method,
            "qtype": qtype,
            "questions": m.questions,
            "accuracy": f"{m.accuracy:.6f}",
            "precision": f"{m.precision:.6f}",
            "recall": f"{m.recall:.6f}",
            "f1": f"{m.f1:.6f}",
            "TP": m.tp,
            "FP": m.fp,
            "FN": m.fn,
        })
    return rows


def write_report_csv(path: str | Path, reports: dict[str, MetricsReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for method, report in reports.items():
            writer.writerows(report_rows(method, report))
