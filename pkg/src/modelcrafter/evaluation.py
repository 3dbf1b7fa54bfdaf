"""Agreement metrics, threshold search, zero-shot baselines, strategy selection.

The area under the precision-recall curve is step-interpolated average
precision: sweep thresholds at the distinct scores in descending order and sum
precision times the recall increment at each step.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from .annotator import (
    AnnotationFailure,
    Annotator,
    AnnotatorConfig,
    Decision,
    normalize_answer,
)
from .concepts import Concept
from .corpus import ImageRecord
from .errors import LengthMismatchError, NoPositivesError, PreconditionError
from .gateway import ModelGateway
from .textnorm import identifier


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    support_positive: int
    support_negative: int
    aupr: float | None = None
    threshold: float | None = None
    degenerate: bool = False


def _as_binary(values: Sequence) -> list[int]:
    out = []
    for v in values:
        if isinstance(v, Decision):
            out.append(1 if v is Decision.POSITIVE else 0)
        else:
            out.append(1 if v else 0)
    return out


def precision_recall_f1(predictions: Sequence, labels: Sequence) -> MetricsReport:
    preds = _as_binary(predictions)
    labs = _as_binary(labels)
    if len(preds) != len(labs):
        raise LengthMismatchError(f"{len(preds)} predictions vs {len(labs)} labels")
    if not preds:
        raise PreconditionError("inputs must be non-empty")
    tp = sum(1 for p, l in zip(preds, labs) if p == 1 and l == 1)
    fp = sum(1 for p, l in zip(preds, labs) if p == 1 and l == 0)
    fn = sum(1 for p, l in zip(preds, labs) if p == 0 and l == 1)
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support_positive=sum(labs),
        support_negative=len(labs) - sum(labs),
        degenerate=degenerate,
    )


def aupr(scores: Sequence[float], labels: Sequence) -> float:
    labs = _as_binary(labels)
    if len(scores) != len(labs):
        raise LengthMismatchError(f"{len(scores)} scores vs {len(labs)} labels")
    total_pos = sum(labs)
    if total_pos == 0:
        raise NoPositivesError("area under the PR curve needs at least one positive label")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    area = 0.0
    tp = fp = 0
    prev_recall = 0.0
    i = 0
    while i < len(order):
        j = i
        # All points tied at this score cross the threshold together.
        while j < len(order) and scores[order[j]] == scores[order[i]]:
            if labs[order[j]]:
                tp += 1
            else:
                fp += 1
            j += 1
        recall = tp / total_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return area


def grid_search_threshold(scores: Sequence[float], labels: Sequence) -> tuple[float, MetricsReport]:
    """Best F1 threshold (prediction rule: score >= threshold), lowest on ties."""
    labs = _as_binary(labels)
    if len(scores) != len(labs):
        raise LengthMismatchError(f"{len(scores)} scores vs {len(labs)} labels")
    if sum(labs) == 0:
        raise NoPositivesError("threshold search needs at least one positive label")
    distinct = sorted(set(float(s) for s in scores))
    candidates = list(distinct)
    candidates.extend((a + b) / 2.0 for a, b in zip(distinct, distinct[1:]))
    candidates.sort()
    best_threshold = candidates[0]
    best: MetricsReport | None = None
    for threshold in candidates:
        report = precision_recall_f1([s >= threshold for s in scores], labs)
        if best is None or report.f1 > best.f1 + 1e-15:
            best = report
            best_threshold = threshold
    assert best is not None
    return best_threshold, replace(best, threshold=best_threshold)


# --- zero-shot baselines -------------------------------------------------------


def zero_shot_similarity_score(
    gateway: ModelGateway, image: ImageRecord, concept: Concept, mode: str = "name"
) -> float:
    """Cosine between the embedded concept text and the image embedding.

    ``name`` embeds the bare concept name; ``generated_description`` embeds
    the (possibly auto-generated) description text.
    """
    if mode == "name":
        text = concept.name
    elif mode == "generated_description":
        text = concept.description
    else:
        raise PreconditionError(f"unknown mode {mode!r}")
    if not text.strip():
        raise PreconditionError(f"concept has no text for mode {mode!r}")
    return gateway.embed_text(text).cosine(gateway.embed_image(image))


@dataclass(frozen=True)
class VqaPromptResult:
    decision: Decision
    answered_other: bool


def vqa_prompt_classify(
    gateway: ModelGateway, image: ImageRecord, concept: Concept
) -> VqaPromptResult:
    """Single templated-question baseline."""
    question = f"Is this an image of {concept.name}?"
    exchange = gateway.vqa_answer(image, question, bound_attribute=identifier(concept.name))
    answer = normalize_answer(exchange.answer)
    if answer == "yes":
        return VqaPromptResult(Decision.POSITIVE, answered_other=False)
    return VqaPromptResult(Decision.NEGATIVE, answered_other=answer == "other")


# --- strategy selection ----------------------------------------------------------


def select_best_index(f1_by_index: dict[int, float]) -> int:
    """Argmax F1; ties broken by the lowest strategy index."""
    if not f1_by_index:
        raise PreconditionError("no strategies to select from")
    best = max(f1_by_index.values())
    return min(i for i, f in f1_by_index.items() if f == best)


def select_strategy(
    annotator: Annotator,
    concept: Concept,
    images: Sequence[ImageRecord],
    labels: Sequence[Decision],
    strategies: Sequence[AnnotatorConfig],
) -> tuple[AnnotatorConfig, dict[int, float]]:
    """Best-F1 strategy over the user-labeled validation set.

    A strategy that fails on an image scores with that image counted wrong.
    """
    if not images or len(images) != len(labels):
        raise PreconditionError("validation images and labels must align and be non-empty")
    if not strategies:
        raise PreconditionError("strategies must be non-empty")

    def evaluate(config: AnnotatorConfig) -> tuple[int, float]:
        outcomes = annotator.annotate_batch(images, concept, config)
        predictions = []
        for outcome, label in zip(outcomes, labels):
            if isinstance(outcome, AnnotationFailure):
                predictions.append(
                    Decision.NEGATIVE if label is Decision.POSITIVE else Decision.POSITIVE
                )
            else:
                predictions.append(outcome.decision)
        report = precision_recall_f1(predictions, labels)
        return config.strategy_index, report.f1

    with ThreadPoolExecutor(max_workers=min(4, len(strategies))) as pool:
        table = dict(pool.map(evaluate, strategies))
    chosen = select_best_index(table)
    by_index = {config.strategy_index: config for config in strategies}
    return by_index[chosen], table


def report_table(rows: Sequence[dict]) -> str:
    """Tabular text export (one metrics row per concept/method pair)."""
    headers = ["concept", "method", "precision", "recall", "f1", "aupr"]
    lines = ["\t".join(headers)]
    for row in rows:
        lines.append(
            "\t".join(
                "" if row.get(h) is None else (f"{row[h]:.4f}" if isinstance(row[h], float) else str(row[h]))
                for h in headers
            )
        )
    return "\n".join(lines) + "\n"
