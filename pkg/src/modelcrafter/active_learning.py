"""Active-learning rounds: score, sample, teacher-annotate, retrain, evaluate.

Samplers are deterministic given their seed. A round never mutates its inputs;
the caller owns persistence and commits a round's outputs atomically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .annotator import AnnotationFailure, AnnotationResult, Decision
from .corpus import CorpusIndex, ImageRecord
from .errors import PreconditionError, StateError
from .evaluation import MetricsReport, aupr, grid_search_threshold
from .textnorm import stable_u64
from .trainer import DistilledModel, LabeledExample, LabelSource, TrainConfig, predict_batch, train

logger = logging.getLogger(__name__)

SAMPLERS = ("stratified", "margin")
DEFAULT_STRATA = 10


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    sampler: str
    sampled_ids: tuple[str, ...]
    new_positive: int
    new_negative: int
    model_ref: str
    metrics: MetricsReport


def _draw(rng: np.random.Generator, pool: list[str], count: int) -> list[str]:
    """Seeded uniform draw without replacement; removes drawn items from pool."""
    if count >= len(pool):
        taken = list(pool)
        pool.clear()
        return taken
    idx = rng.choice(len(pool), size=count, replace=False)
    chosen = [pool[i] for i in idx]
    for item in chosen:
        pool.remove(item)
    return chosen


def stratified_allocation(bin_sizes: Sequence[int], n: int) -> list[int]:
    """Per-bin draw counts: equal quotas, remainder to the fullest bins,
    shortfalls backfilled from the nearest non-empty bins (lower side first)."""
    strata = len(bin_sizes)
    base, rem = divmod(n, strata)
    quota = [base] * strata
    for i in sorted(range(strata), key=lambda i: (-bin_sizes[i], i))[:rem]:
        quota[i] += 1
    taken = [min(quota[i], bin_sizes[i]) for i in range(strata)]
    left = [bin_sizes[i] - taken[i] for i in range(strata)]
    for i in range(strata):
        deficit = quota[i] - min(quota[i], bin_sizes[i])
        delta = 1
        while deficit > 0 and delta < strata:
            for j in (i - delta, i + delta):
                if deficit == 0 or not 0 <= j < strata:
                    continue
                grab = min(deficit, left[j])
                taken[j] += grab
                left[j] -= grab
                deficit -= grab
            delta += 1
    return taken


def stratified_sample(
    scores: Mapping[str, float],
    n: int,
    strata: int = DEFAULT_STRATA,
    seed: int = 0,
) -> list[str]:
    """Draw across equal-width score bins to cover the whole score range."""
    if not scores:
        raise PreconditionError("scores must be non-empty")
    if n < 1 or strata < 1:
        raise PreconditionError("n and strata must be positive")
    ids_sorted = sorted(scores)
    if n >= len(ids_sorted):
        logger.warning("requested %d of %d available; returning all", n, len(ids_sorted))
        return ids_sorted
    bins: list[list[str]] = [[] for _ in range(strata)]
    for record_id in ids_sorted:
        score = scores[record_id]
        if not 0.0 <= score <= 1.0:
            raise PreconditionError(f"score for {record_id!r} outside [0, 1]")
        bins[min(int(score * strata), strata - 1)].append(record_id)
    allocation = stratified_allocation([len(b) for b in bins], n)
    rng = np.random.Generator(np.random.PCG64(seed))
    picked: list[str] = []
    for pool, count in zip(bins, allocation):
        picked.extend(_draw(rng, pool, count))
    return picked


def margin_sample(scores: Mapping[str, float], n: int) -> list[str]:
    """The n ids with scores closest to 0.5; ties broken by ascending id."""
    if not scores:
        raise PreconditionError("scores must be non-empty")
    if n < 1:
        raise PreconditionError("n must be positive")
    ranked = sorted(scores, key=lambda i: (abs(scores[i] - 0.5), i))
    if n >= len(ranked):
        logger.warning("requested %d of %d available; returning all", n, len(ranked))
        return ranked
    return ranked[:n]


def evaluate_model(
    model: DistilledModel, examples: Sequence[LabeledExample]
) -> MetricsReport:
    """auPR plus P/R/F1 at the F1-maximizing threshold on these examples."""
    if not examples:
        raise PreconditionError("evaluation set must be non-empty")
    scores = predict_batch(model, [e.embedding for e in examples])
    labels = [e.label for e in examples]
    area = aupr(list(scores), labels)
    threshold, report = grid_search_threshold(list(scores), labels)
    return replace(report, aupr=area, threshold=threshold)


AnnotateFn = Callable[[Sequence[ImageRecord]], "list[AnnotationResult | AnnotationFailure]"]


def run_round(
    corpus: CorpusIndex,
    model: DistilledModel,
    labeled: Mapping[str, LabeledExample],
    validation: Sequence[LabeledExample],
    annotate_fn: AnnotateFn,
    sampler: str,
    n: int,
    train_config: TrainConfig,
    round_index: int,
    model_ref: str,
    strata: int = DEFAULT_STRATA,
) -> tuple[RoundRecord, dict[str, LabeledExample], DistilledModel]:
    """One three-stage round; returns the record, the new labels, the new model.

    Raises without side effects if any stage fails, so the caller can keep the
    previous model and label set untouched.
    """
    if sampler not in SAMPLERS:
        raise PreconditionError(f"sampler must be one of {SAMPLERS}")
    validation_ids = {e.image_id for e in validation}
    unlabeled = [
        rid for rid in corpus.ids() if rid not in labeled and rid not in validation_ids
    ]
    if not unlabeled:
        metrics = evaluate_model(model, validation)
        record = RoundRecord(
            round_index=round_index,
            sampler=sampler,
            sampled_ids=(),
            new_positive=0,
            new_negative=0,
            model_ref=model_ref,
            metrics=metrics,
        )
        return record, {}, model

    # Stage 1: score every unlabeled record with the current student.
    matrix = np.vstack([corpus.get(rid).embedding.as_array() for rid in unlabeled])
    scores = dict(zip(unlabeled, predict_batch(model, matrix)))

    # Stage 2: sample and hand to the teacher.
    if sampler == "stratified":
        sample_seed = stable_u64("al-round", str(train_config.seed), str(round_index))
        sampled = stratified_sample(scores, n, strata=strata, seed=sample_seed)
    else:
        sampled = margin_sample(scores, n)
    outcomes = annotate_fn([corpus.get(rid) for rid in sampled])
    failures = [o for o in outcomes if isinstance(o, AnnotationFailure)]
    if failures:
        first = failures[0]
        raise StateError(
            f"teacher failed on {len(failures)} of {len(sampled)} sampled images "
            f"(first: {first.image_id}, {first.code})",
            failures=[f.image_id for f in failures],
        )
    new_labels = {
        o.image_id: LabeledExample(
            image_id=o.image_id,
            embedding=corpus.get(o.image_id).embedding,
            label=o.decision,
            source=LabelSource.ANNOTATOR,
        )
        for o in outcomes
    }

    # Stage 3: retrain from scratch on all extant labels, then evaluate.
    combined = dict(labeled)
    combined.update(new_labels)
    new_model, _ = train(list(combined.values()), train_config)
    metrics = evaluate_model(new_model, validation)
    record = RoundRecord(
        round_index=round_index,
        sampler=sampler,
        sampled_ids=tuple(sampled),
        new_positive=sum(1 for e in new_labels.values() if e.label is Decision.POSITIVE),
        new_negative=sum(1 for e in new_labels.values() if e.label is Decision.NEGATIVE),
        model_ref=model_ref,
        metrics=metrics,
    )
    return record, new_labels, new_model


def rounds_table(records: Sequence[RoundRecord]) -> str:
    """Tabular history export: metrics per round."""
    lines = ["round\tsampler\tn\tprecision\trecall\tf1\taupr"]
    for rec in records:
        m = rec.metrics
        aupr_text = "" if m.aupr is None else f"{m.aupr:.6f}"
        lines.append(
            f"{rec.round_index}\t{rec.sampler}\t{len(rec.sampled_ids)}\t"
            f"{m.precision:.6f}\t{m.recall:.6f}\t{m.f1:.6f}\t{aupr_text}"
        )
    return "\n".join(lines) + "\n"
