"""Per-image annotation: VQA fan-out, captioning, final decision, rule oracle.

The final decision normally comes from the LLM backend; ``decision_oracle``
is the pure rule engine the decision prompt instructs the model to follow
(any out-of-scope attribute forces negative; all required in-scope attributes
must be present for positive; everything else is negative).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .concepts import (
    QUESTION_PREFIX,
    TEMPLATE_DIR,
    BoundQuestion,
    Concept,
    Polarity,
    generate_questions,
    parse_tagged_list,
)
from .corpus import ImageRecord
from .errors import DecisionParseError, ModelcrafterError, PreconditionError
from .gateway import ModelGateway, VqaExchange
from .textnorm import normalize_key

logger = logging.getLogger(__name__)

ANNOTATION_SCHEMA_VERSION = 1


class Decision(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class AnnotatorConfig:
    """One annotation strategy: the five flags plus its registry index."""

    use_positive_attributes_for_questions: bool = True
    generate_negative_questions: bool = True
    use_captioning_questions: bool = False
    generate_fixed_num_of_questions: bool = False
    fixed_question_count: int | None = None
    final_rating_without_attributes: bool = False
    strategy_index: int = 0

    def __post_init__(self):
        if not 0 <= self.strategy_index <= 5:
            raise PreconditionError("strategy_index must be in [0, 5]")
        if self.generate_fixed_num_of_questions:
            if self.fixed_question_count is None or self.fixed_question_count < 1:
                raise PreconditionError(
                    "fixed_question_count must be a positive integer when the "
                    "fixed-question flag is set"
                )
        elif self.fixed_question_count is not None:
            raise PreconditionError(
                "fixed_question_count only applies with the fixed-question flag"
            )

    def flags(self) -> dict[str, bool]:
        return {
            "A": self.use_positive_attributes_for_questions,
            "B": self.generate_negative_questions,
            "C": self.use_captioning_questions,
            "D": self.generate_fixed_num_of_questions,
            "E": self.final_rating_without_attributes,
        }


# Registered strategy table. Index 0 is the all-defaults pipeline; the others
# toggle flag combinations observed to matter per concept. Editable data, not
# code: strategy selection picks among these by validation F1.
STRATEGIES: tuple[AnnotatorConfig, ...] = (
    AnnotatorConfig(strategy_index=0),
    AnnotatorConfig(strategy_index=1, final_rating_without_attributes=True),
    AnnotatorConfig(
        strategy_index=2,
        generate_fixed_num_of_questions=True,
        fixed_question_count=10,
        final_rating_without_attributes=True,
    ),
    AnnotatorConfig(
        strategy_index=3,
        use_captioning_questions=True,
        generate_fixed_num_of_questions=True,
        fixed_question_count=10,
        final_rating_without_attributes=True,
    ),
    AnnotatorConfig(strategy_index=4, generate_negative_questions=False),
    AnnotatorConfig(
        strategy_index=5,
        use_positive_attributes_for_questions=False,
        use_captioning_questions=True,
    ),
)


def strategy(index: int) -> AnnotatorConfig:
    if not 0 <= index < len(STRATEGIES):
        raise PreconditionError(f"no registered strategy {index}")
    return STRATEGIES[index]


@dataclass(frozen=True)
class AnnotationResult:
    image_id: str
    decision: Decision
    reasons: tuple[str, ...]
    exchanges: tuple[VqaExchange, ...]
    caption: str | None
    config_used: int
    in_scope_present: tuple[str, ...]
    in_scope_missing: tuple[str, ...]
    out_of_scope_present: tuple[str, ...]


@dataclass(frozen=True)
class AnnotationFailure:
    """Batch entry for an image whose annotation raised; keeps the batch alive."""

    image_id: str
    stage: str
    code: str
    message: str


def normalize_answer(answer: str) -> str:
    """Collapse a VQA answer to yes/no/other by prefix match on the first token."""
    first = answer.strip().split()[0].lower() if answer.strip() else ""
    first = first.strip(".,!:;\"'")
    if first.startswith("yes"):
        return "yes"
    if first.startswith("no"):
        return "no"
    return "other"


def decision_oracle(
    required_in_scope: set[str],
    in_scope_present: set[str],
    out_of_scope_present: set[str],
) -> Decision:
    """The classification rules, applied in order."""
    if not in_scope_present <= required_in_scope:
        raise PreconditionError("in_scope_present must be a subset of required_in_scope")
    if out_of_scope_present:
        return Decision.NEGATIVE
    if in_scope_present == required_in_scope:
        return Decision.POSITIVE
    return Decision.NEGATIVE


def serialize_exchanges(
    exchanges: Sequence[VqaExchange], caption: str | None = None
) -> str:
    """Canonical Q/A block fed to the decision prompt."""
    lines = []
    for exchange in exchanges:
        lines.append(f"Q: {exchange.question}")
        lines.append(f"A: {exchange.answer}")
    if caption is not None:
        lines.append(f"Caption: {caption}")
    return "\n".join(lines)


def _attribute_sections(concept: Concept) -> str:
    def block(tag: str, attrs) -> str:
        inner = "\n".join(f"  <attribute>{a.text}</attribute>" for a in attrs)
        return f"<{tag}>\n{inner}\n</{tag}>" if attrs else f"<{tag}>\n</{tag}>"

    return (
        "\n"
        + block("inScopeAttributes", concept.positive_attributes)
        + "\n"
        + block("outOfScopeAttributes", concept.carve_outs)
    )


def build_final_prompt(
    concept: Concept,
    exchanges: Sequence[VqaExchange],
    caption: str | None,
    config: AnnotatorConfig,
    template_dir: str | Path | None = None,
) -> str:
    template_dir = Path(template_dir) if template_dir else TEMPLATE_DIR
    template = (template_dir / "final_decision.txt").read_text(encoding="utf-8")
    qa = serialize_exchanges(
        exchanges, caption if config.use_captioning_questions and caption else None
    )
    sections = "" if config.final_rating_without_attributes else _attribute_sections(concept)
    return (
        template.replace("{CONCEPT_NAME}", concept.name)
        .replace("{CONCEPT_DESCRIPTION}", concept.description)
        .replace("{ATTRIBUTE_SECTIONS}", sections)
        .replace("{PALI_QUESTIONS_AND_ANSWERS}", qa)
    )


def parse_decision(text: str) -> tuple[Decision, list[str]]:
    """Extract the Decision line and the Reasons items from a response."""
    decisions: list[Decision] = []
    reasons: list[str] = []
    lines = text.splitlines()
    reasons_at: int | None = None
    for i, line in enumerate(lines):
        stripped = line.strip()
        lowered = stripped.lower()
        if lowered.startswith("decision") and ":" in stripped:
            value = stripped.split(":", 1)[1].strip().strip("\"'.,! ").lower()
            if value.startswith("positive"):
                decisions.append(Decision.POSITIVE)
            elif value.startswith("negative"):
                decisions.append(Decision.NEGATIVE)
        elif lowered.startswith("reasons") and ":" in stripped and reasons_at is None:
            reasons_at = i
            inline = stripped.split(":", 1)[1].strip()
            if inline:
                reasons.append(inline)
    if reasons_at is not None:
        for line in lines[reasons_at + 1 :]:
            stripped = line.strip()
            if not stripped:
                break
            item = stripped.lstrip("-*•").strip()
            if item:
                reasons.append(item)
    if not decisions:
        raise DecisionParseError("no Decision line in response")
    if len(set(decisions)) > 1:
        raise DecisionParseError("conflicting Decision lines in response")
    return decisions[0], reasons


class RuleDecisionHandler:
    """Mock decision LLM: applies the classification rules to a decision prompt.

    Bound to one concept; returns ``None`` for prompts about anything else so
    handlers can be chained. Grounded strictly on the Q/A block in the prompt,
    like the instructions demand of the real model.
    """

    def __init__(self, concept: Concept):
        self.concept = concept
        self._carveout_keys = {normalize_key(a.text) for a in concept.carve_outs}

    def __call__(self, prompt: str) -> str | None:
        if "<classificationRules>" not in prompt:
            return None
        if f"<concept>{self.concept.name}</concept>" not in prompt:
            return None
        try:
            qa_block = parse_tagged_list(prompt, "raterResponses")[0]
        except ModelcrafterError:
            return None
        required: list[str] = []
        in_present: list[str] = []
        out_present: list[str] = []
        question: str | None = None
        for line in qa_block.splitlines():
            if line.startswith("Q: "):
                question = line[3:]
            elif line.startswith("A: ") and question is not None:
                answer = normalize_answer(line[3:])
                attr_text = question
                if attr_text.startswith(QUESTION_PREFIX):
                    attr_text = attr_text[len(QUESTION_PREFIX):]
                attr_key = normalize_key(attr_text.rstrip("?"))
                if attr_key in self._carveout_keys:
                    if answer == "yes":
                        out_present.append(attr_text)
                else:
                    required.append(attr_text)
                    if answer == "yes":
                        in_present.append(attr_text)
                question = None
        decision = decision_oracle(set(required), set(in_present), set(out_present))
        missing = [a for a in required if a not in in_present]
        verdict = "Positive" if decision is Decision.POSITIVE else "Negative"

        def listed(items: list[str]) -> str:
            return ", ".join(items) if items else "none"

        return (
            f'Decision: "{verdict}"\n'
            "Reasons:\n"
            f"- out-of-scope attributes present: {listed(out_present)}\n"
            f"- in-scope attributes present: {listed(in_present)}\n"
            f"- in-scope attributes missing: {listed(missing)}\n"
        )


class Annotator:
    """Runs the full per-image pipeline against a gateway."""

    def __init__(self, gateway: ModelGateway, template_dir: str | Path | None = None):
        self.gateway = gateway
        self.template_dir = Path(template_dir) if template_dir else TEMPLATE_DIR

    def _ask_all(self, image: ImageRecord, questions: Sequence[BoundQuestion]) -> list[VqaExchange]:
        max_parallel = self.gateway.vqa.descriptor.max_parallel
        if len(questions) == 1 or max_parallel == 1:
            return [
                self.gateway.vqa_answer(image, q.text, q.bound_attribute) for q in questions
            ]
        with ThreadPoolExecutor(max_workers=min(max_parallel, len(questions))) as pool:
            return list(
                pool.map(
                    lambda q: self.gateway.vqa_answer(image, q.text, q.bound_attribute),
                    questions,
                )
            )

    def annotate(
        self, image: ImageRecord, concept: Concept, config: AnnotatorConfig
    ) -> AnnotationResult:
        stage = "questions"
        try:
            questions = generate_questions(concept, config)
            stage = "vqa"
            exchanges = self._ask_all(image, questions)
            stage = "caption"
            caption = self.gateway.caption(image) if config.use_captioning_questions else None
            stage = "decision"
            prompt = build_final_prompt(concept, exchanges, caption, config, self.template_dir)
            response = self.gateway.complete(prompt)
            decision, reasons = parse_decision(response)
        except ModelcrafterError as exc:
            exc.details.setdefault("stage", stage)
            exc.details.setdefault("image_id", image.id)
            raise

        in_present: list[str] = []
        in_missing: list[str] = []
        out_present: list[str] = []
        for bound, exchange in zip(questions, exchanges):
            answer = normalize_answer(exchange.answer)
            if bound.expected_polarity is Polarity.IN_SCOPE:
                (in_present if answer == "yes" else in_missing).append(bound.bound_attribute)
            elif answer == "yes":
                out_present.append(bound.bound_attribute)
        return AnnotationResult(
            image_id=image.id,
            decision=decision,
            reasons=tuple(reasons),
            exchanges=tuple(exchanges),
            caption=caption,
            config_used=config.strategy_index,
            in_scope_present=tuple(dict.fromkeys(in_present)),
            in_scope_missing=tuple(dict.fromkeys(in_missing)),
            out_of_scope_present=tuple(dict.fromkeys(out_present)),
        )

    def annotate_batch(
        self, images: Sequence[ImageRecord], concept: Concept, config: AnnotatorConfig
    ) -> list[AnnotationResult | AnnotationFailure]:
        if not images:
            raise PreconditionError("images must be non-empty")

        def one(image: ImageRecord) -> AnnotationResult | AnnotationFailure:
            try:
                return self.annotate(image, concept, config)
            except ModelcrafterError as exc:
                logger.warning("annotation failed for %s: %s", image.id, exc)
                return AnnotationFailure(
                    image_id=image.id,
                    stage=str(exc.details.get("stage", "unknown")),
                    code=exc.code,
                    message=str(exc),
                )

        max_workers = min(8, len(images))
        if max_workers == 1:
            return [one(images[0])]
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(one, images))


# --- line-delimited record serialization ------------------------------------


def result_to_record(result: AnnotationResult | AnnotationFailure) -> dict:
    if isinstance(result, AnnotationFailure):
        return {
            "v": ANNOTATION_SCHEMA_VERSION,
            "kind": "error",
            "image_id": result.image_id,
            "stage": result.stage,
            "code": result.code,
            "message": result.message,
        }
    return {
        "v": ANNOTATION_SCHEMA_VERSION,
        "kind": "annotation",
        "image_id": result.image_id,
        "decision": result.decision.value,
        "reasons": list(result.reasons),
        "exchanges": [{"q": e.question, "a": e.answer} for e in result.exchanges],
        "caption": result.caption,
        "config_used": result.config_used,
        "in_scope_present": list(result.in_scope_present),
        "in_scope_missing": list(result.in_scope_missing),
        "out_of_scope_present": list(result.out_of_scope_present),
    }


def record_to_result(record: dict) -> AnnotationResult | AnnotationFailure:
    if record.get("v") != ANNOTATION_SCHEMA_VERSION:
        raise PreconditionError(f"unknown annotation record version {record.get('v')}")
    if record["kind"] == "error":
        return AnnotationFailure(
            image_id=record["image_id"],
            stage=record["stage"],
            code=record["code"],
            message=record["message"],
        )
    return AnnotationResult(
        image_id=record["image_id"],
        decision=Decision(record["decision"]),
        reasons=tuple(record["reasons"]),
        exchanges=tuple(VqaExchange(e["q"], e["a"]) for e in record["exchanges"]),
        caption=record["caption"],
        config_used=record["config_used"],
        in_scope_present=tuple(record["in_scope_present"]),
        in_scope_missing=tuple(record["in_scope_missing"]),
        out_of_scope_present=tuple(record["out_of_scope_present"]),
    )


def write_annotation_records(path: str | Path, results: Sequence[AnnotationResult | AnnotationFailure]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for result in results:
            fh.write(json.dumps(result_to_record(result), sort_keys=True) + "\n")
