"""Concept structuring: descriptions, attributes, carve-outs, questions, queries.

Everything here either instantiates one of the prompt templates and parses the
model's tagged response, or derives artifacts (questions, query mutations)
from already-structured concept state. Parsers are total: any response text
yields either a valid list or a typed error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    EmptyExtractionError,
    NoAttributesError,
    PreconditionError,
    UnparseableResponseError,
    NoScriptError,
)
from .gateway import ModelGateway
from .textnorm import identifier, normalize_key, words

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"
DESCRIPTION_MARKER = "Visual concept definition:"
ATTRIBUTE_BULLETS_HEADER = "Image must have following attributes"
CARVEOUT_SENTINEL = "NOT_FOUND"
MUTATION_KINDS = ("broader", "narrower", "variation")
MAX_QUERIES = 20
MAX_QUERY_WORDS = 6
DEFAULT_FIXED_QUESTION_COUNT = 10


class Polarity(str, Enum):
    IN_SCOPE = "in_scope"
    OUT_OF_SCOPE = "out_of_scope"


class QueryPolarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class Attribute:
    id: str
    text: str
    polarity: Polarity
    atomic: bool = False

    def __post_init__(self):
        if not self.text.strip():
            raise PreconditionError("attribute text must be non-empty")


@dataclass(frozen=True)
class Concept:
    id: str
    name: str
    description: str = ""
    positive_attributes: tuple[Attribute, ...] = ()
    carve_outs: tuple[Attribute, ...] = ()

    def __post_init__(self):
        if not self.name.strip():
            raise PreconditionError("concept name must be non-empty")
        for attrs in (self.positive_attributes, self.carve_outs):
            keys = [normalize_key(a.text) for a in attrs]
            if len(keys) != len(set(keys)):
                raise PreconditionError("attribute texts must be unique within a list")

    def attribute_by_id(self, attr_id: str) -> Attribute | None:
        for attr in self.positive_attributes + self.carve_outs:
            if attr.id == attr_id:
                return attr
        return None


@dataclass(frozen=True)
class SearchQuery:
    text: str
    polarity: QueryPolarity
    lineage: tuple[str, ...] = ()
    word_count: int = 0

    def __post_init__(self):
        if not 1 <= self.word_count <= MAX_QUERY_WORDS:
            raise PreconditionError(
                f"query word_count must be in [1, {MAX_QUERY_WORDS}], got {self.word_count}"
            )


@dataclass(frozen=True)
class BoundQuestion:
    text: str
    bound_attribute: str
    expected_polarity: Polarity


def _make_query(text: str, polarity: QueryPolarity, lineage: tuple[str, ...] = ()) -> SearchQuery | None:
    """Apply the word-count rules; over-long queries are dropped, not rewritten."""
    count = len(words(text))
    if count == 0:
        return None
    if count > MAX_QUERY_WORDS:
        logger.warning("dropping over-long search query (%d words): %r", count, text)
        return None
    return SearchQuery(text=text.strip(), polarity=polarity, lineage=lineage, word_count=count)


def _dedup_queries(queries: Iterable[SearchQuery]) -> list[SearchQuery]:
    seen: set[str] = set()
    out: list[SearchQuery] = []
    for q in queries:
        key = normalize_key(q.text)
        if key not in seen:
            seen.add(key)
            out.append(q)
    return out


# --- tagged-list parsing -----------------------------------------------------


def _tag_markers(text: str, open_t: str, close_t: str) -> list[tuple[int, bool]]:
    """(position, is_open) for every tag marker, in document order."""
    markers: list[tuple[int, bool]] = []
    pos = 0
    while True:
        pos = text.find(close_t, pos)
        if pos == -1:
            break
        markers.append((pos, False))
        pos += len(close_t)
    pos = 0
    while True:
        pos = text.find(open_t, pos)
        if pos == -1:
            break
        # A "<tag>" hit inside "</tag>" is impossible; opens and closes never
        # overlap, so a plain merge by position is enough.
        markers.append((pos, True))
        pos += len(open_t)
    markers.sort()
    return markers


def parse_tagged_list(text: str, tag: str) -> list[str]:
    """Inner texts of all well-formed outermost ``<tag>`` occurrences, trimmed.

    Tolerates surrounding prose and code fences; nested same-tag pairs stay
    inside their outermost occurrence with the inner text verbatim. Complete
    pairs nested under an opening tag that never closes count as outermost
    themselves. Raises when no well-formed occurrence exists.
    """
    if not tag:
        raise PreconditionError("tag must be non-empty")
    open_t, close_t = f"<{tag}>", f"</{tag}>"
    # One linear pass with a stack of open positions; each frame collects the
    # complete pairs directly under it so they survive an unmatched ancestor.
    stack: list[tuple[int, list[tuple[int, int]]]] = []
    completed: list[tuple[int, int]] = []
    for position, is_open in _tag_markers(text, open_t, close_t):
        if is_open:
            stack.append((position, []))
        elif stack:
            begin, _ = stack.pop()
            region = (begin + len(open_t), position)
            if stack:
                stack[-1][1].append(region)
            else:
                completed.append(region)
    for _, orphaned_children in stack:
        completed.extend(orphaned_children)
    completed.sort()
    if not completed:
        raise UnparseableResponseError(f"no well-formed <{tag}> occurrences in response", tag=tag)
    return [text[begin:end].strip() for begin, end in completed]


def render_tagged_list(items: Sequence[str], tag: str) -> str:
    """Inverse of ``parse_tagged_list`` for fixture and round-trip use."""
    return "\n".join(f"<{tag}>{item}</{tag}>" for item in items)


# --- engine ------------------------------------------------------------------


def render_template(template_dir: str | Path, template_name: str, **values: str) -> str:
    template = (Path(template_dir) / f"{template_name}.txt").read_text(encoding="utf-8")
    for key, value in values.items():
        template = template.replace("{" + key + "}", value)
    return template


class ConceptEngine:
    """Instantiates prompt templates against the LLM backend and parses results."""

    def __init__(self, gateway: ModelGateway, template_dir: str | Path | None = None):
        self.gateway = gateway
        self.template_dir = Path(template_dir) if template_dir else TEMPLATE_DIR

    def render(self, template_name: str, **values: str) -> str:
        return render_template(self.template_dir, template_name, **values)

    # -- description ----------------------------------------------------------

    def generate_description(self, name: str) -> str:
        if not name.strip():
            raise PreconditionError("concept name must be non-empty")
        prompt = self.render("describe_concept", CONCEPT_NAME=name)
        response = self.gateway.complete(prompt)
        marker = response.find(DESCRIPTION_MARKER)
        if marker == -1:
            raise UnparseableResponseError(
                f"description response lacks the {DESCRIPTION_MARKER!r} marker"
            )
        return response[marker:].strip()

    def initialize_concept(self, concept_id: str, name: str, description: str | None = None) -> Concept:
        """User-supplied descriptions pass through unchanged; absent ones are generated."""
        text = description.strip() if description and description.strip() else None
        if text is None:
            text = self.generate_description(name)
        return Concept(id=concept_id, name=name, description=text)

    # -- attribute extraction ---------------------------------------------------

    def _attributes_from(self, texts: Iterable[str], polarity: Polarity) -> list[Attribute]:
        seen: set[str] = set()
        out: list[Attribute] = []
        for text in texts:
            text = text.strip()
            if not text:
                continue
            key = normalize_key(text)
            if key in seen:
                continue
            seen.add(key)
            out.append(Attribute(id=identifier(text), text=text, polarity=polarity))
        return out

    def extract_positive_attributes(self, concept: Concept) -> list[Attribute]:
        if not concept.description.strip():
            raise PreconditionError("concept description must be non-empty")
        prompt = self.render(
            "positive_attributes",
            CONCEPT_NAME=concept.name,
            CONCEPT_DESCRIPTION=concept.description,
        )
        response = self.gateway.complete(prompt)
        block = parse_tagged_list(response, "positiveAttributes")[0]
        items = parse_tagged_list(block, "attribute")
        attrs = self._attributes_from(items, Polarity.IN_SCOPE)
        if not attrs:
            raise EmptyExtractionError("model returned no positive attributes")
        return attrs

    def extract_carveouts(self, concept: Concept) -> list[Attribute]:
        if not concept.description.strip():
            raise PreconditionError("concept description must be non-empty")
        prompt = self.render(
            "carveouts",
            CONCEPT_NAME=concept.name,
            CONCEPT_DESCRIPTION=concept.description,
        )
        response = self.gateway.complete(prompt)
        block = parse_tagged_list(response, "carveOutsInDescription")[0]
        items = parse_tagged_list(block, "carveOut")
        if CARVEOUT_SENTINEL in items:
            if len(items) > 1:
                raise UnparseableResponseError(
                    "sentinel mixed with real carve-outs is ambiguous", items=items
                )
            return []
        return self._attributes_from(items, Polarity.OUT_OF_SCOPE)

    def decompose_attribute(self, attr: Attribute) -> list[Attribute]:
        if attr.atomic:
            raise PreconditionError(f"attribute {attr.id!r} is already atomic")
        prompt = self.render("decompose_attribute", ATTRIBUTE_TEXT=attr.text)
        response = self.gateway.complete(prompt)
        block = parse_tagged_list(response, "atomicAttributes")[0]
        items = parse_tagged_list(block, "attribute")
        children = [
            replace(child, atomic=True)
            for child in self._attributes_from(items, attr.polarity)
        ]
        if not children:
            raise UnparseableResponseError("decomposition returned no attributes")
        return children

    def decompose_in_concept(self, concept: Concept, attr: Attribute) -> Concept:
        """Replace ``attr`` by its atomic children inside the concept."""
        children = self.decompose_attribute(attr)

        def swap(attrs: tuple[Attribute, ...]) -> tuple[Attribute, ...]:
            out: list[Attribute] = []
            for a in attrs:
                if a.id == attr.id:
                    out.extend(c for c in children if all(c.id != b.id for b in out))
                elif all(a.id != b.id for b in out):
                    out.append(a)
            return tuple(out)

        if attr.polarity is Polarity.IN_SCOPE:
            return replace(concept, positive_attributes=swap(concept.positive_attributes))
        return replace(concept, carve_outs=swap(concept.carve_outs))

    # -- search queries ---------------------------------------------------------

    def generate_search_queries(self, concept: Concept, polarity: QueryPolarity) -> list[SearchQuery]:
        if not concept.description.strip():
            raise PreconditionError("concept description must be non-empty")
        if polarity is QueryPolarity.POSITIVE:
            prompt = self.render(
                "positive_queries",
                CONCEPT_NAME=concept.name,
                CONCEPT_DESCRIPTION=concept.description,
            )
            response = self.gateway.complete(prompt)
            block = parse_tagged_list(response, "google_search_keywords")[0]
            items = parse_tagged_list(block, "keyword")
        else:
            # Hard-negative queries come from the carve-outs stated in the
            # description; the extraction prompt doubles as the query source.
            prompt = self.render(
                "carveouts",
                CONCEPT_NAME=concept.name,
                CONCEPT_DESCRIPTION=concept.description,
            )
            response = self.gateway.complete(prompt)
            block = parse_tagged_list(response, "carveOutsInDescription")[0]
            items = parse_tagged_list(block, "carveOut")
            if items == [CARVEOUT_SENTINEL]:
                return []
        queries = [q for q in (_make_query(t, polarity) for t in items) if q is not None]
        return _dedup_queries(queries)[:MAX_QUERIES]

    def mutate_queries(self, queries: Sequence[SearchQuery], rounds: int = 1) -> list[SearchQuery]:
        if not queries:
            raise PreconditionError("queries must be non-empty")
        if rounds < 0:
            raise PreconditionError("rounds must be >= 0")
        result = _dedup_queries(queries)
        for _ in range(rounds):
            variants: list[SearchQuery] = []
            for query in result:
                for kind in MUTATION_KINDS:
                    prompt = self.render("mutate_query", QUERY=query.text, MUTATION_KIND=kind)
                    try:
                        response = self.gateway.complete(prompt)
                        block = parse_tagged_list(response, "google_search_keywords")[0]
                        items = parse_tagged_list(block, "keyword")
                    except (NoScriptError, UnparseableResponseError) as exc:
                        logger.warning(
                            "skipping %s mutation of %r: %s", kind, query.text, exc
                        )
                        continue
                    for item in items:
                        made = _make_query(item, query.polarity, query.lineage + (kind,))
                        if made is not None:
                            variants.append(made)
            result = _dedup_queries(result + variants)
        return result


# --- question generation -----------------------------------------------------


QUESTION_PREFIX = "Is the following true for this image: "


def question_for_attribute(attr: Attribute) -> str:
    return f"{QUESTION_PREFIX}{attr.text}?"


def _description_bullets(description: str) -> list[str]:
    bullets: list[str] = []
    for line in description.splitlines():
        stripped = line.strip()
        if stripped[:1] in {"-", "*", "•"}:
            text = stripped.lstrip("-*• ").strip()
            if text:
                bullets.append(text)
    return bullets


def generate_questions(concept: Concept, config) -> list[BoundQuestion]:
    """One question per selected attribute, positives first.

    ``config`` carries the annotator strategy flags: attribute-sourced
    questions (A), negative questions (B), fixed question count (D).
    """
    if config.use_positive_attributes_for_questions:
        if not concept.positive_attributes:
            raise NoAttributesError(
                f"concept {concept.name!r} has no extracted attributes for questions"
            )
        positives = list(concept.positive_attributes)
    else:
        bullets = _description_bullets(concept.description)
        if not bullets:
            raise NoAttributesError(
                f"concept {concept.name!r} description has no attribute bullets"
            )
        positives = [
            Attribute(id=identifier(text), text=text, polarity=Polarity.IN_SCOPE)
            for text in bullets
        ]

    selected = list(positives)
    if config.generate_negative_questions:
        selected.extend(concept.carve_outs)

    questions = [
        BoundQuestion(
            text=question_for_attribute(attr),
            bound_attribute=attr.id,
            expected_polarity=attr.polarity,
        )
        for attr in selected
    ]
    if config.generate_fixed_num_of_questions:
        count = config.fixed_question_count or DEFAULT_FIXED_QUESTION_COUNT
        if count < 1:
            raise PreconditionError("fixed_question_count must be positive")
        questions = questions[:count]
    return questions
