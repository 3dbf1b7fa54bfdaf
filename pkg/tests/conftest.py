from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from modelcrafter.annotator import RuleDecisionHandler
from modelcrafter.concepts import Attribute, Concept, Polarity
from modelcrafter.corpus import ImageRecord
from modelcrafter.gateway import (
    MockCaptioner,
    MockEmbedder,
    MockLlm,
    MockVqa,
    ModelGateway,
)


def make_concept(
    name: str = "gourmet seafood plate",
    positives: tuple[str, ...] = ("contains seafood", "is an elegant dish"),
    carveouts: tuple[str, ...] = ("canned food", "sandwich"),
    description: str = "Plates of elegant seafood dishes. Not canned food or sandwiches.",
) -> Concept:
    from modelcrafter.textnorm import identifier

    return Concept(
        id=identifier(name),
        name=name,
        description=description,
        positive_attributes=tuple(
            Attribute(id=identifier(t), text=t, polarity=Polarity.IN_SCOPE) for t in positives
        ),
        carve_outs=tuple(
            Attribute(id=identifier(t), text=t, polarity=Polarity.OUT_OF_SCOPE) for t in carveouts
        ),
    )


def make_record(record_id: str, attrs: set[str], embedder: MockEmbedder | None = None) -> ImageRecord:
    embedding = embedder.embed_tokens(attrs) if embedder else None
    return ImageRecord(
        id=record_id,
        uri=f"test://{record_id}",
        embedding=embedding,
        mock_attributes=frozenset(attrs),
    )


def oracle_gateway(concept: Concept, seed: int = 0, dim: int = 16) -> ModelGateway:
    """Gateway whose decision LLM faithfully applies the classification rules."""
    return ModelGateway(
        llm=MockLlm(mock_seed=seed, handlers=[RuleDecisionHandler(concept)]),
        vqa=MockVqa(mock_seed=seed),
        captioner=MockCaptioner(mock_seed=seed),
        embedder=MockEmbedder(dim=dim, mock_seed=seed),
    )


@pytest.fixture
def concept() -> Concept:
    return make_concept()


@pytest.fixture
def gateway(concept) -> ModelGateway:
    return oracle_gateway(concept)
