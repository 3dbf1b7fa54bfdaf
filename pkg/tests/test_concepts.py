from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_concept
from modelcrafter.annotator import AnnotatorConfig
from modelcrafter.concepts import (
    Attribute,
    Concept,
    ConceptEngine,
    Polarity,
    QueryPolarity,
    SearchQuery,
    TEMPLATE_DIR,
    generate_questions,
    parse_tagged_list,
    render_tagged_list,
    render_template,
)
from modelcrafter.errors import (
    EmptyExtractionError,
    NoAttributesError,
    PreconditionError,
    UnparseableResponseError,
)
from modelcrafter.gateway import (
    MockCaptioner,
    MockEmbedder,
    MockLlm,
    MockVqa,
    ModelGateway,
    prompt_key,
)
from modelcrafter.textnorm import normalize_key


def scripted_engine(scripts_by_prompt: dict[str, str], seed: int = 0) -> ConceptEngine:
    scripts = {prompt_key(seed, prompt): response for prompt, response in scripts_by_prompt.items()}
    gateway = ModelGateway(
        llm=MockLlm(mock_seed=seed, scripts=scripts),
        vqa=MockVqa(mock_seed=seed),
        captioner=MockCaptioner(mock_seed=seed),
        embedder=MockEmbedder(dim=8, mock_seed=seed),
    )
    return ConceptEngine(gateway)


def render(name: str, **values: str) -> str:
    return render_template(TEMPLATE_DIR, name, **values)


class TestParseTaggedList:
    def test_code_fence_and_trimming(self):
        text = "```xml <k><keyword>a</keyword><keyword> b </keyword></k>```"
        assert parse_tagged_list(text, "keyword") == ["a", "b"]

    def test_nested_same_tag_outermost_only(self):
        text = "<item>outer <item>inner</item> tail</item><item>second</item>"
        assert parse_tagged_list(text, "item") == ["outer <item>inner</item> tail", "second"]

    def test_no_occurrences_is_an_error(self):
        with pytest.raises(UnparseableResponseError):
            parse_tagged_list("no tags here", "keyword")

    def test_unmatched_open_is_skipped(self):
        assert parse_tagged_list("<k>broken <k>ok</k>", "k") == ["ok"]

    def test_pathological_unmatched_tag_runs_do_not_blow_the_stack(self):
        with pytest.raises(UnparseableResponseError):
            parse_tagged_list("<k>" * 5000, "k")
        assert parse_tagged_list("<k>" * 5000 + "last</k>", "k") == ["last"]

    def test_empty_tag_rejected(self):
        with pytest.raises(PreconditionError):
            parse_tagged_list("text", "")

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=300))
    def test_parser_totality(self, text):
        # Any input either parses or raises the typed error, never anything else.
        try:
            result = parse_tagged_list(text, "tag")
            assert isinstance(result, list) and result
        except UnparseableResponseError:
            pass

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(
            st.text(
                alphabet=st.characters(blacklist_characters="<>", blacklist_categories=("Cs",)),
                max_size=30,
            ),
            min_size=1,
            max_size=8,
        )
    )
    def test_round_trip(self, items):
        rendered = render_tagged_list(items, "attr")
        assert parse_tagged_list(rendered, "attr") == [item.strip() for item in items]


class TestGenerateDescription:
    def test_parses_templated_response(self):
        prompt = render("describe_concept", CONCEPT_NAME="pie chart")
        response = (
            "Some preamble.\nVisual concept definition:\nA circular statistical chart.\n\n"
            "Image must have following attributes for it to be in-scope for this visual concept:\n"
            "- a circle divided into slices\n"
        )
        engine = scripted_engine({prompt: response})
        description = engine.generate_description("pie chart")
        assert description.startswith("Visual concept definition:")
        assert "divided into slices" in description

    def test_user_description_skips_generation(self):
        # No scripts installed: any LLM call would raise NoScriptError.
        engine = scripted_engine({})
        concept = engine.initialize_concept("c1", "pie chart", "A chart that is a circle.")
        assert concept.description == "A chart that is a circle."

    def test_missing_marker_is_unparseable(self):
        prompt = render("describe_concept", CONCEPT_NAME="pie chart")
        engine = scripted_engine({prompt: "free text with no template sections"})
        with pytest.raises(UnparseableResponseError):
            engine.generate_description("pie chart")


class TestExtractAttributes:
    def _engine(self, concept: Concept, response: str) -> ConceptEngine:
        prompt = render(
            "positive_attributes",
            CONCEPT_NAME=concept.name,
            CONCEPT_DESCRIPTION=concept.description,
        )
        return scripted_engine({prompt: response})

    def test_two_attributes(self, concept):
        response = (
            "<positiveAttributes><attribute>contains tuna</attribute>"
            "<attribute>is a gourmet dish</attribute></positiveAttributes>"
        )
        attrs = self._engine(concept, response).extract_positive_attributes(concept)
        assert [a.text for a in attrs] == ["contains tuna", "is a gourmet dish"]
        assert all(a.polarity is Polarity.IN_SCOPE for a in attrs)

    def test_duplicates_keep_first_occurrence(self, concept):
        response = (
            "<positiveAttributes><attribute>contains tuna</attribute>"
            "<attribute>Contains  Tuna!</attribute></positiveAttributes>"
        )
        attrs = self._engine(concept, response).extract_positive_attributes(concept)
        assert [a.text for a in attrs] == ["contains tuna"]

    def test_malformed_tags(self, concept):
        engine = self._engine(concept, "<positiveAttributes><attribute>broken")
        with pytest.raises(UnparseableResponseError):
            engine.extract_positive_attributes(concept)

    def test_empty_list_is_surfaced(self, concept):
        engine = self._engine(
            concept, "<positiveAttributes><attribute>  </attribute></positiveAttributes>"
        )
        with pytest.raises(EmptyExtractionError):
            engine.extract_positive_attributes(concept)


class TestExtractCarveouts:
    def _engine(self, concept: Concept, response: str) -> ConceptEngine:
        prompt = render(
            "carveouts", CONCEPT_NAME=concept.name, CONCEPT_DESCRIPTION=concept.description
        )
        return scripted_engine({prompt: response})

    def test_sentinel_means_no_carveouts(self, concept):
        response = "<carveOutsInDescription><carveOut>NOT_FOUND</carveOut></carveOutsInDescription>"
        assert self._engine(concept, response).extract_carveouts(concept) == []

    def test_two_carveouts(self, concept):
        response = (
            "<carveOutsInDescription><carveOut>canned tuna</carveOut>"
            "<carveOut>tuna sandwich</carveOut></carveOutsInDescription>"
        )
        outs = self._engine(concept, response).extract_carveouts(concept)
        assert [a.text for a in outs] == ["canned tuna", "tuna sandwich"]
        assert all(a.polarity is Polarity.OUT_OF_SCOPE for a in outs)

    def test_sentinel_mixed_with_real_is_ambiguous(self, concept):
        response = (
            "<carveOutsInDescription><carveOut>NOT_FOUND</carveOut>"
            "<carveOut>canned tuna</carveOut></carveOutsInDescription>"
        )
        with pytest.raises(UnparseableResponseError):
            self._engine(concept, response).extract_carveouts(concept)


class TestDecomposeAttribute:
    def _engine(self, attr_text: str, response: str) -> ConceptEngine:
        prompt = render("decompose_attribute", ATTRIBUTE_TEXT=attr_text)
        return scripted_engine({prompt: response})

    def test_splits_into_atomic_children(self):
        attr = Attribute(id="is_tuna_sandwich", text="is tuna sandwich", polarity=Polarity.OUT_OF_SCOPE)
        response = (
            "<atomicAttributes><attribute>contains tuna</attribute>"
            "<attribute>is a sandwich</attribute></atomicAttributes>"
        )
        children = self._engine(attr.text, response).decompose_attribute(attr)
        assert [c.text for c in children] == ["contains tuna", "is a sandwich"]
        assert all(c.atomic for c in children)
        assert all(c.polarity is Polarity.OUT_OF_SCOPE for c in children)

    def test_already_atomic_is_a_contract_violation(self):
        attr = Attribute(id="a", text="a thing", polarity=Polarity.IN_SCOPE, atomic=True)
        with pytest.raises(PreconditionError):
            scripted_engine({}).decompose_attribute(attr)

    def test_fixed_point(self):
        attr = Attribute(id="plain", text="plain", polarity=Polarity.IN_SCOPE)
        response = "<atomicAttributes><attribute>plain</attribute></atomicAttributes>"
        children = self._engine(attr.text, response).decompose_attribute(attr)
        assert len(children) == 1
        assert children[0].text == "plain"
        assert children[0].atomic

    def test_replacement_in_concept(self, concept):
        target = concept.positive_attributes[0]
        response = (
            "<atomicAttributes><attribute>part one</attribute>"
            "<attribute>part two</attribute></atomicAttributes>"
        )
        engine = self._engine(target.text, response)
        updated = engine.decompose_in_concept(concept, target)
        texts = [a.text for a in updated.positive_attributes]
        assert texts == ["part one", "part two", concept.positive_attributes[1].text]


def _config(a=True, b=True, d=False, count=None, c=False, e=False, index=0) -> AnnotatorConfig:
    return AnnotatorConfig(
        use_positive_attributes_for_questions=a,
        generate_negative_questions=b,
        use_captioning_questions=c,
        generate_fixed_num_of_questions=d,
        fixed_question_count=count,
        final_rating_without_attributes=e,
        strategy_index=index,
    )


class TestGenerateQuestions:
    def test_one_question_per_attribute(self, concept):
        questions = generate_questions(concept, _config())
        assert len(questions) == 4
        bound = [q.bound_attribute for q in questions]
        assert bound == [a.id for a in concept.positive_attributes] + [
            a.id for a in concept.carve_outs
        ]

    def test_negative_flag_off_filters_carveouts(self, concept):
        questions = generate_questions(concept, _config(b=False))
        assert len(questions) == 2
        assert all(q.expected_polarity is Polarity.IN_SCOPE for q in questions)

    def test_fixed_count_truncates_in_priority_order(self, concept):
        questions = generate_questions(concept, _config(d=True, count=2))
        assert len(questions) == 2
        assert [q.bound_attribute for q in questions] == [
            a.id for a in concept.positive_attributes
        ]

    def test_description_bullets_when_attribute_flag_off(self):
        concept = Concept(
            id="c",
            name="rooftop garden",
            description="Gardens on roofs.\n- garden\n- rooftop\n",
        )
        questions = generate_questions(concept, _config(a=False, b=True))
        assert [q.bound_attribute for q in questions] == ["garden", "rooftop"]

    def test_no_attributes_available(self):
        concept = Concept(id="c", name="bare", description="no bullets here")
        with pytest.raises(NoAttributesError):
            generate_questions(concept, _config())
        with pytest.raises(NoAttributesError):
            generate_questions(concept, _config(a=False))

    @settings(max_examples=60, deadline=None)
    @given(
        n_pos=st.integers(1, 6),
        n_neg=st.integers(0, 4),
        k=st.integers(1, 12),
    )
    def test_flag_semantics(self, n_pos, n_neg, k):
        concept = make_concept(
            positives=tuple(f"positive thing {i}" for i in range(n_pos)),
            carveouts=tuple(f"negative thing {i}" for i in range(n_neg)),
        )
        with_b = generate_questions(concept, _config(b=True))
        without_b = generate_questions(concept, _config(b=False))
        assert {q.bound_attribute for q in without_b} <= {q.bound_attribute for q in with_b}
        fixed = generate_questions(concept, _config(d=True, count=k))
        assert len(fixed) == min(k, len(with_b))


class TestSearchQueries:
    def _positive_engine(self, concept: Concept, keywords: list[str]) -> ConceptEngine:
        prompt = render(
            "positive_queries",
            CONCEPT_NAME=concept.name,
            CONCEPT_DESCRIPTION=concept.description,
        )
        response = (
            "<google_search_keywords>"
            + "".join(f"<keyword>{k}</keyword>" for k in keywords)
            + "</google_search_keywords>"
        )
        return scripted_engine({prompt: response})

    def test_positive_queries(self, concept):
        keywords = ["tuna sushi", "seared tuna", "ahi tuna steak"]
        engine = self._positive_engine(concept, keywords)
        queries = engine.generate_search_queries(concept, QueryPolarity.POSITIVE)
        assert [q.text for q in queries] == keywords
        assert all(q.polarity is QueryPolarity.POSITIVE for q in queries)
        assert all(not q.lineage for q in queries)

    def test_cap_at_twenty_in_input_order(self, concept):
        keywords = [f"query number {i}" for i in range(25)]
        engine = self._positive_engine(concept, keywords)
        queries = engine.generate_search_queries(concept, QueryPolarity.POSITIVE)
        assert len(queries) == 20
        assert [q.text for q in queries] == keywords[:20]

    def test_overlong_query_dropped(self, concept):
        keywords = ["short query", "one two three four five six seven"]
        engine = self._positive_engine(concept, keywords)
        queries = engine.generate_search_queries(concept, QueryPolarity.POSITIVE)
        assert [q.text for q in queries] == ["short query"]

    def test_negative_queries_come_from_carveouts(self, concept):
        prompt = render(
            "carveouts", CONCEPT_NAME=concept.name, CONCEPT_DESCRIPTION=concept.description
        )
        response = (
            "<carveOutsInDescription><carveOut>canned tuna</carveOut>"
            "</carveOutsInDescription>"
        )
        engine = scripted_engine({prompt: response})
        queries = engine.generate_search_queries(concept, QueryPolarity.NEGATIVE)
        assert [q.text for q in queries] == ["canned tuna"]
        assert queries[0].polarity is QueryPolarity.NEGATIVE

    def test_negative_sentinel_means_no_queries(self, concept):
        prompt = render(
            "carveouts", CONCEPT_NAME=concept.name, CONCEPT_DESCRIPTION=concept.description
        )
        response = "<carveOutsInDescription><carveOut>NOT_FOUND</carveOut></carveOutsInDescription>"
        engine = scripted_engine({prompt: response})
        assert engine.generate_search_queries(concept, QueryPolarity.NEGATIVE) == []


class TestMutateQueries:
    def _engine_for(self, expansions: dict[tuple[str, str], list[str]]) -> ConceptEngine:
        scripts = {}
        for (query, kind), keywords in expansions.items():
            prompt = render("mutate_query", QUERY=query, MUTATION_KIND=kind)
            scripts[prompt] = (
                "<google_search_keywords>"
                + "".join(f"<keyword>{k}</keyword>" for k in keywords)
                + "</google_search_keywords>"
            )
        return scripted_engine(scripts)

    def _query(self, text: str) -> SearchQuery:
        return SearchQuery(
            text=text, polarity=QueryPolarity.POSITIVE, word_count=len(text.split())
        )

    def test_scripted_expansion_with_lineage(self):
        engine = self._engine_for(
            {
                ("stop sign", "broader"): ["road sign"],
                ("stop sign", "narrower"): ["traffic stop sign"],
                ("stop sign", "variation"): [],
            }
        )
        # The empty variation response has no keyword tags: skipped, recorded.
        result = engine.mutate_queries([self._query("stop sign")], rounds=1)
        texts = {q.text for q in result}
        assert texts == {"stop sign", "road sign", "traffic stop sign"}
        by_text = {q.text: q for q in result}
        assert by_text["road sign"].lineage == ("broader",)
        assert by_text["traffic stop sign"].lineage == ("narrower",)
        assert by_text["stop sign"].lineage == ()

    def test_duplicate_mutation_deduplicated(self):
        engine = self._engine_for(
            {
                ("stop sign", "broader"): ["Stop Sign"],
                ("stop sign", "narrower"): ["held stop sign"],
                ("stop sign", "variation"): ["held stop sign"],
            }
        )
        result = engine.mutate_queries([self._query("stop sign")], rounds=1)
        assert [q.text for q in result] == ["stop sign", "held stop sign"]

    def test_zero_rounds_is_identity(self):
        engine = scripted_engine({})
        queries = [self._query("stop sign")]
        assert engine.mutate_queries(queries, rounds=0) == queries

    def test_unscripted_mutations_are_skipped_not_fatal(self):
        engine = scripted_engine({})
        queries = [self._query("stop sign")]
        assert engine.mutate_queries(queries, rounds=1) == queries

    def test_output_contains_input(self):
        engine = self._engine_for(
            {
                ("red car", "broader"): ["car"],
                ("red car", "narrower"): ["small red car"],
                ("red car", "variation"): ["blue car"],
            }
        )
        inputs = [self._query("red car")]
        result = engine.mutate_queries(inputs, rounds=1)
        normalized = {normalize_key(q.text) for q in result}
        assert {normalize_key(q.text) for q in inputs} <= normalized

    def test_empty_input_rejected(self):
        with pytest.raises(PreconditionError):
            scripted_engine({}).mutate_queries([], rounds=1)


class TestConceptInvariants:
    def test_unique_attribute_texts_enforced(self):
        attr = Attribute(id="x", text="same thing", polarity=Polarity.IN_SCOPE)
        dup = Attribute(id="y", text="Same  Thing", polarity=Polarity.IN_SCOPE)
        with pytest.raises(PreconditionError):
            Concept(id="c", name="n", positive_attributes=(attr, dup))

    def test_name_required(self):
        with pytest.raises(PreconditionError):
            Concept(id="c", name="  ")

    def test_query_word_count_bounds(self):
        with pytest.raises(PreconditionError):
            SearchQuery(text="a b c d e f g", polarity=QueryPolarity.POSITIVE, word_count=7)
