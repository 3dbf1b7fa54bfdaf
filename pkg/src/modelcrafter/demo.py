"""Self-contained demo: synthetic corpus, mock scripts, full pipeline run.

Builds a seeded mock world (records tagged with ground-truth attributes, an
attribute-oracle VQA, scripted concept prompts, rule-based decisions) and
drives every workflow step end to end. Fully deterministic for a given seed:
two runs produce byte-identical project stores and metric tables.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .annotator import Decision, decision_oracle
from .concepts import TEMPLATE_DIR, parse_tagged_list, render_tagged_list, render_template
from .corpus import ImageRecord, write_corpus_file
from .gateway import GatewayConfig, MockEmbedder, prompt_key, write_scripts
from .service import ProjectService
from .textnorm import stable_u64

DEMO_CONCEPT_NAME = "rooftop garden"
DEMO_DESCRIPTION = """Photos of gardens growing on top of buildings. The image must show a garden with visible plants, and the garden must sit on the roof of a building. This does not include indoor plant areas.

Image must have following attributes for it to be in-scope for this visual concept:
- garden
- rooftop"""

DEMO_POSITIVE_ATTRIBUTES = ["garden", "rooftop"]
DEMO_CARVEOUTS = ["indoor"]
DEMO_POSITIVE_QUERIES = [
    "rooftop garden",
    "roof garden",
    "garden terrace",
    "urban rooftop garden",
]
CONTEXT_TOKENS = [
    "sky", "city", "tree", "bench", "chair", "wall", "sunset",
    "people", "food", "car", "window", "cloud",
]

_REQUIRED = frozenset(DEMO_POSITIVE_ATTRIBUTES)
_CARVE = frozenset(DEMO_CARVEOUTS)


def ground_truth(attributes: frozenset[str]) -> Decision:
    return decision_oracle(set(_REQUIRED), set(attributes & _REQUIRED), set(attributes & _CARVE))


class DemoMutationHandler:
    """Deterministic stand-in for LLM query mutation.

    broader drops the last word, narrower appends a qualifier, variation
    reverses the word order; all keep token overlap with the original.
    """

    def __call__(self, prompt: str) -> str | None:
        if "<mutationKind>" not in prompt:
            return None
        query = parse_tagged_list(prompt, "query")[0]
        kind = parse_tagged_list(prompt, "mutationKind")[0]
        tokens = query.split()
        if kind == "broader":
            mutated = " ".join(tokens[:-1]) if len(tokens) > 1 else query
        elif kind == "narrower":
            mutated = f"{query} closeup"
        else:
            mutated = " ".join(reversed(tokens))
        keywords = render_tagged_list([mutated], "keyword")
        return f"```xml\n<google_search_keywords>\n{keywords}\n</google_search_keywords>\n```"


def build_demo_corpus(
    path: str | Path,
    dim: int,
    size: int,
    seed: int,
    positive_frac: float = 0.30,
    hard_negative_frac: float = 0.20,
    partial_frac: float = 0.15,
) -> dict[str, Decision]:
    """Synthetic records in four bands; returns ground truth per record id."""
    rng = np.random.Generator(np.random.PCG64(stable_u64("demo-corpus", str(seed))))
    embedder = MockEmbedder(dim, mock_seed=seed)
    records = []
    truth: dict[str, Decision] = {}
    for i in range(size):
        draw = rng.random()
        context = {
            CONTEXT_TOKENS[j]
            for j in rng.choice(len(CONTEXT_TOKENS), size=int(rng.integers(1, 3)), replace=False)
        }
        if draw < positive_frac:
            attrs = frozenset(_REQUIRED | context)
        elif draw < positive_frac + hard_negative_frac:
            attrs = frozenset(_REQUIRED | _CARVE | context)
        elif draw < positive_frac + hard_negative_frac + partial_frac:
            attrs = frozenset({"garden"} | context)
        else:
            attrs = frozenset(context)
        record_id = f"img{i:05d}"
        records.append(
            ImageRecord(
                id=record_id,
                uri=f"demo://{record_id}",
                embedding=embedder.embed_tokens(attrs),
                mock_attributes=attrs,
            )
        )
        truth[record_id] = ground_truth(attrs)
    write_corpus_file(path, dim, records)
    return truth


def build_demo_scripts(fixtures_dir: str | Path, seed: int) -> Path:
    """Scripted responses for every concept-structuring prompt the demo issues."""
    name, description = DEMO_CONCEPT_NAME, DEMO_DESCRIPTION

    def xml(block_tag: str, items: list[str], item_tag: str) -> str:
        inner = render_tagged_list(items, item_tag)
        return f"```xml\n<{block_tag}>\n{inner}\n</{block_tag}>\n```"

    scripts: dict[str, str] = {}

    prompt = render_template(
        TEMPLATE_DIR, "positive_attributes", CONCEPT_NAME=name, CONCEPT_DESCRIPTION=description
    )
    scripts[prompt_key(seed, prompt)] = xml(
        "positiveAttributes", DEMO_POSITIVE_ATTRIBUTES, "attribute"
    )

    prompt = render_template(
        TEMPLATE_DIR, "carveouts", CONCEPT_NAME=name, CONCEPT_DESCRIPTION=description
    )
    scripts[prompt_key(seed, prompt)] = xml("carveOutsInDescription", DEMO_CARVEOUTS, "carveOut")

    prompt = render_template(
        TEMPLATE_DIR, "positive_queries", CONCEPT_NAME=name, CONCEPT_DESCRIPTION=description
    )
    scripts[prompt_key(seed, prompt)] = xml(
        "google_search_keywords", DEMO_POSITIVE_QUERIES, "keyword"
    )

    return write_scripts(fixtures_dir, scripts)


def run_demo(
    home: str | Path,
    seed: int = 0,
    dim: int = 64,
    corpus_size: int = 600,
    per_query_k: int = 150,
    teacher_n: int = 150,
    al_rounds: int = 1,
    al_n: int = 60,
) -> dict:
    home = Path(home)
    home.mkdir(parents=True, exist_ok=True)
    fixtures = home / "fixtures"
    corpus_file = home / "demo.corpus"

    build_demo_scripts(fixtures, seed)
    truth = build_demo_corpus(corpus_file, dim=dim, size=corpus_size, seed=seed)

    config = GatewayConfig(dim=dim, mock_seed=seed, scripts_dir=str(fixtures))
    gateway = config.build(handlers=[DemoMutationHandler()])
    service = ProjectService(home, gateway=gateway, gateway_config=config)

    project_id = service.create_project(DEMO_CONCEPT_NAME, DEMO_DESCRIPTION, seed=seed)
    service.describe(project_id)
    service.attach_corpus(project_id, corpus_file)
    mining = service.run_mining(project_id, per_query_k=per_query_k, mutation_rounds=1)

    queue = service.validation_queue(project_id)["items"]
    labels = [(item["image_id"], truth[item["image_id"]].value) for item in queue]
    counts = service.submit_validation_labels(project_id, labels)

    selection = service.run_strategy_selection(project_id)
    annotation = service.run_teacher_annotation(project_id, teacher_n)
    model_entry = service.train_student(project_id)
    round_dicts = [service.run_al_round(project_id, "stratified", al_n) for _ in range(al_rounds)]

    lines = [f"project\t{project_id}"]
    lines.append(f"queries\t{mining['queries']}\tcandidates\t{mining['candidates']}")
    lines.append(f"validation\t{counts['positive']}+\t{counts['negative']}-")
    lines.append("strategy\tf1")
    for index in sorted(selection["table"]):
        lines.append(f"{index}\t{selection['table'][index]:.6f}")
    lines.append(f"chosen\t{selection['chosen']}")
    lines.append(
        f"teacher\t{annotation['annotated']} labeled "
        f"({annotation['positive']}+/{annotation['negative']}-)"
    )
    base = model_entry["metrics"] or {}
    lines.append(
        f"model\t{model_entry['ref']}\tauPR\t{base.get('aupr', float('nan')):.6f}"
        f"\tF1\t{base.get('f1', float('nan')):.6f}"
    )
    lines.append("round\tsampler\tn\tauPR\tf1")
    for rd in round_dicts:
        lines.append(
            f"{rd['round_index']}\t{rd['sampler']}\t{len(rd['sampled_ids'])}\t"
            f"{rd['metrics']['aupr']:.6f}\t{rd['metrics']['f1']:.6f}"
        )
    table = "\n".join(lines) + "\n"
    return {
        "project_id": project_id,
        "mining": mining,
        "selection": selection,
        "annotation": annotation,
        "model": model_entry,
        "rounds": round_dicts,
        "table": table,
    }
