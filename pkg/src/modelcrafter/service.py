"""Project lifecycle: the one integration surface the API, CLI and UI share.

All mutations journal through the project store; per-project locks serialize
writers while reads work on replayed snapshots. The global project seed feeds
every stochastic component so a whole pipeline is reproducible byte-for-byte.
"""

from __future__ import annotations

import json
import shutil
import threading
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .active_learning import DEFAULT_STRATA, RoundRecord, evaluate_model, run_round
from .annotator import (
    AnnotationFailure,
    Annotator,
    AnnotatorConfig,
    Decision,
    RuleDecisionHandler,
    STRATEGIES,
    result_to_record,
    strategy,
)
from .concepts import Attribute, Concept, ConceptEngine, Polarity
from .corpus import CorpusIndex
from .errors import NotFoundError, PreconditionError, StateError
from .evaluation import MetricsReport, select_strategy
from .gateway import GatewayConfig, MockLlm, ModelGateway
from .miner import DEFAULT_MUTATION_ROUNDS, DEFAULT_PER_QUERY_K, mine
from .store import ProjectStore, ProjectState, atomic_write_bytes
from .textnorm import identifier, sha256_hex, stable_u64
from .trainer import (
    DistilledModel,
    LabeledExample,
    LabelSource,
    TrainConfig,
    load_model,
    save_model,
)

VALIDATION_SET_SIZE = 100


def metrics_to_dict(report: MetricsReport) -> dict:
    return {
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "aupr": report.aupr,
        "threshold": report.threshold,
        "support_positive": report.support_positive,
        "support_negative": report.support_negative,
        "degenerate": report.degenerate,
    }


def concept_to_dict(concept: Concept) -> dict:
    def attr(a: Attribute) -> dict:
        return {"id": a.id, "text": a.text, "polarity": a.polarity.value, "atomic": a.atomic}

    return {
        "id": concept.id,
        "name": concept.name,
        "description": concept.description,
        "positive_attributes": [attr(a) for a in concept.positive_attributes],
        "carve_outs": [attr(a) for a in concept.carve_outs],
    }


def concept_from_dict(data: dict) -> Concept:
    def attr(d: dict) -> Attribute:
        return Attribute(
            id=d["id"], text=d["text"], polarity=Polarity(d["polarity"]), atomic=d["atomic"]
        )

    return Concept(
        id=data["id"],
        name=data["name"],
        description=data.get("description", ""),
        positive_attributes=tuple(attr(a) for a in data.get("positive_attributes", [])),
        carve_outs=tuple(attr(a) for a in data.get("carve_outs", [])),
    )


def round_to_dict(record: RoundRecord) -> dict:
    return {
        "round_index": record.round_index,
        "sampler": record.sampler,
        "sampled_ids": list(record.sampled_ids),
        "new_positive": record.new_positive,
        "new_negative": record.new_negative,
        "model_ref": record.model_ref,
        "metrics": metrics_to_dict(record.metrics),
    }


class ProjectService:
    """Workflow endpoints over a store root; one instance serves many projects."""

    def __init__(
        self,
        home: str | Path,
        gateway: ModelGateway | None = None,
        gateway_config: GatewayConfig | None = None,
        template_dir: str | Path | None = None,
    ):
        self.home = Path(home)
        self.projects_dir = self.home / "projects"
        self.gateway_config = gateway_config or GatewayConfig()
        self.gateway = gateway or self.gateway_config.build()
        self.engine = ConceptEngine(self.gateway, template_dir)
        self.annotator = Annotator(self.gateway, template_dir)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._corpus_cache: dict[tuple[str, str], CorpusIndex] = {}

    # -- plumbing ---------------------------------------------------------------

    def _lock(self, project_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(project_id, threading.Lock())

    def _root(self, project_id: str) -> Path:
        return self.projects_dir / project_id

    def _open(self, project_id: str) -> ProjectStore:
        root = self._root(project_id)
        if not (root / "journal.ndjson").exists():
            raise NotFoundError(f"no project {project_id!r}")
        return ProjectStore(root)

    def list_projects(self) -> list[str]:
        if not self.projects_dir.exists():
            return []
        return sorted(p.name for p in self.projects_dir.iterdir() if (p / "journal.ndjson").exists())

    def _concept(self, state: ProjectState) -> Concept:
        if state.concept is None:
            raise StateError("project has no concept yet; run describe first")
        return concept_from_dict(state.concept)

    def _corpus(self, state: ProjectState, store: ProjectStore) -> CorpusIndex:
        if state.corpus_path is None or state.corpus_manifest is None:
            raise StateError("project has no corpus; run attach-corpus first")
        key = (state.project_id, state.corpus_manifest["checksum"])
        if key not in self._corpus_cache:
            index, _ = CorpusIndex.ingest(store.root / state.corpus_path)
            self._corpus_cache[key] = index
        return self._corpus_cache[key]

    def _ensure_decision_handler(self, concept: Concept) -> None:
        """Mock decision LLMs need the rule handler for this concept installed."""
        llm = self.gateway.llm
        if isinstance(llm, MockLlm):
            for handler in llm.handlers:
                if isinstance(handler, RuleDecisionHandler) and handler.concept.name == concept.name:
                    return
            llm.handlers.append(RuleDecisionHandler(concept))

    def _labeled_examples(self, state: ProjectState, corpus: CorpusIndex) -> dict[str, LabeledExample]:
        out = {}
        for image_id, info in state.labels.items():
            out[image_id] = LabeledExample(
                image_id=image_id,
                embedding=corpus.get(image_id).embedding,
                label=Decision(info["label"]),
                source=LabelSource(info["source"]),
            )
        return out

    def _validation_examples(self, state: ProjectState, corpus: CorpusIndex) -> list[LabeledExample]:
        return [
            LabeledExample(
                image_id=image_id,
                embedding=corpus.get(image_id).embedding,
                label=Decision(label),
                source=LabelSource.USER,
            )
            for image_id, label in sorted(state.validation_labels.items())
        ]

    def _train_config(self, state: ProjectState, overrides: dict | None = None) -> TrainConfig:
        params = {"seed": state.seed}
        params.update(overrides or {})
        return TrainConfig(**params)

    def _active_model(self, state: ProjectState, store: ProjectStore) -> DistilledModel:
        if state.active_model_ref is None:
            raise StateError("project has no trained model; run train first")
        return load_model(store.model_path(state.active_model_ref))

    # -- endpoints ----------------------------------------------------------------

    def create_project(self, name: str, description: str | None = None, seed: int = 0) -> str:
        if not name.strip():
            raise PreconditionError("project name must be non-empty")
        project_id = "p" + sha256_hex(f"{seed}:{name}")[:10]
        root = self._root(project_id)
        if (root / "journal.ndjson").exists():
            raise StateError(f"project {project_id!r} already exists for this name and seed")
        with self._lock(project_id):
            store = ProjectStore(root)
            concept = Concept(id=identifier(name), name=name, description=description or "")
            store.commit(
                "create",
                {
                    "project_id": project_id,
                    "name": name,
                    "seed": seed,
                    "concept": concept_to_dict(concept),
                },
            )
        return project_id

    def describe(self, project_id: str, text: str | None = None) -> dict:
        """Set or generate the description, then re-run attribute extraction."""
        with self._lock(project_id):
            store = self._open(project_id)
            state = store.state
            base = self._concept(state)
            description = text if text and text.strip() else (base.description or None)
            concept = self.engine.initialize_concept(base.id, base.name, description)
            positives = self.engine.extract_positive_attributes(concept)
            carveouts = self.engine.extract_carveouts(concept)
            concept = replace(
                concept,
                positive_attributes=tuple(positives),
                carve_outs=tuple(carveouts),
            )
            store.commit("set_concept", {"concept": concept_to_dict(concept)})
            return concept_to_dict(concept)

    def attach_corpus(self, project_id: str, corpus_file: str | Path) -> dict:
        with self._lock(project_id):
            store = self._open(project_id)
            index, manifest = CorpusIndex.ingest(corpus_file, name="main")
            rel = "corpus/main.corpus"
            target = store.root / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            index.save(target)
            manifest_dict = {
                "name": manifest.name,
                "dim": manifest.dim,
                "record_count": manifest.record_count,
                "source_path": rel,
                "checksum": manifest.checksum,
            }
            atomic_write_bytes(
                store.root / "corpus" / "manifest.json",
                (json.dumps({"v": 1, **manifest_dict}, indent=2, sort_keys=True) + "\n").encode(),
            )
            store.commit("attach_corpus", {"corpus_path": rel, "manifest": manifest_dict})
            return manifest_dict

    def run_mining(
        self,
        project_id: str,
        per_query_k: int = DEFAULT_PER_QUERY_K,
        mutation_rounds: int = DEFAULT_MUTATION_ROUNDS,
    ) -> dict:
        with self._lock(project_id):
            store = self._open(project_id)
            state = store.state
            concept = self._concept(state)
            if not concept.description:
                raise StateError("mining requires a described concept; run describe first")
            corpus = self._corpus(state, store)
            run = mine(self.engine, concept, corpus, per_query_k, mutation_rounds)
            queue_size = min(VALIDATION_SET_SIZE, len(run.candidate_ids))
            rng = np.random.Generator(
                np.random.PCG64(stable_u64("validation-queue", project_id, str(state.seed)))
            )
            queue = (
                [run.candidate_ids[i] for i in sorted(
                    rng.choice(len(run.candidate_ids), size=queue_size, replace=False)
                )]
                if queue_size
                else []
            )
            payload_run = {
                "concept_id": run.concept_id,
                "per_query_k": run.per_query_k,
                "queries": [
                    {
                        "text": q.text,
                        "polarity": q.polarity.value,
                        "lineage": list(q.lineage),
                        "word_count": q.word_count,
                    }
                    for q in run.queries
                ],
                "candidate_ids": list(run.candidate_ids),
                "stats": [[text, hits] for text, hits in run.stats],
            }
            store.commit("mining_run", {"run": payload_run, "validation_queue": queue})
            return {
                "queries": len(run.queries),
                "candidates": len(run.candidate_ids),
                "validation_queue": len(queue),
            }

    def submit_validation_labels(
        self, project_id: str, labels: Sequence[tuple[str, str]]
    ) -> dict:
        if not labels:
            raise PreconditionError("labels must be non-empty")
        with self._lock(project_id):
            store = self._open(project_id)
            state = store.state
            corpus = self._corpus(state, store)
            queue = set(state.validation_queue)
            normalized: list[tuple[str, str]] = []
            for image_id, label in labels:
                if image_id not in corpus:
                    raise NotFoundError(f"image {image_id!r} is not in the corpus")
                if image_id not in queue:
                    raise StateError(
                        f"image {image_id!r} is not in the validation queue; "
                        "validation ids must stay disjoint from the training pool"
                    )
                if image_id in state.labels:
                    raise StateError(f"image {image_id!r} is already in the training pool")
                value = Decision(label).value
                normalized.append((image_id, value))
            store.commit("validation_labels", {"labels": normalized})
            state = store.state
            counts = {
                "positive": sum(1 for v in state.validation_labels.values() if v == "positive"),
                "negative": sum(1 for v in state.validation_labels.values() if v == "negative"),
                "total": len(state.validation_labels),
            }
            return counts

    def run_strategy_selection(self, project_id: str) -> dict:
        with self._lock(project_id):
            store = self._open(project_id)
            state = store.state
            concept = self._concept(state)
            corpus = self._corpus(state, store)
            labels = state.validation_labels
            if not any(v == "positive" for v in labels.values()) or not any(
                v == "negative" for v in labels.values()
            ):
                raise StateError(
                    "strategy selection requires at least one positive and one negative "
                    "validation label; run label-validation first"
                )
            self._ensure_decision_handler(concept)
            ordered = sorted(labels.items())
            images = [corpus.get(image_id) for image_id, _ in ordered]
            truths = [Decision(v) for _, v in ordered]
            chosen, table = select_strategy(self.annotator, concept, images, truths, STRATEGIES)
            store.commit(
                "strategy_selection",
                {"chosen": chosen.strategy_index, "table": {str(k): v for k, v in table.items()}},
            )
            return {"chosen": chosen.strategy_index, "table": table}

    def _chosen_config(self, state: ProjectState) -> AnnotatorConfig:
        if state.chosen_strategy is None:
            return strategy(0)
        return strategy(state.chosen_strategy)

    def run_teacher_annotation(self, project_id: str, n: int) -> dict:
        if n < 1:
            raise PreconditionError("n must be positive")
        with self._lock(project_id):
            store = self._open(project_id)
            state = store.state
            concept = self._concept(state)
            corpus = self._corpus(state, store)
            if not state.candidate_pool:
                raise StateError("no mined candidates; run mine first")
            self._ensure_decision_handler(concept)
            config = self._chosen_config(state)
            queue = set(state.validation_queue)
            todo = [
                cid
                for cid in state.candidate_pool
                if cid not in queue and cid not in state.labels
            ][:n]
            if not todo:
                return {"annotated": 0, "failed": 0, "positive": 0, "negative": 0}
            outcomes = self.annotator.annotate_batch(
                [corpus.get(cid) for cid in todo], concept, config
            )
            records = [result_to_record(o) for o in outcomes]
            new_labels = [
                [o.image_id, o.decision.value, LabelSource.ANNOTATOR.value]
                for o in outcomes
                if not isinstance(o, AnnotationFailure)
            ]
            store.commit(
                "teacher_annotations", {"records": records, "new_labels": new_labels}
            )
            return {
                "annotated": len(new_labels),
                "failed": len(records) - len(new_labels),
                "positive": sum(1 for _, label, _ in new_labels if label == "positive"),
                "negative": sum(1 for _, label, _ in new_labels if label == "negative"),
            }

    def _commit_model(
        self,
        store: ProjectStore,
        model: DistilledModel,
        metrics: MetricsReport | None,
        n_examples: int,
        train_table: str | None = None,
    ) -> dict:
        ref = f"model-{len(store.state.models) + 1:04d}"
        save_model(model, store.model_path(ref))
        if train_table is not None:
            atomic_write_bytes(
                store.model_path(ref).with_suffix(".metrics.tsv"), train_table.encode()
            )
        entry = {
            "ref": ref,
            "provenance": model.train_provenance,
            "n_examples": n_examples,
            "metrics": metrics_to_dict(metrics) if metrics else None,
        }
        return entry

    def train_student(self, project_id: str, params: dict | None = None) -> dict:
        with self._lock(project_id):
            store = self._open(project_id)
            state = store.state
            corpus = self._corpus(state, store)
            labeled = self._labeled_examples(state, corpus)
            if not labeled:
                raise StateError("no labeled examples; run annotate first")
            config = self._train_config(state, params)
            from .trainer import train as train_fn

            model, train_metrics = train_fn(list(labeled.values()), config)
            validation = self._validation_examples(state, corpus)
            metrics = None
            if validation and any(e.label is Decision.POSITIVE for e in validation):
                metrics = evaluate_model(model, validation)
            entry = self._commit_model(
                store, model, metrics, len(labeled), train_metrics.to_table()
            )
            store.commit("train", {"model": entry})
            return entry

    def run_al_round(
        self, project_id: str, sampler: str = "stratified", n: int = 100
    ) -> dict:
        with self._lock(project_id):
            store = self._open(project_id)
            state = store.state
            concept = self._concept(state)
            corpus = self._corpus(state, store)
            model = self._active_model(state, store)
            self._ensure_decision_handler(concept)
            labeled = self._labeled_examples(state, corpus)
            validation = self._validation_examples(state, corpus)
            if not validation:
                raise StateError("active learning needs a labeled validation set")
            config = self._chosen_config(state)
            round_index = len(state.rounds) + 1
            ref = f"model-{len(state.models) + 1:04d}"
            record, new_labels, new_model = run_round(
                corpus=corpus,
                model=model,
                labeled=labeled,
                validation=validation,
                annotate_fn=lambda recs: self.annotator.annotate_batch(recs, concept, config),
                sampler=sampler,
                n=n,
                train_config=self._train_config(state),
                round_index=round_index,
                model_ref=ref,
                strata=DEFAULT_STRATA,
            )
            if not record.sampled_ids:
                return round_to_dict(record)
            save_model(new_model, store.model_path(ref))
            entry = {
                "ref": ref,
                "provenance": new_model.train_provenance,
                "n_examples": len(labeled) + len(new_labels),
                "metrics": metrics_to_dict(record.metrics),
            }
            store.commit(
                "al_round",
                {
                    "round": round_to_dict(record),
                    "new_labels": [
                        [e.image_id, e.label.value, e.source.value] for e in new_labels.values()
                    ],
                    "model": entry,
                },
            )
            return round_to_dict(record)

    def get_metrics(self, project_id: str) -> dict:
        state = self._open(project_id).state
        return {
            "models": [
                {"ref": m["ref"], "metrics": m["metrics"], "n_examples": m["n_examples"]}
                for m in state.models
            ],
            "rounds": [
                {
                    "round_index": r["round_index"],
                    "sampler": r["sampler"],
                    "n": len(r["sampled_ids"]),
                    "metrics": r["metrics"],
                }
                for r in state.rounds
            ],
            "rounds_table": self._rounds_table(state),
        }

    @staticmethod
    def _rounds_table(state: ProjectState) -> str:
        lines = ["round\tsampler\tn\tprecision\trecall\tf1\taupr"]
        for r in state.rounds:
            m = r["metrics"]
            aupr_text = "" if m["aupr"] is None else f"{m['aupr']:.6f}"
            lines.append(
                f"{r['round_index']}\t{r['sampler']}\t{len(r['sampled_ids'])}\t"
                f"{m['precision']:.6f}\t{m['recall']:.6f}\t{m['f1']:.6f}\t{aupr_text}"
            )
        return "\n".join(lines) + "\n"

    def mining_stats(self, project_id: str) -> dict:
        """Per-query hit counts of every mining run, plus a tabular export."""
        state = self._open(project_id).state
        lines = ["run\tquery\tpolarity\tlineage\thits"]
        for run_index, run in enumerate(state.mining_runs, start=1):
            by_text = {q["text"]: q for q in run["queries"]}
            for text, hits in run["stats"]:
                query = by_text.get(text, {})
                lineage = ">".join(query.get("lineage", []))
                lines.append(
                    f"{run_index}\t{text}\t{query.get('polarity', '')}\t{lineage}\t{hits}"
                )
            lines.append(f"{run_index}\t# candidates\t\t\t{len(run['candidate_ids'])}")
        return {"v": 1, "runs": len(state.mining_runs), "table": "\n".join(lines) + "\n"}

    def model_file(self, project_id: str) -> Path:
        """Path of the active model's binary."""
        store = self._open(project_id)
        if store.state.active_model_ref is None:
            raise StateError("no trained model to export")
        return store.model_path(store.state.active_model_ref)

    def export_model(self, project_id: str, out_path: str | Path) -> Path:
        src = self.model_file(project_id)
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, out)
        return out

    def import_model(self, project_id: str, model_file: str | Path) -> dict:
        with self._lock(project_id):
            store = self._open(project_id)
            state = store.state
            model = load_model(model_file)
            if state.corpus_manifest and model.input_dim != state.corpus_manifest["dim"]:
                raise PreconditionError(
                    f"model dim {model.input_dim} != corpus dim {state.corpus_manifest['dim']}"
                )
            entry = self._commit_model(store, model, None, 0)
            store.commit("train", {"model": entry})
            return entry

    # -- read side for the UI -----------------------------------------------------

    def project_summary(self, project_id: str) -> dict:
        state = self._open(project_id).state
        return {
            "v": 1,
            "project_id": state.project_id,
            "name": state.name,
            "seed": state.seed,
            "concept": state.concept,
            "corpus": state.corpus_manifest,
            "candidates": len(state.candidate_pool),
            "labels": len(state.labels),
            "validation": {
                "labeled": len(state.validation_labels),
                "total": len(state.validation_queue),
            },
            "chosen_strategy": state.chosen_strategy,
            "active_model_ref": state.active_model_ref,
            "rounds": len(state.rounds),
        }

    def validation_queue(self, project_id: str) -> dict:
        store = self._open(project_id)
        state = store.state
        corpus = self._corpus(state, store) if state.corpus_path else None
        items = []
        for image_id in state.validation_queue:
            uri = corpus.get(image_id).uri if corpus and image_id in corpus else ""
            items.append(
                {
                    "image_id": image_id,
                    "uri": uri,
                    "label": state.validation_labels.get(image_id),
                }
            )
        return {
            "v": 1,
            "items": items,
            "progress": {
                "labeled": len(state.validation_labels),
                "total": len(state.validation_queue),
            },
        }

    def annotations(self, project_id: str, page: int = 1, page_size: int = 20) -> dict:
        if page < 1 or page_size < 1:
            raise PreconditionError("page and page_size must be positive")
        state = self._open(project_id).state
        start = (page - 1) * page_size
        return {
            "v": 1,
            "items": state.annotations[start : start + page_size],
            "page": page,
            "page_size": page_size,
            "total": len(state.annotations),
        }

    def strategies(self, project_id: str) -> dict:
        state = self._open(project_id).state
        return {"v": 1, "chosen": state.chosen_strategy, "table": state.strategy_table}

    def rounds(self, project_id: str) -> dict:
        state = self._open(project_id).state
        return {"v": 1, "items": state.rounds}
