"""Project store: an append-only journal plus deterministic record files.

The journal is the source of truth. Every mutation is one checksummed JSON
line; replay rebuilds the full project state. Artifacts a mutation references
(model binaries, the corpus copy) are written before the journal entry, so a
crash at any point leaves the store loadable at the last committed entry. A
torn trailing line is repaired (truncated) on open.

Record files (``labels.ndjson`` etc.) are deterministic materializations of
the journaled state, maintained for diffing and UI consumption; they are
rewritten on open and after each commit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import StoreIoError
from .textnorm import sha256_hex

JOURNAL_SCHEMA_VERSION = 1
JOURNAL_NAME = "journal.ndjson"

# Test-only crash injection: receives a named fault point and may raise.
FAULT_HOOK: Callable[[str], None] | None = None


def _fault(point: str) -> None:
    if FAULT_HOOK is not None:
        FAULT_HOOK(point)


def _entry_sha(entry: dict) -> str:
    core = {k: entry[k] for k in ("v", "seq", "op", "payload")}
    return sha256_hex(json.dumps(core, sort_keys=True))


def atomic_write_text(path: Path, content: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    _fault(f"write:{path.name}:tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        fh.write(content)
        fh.flush()
        os.fsync(fh.fileno())
    _fault(f"write:{path.name}:rename")
    os.replace(tmp, path)


def atomic_write_bytes(path: Path, content: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(content)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


@dataclass
class ProjectState:
    """Replayed view of one project's journal."""

    project_id: str = ""
    name: str = ""
    seed: int = 0
    concept: dict | None = None
    corpus_path: str | None = None
    corpus_manifest: dict | None = None
    mining_runs: list[dict] = field(default_factory=list)
    candidate_pool: list[str] = field(default_factory=list)
    validation_queue: list[str] = field(default_factory=list)
    validation_labels: dict[str, str] = field(default_factory=dict)
    labels: dict[str, dict] = field(default_factory=dict)
    annotations: list[dict] = field(default_factory=list)
    strategy_table: dict[str, float] = field(default_factory=dict)
    chosen_strategy: int | None = None
    models: list[dict] = field(default_factory=list)
    active_model_ref: str | None = None
    rounds: list[dict] = field(default_factory=list)
    applied_seq: int = 0

    def apply(self, entry: dict) -> None:
        op = entry["op"]
        payload = entry["payload"]
        if op == "create":
            self.project_id = payload["project_id"]
            self.name = payload["name"]
            self.seed = payload["seed"]
            self.concept = payload["concept"]
        elif op == "set_concept":
            self.concept = payload["concept"]
        elif op == "attach_corpus":
            self.corpus_path = payload["corpus_path"]
            self.corpus_manifest = payload["manifest"]
        elif op == "mining_run":
            self.mining_runs.append(payload["run"])
            self.candidate_pool = list(payload["run"]["candidate_ids"])
            self.validation_queue = list(payload["validation_queue"])
        elif op == "validation_labels":
            for image_id, label in payload["labels"]:
                self.validation_labels[image_id] = label
        elif op == "strategy_selection":
            self.chosen_strategy = payload["chosen"]
            self.strategy_table = {str(k): v for k, v in payload["table"].items()}
        elif op == "teacher_annotations":
            self.annotations.extend(payload["records"])
            for image_id, label, source in payload["new_labels"]:
                self.labels[image_id] = {"label": label, "source": source}
        elif op == "train":
            self.models.append(payload["model"])
            self.active_model_ref = payload["model"]["ref"]
        elif op == "al_round":
            self.rounds.append(payload["round"])
            for image_id, label, source in payload["new_labels"]:
                self.labels[image_id] = {"label": label, "source": source}
            self.models.append(payload["model"])
            self.active_model_ref = payload["model"]["ref"]
        else:
            raise StoreIoError(f"unknown journal op {op!r}")
        self.applied_seq = entry["seq"]


class ProjectStore:
    """One directory per project; see the module docstring for the layout."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.journal_path = self.root / JOURNAL_NAME
        self.state = ProjectState()
        self._replay()

    # -- journal ---------------------------------------------------------------

    def _replay(self) -> None:
        self.state = ProjectState()
        if not self.journal_path.exists():
            return
        valid_end = 0
        with self.journal_path.open("rb") as fh:
            data = fh.read()
        offset = 0
        while offset < len(data):
            newline = data.find(b"\n", offset)
            if newline == -1:
                break  # torn trailing line
            line = data[offset : newline + 1]
            try:
                entry = json.loads(line.decode("utf-8"))
                if entry.get("v") != JOURNAL_SCHEMA_VERSION:
                    break
                if entry.get("sha") != _entry_sha(entry):
                    break
            except (ValueError, KeyError, TypeError):
                break
            self.state.apply(entry)
            valid_end = newline + 1
            offset = newline + 1
        if valid_end < len(data):
            # Repair: drop the torn tail so future appends stay well-formed.
            with self.journal_path.open("r+b") as fh:
                fh.truncate(valid_end)
        self._materialize()

    def commit(self, op: str, payload: dict) -> int:
        """Append one entry (the commit point) and refresh record files."""
        entry = {
            "v": JOURNAL_SCHEMA_VERSION,
            "seq": self.state.applied_seq + 1,
            "op": op,
            "payload": payload,
        }
        entry["sha"] = _entry_sha(entry)
        line = json.dumps(entry, sort_keys=True) + "\n"
        self.root.mkdir(parents=True, exist_ok=True)
        _fault("journal:before-append")
        try:
            with self.journal_path.open("a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StoreIoError(f"cannot append to journal: {exc}") from exc
        _fault("journal:after-append")
        self.state.apply(entry)
        self._materialize()
        return entry["seq"]

    # -- artifacts ---------------------------------------------------------------

    def model_path(self, ref: str) -> Path:
        return self.root / "models" / f"{ref}.bin"

    def corpus_dir(self) -> Path:
        return self.root / "corpus"

    # -- materialized record files ----------------------------------------------

    def _materialize(self) -> None:
        if not self.root.exists() or self.state.applied_seq == 0:
            return
        s = self.state
        project = {
            "v": 1,
            "project_id": s.project_id,
            "name": s.name,
            "seed": s.seed,
            "corpus_path": s.corpus_path,
            "corpus_manifest": s.corpus_manifest,
            "chosen_strategy": s.chosen_strategy,
            "strategy_table": s.strategy_table,
            "active_model_ref": s.active_model_ref,
            "models": s.models,
            "validation_queue": s.validation_queue,
            "candidate_pool_size": len(s.candidate_pool),
            "applied_seq": s.applied_seq,
        }
        atomic_write_text(self.root / "project.json", json.dumps(project, indent=2, sort_keys=True) + "\n")
        atomic_write_text(
            self.root / "concept.json",
            json.dumps({"v": 1, "concept": s.concept}, indent=2, sort_keys=True) + "\n",
        )
        atomic_write_text(
            self.root / "labels.ndjson",
            "".join(
                json.dumps({"v": 1, "image_id": k, **v}, sort_keys=True) + "\n"
                for k, v in sorted(s.labels.items())
            ),
        )
        atomic_write_text(
            self.root / "validation.ndjson",
            "".join(
                json.dumps({"v": 1, "image_id": k, "label": v}, sort_keys=True) + "\n"
                for k, v in sorted(s.validation_labels.items())
            ),
        )
        atomic_write_text(
            self.root / "annotations.ndjson",
            "".join(json.dumps(r, sort_keys=True) + "\n" for r in s.annotations),
        )
        atomic_write_text(
            self.root / "rounds.ndjson",
            "".join(json.dumps(r, sort_keys=True) + "\n" for r in s.rounds),
        )
        atomic_write_text(
            self.root / "mining.ndjson",
            "".join(json.dumps(r, sort_keys=True) + "\n" for r in s.mining_runs),
        )
