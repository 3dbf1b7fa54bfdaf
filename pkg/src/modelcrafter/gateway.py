"""Uniform access to the four foundation-model roles.

A backend fills one role (text LLM, VQA, captioner, or embedder) and is either
``remote`` (wire protocol below) or ``mock`` (deterministic, seeded). Both
kinds sit behind the same call surface so the orchestration layers never know
which one they are talking to.

Wire contract for remote backends: one TCP round-trip per call. A frame is the
decimal byte length of the document, a newline, then the UTF-8 JSON document.
Requests carry ``{role, operation, payload}``; responses ``{status, payload}``.

Mock determinism: every mock answer is a pure function of the backend's
``mock_seed`` and the call inputs, bit-identical across runs and platforms.
"""

from __future__ import annotations

import json
import os
import socket
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Sequence

import numpy as np

from .errors import (
    BackendUnreachableError,
    ConfigurationError,
    DimensionMismatchError,
    NoScriptError,
    PreconditionError,
    RoleMismatchError,
    UnresolvableQuestionError,
)
from .textnorm import sha256_hex, stable_u64, tokens_with_bigrams

if TYPE_CHECKING:  # pragma: no cover
    from .corpus import ImageRecord

ENV_ENDPOINTS = {
    "llm": "MC_LLM_ENDPOINT",
    "vqa": "MC_VQA_ENDPOINT",
    "captioner": "MC_CAPTION_ENDPOINT",
    "embedder": "MC_EMBED_ENDPOINT",
}


class Role(str, Enum):
    LLM = "llm"
    VQA = "vqa"
    CAPTIONER = "captioner"
    EMBEDDER = "embedder"


class Kind(str, Enum):
    REMOTE = "remote"
    MOCK = "mock"


@dataclass(frozen=True)
class BackendDescriptor:
    role: Role
    kind: Kind
    endpoint: str = ""
    mock_seed: int = 0
    max_parallel: int = 4

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ConfigurationError("max_parallel must be >= 1")
        if self.kind is Kind.REMOTE and not self.endpoint:
            raise ConfigurationError(f"remote {self.role.value} backend needs an endpoint")


@dataclass(frozen=True)
class EmbeddingVector:
    """Unit-norm feature vector. All vectors in one project share ``dim``."""

    values: tuple[float, ...]
    dim: int

    def __post_init__(self):
        if len(self.values) != self.dim:
            raise DimensionMismatchError(
                f"vector has {len(self.values)} values, declared dim {self.dim}"
            )
        if not all(np.isfinite(self.values)):
            raise PreconditionError("embedding values must be finite")

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "EmbeddingVector":
        """Build an L2-normalized vector (the project-wide convention)."""
        arr = np.asarray(values, dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if norm == 0.0 or not np.isfinite(norm):
            raise PreconditionError("cannot normalize a zero or non-finite vector")
        arr = arr / norm
        return cls(values=tuple(float(v) for v in arr), dim=len(arr))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def cosine(self, other: "EmbeddingVector") -> float:
        if self.dim != other.dim:
            raise DimensionMismatchError(f"dim {self.dim} vs {other.dim}")
        return float(np.dot(self.as_array(), other.as_array()))


@dataclass(frozen=True)
class VqaExchange:
    question: str
    answer: str

    def __post_init__(self):
        if not self.question.strip():
            raise PreconditionError("question must be non-empty")
        if not self.answer.strip():
            raise PreconditionError("answer must be non-empty")


def prompt_key(mock_seed: int, prompt: str) -> str:
    """Canonical script-lookup key: hash of the prompt plus the mock seed."""
    return sha256_hex(f"{mock_seed}\n{prompt.strip()}")


def load_scripts(fixtures_dir: str | Path) -> dict[str, str]:
    """Read prompt-hash -> response records from every ``*.ndjson`` file."""
    scripts: dict[str, str] = {}
    root = Path(fixtures_dir)
    for path in sorted(root.glob("*.ndjson")):
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                scripts[rec["key"]] = rec["response"]
    return scripts


def write_scripts(fixtures_dir: str | Path, records: dict[str, str], name: str = "scripts") -> Path:
    path = Path(fixtures_dir) / f"{name}.ndjson"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for key in sorted(records):
            fh.write(json.dumps({"v": 1, "key": key, "response": records[key]}) + "\n")
    return path


# --- base ------------------------------------------------------------------

_OP_ROLES = {
    "complete": Role.LLM,
    "vqa_answer": Role.VQA,
    "caption": Role.CAPTIONER,
    "embed_text": Role.EMBEDDER,
    "embed_image": Role.EMBEDDER,
}


class Backend:
    """Shared role/parallelism enforcement for all backend kinds.

    Instances are immutable handles; calls may come from many threads, with at
    most ``max_parallel`` in flight at any instant.
    """

    def __init__(self, descriptor: BackendDescriptor):
        self.descriptor = descriptor
        self._slots = threading.Semaphore(descriptor.max_parallel)

    @property
    def role(self) -> Role:
        return self.descriptor.role

    def _enter(self, op: str):
        required = _OP_ROLES[op]
        if self.role is not required:
            raise RoleMismatchError(
                f"{op} requires a {required.value} backend, got {self.role.value}"
            )
        return self._slots

    # Public surface; each op checks its role before doing any work.

    def complete(self, prompt: str, max_tokens: int = 1024) -> str:
        slots = self._enter("complete")
        if not prompt.strip():
            raise PreconditionError("prompt must be non-empty")
        if max_tokens < 1:
            raise PreconditionError("max_tokens must be positive")
        with slots:
            return self._complete(prompt, max_tokens)

    def vqa_answer(
        self, image: "ImageRecord", question: str, bound_attribute: str | None = None
    ) -> VqaExchange:
        slots = self._enter("vqa_answer")
        if not question.strip():
            raise PreconditionError("question must be non-empty")
        with slots:
            answer = self._vqa_answer(image, question, bound_attribute)
        return VqaExchange(question=question, answer=answer)

    def caption(self, image: "ImageRecord") -> str:
        slots = self._enter("caption")
        with slots:
            return self._caption(image)

    def embed_text(self, text: str) -> EmbeddingVector:
        slots = self._enter("embed_text")
        if not text.strip():
            raise PreconditionError("text must be non-empty")
        with slots:
            return self._embed_text(text)

    def embed_image(self, image: "ImageRecord") -> EmbeddingVector:
        slots = self._enter("embed_image")
        with slots:
            return self._embed_image(image)

    # Role-specific implementations.

    def _complete(self, prompt: str, max_tokens: int) -> str:
        raise NotImplementedError

    def _vqa_answer(self, image: "ImageRecord", question: str, bound_attribute: str | None) -> str:
        raise NotImplementedError

    def _caption(self, image: "ImageRecord") -> str:
        raise NotImplementedError

    def _embed_text(self, text: str) -> EmbeddingVector:
        raise NotImplementedError

    def _embed_image(self, image: "ImageRecord") -> EmbeddingVector:
        raise NotImplementedError


# --- mocks -----------------------------------------------------------------

PromptHandler = Callable[[str], "str | None"]


class MockLlm(Backend):
    """Scripted completion backend.

    Responses come from a prompt-hash script table; ``handlers`` may generate
    responses dynamically (e.g. the rule-based decision handler) when no
    script matches. Anything else is a test-fixture gap, reported as such.
    """

    def __init__(
        self,
        mock_seed: int = 0,
        scripts: dict[str, str] | None = None,
        handlers: Iterable[PromptHandler] = (),
        max_parallel: int = 4,
    ):
        super().__init__(
            BackendDescriptor(Role.LLM, Kind.MOCK, mock_seed=mock_seed, max_parallel=max_parallel)
        )
        self.scripts = dict(scripts or {})
        self.handlers = list(handlers)

    def _complete(self, prompt: str, max_tokens: int) -> str:
        key = prompt_key(self.descriptor.mock_seed, prompt)
        if key in self.scripts:
            return self.scripts[key]
        for handler in self.handlers:
            response = handler(prompt)
            if response is not None:
                return response
        raise NoScriptError(f"no scripted response for prompt key {key[:16]}…", key=key)


class MockVqa(Backend):
    """Attribute-oracle VQA: yes iff the bound attribute is on the record."""

    def __init__(self, mock_seed: int = 0, max_parallel: int = 4):
        super().__init__(
            BackendDescriptor(Role.VQA, Kind.MOCK, mock_seed=mock_seed, max_parallel=max_parallel)
        )

    def _vqa_answer(self, image: "ImageRecord", question: str, bound_attribute: str | None) -> str:
        if bound_attribute is None:
            raise UnresolvableQuestionError(
                "mock VQA needs the question's attribute binding", question=question
            )
        attrs = image.mock_attributes or set()
        return "yes" if bound_attribute in attrs else "no"


class MockCaptioner(Backend):
    """Caption = canonical serialization of the record's attribute set."""

    def __init__(self, mock_seed: int = 0, max_parallel: int = 4):
        super().__init__(
            BackendDescriptor(
                Role.CAPTIONER, Kind.MOCK, mock_seed=mock_seed, max_parallel=max_parallel
            )
        )

    def _caption(self, image: "ImageRecord") -> str:
        attrs = sorted(image.mock_attributes or set())
        return "attributes: " + (", ".join(attrs) if attrs else "none")


class MockEmbedder(Backend):
    """Seeded hash-projection embedder.

    Each token gets a fixed random unit vector (seeded by the token text and
    ``mock_seed``); an input embeds to the normalized sum of its token
    vectors. Records sharing attributes therefore land closer in cosine than
    disjoint ones, which is all the retrieval tests need.
    """

    def __init__(self, dim: int, mock_seed: int = 0, max_parallel: int = 8):
        if dim < 1:
            raise ConfigurationError("embedding dim must be >= 1")
        super().__init__(
            BackendDescriptor(
                Role.EMBEDDER, Kind.MOCK, mock_seed=mock_seed, max_parallel=max_parallel
            )
        )
        self.dim = dim
        self._token_cache: dict[str, np.ndarray] = {}
        self._cache_lock = threading.Lock()

    def _token_vector(self, token: str) -> np.ndarray:
        with self._cache_lock:
            vec = self._token_cache.get(token)
        if vec is None:
            seed = stable_u64("mock-embed", str(self.descriptor.mock_seed), token)
            rng = np.random.Generator(np.random.PCG64(seed))
            raw = rng.standard_normal(self.dim)
            vec = raw / np.linalg.norm(raw)
            with self._cache_lock:
                self._token_cache[token] = vec
        return vec

    def embed_tokens(self, tokens: Iterable[str]) -> EmbeddingVector:
        toks = list(tokens)
        if not toks:
            toks = ["__none__"]
        total = np.zeros(self.dim)
        for tok in sorted(set(toks)):
            total += self._token_vector(tok)
        return EmbeddingVector.from_values(total)

    def _embed_text(self, text: str) -> EmbeddingVector:
        toks = tokens_with_bigrams(text)
        if not toks:
            raise PreconditionError("text has no embeddable tokens")
        return self.embed_tokens(toks)

    def _embed_image(self, image: "ImageRecord") -> EmbeddingVector:
        if image.embedding is not None:
            vec = EmbeddingVector.from_values(image.embedding.values)
            if vec.dim != self.dim:
                raise DimensionMismatchError(
                    f"record {image.id} has dim {vec.dim}, embedder dim {self.dim}"
                )
            return vec
        if image.mock_attributes is None:
            raise PreconditionError(
                f"record {image.id} has neither an embedding nor mock attributes"
            )
        return self.embed_tokens(image.mock_attributes)


# --- remote ----------------------------------------------------------------


def _send_frame(sock: socket.socket, doc: dict) -> None:
    body = json.dumps(doc).encode("utf-8")
    sock.sendall(str(len(body)).encode("ascii") + b"\n" + body)


def _recv_frame(sock: socket.socket) -> dict:
    header = b""
    while not header.endswith(b"\n"):
        chunk = sock.recv(1)
        if not chunk:
            raise ConnectionError("connection closed before frame header")
        header += chunk
    length = int(header.strip())
    body = b""
    while len(body) < length:
        chunk = sock.recv(length - len(body))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        body += chunk
    return json.loads(body.decode("utf-8"))


def _parse_endpoint(endpoint: str) -> tuple[str, int]:
    ep = endpoint
    if "://" in ep:
        ep = ep.split("://", 1)[1]
    host, _, port = ep.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigurationError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


class RemoteBackend(Backend):
    """Client for the length-delimited request/response wire contract."""

    def __init__(self, descriptor: BackendDescriptor, timeout: float = 30.0):
        if descriptor.kind is not Kind.REMOTE:
            raise ConfigurationError("RemoteBackend needs a remote descriptor")
        super().__init__(descriptor)
        self.timeout = timeout

    def _call(self, operation: str, payload: dict) -> dict:
        host, port = _parse_endpoint(self.descriptor.endpoint)
        try:
            with socket.create_connection((host, port), timeout=self.timeout) as sock:
                _send_frame(
                    sock,
                    {"role": self.role.value, "operation": operation, "payload": payload},
                )
                response = _recv_frame(sock)
        except (OSError, ConnectionError, ValueError) as exc:
            raise BackendUnreachableError(
                f"{self.role.value} backend at {self.descriptor.endpoint}: {exc}"
            ) from exc
        if response.get("status") != "ok":
            raise BackendUnreachableError(
                f"{self.role.value} backend error: {response.get('payload')}"
            )
        return response["payload"]

    @staticmethod
    def _image_payload(image: "ImageRecord") -> dict:
        return {"id": image.id, "uri": image.uri, "metadata": dict(image.metadata)}

    def _complete(self, prompt: str, max_tokens: int) -> str:
        return self._call("complete", {"prompt": prompt, "max_tokens": max_tokens})["text"]

    def _vqa_answer(self, image: "ImageRecord", question: str, bound_attribute: str | None) -> str:
        payload = {"image": self._image_payload(image), "question": question}
        return self._call("vqa_answer", payload)["answer"]

    def _caption(self, image: "ImageRecord") -> str:
        return self._call("caption", {"image": self._image_payload(image)})["text"]

    def _embed_text(self, text: str) -> EmbeddingVector:
        values = self._call("embed_text", {"text": text})["values"]
        return EmbeddingVector.from_values(values)

    def _embed_image(self, image: "ImageRecord") -> EmbeddingVector:
        if image.embedding is not None:
            return EmbeddingVector.from_values(image.embedding.values)
        values = self._call("embed_image", {"image": self._image_payload(image)})["values"]
        return EmbeddingVector.from_values(values)


def serve_backend(handler: Callable[[dict], dict], host: str = "127.0.0.1", port: int = 0):
    """Minimal threaded server for the wire contract (tests and local rigs).

    ``handler`` maps a request document to a response payload; exceptions turn
    into error responses. Returns ``(endpoint, shutdown)``.
    """
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(16)
    endpoint = f"{host}:{server.getsockname()[1]}"
    stop = threading.Event()

    def _serve_one(conn: socket.socket) -> None:
        with conn:
            try:
                request = _recv_frame(conn)
                payload = handler(request)
                _send_frame(conn, {"status": "ok", "payload": payload})
            except Exception as exc:  # noqa: BLE001 - report to the client
                try:
                    _send_frame(conn, {"status": "error", "payload": str(exc)})
                except OSError:
                    pass

    def _loop() -> None:
        while not stop.is_set():
            try:
                server.settimeout(0.2)
                conn, _ = server.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=_serve_one, args=(conn,), daemon=True).start()
        server.close()

    thread = threading.Thread(target=_loop, daemon=True)
    thread.start()

    def shutdown() -> None:
        stop.set()
        thread.join(timeout=2)

    return endpoint, shutdown


# --- gateway ---------------------------------------------------------------


@dataclass
class ModelGateway:
    """The four role slots the rest of the system calls through."""

    llm: Backend
    vqa: Backend
    captioner: Backend
    embedder: Backend

    def backend_for(self, role: Role) -> Backend:
        return {
            Role.LLM: self.llm,
            Role.VQA: self.vqa,
            Role.CAPTIONER: self.captioner,
            Role.EMBEDDER: self.embedder,
        }[role]

    def complete(self, prompt: str, max_tokens: int = 1024) -> str:
        return self.llm.complete(prompt, max_tokens)

    def vqa_answer(
        self, image: "ImageRecord", question: str, bound_attribute: str | None = None
    ) -> VqaExchange:
        return self.vqa.vqa_answer(image, question, bound_attribute)

    def caption(self, image: "ImageRecord") -> str:
        return self.captioner.caption(image)

    def embed_text(self, text: str) -> EmbeddingVector:
        return self.embedder.embed_text(text)

    def embed_image(self, image: "ImageRecord") -> EmbeddingVector:
        return self.embedder.embed_image(image)


@dataclass
class GatewayConfig:
    """Backend wiring, loadable from a JSON config file with env overrides."""

    dim: int = 64
    mock_seed: int = 0
    scripts_dir: str | None = None
    endpoints: dict[str, str] = field(default_factory=dict)
    max_parallel: int = 4

    @classmethod
    def from_file(cls, path: str | Path | None, env: dict[str, str] | None = None) -> "GatewayConfig":
        env = dict(os.environ if env is None else env)
        cfg = cls()
        if path is not None:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            cfg.dim = int(raw.get("dim", cfg.dim))
            cfg.mock_seed = int(raw.get("mock_seed", cfg.mock_seed))
            cfg.scripts_dir = raw.get("scripts_dir", cfg.scripts_dir)
            cfg.endpoints = dict(raw.get("endpoints", {}))
            cfg.max_parallel = int(raw.get("max_parallel", cfg.max_parallel))
        for role, var in ENV_ENDPOINTS.items():
            if env.get(var):
                cfg.endpoints[role] = env[var]
        return cfg

    def build(self, handlers: Iterable[PromptHandler] = ()) -> ModelGateway:
        scripts = load_scripts(self.scripts_dir) if self.scripts_dir else {}
        for role_name, endpoint in self.endpoints.items():
            if role_name not in ENV_ENDPOINTS:
                raise ConfigurationError(f"unknown backend role {role_name!r}")
            if endpoint:
                _parse_endpoint(endpoint)  # fail at config time, not mid-request

        def backend(role: Role) -> Backend:
            endpoint = self.endpoints.get(role.value)
            if endpoint:
                return RemoteBackend(
                    BackendDescriptor(
                        role, Kind.REMOTE, endpoint=endpoint, max_parallel=self.max_parallel
                    )
                )
            if role is Role.LLM:
                return MockLlm(self.mock_seed, scripts, handlers, self.max_parallel)
            if role is Role.VQA:
                return MockVqa(self.mock_seed, self.max_parallel)
            if role is Role.CAPTIONER:
                return MockCaptioner(self.mock_seed, self.max_parallel)
            return MockEmbedder(self.dim, self.mock_seed, self.max_parallel)

        return ModelGateway(
            llm=backend(Role.LLM),
            vqa=backend(Role.VQA),
            captioner=backend(Role.CAPTIONER),
            embedder=backend(Role.EMBEDDER),
        )
