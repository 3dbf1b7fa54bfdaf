"""Wire API over the project service; the single integration surface for UIs.

Routes live under ``/v1`` and exchange UTF-8 JSON documents carrying a
schema-version field. Errors come back as typed codes plus human messages.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel, Field

from .errors import (
    ModelcrafterError,
    NotFoundError,
    PreconditionError,
    StateError,
    StoreIoError,
)
from .service import ProjectService


class CreateProjectRequest(BaseModel):
    name: str
    description: str | None = None
    seed: int = 0


class DescribeRequest(BaseModel):
    text: str | None = None


class CorpusRequest(BaseModel):
    path: str


class MiningRequest(BaseModel):
    per_query_k: int = 50
    mutation_rounds: int = 1


class ValidationLabel(BaseModel):
    image_id: str
    label: str


class ValidationLabelsRequest(BaseModel):
    labels: list[ValidationLabel]


class TeacherAnnotationRequest(BaseModel):
    n: int = Field(gt=0)


class TrainRequest(BaseModel):
    learning_rate: float | None = None
    batch_size: int | None = None
    max_epochs: int | None = None
    seed: int | None = None


class AlRoundRequest(BaseModel):
    sampler: str = "stratified"
    n: int = Field(default=100, gt=0)


class ImportModelRequest(BaseModel):
    path: str


def _status_for(exc: ModelcrafterError) -> int:
    if isinstance(exc, NotFoundError):
        return 404
    if isinstance(exc, StateError):
        return 409
    if isinstance(exc, StoreIoError):
        return 500
    if isinstance(exc, PreconditionError):
        return 400
    return 400


def create_app(service: ProjectService) -> FastAPI:
    app = FastAPI(title="modelcrafter", version="1")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(ModelcrafterError)
    async def handle_error(_: Request, exc: ModelcrafterError) -> JSONResponse:
        return JSONResponse(
            status_code=_status_for(exc),
            content={"v": 1, "error": {"code": exc.code, "message": str(exc)}},
        )

    @app.get("/v1/projects")
    def list_projects() -> dict:
        return {"v": 1, "projects": service.list_projects()}

    @app.post("/v1/projects")
    def create_project(req: CreateProjectRequest) -> dict:
        project_id = service.create_project(req.name, req.description, req.seed)
        return {"v": 1, "project_id": project_id}

    @app.get("/v1/projects/{project_id}")
    def project_summary(project_id: str) -> dict:
        return service.project_summary(project_id)

    @app.post("/v1/projects/{project_id}/description")
    def describe(project_id: str, req: DescribeRequest) -> dict:
        return {"v": 1, "concept": service.describe(project_id, req.text)}

    @app.post("/v1/projects/{project_id}/corpus")
    def attach_corpus(project_id: str, req: CorpusRequest) -> dict:
        return {"v": 1, "manifest": service.attach_corpus(project_id, req.path)}

    @app.post("/v1/projects/{project_id}/mining")
    def run_mining(project_id: str, req: MiningRequest) -> dict:
        return {"v": 1, **service.run_mining(project_id, req.per_query_k, req.mutation_rounds)}

    @app.get("/v1/projects/{project_id}/validation-queue")
    def validation_queue(project_id: str) -> dict:
        return service.validation_queue(project_id)

    @app.post("/v1/projects/{project_id}/validation-labels")
    def submit_validation_labels(project_id: str, req: ValidationLabelsRequest) -> dict:
        labels = [(item.image_id, item.label) for item in req.labels]
        return {"v": 1, **service.submit_validation_labels(project_id, labels)}

    @app.post("/v1/projects/{project_id}/strategy-selection")
    def run_strategy_selection(project_id: str) -> dict:
        result = service.run_strategy_selection(project_id)
        return {"v": 1, "chosen": result["chosen"], "table": result["table"]}

    @app.get("/v1/projects/{project_id}/strategies")
    def strategies(project_id: str) -> dict:
        return service.strategies(project_id)

    @app.post("/v1/projects/{project_id}/teacher-annotation")
    def run_teacher_annotation(project_id: str, req: TeacherAnnotationRequest) -> dict:
        return {"v": 1, **service.run_teacher_annotation(project_id, req.n)}

    @app.get("/v1/projects/{project_id}/annotations")
    def annotations(project_id: str, page: int = 1, page_size: int = 20) -> dict:
        return service.annotations(project_id, page, page_size)

    @app.post("/v1/projects/{project_id}/train")
    def train_student(project_id: str, req: TrainRequest) -> dict:
        params = {k: v for k, v in req.model_dump().items() if v is not None}
        return {"v": 1, "model": service.train_student(project_id, params)}

    @app.post("/v1/projects/{project_id}/al-round")
    def run_al_round(project_id: str, req: AlRoundRequest) -> dict:
        return {"v": 1, "round": service.run_al_round(project_id, req.sampler, req.n)}

    @app.get("/v1/projects/{project_id}/rounds")
    def rounds(project_id: str) -> dict:
        return service.rounds(project_id)

    @app.get("/v1/projects/{project_id}/mining-stats")
    def mining_stats(project_id: str) -> dict:
        return service.mining_stats(project_id)

    @app.get("/v1/projects/{project_id}/metrics")
    def get_metrics(project_id: str) -> dict:
        return {"v": 1, **service.get_metrics(project_id)}

    @app.get("/v1/projects/{project_id}/model")
    def export_model(project_id: str) -> FileResponse:
        path = service.model_file(project_id)
        return FileResponse(path, media_type="application/octet-stream", filename=path.name)

    @app.post("/v1/projects/{project_id}/import-model")
    def import_model(project_id: str, req: ImportModelRequest) -> dict:
        return {"v": 1, "model": service.import_model(project_id, Path(req.path))}

    return app
