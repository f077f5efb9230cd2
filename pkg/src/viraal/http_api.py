"""HTTP surface for the annotation service (FastAPI, JSON bodies)."""

from __future__ import annotations

import os

from fastapi import Depends, FastAPI, Header, HTTPException
from pydantic import BaseModel, Field

from .service import AnnotationService, ServiceError

TOKEN_ENV = "VIRAAL_SERVICE_TOKEN"


class RoundRequest(BaseModel):
    criterion: str = "entropy-joint"
    budget: int = Field(gt=0)
    seed: int | None = None


class LabelRequest(BaseModel):
    intent: str
    slots: list[str]
    allow_new_tags: bool = False


def create_app(service: AnnotationService) -> FastAPI:
    app = FastAPI(title="viraal annotation service")
    token = os.environ.get(TOKEN_ENV)

    def check_auth(x_auth_token: str | None = Header(default=None)) -> None:
        if token and x_auth_token != token:
            raise HTTPException(status_code=401, detail="bad or missing token")

    guarded = [Depends(check_auth)]

    def wrap(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ServiceError as err:
            raise HTTPException(status_code=err.status, detail=str(err)) from err

    @app.get("/status", dependencies=guarded)
    def status():
        return service.status()

    @app.get("/vocab", dependencies=guarded)
    def vocab():
        return service.vocab_payload()

    @app.post("/rounds", dependencies=guarded)
    def open_round(req: RoundRequest):
        rnd = wrap(service.open_round, req.criterion, req.budget, req.seed)
        return rnd.to_dict()

    @app.get("/tasks", dependencies=guarded)
    def tasks(n: int = 1):
        leased = wrap(service.next_tasks, n)
        return [t.to_dict() for t in leased]

    @app.post("/tasks/{task_id}/label", dependencies=guarded)
    def label(task_id: int, req: LabelRequest):
        return wrap(
            service.submit_label, task_id, req.intent, req.slots, req.allow_new_tags
        )

    @app.post("/tasks/{task_id}/skip", dependencies=guarded)
    def skip(task_id: int):
        return wrap(service.skip_task, task_id)

    @app.post("/retrain", dependencies=guarded)
    def retrain():
        return {"job_id": wrap(service.trigger_retrain)}

    @app.get("/jobs/{job_id}", dependencies=guarded)
    def job(job_id: str):
        found = service.jobs.get(job_id)
        if found is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
        return found.to_dict()

    @app.get("/metrics", dependencies=guarded)
    def metrics():
        report = service.metrics()
        if report is None:
            raise HTTPException(status_code=404, detail="no evaluation available yet")
        return report.to_dict()

    return app
