"""HTTP surface: POST /execute, GET /health."""
from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .service import (
    DEFAULT_TIMEOUT_S,
    ExecutionRequest,
    RequestError,
    execute,
    helper_versions,
)

app = FastAPI(title="imgsandbox", version="0.1.0")


class ExecuteBody(BaseModel):
    code: str
    image_pointer: str | None = None
    timeout_s: float | None = None
    output_format: str | None = None


@app.post("/execute")
def execute_endpoint(body: ExecuteBody) -> dict:
    request = ExecutionRequest(
        code=body.code,
        image_pointer=body.image_pointer,
        timeout_s=body.timeout_s if body.timeout_s is not None else DEFAULT_TIMEOUT_S,
        output_format=body.output_format or "PNG",
    )
    try:
        return execute(request).to_json()
    except RequestError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


@app.get("/health")
def health_endpoint() -> dict:
    return {"status": "ok", "helpers": helper_versions()}
