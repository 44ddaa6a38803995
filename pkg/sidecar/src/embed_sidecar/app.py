"""FastAPI app implementing the embedding-provider wire contract.

Endpoints:
  GET  /health          -> {"status": "ok", "dim": <int>}
  POST /embed  {texts}  -> {"dim": <int>, "embeddings": [[float]]}
  POST /count  {texts}  -> {"counts": [int]}

The service is stateless; the encoder is loaded once at startup and is
read-only afterwards. Batches above the configured limit are rejected with
a structured 413 body.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel


class TextsRequest(BaseModel):
    texts: list[str]


def create_app(encoder, batch_limit: int = 256) -> FastAPI:
    app = FastAPI(title="embed-sidecar", docs_url=None, redoc_url=None)

    def over_limit(n: int):
        return JSONResponse(
            status_code=413,
            content={
                "error": "batch too large",
                "limit": batch_limit,
                "got": n,
            },
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "dim": encoder.dim}

    @app.post("/embed")
    def embed(request: TextsRequest):
        if len(request.texts) > batch_limit:
            return over_limit(len(request.texts))
        matrix = encoder.embed(request.texts) if request.texts else []
        return {
            "dim": encoder.dim,
            "embeddings": [row.tolist() for row in matrix],
        }

    @app.post("/count")
    def count(request: TextsRequest):
        if len(request.texts) > batch_limit:
            return over_limit(len(request.texts))
        return {"counts": encoder.count(request.texts)}

    return app
