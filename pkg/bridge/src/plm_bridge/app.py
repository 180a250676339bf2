"""HTTP surface: GET /info and POST /evaluate, one JSON document each way.

Malformed input of any kind answers 400 with {"error": message}; request
bodies are parsed by hand so the error contract stays uniform.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .config import BridgeConfig
from .model import MaskedLMScorer, RequestError


def build_app(cfg: BridgeConfig) -> FastAPI:
    scorer = MaskedLMScorer(cfg)
    app = FastAPI(title="plm-bridge", docs_url=None, redoc_url=None)

    @app.get("/info")
    async def info():
        return {
            "prompt_dim": scorer.prompt_dim,
            "num_classes": scorer.num_classes,
            "model_name": scorer.model_name,
        }

    @app.post("/evaluate")
    async def evaluate(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "malformed JSON body"}, status_code=400)
        try:
            if not isinstance(body, dict):
                raise RequestError("body must be a JSON object")
            raw_prompt = body.get("prompt")
            if not isinstance(raw_prompt, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in raw_prompt
            ):
                raise RequestError('"prompt" must be a list of numbers')
            prompt = np.asarray(raw_prompt, dtype=np.float64)
            samples = body.get("samples")
            if not isinstance(samples, list) or not samples or not all(
                isinstance(s, dict) for s in samples
            ):
                raise RequestError('"samples" must be a non-empty list of objects')
            loss, accuracy, per_sample = scorer.evaluate(prompt, samples)
        except RequestError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        payload = {
            "loss": loss,
            "accuracy": accuracy,
            "num_classes": scorer.num_classes,
        }
        if body.get("return_per_sample"):
            payload["per_sample_loss"] = [float(x) for x in per_sample]
        return payload

    return app
