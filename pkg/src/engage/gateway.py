"""HTTP scoring/selection service.

Endpoints (JSON over HTTP/1.1):
  POST /score   {context, response}                  -> {score}
  POST /select  {context, candidates[]} | {context, n, seed?}
                -> {chosen_index, chosen_text, scores[], latency_ms}
  GET  /healthz -> {status, model_version}

The loaded model is immutable; request handling is concurrent and scores are
identical to in-process scoring. Server-side generation goes through the
outbound generator protocol: POST {backend}/generate {context, seed} -> {text}.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .errors import ConfigError, GenerationError, ScorerError
from .reward import ScorerInterface, TrainedScorer
from .selector import GeneratorInterface, best_of_n, generate_and_select

DEFAULT_N = 4


@dataclass
class ServiceConfig:
    listen_address: str = "127.0.0.1:8900"
    model_path: str = ""
    generator_backend: str | None = None
    default_n: int = DEFAULT_N
    request_timeout_ms: int = 10000
    max_body_bytes: int = 1 << 20

    def __post_init__(self):
        if self.default_n < 1:
            raise ConfigError("default_n must be >= 1")
        if self.request_timeout_ms <= 0:
            raise ConfigError("request_timeout_ms must be positive")

    @property
    def host(self) -> str:
        return self.listen_address.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen_address.rsplit(":", 1)[1])


_ENV_FIELDS = {
    "listen_address": "ENGAGE_LISTEN",
    "model_path": "ENGAGE_MODEL_PATH",
    "generator_backend": "ENGAGE_GENERATOR_BACKEND",
    "default_n": "ENGAGE_DEFAULT_N",
    "request_timeout_ms": "ENGAGE_REQUEST_TIMEOUT_MS",
    "max_body_bytes": "ENGAGE_MAX_BODY_BYTES",
}


def resolve_config(file_values: dict | None = None,
                   flag_values: dict | None = None,
                   env: dict | None = None) -> ServiceConfig:
    """Precedence: flags > environment > config file > defaults."""
    env = os.environ if env is None else env
    values: dict = {}
    for source in (file_values or {}, ):
        values.update({k: v for k, v in source.items() if v is not None})
    for field_name, env_name in _ENV_FIELDS.items():
        if env_name in env:
            raw = env[env_name]
            if field_name in ("default_n", "request_timeout_ms", "max_body_bytes"):
                raw = int(raw)
            values[field_name] = raw
    values.update({k: v for k, v in (flag_values or {}).items() if v is not None})
    known = set(ServiceConfig.__dataclass_fields__)
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    return ServiceConfig(**values)


class HTTPGenerator:
    """Outbound client for the generator backend protocol."""

    def __init__(self, base_url: str, timeout_ms: int = 10000):
        self.base_url = base_url.rstrip("/")
        self.timeout_ms = timeout_ms
        import requests

        self._session = requests.Session()

    def sample(self, context_text: str, seed: int) -> str:
        import requests

        try:
            resp = self._session.post(
                f"{self.base_url}/generate",
                json={"context": context_text, "seed": seed},
                timeout=self.timeout_ms / 1000.0,
            )
        except requests.RequestException as exc:
            raise GenerationError(f"generator backend failed: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise GenerationError(
                f"generator backend HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["text"]
        except (ValueError, KeyError) as exc:
            raise GenerationError(f"malformed generator response: {exc}") from exc


class ScoreRequest(BaseModel):
    context: str
    response: str


class SelectRequest(BaseModel):
    context: str
    candidates: list[str] | None = None
    n: int | None = None
    seed: int = 0


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": {"code": code, "message": message}})


def create_app(model: ScorerInterface, config: ServiceConfig | None = None,
               generator: GeneratorInterface | None = None,
               model_version: str = "unknown") -> FastAPI:
    config = config or ServiceConfig()
    if generator is None and config.generator_backend:
        generator = HTTPGenerator(config.generator_backend,
                                  config.request_timeout_ms)
    if isinstance(model, TrainedScorer):
        model_version = model.training_meta.get("data_fingerprint", model_version)
    app = FastAPI(title="engage scoring service")
    state = {"model": model, "generator": generator, "version": model_version}
    app.state.engage = state

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return _error(400, "invalid_request", str(exc.errors()[:3]))

    @app.middleware("http")
    async def limit_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > config.max_body_bytes:
            return _error(413, "body_too_large",
                          f"body exceeds {config.max_body_bytes} bytes")
        return await call_next(request)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_version": state["version"]}

    @app.post("/score")
    def score(req: ScoreRequest):
        try:
            value = state["model"].score(req.context, req.response)
        except ScorerError as exc:
            return _error(502, "scorer_error", str(exc))
        return {"score": value}

    @app.post("/select")
    def select(req: SelectRequest):
        if req.candidates is not None and req.n is not None:
            return _error(400, "invalid_request",
                          "pass either candidates or n, not both")
        try:
            if req.candidates is not None:
                if not req.candidates:
                    return _error(400, "invalid_request", "candidates is empty")
                result = best_of_n(req.candidates, req.context, state["model"])
            else:
                if state["generator"] is None:
                    return _error(400, "no_generator",
                                  "server-side generation not configured")
                n = req.n or config.default_n
                if n < 1:
                    return _error(400, "invalid_request", "n must be >= 1")
                result = generate_and_select(state["generator"], req.context,
                                             n, state["model"], req.seed)
        except ScorerError as exc:
            return _error(502, "scorer_error", str(exc))
        except GenerationError as exc:
            return _error(502, "generator_error", str(exc))
        return {
            "chosen_index": result.chosen_index,
            "chosen_text": result.chosen_text,
            "scores": list(result.scores),
            "latency_ms": result.latency_ms,
        }

    return app


def serve(config: ServiceConfig, model: ScorerInterface | None = None):
    """Load the model, bind and run until terminated. Readiness (the
    /healthz route answering) implies the model is loaded."""
    import uvicorn

    if model is None:
        from .reward import load_model

        model = load_model(config.model_path)
    app = create_app(model, config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
