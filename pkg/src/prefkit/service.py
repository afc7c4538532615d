"""HTTP facade over the pipeline operations.

POST endpoints mirror the CLI subcommands one to one; bodies carry the
same config schema plus the output directory. Config and data problems
come back as 400, a numeric abort during training as 422.
"""

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from . import __version__, pipeline, schemas
from .errors import ConfigError, DataError, NumericAbort


class GenRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: schemas.GenConfig
    out_dir: str


class PairsRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: schemas.PairsConfig
    out_dir: str


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: schemas.PipelineConfig | schemas.TrainStageConfig
    out_dir: str
    seed: int | None = None
    resume_from: str | None = None


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: schemas.EvalConfig
    out_dir: str
    seed: int | None = None


def create_app() -> FastAPI:
    app = FastAPI(title="prefkit", version=__version__)

    def _bad_request(request: Request, exc: Exception):
        return JSONResponse(status_code=400, content={
            "error": type(exc).__name__, "detail": str(exc)})

    app.add_exception_handler(ConfigError, _bad_request)
    app.add_exception_handler(DataError, _bad_request)
    app.add_exception_handler(FileNotFoundError, _bad_request)

    @app.exception_handler(NumericAbort)
    def _numeric_abort(request: Request, exc: NumericAbort):
        return JSONResponse(status_code=422, content={
            "error": "NumericAbort", "detail": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/gen")
    def gen(req: GenRequest) -> dict:
        return pipeline.op_gen(req.config, req.out_dir, argv=["service", "/gen"])

    @app.post("/pairs")
    def pairs(req: PairsRequest) -> dict:
        return pipeline.op_pairs(req.config, req.out_dir, argv=["service", "/pairs"])

    @app.post("/train")
    def train(req: TrainRequest) -> dict:
        return pipeline.op_train(req.config, req.out_dir, argv=["service", "/train"],
                                 seed_override=req.seed, resume_from=req.resume_from)

    @app.post("/eval")
    def evaluate(req: EvalRequest) -> dict:
        return pipeline.op_eval(req.config, req.out_dir, argv=["service", "/eval"],
                                seed_override=req.seed)

    @app.post("/report")
    def report(req: schemas.ReportRequest) -> dict:
        return pipeline.op_report(req, argv=["service", "/report"])

    return app


app = create_app()
