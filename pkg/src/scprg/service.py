"""FastAPI service wrapping the extraction pipeline.

Endpoints mirror the CLI subcommands one to one; paths in requests refer to
the server's filesystem. Configuration errors map to 400, bad data to 422.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from . import __version__, api
from .errors import ConfigError, ContractError, FormatError, ScprgError, ValidationError

app = FastAPI(title="scprg", version=__version__,
              description="Document-level event argument extraction service")


def _guard(fn, req):
    try:
        return fn(req)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except (ValidationError, FormatError, ContractError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    except FileNotFoundError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    except ScprgError as exc:
        raise HTTPException(status_code=500, detail=str(exc)) from exc


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/synth", response_model=api.SynthResponse)
def synth(req: api.SynthRequest):
    return _guard(api.run_synth, req)


@app.post("/preprocess", response_model=api.PreprocessResponse)
def preprocess(req: api.PreprocessRequest):
    return _guard(api.run_preprocess, req)


@app.post("/train", response_model=api.TrainResponse)
def train(req: api.TrainRequest):
    return _guard(api.run_train, req)


@app.post("/eval", response_model=api.EvalResponse)
def evaluate(req: api.EvalRequest):
    return _guard(api.run_eval, req)


@app.post("/analyze", response_model=api.AnalyzeResponse)
def analyze(req: api.AnalyzeRequest):
    return _guard(api.run_analyze, req)


@app.post("/predict", response_model=api.PredictResponse)
def predict(req: api.PredictRequest):
    return _guard(api.run_predict, req)
