"""Typed service layer: pydantic request/response models and the operations
behind them. The FastAPI app and the CLI are both thin clients of these
functions, so a command line run and an HTTP call execute identical code."""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import BaseModel, Field

from . import corpus as corpus_mod
from .config import RunConfig, load_config
from .corpus import SyntheticConfig, generate_synthetic, load_dataset, serialize_corpus
from .encoder import import_encoder_output
from .errors import ConfigError, ContractError
from .evaluation import (
    export_attention,
    export_cooccurrence,
    export_embeddings,
    export_role_similarity,
    full_report,
)
from .head import Model, forward_for_eval, predict, train

ABLATION_TAGS = {"stcp": "-STCP", "rlig": "-RLIG", "ase": "-ASE"}


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


class SynthRequest(BaseModel):
    out_dir: str
    seed: int = 7
    docs: int = 500
    dev_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    clue_fraction: float = Field(0.6, ge=0.0, le=1.0)
    events_per_doc: int = 1


class SynthResponse(BaseModel):
    train_path: str
    dev_path: str
    documents: int
    events: int
    arguments: int


def run_synth(req: SynthRequest) -> SynthResponse:
    cfg = SyntheticConfig(n_docs=req.docs, clue_fraction=req.clue_fraction,
                          events_per_doc=req.events_per_doc)
    docs, frames = generate_synthetic(cfg, req.seed)
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_dev = int(round(len(docs) * req.dev_fraction))
    dev_ids = {d.doc_id for d in docs[len(docs) - n_dev:]}
    train_docs = [d for d in docs if d.doc_id not in dev_ids]
    dev_docs = [d for d in docs if d.doc_id in dev_ids]
    train_frames = [f for f in frames if f.doc_id not in dev_ids]
    dev_frames = [f for f in frames if f.doc_id in dev_ids]
    train_path = out / "train.jsonl"
    dev_path = out / "dev.jsonl"
    serialize_corpus(train_docs, train_frames, train_path)
    serialize_corpus(dev_docs, dev_frames, dev_path)
    return SynthResponse(train_path=str(train_path), dev_path=str(dev_path),
                         documents=len(docs), events=len(frames),
                         arguments=sum(len(f.gold_args) for f in frames))


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------


class PreprocessRequest(BaseModel):
    input_path: str
    output_path: str
    dataset: str = "rams"  # rams | wikievents | uniform
    split: str = "train"


class PreprocessResponse(BaseModel):
    output_path: str
    stats: dict


_SPLIT_FILES = {
    "rams": {"train": "train.jsonlines", "dev": "dev.jsonlines", "test": "test.jsonlines"},
    "wikievents": {"train": "train.jsonl", "dev": "dev.jsonl", "test": "test.jsonl"},
}


def run_preprocess(req: PreprocessRequest) -> PreprocessResponse:
    fmt = {"rams": "rams-like", "wikievents": "wikievents-like", "uniform": "uniform"}.get(req.dataset)
    if fmt is None:
        raise ConfigError(f"unknown dataset {req.dataset!r}; expected rams, wikievents or uniform")
    path = Path(req.input_path)
    if path.is_dir():
        names = _SPLIT_FILES.get(req.dataset, {})
        candidate = path / names.get(req.split, "")
        if not candidate.exists():
            raise ConfigError(f"no {req.split} split found under {path} (expected {candidate.name})")
        path = candidate
    docs, frames = load_dataset(path, fmt)
    serialize_corpus(docs, frames, req.output_path)
    stats = corpus_mod.corpus_stats(docs, frames)
    return PreprocessResponse(output_path=req.output_path, stats=stats)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


class TrainRequest(BaseModel):
    config_path: str | None = None
    overrides: dict = Field(default_factory=dict)
    out_dir: str | None = None


class TrainResponse(BaseModel):
    checkpoint_path: str
    metrics_path: str
    best_epoch: int
    best_dev_f1: float | None
    epochs_run: int
    metrics: dict


def run_train(req: TrainRequest) -> TrainResponse:
    cfg = load_config(req.config_path, req.overrides)
    if req.out_dir:
        cfg.out_dir = req.out_dir
    if not cfg.train_path:
        raise ConfigError("config must set train_path")
    train_data = load_dataset(cfg.train_path, cfg.data_format)
    dev_data = load_dataset(cfg.dev_path, cfg.data_format) if cfg.dev_path else None
    result = train(train_data, dev_data, cfg)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    result.model.save(ckpt)
    metrics: dict = {"history": result.history, "best_epoch": result.best_epoch}
    if dev_data:
        metrics["dev"] = full_report(result.model, dev_data[0], dev_data[1])
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(metrics, sort_keys=True, indent=2))
    best = result.best_dev_f1
    return TrainResponse(checkpoint_path=str(ckpt), metrics_path=str(metrics_path),
                         best_epoch=result.best_epoch,
                         best_dev_f1=None if best != best else best,
                         epochs_run=len(result.history), metrics=metrics)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


class EvalRequest(BaseModel):
    checkpoint: str
    data_path: str
    data_format: str = "uniform"
    ablate: list[str] = Field(default_factory=list)
    decode: str | None = None
    out_path: str | None = None


class EvalResponse(BaseModel):
    metrics: dict
    ablation: str


def apply_ablations(model: Model, ablate: list[str]) -> str:
    tags = []
    for name in ablate:
        key = name.lower()
        if key not in ABLATION_TAGS:
            raise ConfigError(f"unknown ablation {name!r}; expected one of {sorted(ABLATION_TAGS)}")
        setattr(model.cfg, key, False)
        tags.append(ABLATION_TAGS[key])
    return "".join(tags) or "full"


def run_eval(req: EvalRequest) -> EvalResponse:
    model = Model.load(req.checkpoint)
    ablation = apply_ablations(model, req.ablate)
    docs, frames = load_dataset(req.data_path, req.data_format)
    report = full_report(model, docs, frames, req.decode)
    report["ablation"] = ablation
    if req.out_path:
        Path(req.out_path).write_text(json.dumps(report, sort_keys=True, indent=2))
    return EvalResponse(metrics=report, ablation=ablation)


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


class AnalyzeRequest(BaseModel):
    checkpoint: str
    data_path: str
    data_format: str = "uniform"
    kind: str  # attention | role-sim | cooccurrence | embeddings
    out_path: str
    top_k: int | None = None
    targets: str = "arguments"
    max_spans_per_event: int | None = None
    ablate: list[str] = Field(default_factory=list)


class AnalyzeResponse(BaseModel):
    out_path: str
    rows: int
    detail: dict = Field(default_factory=dict)


def run_analyze(req: AnalyzeRequest) -> AnalyzeResponse:
    model = Model.load(req.checkpoint)
    apply_ablations(model, req.ablate)
    docs, frames = load_dataset(req.data_path, req.data_format)
    if req.kind == "attention":
        n = export_attention(model, docs, frames, req.out_path, req.max_spans_per_event)
        return AnalyzeResponse(out_path=req.out_path, rows=n)
    if req.kind == "role-sim":
        n = export_role_similarity(model, docs, frames, req.out_path)
        return AnalyzeResponse(out_path=req.out_path, rows=n)
    if req.kind == "embeddings":
        n = export_embeddings(model, docs, frames, req.out_path, req.targets)
        return AnalyzeResponse(out_path=req.out_path, rows=n)
    if req.kind == "cooccurrence":
        _, roles = corpus_mod.build_vocabularies(frames)
        matrix = corpus_mod.compute_role_cooccurrence(frames, roles)
        chosen = export_cooccurrence(matrix, frames, req.out_path, req.top_k)
        return AnalyzeResponse(out_path=req.out_path, rows=len(chosen),
                               detail={"roles": chosen})
    raise ConfigError(f"unknown analysis kind {req.kind!r}")


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


class PredictRequest(BaseModel):
    checkpoint: str
    record: dict               # one uniform record
    event_index: int = 0
    mode: str | None = None
    encoder_file: str | None = None  # interchange file overriding the builtin encoder


class PredictedArg(BaseModel):
    role: str
    span: tuple[int, int]


class PredictResponse(BaseModel):
    doc_id: str
    event_index: int
    args: list[PredictedArg]


def run_predict(req: PredictRequest) -> PredictResponse:
    model = Model.load(req.checkpoint)
    docs, frames = _record_to_corpus(req.record)
    matching = [f for f in frames if f.event_index == req.event_index]
    if not matching:
        raise ContractError(f"record has no event with index {req.event_index}")
    frame = matching[0]
    enc = None
    if req.encoder_file:
        enc = import_encoder_output(req.encoder_file)
        if enc.dim != model.head.dim:
            raise ContractError(
                f"imported encoder width {enc.dim} does not match head width {model.head.dim}")
    preds = predict(docs[0], frame, model, req.mode, enc=enc)
    args = [PredictedArg(role=r, span=s) for r, s in sorted(preds)]
    return PredictResponse(doc_id=docs[0].doc_id, event_index=frame.event_index, args=args)


def _record_to_corpus(record: dict):
    import io
    import tempfile

    # reuse the uniform loader's validation on an in-memory record
    line = json.dumps(record)
    with tempfile.NamedTemporaryFile("w", suffix=".jsonl", delete=False) as fh:
        fh.write(line + "\n")
        path = fh.name
    try:
        return load_dataset(path, "uniform")
    finally:
        Path(path).unlink(missing_ok=True)
