"""Command-line interface.

A thin client over the typed service layer: every subcommand builds the
same request model the HTTP API accepts and either executes it in process
(default) or posts it to a running service via ``--server``. Exit codes:
0 success, 2 configuration or usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import api
from .errors import ConfigError, ScprgError

ENDPOINTS = {
    "synth": ("/synth", api.SynthRequest, api.run_synth),
    "preprocess": ("/preprocess", api.PreprocessRequest, api.run_preprocess),
    "train": ("/train", api.TrainRequest, api.run_train),
    "eval": ("/eval", api.EvalRequest, api.run_eval),
    "analyze": ("/analyze", api.AnalyzeRequest, api.run_analyze),
    "predict": ("/predict", api.PredictRequest, api.run_predict),
}


def _dispatch(command: str, request, server: str | None):
    route, _, local = ENDPOINTS[command]
    if server is None:
        return json.loads(local(request).model_dump_json())
    import httpx

    resp = httpx.post(server.rstrip("/") + route, json=request.model_dump(), timeout=None)
    if resp.status_code == 400:
        raise ConfigError(resp.json().get("detail", resp.text))
    if resp.status_code >= 400:
        raise RuntimeError(f"server error {resp.status_code}: {resp.text}")
    return resp.json()


def _parse_sets(pairs: list[str]) -> dict:
    out = {}
    for raw in pairs:
        if "=" not in raw:
            raise ConfigError(f"--set expects key=value, got {raw!r}")
        key, value = raw.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scprg",
                                     description="Document-level event argument extraction")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service; default runs in process")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic clue-dependent benchmark")
    p.add_argument("--out", required=True, help="output directory for train/dev files")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--docs", type=int, default=500)
    p.add_argument("--dev-fraction", type=float, default=0.2)
    p.add_argument("--clue-fraction", type=float, default=0.6)
    p.add_argument("--events-per-doc", type=int, default=1)

    p = sub.add_parser("preprocess", help="convert native dataset files to uniform records")
    p.add_argument("--dataset", choices=["rams", "wikievents", "uniform"], required=True)
    p.add_argument("--in", dest="input_path", required=True,
                   help="native file, or a directory holding the official splits")
    p.add_argument("--out", dest="output_path", required=True)
    p.add_argument("--split", choices=["train", "dev", "test"], default="train")

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", dest="data_path", required=True)
    p.add_argument("--format", dest="data_format", default="uniform")
    p.add_argument("--ablate", action="append", default=[], choices=["stcp", "rlig", "ase"],
                   help="disable a mechanism for this run (repeatable)")
    p.add_argument("--decode", choices=["per-span-argmax", "per-role-top1"], default=None)
    p.add_argument("--out", dest="out_path", default=None, help="write metrics JSON here")

    p = sub.add_parser("analyze", help="export analysis CSVs")
    p.add_argument("kind", choices=["attention", "role-sim", "cooccurrence", "embeddings"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", dest="data_path", required=True)
    p.add_argument("--format", dest="data_format", default="uniform")
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--targets", choices=["arguments", "roles"], default="arguments")
    p.add_argument("--max-spans-per-event", type=int, default=None)
    p.add_argument("--ablate", action="append", default=[], choices=["stcp", "rlig", "ase"])

    p = sub.add_parser("predict", help="decode one event of a uniform record")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--record", required=True, help="path of a one-record uniform JSON file")
    p.add_argument("--event", type=int, default=0)
    p.add_argument("--mode", choices=["per-span-argmax", "per-role-top1"], default=None)
    p.add_argument("--encoder-file", default=None,
                   help="interchange file to use instead of the builtin encoder")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    return parser


def _request_for(args) -> tuple[str, object]:
    cmd = args.command
    if cmd == "synth":
        return cmd, api.SynthRequest(out_dir=args.out, seed=args.seed, docs=args.docs,
                                     dev_fraction=args.dev_fraction,
                                     clue_fraction=args.clue_fraction,
                                     events_per_doc=args.events_per_doc)
    if cmd == "preprocess":
        return cmd, api.PreprocessRequest(input_path=args.input_path,
                                          output_path=args.output_path,
                                          dataset=args.dataset, split=args.split)
    if cmd == "train":
        overrides = _parse_sets(args.set)
        if args.seed is not None:
            overrides["seed"] = args.seed
        return cmd, api.TrainRequest(config_path=args.config, overrides=overrides,
                                     out_dir=args.out_dir)
    if cmd == "eval":
        return cmd, api.EvalRequest(checkpoint=args.checkpoint, data_path=args.data_path,
                                    data_format=args.data_format, ablate=args.ablate,
                                    decode=args.decode, out_path=args.out_path)
    if cmd == "analyze":
        return cmd, api.AnalyzeRequest(checkpoint=args.checkpoint, data_path=args.data_path,
                                       data_format=args.data_format, kind=args.kind,
                                       out_path=args.out_path, top_k=args.top_k,
                                       targets=args.targets,
                                       max_spans_per_event=args.max_spans_per_event,
                                       ablate=args.ablate)
    if cmd == "predict":
        with open(args.record, encoding="utf-8") as fh:
            record = json.loads(fh.readline())
        return cmd, api.PredictRequest(checkpoint=args.checkpoint, record=record,
                                       event_index=args.event, mode=args.mode,
                                       encoder_file=args.encoder_file)
    raise ConfigError(f"unknown command {cmd!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import app
        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    try:
        command, request = _request_for(args)
        result = _dispatch(command, request, args.server)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ScprgError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
