#!/usr/bin/env python3
"""Export hidden states and last-layer attention heads from a pretrained
transformer into the SCPRGTNS interchange container.

The input is one uniform record (one JSON object per line); the selected
event is wrapped into the role-interactive layout

    [CLS] [E_<type>] <type pieces> [E_<type>] [SEP] <word pieces> [SEP]
    [R_<role>] <role pieces> [R_<role>] ... [SEP]

with fresh special tokens registered for the event type and each role.
Sequences longer than the model limit are encoded with a sliding window
over the document pieces while the fixed prefix and role suffix ride along
in every window; overlapping hidden states are averaged and attention rows
re-normalized over the full sequence.

The container layout: magic "SCPRGTNS", u32 version=1, u32 metadata byte
length, a JSON object mapping tensor names to {dtype, shape, offset} plus
scalar metadata keys, then a packed little-endian float32 payload.

Usage:
    export.py --model <name-or-path> --in record.jsonl --event 0 --out file.scprgt
"""

from __future__ import annotations

import argparse
import json
import struct
import sys

import numpy as np
import torch

MAGIC = b"SCPRGTNS"
VERSION = 1


def write_container(path: str, tensors: dict[str, np.ndarray], meta: dict) -> None:
    payload = bytearray()
    entries = {}
    for name, arr in tensors.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        entries[name] = {"dtype": "f32", "shape": list(arr32.shape), "offset": len(payload)}
        payload.extend(arr32.tobytes())
    doc = dict(meta)
    doc.update(entries)
    blob = json.dumps(doc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def label_words(label: str) -> list[str]:
    out = []
    for chunk in label.replace("_", ".").replace("/", ".").split("."):
        chunk = chunk.strip().lower()
        if chunk:
            out.append(chunk)
    return out or [label.lower()]


def load_record(path: str, doc_index: int = 0) -> dict:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise SystemExit(f"no records in {path}")
    if doc_index >= len(lines):
        raise SystemExit(f"record index {doc_index} out of range ({len(lines)} records)")
    return json.loads(lines[doc_index])


class SequenceBuild:
    """Token ids plus every anchor position of the assembled layout."""

    def __init__(self):
        self.ids: list[int] = []
        self.event_token_pos = -1
        self.context_range = (-1, -1)
        self.role_token_pos: list[int] = []
        self.none_pos = -1
        self.word_to_token: list[tuple[int, int]] = []
        self.event_piece_count = 0
        self.word_piece_counts: list[int] = []
        self.role_piece_counts: list[int] = []


def build_sequence(tokenizer, record: dict, event: dict) -> SequenceBuild:
    def pieces(text: str) -> list[int]:
        out = tokenizer(text, add_special_tokens=False)["input_ids"]
        return out if out else [tokenizer.unk_token_id]

    etype = event["type"]
    roles = list(event.get("roles", []))
    special = {"additional_special_tokens": [f"[E_{etype}]"] + [f"[R_{r}]" for r in roles]}
    tokenizer.add_special_tokens(special)
    e_id = tokenizer.convert_tokens_to_ids(f"[E_{etype}]")

    b = SequenceBuild()
    b.ids.append(tokenizer.cls_token_id)
    b.event_token_pos = len(b.ids)
    b.ids.append(e_id)
    ev_pieces: list[int] = []
    for part in label_words(etype):
        ev_pieces.extend(pieces(part))
    b.event_piece_count = len(ev_pieces)
    b.ids.extend(ev_pieces)
    b.ids.append(e_id)
    b.ids.append(tokenizer.sep_token_id)

    ctx_start = len(b.ids)
    for word in record["words"]:
        wp = pieces(word)
        b.word_to_token.append((len(b.ids), len(b.ids) + len(wp) - 1))
        b.word_piece_counts.append(len(wp))
        b.ids.extend(wp)
    b.context_range = (ctx_start, len(b.ids) - 1)
    b.ids.append(tokenizer.sep_token_id)

    for role in roles:
        r_id = tokenizer.convert_tokens_to_ids(f"[R_{role}]")
        b.role_token_pos.append(len(b.ids))
        b.ids.append(r_id)
        rp: list[int] = []
        for part in label_words(role):
            rp.extend(pieces(part))
        b.role_piece_counts.append(len(rp))
        b.ids.extend(rp)
        b.ids.append(r_id)
    b.none_pos = len(b.ids)
    b.ids.append(tokenizer.sep_token_id)
    return b


@torch.no_grad()
def encode_ids(model, ids: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """(hidden (n, d), attention (H, n, n)) from the last layer, eval mode."""
    batch = torch.tensor([ids], dtype=torch.long)
    out = model(input_ids=batch, attention_mask=torch.ones_like(batch),
                output_attentions=True, output_hidden_states=False)
    hidden = out.last_hidden_state[0].to(torch.float32).numpy()
    attn = out.attentions[-1][0].to(torch.float32).numpy()
    return hidden, attn


def window_plans(build: SequenceBuild, limit: int) -> list[np.ndarray]:
    lo, hi = build.context_range
    prefix = np.arange(0, lo)
    suffix = np.arange(hi + 1, len(build.ids))
    l_w = hi - lo + 1
    budget = limit - len(prefix) - len(suffix)
    if l_w <= budget:
        return [np.arange(len(build.ids))]
    if budget < 1:
        raise SystemExit(f"fixed blocks alone exceed the model limit of {limit} tokens")
    stride = max(budget // 2, 1)
    plans = []
    start = 0
    while True:
        end = min(start + budget, l_w)
        plans.append(np.concatenate([prefix, np.arange(lo + start, lo + end), suffix]))
        if end >= l_w:
            return plans
        start += stride
        if start + budget > l_w:
            start = l_w - budget


def encode_sequence(model, build: SequenceBuild, limit: int) -> tuple[np.ndarray, np.ndarray, int]:
    plans = window_plans(build, limit)
    if len(plans) == 1:
        hidden, attn = encode_ids(model, build.ids)
        return hidden, attn, 1
    n = len(build.ids)
    hidden_sum = None
    hidden_cnt = np.zeros(n)
    attn_sum = None
    attn_cnt = np.zeros((n, n))
    for idx in plans:
        h, a = encode_ids(model, [build.ids[i] for i in idx])
        if hidden_sum is None:
            hidden_sum = np.zeros((n, h.shape[1]))
            attn_sum = np.zeros((a.shape[0], n, n))
        hidden_sum[idx] += h
        hidden_cnt[idx] += 1
        cell = np.ix_(idx, idx)
        attn_sum[(slice(None),) + cell] += a
        attn_cnt[cell] += 1
    hidden = hidden_sum / hidden_cnt[:, None]
    covered = attn_cnt > 0
    attn = np.divide(attn_sum, attn_cnt[None], out=np.zeros_like(attn_sum), where=covered[None])
    attn = attn / attn.sum(axis=2, keepdims=True)
    return hidden, attn, len(plans)


def export(model_name: str, record: dict, event_index: int, out_path: str,
           seed: int = 0) -> dict:
    from transformers import AutoModel, AutoTokenizer

    events = record.get("events", [])
    if event_index >= len(events):
        raise SystemExit(f"record has {len(events)} events; index {event_index} out of range")
    event = events[event_index]

    torch.manual_seed(seed)
    tokenizer = AutoTokenizer.from_pretrained(model_name)
    # eager attention: sdpa kernels refuse to return the attention tensors
    model = AutoModel.from_pretrained(model_name, attn_implementation="eager")
    model.eval()

    build = build_sequence(tokenizer, record, event)
    model.resize_token_embeddings(len(tokenizer))
    limit = int(getattr(model.config, "max_position_embeddings", 512))
    hidden, attn, n_windows = encode_sequence(model, build, limit)

    meta = {
        "kind": "encoder-output",
        "event_token_pos": build.event_token_pos,
        "context_range": list(build.context_range),
        "role_token_pos": build.role_token_pos,
        "none_pos": build.none_pos,
        "H": int(attn.shape[0]),
        "d": int(hidden.shape[1]),
        "l_s": len(build.ids),
        "word_to_token": [list(t) for t in build.word_to_token],
        "roles": list(event.get("roles", [])),
        "event_type": event["type"],
        "doc_id": record["doc_id"],
        "event_index": event_index,
        "model_name": model_name,
        "tokenizer_fingerprint": f"{tokenizer.__class__.__name__}:{len(tokenizer)}",
        "windows": n_windows,
        "event_piece_count": build.event_piece_count,
        "word_piece_counts": build.word_piece_counts,
        "role_piece_counts": build.role_piece_counts,
    }
    write_container(out_path, {"H_s": hidden, "A": attn}, meta)
    return meta


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", required=True, help="pretrained model name or local path")
    parser.add_argument("--in", dest="input_path", required=True, help="uniform record JSONL")
    parser.add_argument("--doc", type=int, default=0, help="record index within the file")
    parser.add_argument("--event", type=int, default=0, help="event index within the record")
    parser.add_argument("--out", required=True, help="output interchange file")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    record = load_record(args.input_path, args.doc)
    meta = export(args.model, record, args.event, args.out, args.seed)
    print(json.dumps({"out": args.out, "l_s": meta["l_s"], "H": meta["H"],
                      "d": meta["d"], "windows": meta["windows"]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
