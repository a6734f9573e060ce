"""Acceptance suite: one test per criterion, each printing a PASS line with
the measured values when it holds (run with ``pytest tests/test_acceptance.py -v -s``).

Benchmark regressions (seed 7, 500 docs, 5-epoch pinned budget) measured at
pin time: full overall 0.990 / clue 0.984 / pair 0.984; -STCP clue 0.524;
-RLIG pair 0.701. The asserted floors leave slack for cross-machine BLAS
rounding while staying far above the required margins.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from scprg import numkit as nk
from scprg.benchmark import run_benchmark
from scprg.config import RunConfig
from scprg.corpus import (
    Document,
    EventFrame,
    SyntheticConfig,
    compute_role_cooccurrence,
    generate_synthetic,
    load_dataset,
)
from scprg.encoder import export_encoder_output, import_encoder_output
from scprg.fusion import rlig_role_vector, span_context_attention, stcp_context_vector
from scprg.head import (
    boundary_loss,
    build_model,
    compile_event,
    focal_loss,
    forward_event,
    total_loss,
    train,
)
from scprg.numkit import Tensor
from scprg.spans import CandidateSpan, enumerate_spans, exclude_impossible


def report(name: str, detail: str = "") -> None:
    print(f"\nACCEPTANCE {name}: PASS {detail}")


@pytest.fixture(scope="module")
def benchmark_results(tmp_path_factory):
    work = tmp_path_factory.mktemp("bench")
    return {
        "full": run_benchmark(work / "full"),
        "stcp": run_benchmark(work / "stcp", ablate=("stcp",)),
        "rlig": run_benchmark(work / "rlig", ablate=("rlig",)),
    }


def test_gradient_suite():
    """Reverse-mode vs central finite differences on the full loss."""
    started = time.perf_counter()
    doc1 = Document("g1", tuple(f"w{i}" for i in range(6)), (0,))
    frame1 = EventFrame("g1", 0, "evt", (0, 0), ("r_a", "r_b"),
                        (("r_a", (2, 2)), ("r_b", (4, 4))))
    doc2 = Document("g2", ("a", "b", "c", "d", "e"), (0,))
    frame2 = EventFrame("g2", 0, "evt", (1, 1), ("r_a", "r_b"), (("r_b", (3, 3)),))
    cfg = RunConfig(toy_layers=1, toy_heads=2, toy_dim=8, toy_ff_dim=16,
                    length_embed_dim=4, dropout=0.0, max_span_len=4, seed=3)
    model = build_model([frame1, frame2], [], [doc1, doc2], cfg)
    plans = [compile_event(doc1, frame1, model.spec, cfg, model.roles, True),
             compile_event(doc2, frame2, model.spec, cfg, model.roles, True)]

    def loss():
        total = None
        for (d, f), plan in zip(((doc1, frame1), (doc2, frame2)), plans):
            enc = model.encode((d, f))
            fwd = forward_event(plan, enc, model.head, cfg)
            total = fwd.loss if total is None else nk.add(total, fwd.loss)
        return total

    err = nk.grad_check(loss, model.params(), max_coords=8,
                        rng=np.random.default_rng(0))
    elapsed = time.perf_counter() - started
    assert err < 1e-5, f"max relative error {err}"
    assert elapsed < 60, f"took {elapsed:.1f}s"
    report("gradient-suite", f"(max rel err {err:.2e}, {elapsed:.1f}s)")


def test_distribution_invariants(tmp_path):
    """p_c, p_r, classifier rows and imported attention rows are distributions."""
    rng = np.random.default_rng(11)
    docs, frames = generate_synthetic(SyntheticConfig(n_docs=30), seed=11)
    cfg = RunConfig(toy_layers=1, toy_heads=2, toy_dim=16, toy_ff_dim=32,
                    length_embed_dim=4, dropout=0.0, max_span_len=6, seed=11)
    model = build_model(frames, [], docs, cfg)
    doc_index = {d.doc_id: d for d in docs}
    checked = 0
    worst_pc = worst_pr = worst_cls = 0.0
    for f in frames:
        plan = compile_event(doc_index[f.doc_id], f, model.spec, cfg, model.roles, False)
        if not plan.spans:
            continue
        enc = model.encode((doc_index[f.doc_id], f))
        fwd = forward_event(plan, enc, model.head, cfg)
        worst_pc = max(worst_pc, np.abs(fwd.p_clue.data.sum(axis=1) - 1).max())
        worst_pr = max(worst_pr, np.abs(fwd.p_role.data.sum(axis=1) - 1).max())
        worst_cls = max(worst_cls, np.abs(fwd.probs.data.sum(axis=1) - 1).max())
        checked += len(plan.spans)
        if checked >= 1000:
            break
    assert checked >= 1000, f"only {checked} spans collected"
    assert worst_pc < 1e-9 and worst_pr < 1e-9, (worst_pc, worst_pr)
    assert worst_cls < 1e-9, worst_cls

    doc, frame = docs[0], frames[0]
    enc = model.encode((doc, frame))
    path = tmp_path / "x.scprgt"
    export_encoder_output(path, enc)
    imported = import_encoder_output(path)
    worst_row = max(np.abs(a.data.sum(axis=1) - 1).max() for a in imported.attn_heads)
    assert worst_row <= 1e-3, worst_row
    report("distribution-invariants",
           f"({checked} spans; dev p_c {worst_pc:.1e}, p_r {worst_pr:.1e}, "
           f"cls {worst_cls:.1e}, imported rows {worst_row:.1e})")


def test_loss_oracles():
    """Focal at gamma=0 is cross-entropy; boundary closed form; linearity."""
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        n, k = int(rng.integers(1, 6)), int(rng.integers(2, 6))
        p = rng.random((n, k)) + 1e-3
        p /= p.sum(axis=1, keepdims=True)
        labels = rng.integers(0, k, size=n)
        got = focal_loss(Tensor(p), labels, np.ones(k), 0.0).item()
        want = -np.log(p[np.arange(n), labels]).sum()
        worst = max(worst, abs(got - want))
    assert worst < 1e-10, worst

    n = 7
    y = np.zeros(n)
    y[1::2] = 1.0
    half = Tensor(np.full((n, 1), 0.5))
    closed = boundary_loss(half, half, y, y).item()
    assert abs(closed - 2 * n * np.log(2)) < 1e-9

    lc, lb = Tensor(np.asarray(1.25)), Tensor(np.asarray(4.0))
    assert total_loss(lc, lb, 0.0).item() == 1.25
    assert total_loss(lc, lb, 1.0).item() == 5.25
    assert total_loss(lc, lb, 0.1).item() == 1.25 + 0.1 * 4.0
    report("loss-oracles", f"(focal-vs-CE dev {worst:.1e}, closed form 2N·log2 exact)")


def test_pooling_brute_force_equivalence():
    """Attention pooling ops match explicit (head, position) loops."""
    rng = np.random.default_rng(17)
    worst = 0.0
    for trial in range(50):
        H = int(rng.integers(1, 5))
        l_w = int(rng.integers(2, 10))
        l_r = int(rng.integers(1, 5))
        ctx = [rng.random((l_w, l_w)) + 0.01 for _ in range(H)]
        ctx = [a / a.sum(axis=1, keepdims=True) for a in ctx]
        rol = [rng.random((l_w, l_r)) + 0.01 for _ in range(H)]
        rol = [a / a.sum(axis=1, keepdims=True) for a in rol]
        Hw = rng.standard_normal((l_w, 4))
        Hr = rng.standard_normal((l_r, 4))
        si, sj = sorted(rng.integers(0, l_w, size=2))
        ti, tj = sorted(rng.integers(0, l_w, size=2))
        span = CandidateSpan(0, sj - si, token_range=(si, sj))
        trig = CandidateSpan(0, tj - ti, token_range=(ti, tj))

        def loop_pool(mats, a, b):
            acc = np.zeros(mats[0].shape[1])
            for h in range(H):
                for m in range(a, b + 1):
                    acc += mats[h][m]
            return acc / (H * (b - a + 1))

        got = span_context_attention(span, [Tensor(a) for a in ctx]).data[0]
        worst = max(worst, np.abs(got - loop_pool(ctx, si, sj)).max())

        p_c, c = stcp_context_vector(span, trig, [Tensor(a) for a in ctx], Tensor(Hw))
        prod = loop_pool(ctx, si, sj) * loop_pool(ctx, ti, tj)
        e = np.exp(prod - prod.max())
        want_p = e / e.sum()
        worst = max(worst, np.abs(p_c.data[0] - want_p).max())
        worst = max(worst, np.abs(c.data[0] - want_p @ Hw).max())

        p_r, r = rlig_role_vector(span, trig, [Tensor(a) for a in rol], Tensor(Hr))
        prod_r = loop_pool(rol, si, sj) * loop_pool(rol, ti, tj)
        er = np.exp(prod_r - prod_r.max())
        want_pr = er / er.sum()
        worst = max(worst, np.abs(p_r.data[0] - want_pr).max())
        worst = max(worst, np.abs(r.data[0] - want_pr @ Hr).max())
    assert worst < 1e-12, worst
    report("pooling-brute-force", f"(50 shapes, max abs diff {worst:.1e})")


def test_dynamic_window_law():
    """Overlap tokens equal the mean of per-window embeddings exactly."""
    from scprg.sequence import TokenizerSpec, assemble_sequence, plan_windows, window_encode

    doc = Document("w", tuple(f"w{i}" for i in range(20)), (0,))
    frame = EventFrame("w", 0, "evt", (0, 0), ("r1",), ())
    spec = TokenizerSpec.build([doc], ["evt"], ["r1"], max_window=512, window_stride=5)
    seq = assemble_sequence(doc, frame, spec)
    spec.max_window = (seq.length - seq.l_w) + 10
    plans = plan_windows(seq, spec)
    assert len(plans) == 3

    d = 4
    calls = {"n": 0}

    def enc(ids):
        marker = float(calls["n"])
        calls["n"] += 1
        return np.full((len(ids), d), marker), np.full((2, len(ids), len(ids)), 1.0 / len(ids))

    hidden, attn = window_encode(seq, enc, spec)
    # oracle: identical arithmetic from explicit membership
    sums = np.zeros((seq.length, d))
    cnts = np.zeros(seq.length)
    for marker, plan in enumerate(plans):
        sums[plan.indices] += float(marker)
        cnts[plan.indices] += 1
    assert np.array_equal(hidden, sums / cnts[:, None])
    assert np.allclose(attn.sum(axis=2), 1.0, atol=1e-12)
    overlaps = int((cnts > 1).sum())
    report("dynamic-window-law", f"(3 windows, {overlaps} overlap tokens, exact)")


def test_benchmark_full_model(benchmark_results):
    r = benchmark_results["full"]
    assert r["epochs"] <= 50
    assert r["seconds"] < 600, f"{r['seconds']:.0f}s"
    assert r["best_dev_f1"] >= 0.90, r["best_dev_f1"]
    report("benchmark-full",
           f"(dev span F1 {r['best_dev_f1']:.3f} in {r['epochs']} epochs, "
           f"{r['seconds']:.0f}s; clue {r['clue_f1']:.3f}, pair {r['pair_f1']:.3f})")


def test_benchmark_stcp_ablation(benchmark_results):
    full, ablated = benchmark_results["full"], benchmark_results["stcp"]
    drop = full["clue_f1"] - ablated["clue_f1"]
    assert drop >= 0.05, f"clue drop only {drop:.3f}"
    assert drop >= 0.20, f"pinned regression floor: clue drop {drop:.3f} < 0.20"
    report("benchmark-ablate-stcp",
           f"(clue F1 {full['clue_f1']:.3f} -> {ablated['clue_f1']:.3f}, drop {drop:.3f})")


def test_benchmark_rlig_ablation(benchmark_results):
    full, ablated = benchmark_results["full"], benchmark_results["rlig"]
    drop = full["pair_f1"] - ablated["pair_f1"]
    assert drop >= 0.03, f"pair drop only {drop:.3f}"
    assert drop >= 0.15, f"pinned regression floor: pair drop {drop:.3f} < 0.15"
    report("benchmark-ablate-rlig",
           f"(pair F1 {full['pair_f1']:.3f} -> {ablated['pair_f1']:.3f}, drop {drop:.3f})")


def test_ase_predicate():
    doc = Document("a", ("New", "York", ",", "USA", ".", "plain", "words"), (0, 5))
    spans = enumerate_spans(doc, 4)
    kept = exclude_impossible(spans, doc)
    assert CandidateSpan(0, 3) not in kept          # interior comma
    assert CandidateSpan(2, 2) not in kept          # pure punctuation
    assert CandidateSpan(5, 6) in kept
    assert exclude_impossible(kept, doc) == kept    # idempotent
    assert set(kept) <= set(spans)

    # gold spans survive training compilation even when the predicate drops them
    gold_doc = Document("g", ("x", "a", ",", "b", "y"), (0,))
    gold_frame = EventFrame("g", 0, "evt", (0, 0), ("r",), (("r", (1, 3)),))
    cfg = RunConfig(toy_layers=1, toy_heads=2, toy_dim=8, toy_ff_dim=16,
                    length_embed_dim=4, max_span_len=4, seed=0)
    model = build_model([gold_frame], [], [gold_doc], cfg)
    plan = compile_event(gold_doc, gold_frame, model.spec, cfg, model.roles, training=True)
    assert (1, 3) in {(s.start, s.end) for s in plan.spans}
    report("ase-predicate", "(interior comma excluded, idempotent, gold retained)")


def test_ingestion_statistics():
    rams_dir = os.environ.get("SCPRG_RAMS_DIR", "data/rams")
    train_file = Path(rams_dir) / "train.jsonlines"
    if not train_file.exists():
        print(f"\nACCEPTANCE ingestion-statistics: SKIPPED "
              f"(official RAMS files not present at {train_file})")
        pytest.skip(f"official RAMS files not present at {train_file}; "
                    "set SCPRG_RAMS_DIR to run the count check")
    docs, frames = load_dataset(train_file, "rams-like")
    args = sum(len(f.gold_args) for f in frames)
    assert (len(docs), len(frames), args) == (3194, 7329, 17026)
    detail = f"(RAMS train {len(docs)}/{len(frames)}/{args}"
    wiki_test = Path(os.environ.get("SCPRG_WIKIEVENTS_DIR", "data/wikievents")) / "test.jsonl"
    if wiki_test.exists():
        wdocs, wframes = load_dataset(wiki_test, "wikievents-like")
        wargs = sum(len(f.gold_args) for f in wframes)
        assert (len(wdocs), len(wframes), wargs) == (20, 365, 566)
        detail += f"; WikiEvents test {len(wdocs)}/{len(wframes)}/{wargs}"
    report("ingestion-statistics", detail + ")")


def test_cooccurrence_export():
    rng = np.random.default_rng(23)
    roles = ("r0", "r1", "r2", "r3", "r4")
    frames = []
    for i in range(40):
        used = [roles[j] for j in rng.choice(5, size=int(rng.integers(1, 5)), replace=False)]
        frames.append(EventFrame("d", i, "e", (0, 0), roles,
                                 tuple((r, (k, k)) for k, r in enumerate(used))))
    m = compute_role_cooccurrence(frames, roles)
    m.validate()
    assert np.array_equal(m.counts, m.counts.T)
    assert np.all(np.diag(m.counts) == 0)
    brute = np.zeros((5, 5), dtype=np.int64)
    for f in frames:
        present = {r for r, _ in f.gold_args}
        for i, ri in enumerate(roles):
            for j, rj in enumerate(roles):
                if i != j and ri in present and rj in present:
                    brute[i, j] += 1
    assert np.array_equal(m.counts, brute)
    report("cooccurrence-export", "(symmetric, zero diagonal, equals brute force)")


def test_determinism(tmp_path):
    from scprg import api

    synth = api.run_synth(api.SynthRequest(out_dir=str(tmp_path / "data"), seed=4, docs=12))
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text("\n".join([
        f"train_path={synth.train_path}", f"dev_path={synth.dev_path}",
        "toy_layers=1", "toy_heads=2", "toy_dim=8", "toy_ff_dim=16",
        "length_embed_dim=4", "dropout=0.1", "lr=0.003", "batch=4",
        "epochs=2", "seed=13",
    ]) + "\n")
    out = tmp_path / "run"
    api.run_train(api.TrainRequest(config_path=str(cfg_path), out_dir=str(out)))
    ckpt1 = (out / "model.ckpt").read_bytes()
    metrics1 = (out / "metrics.json").read_bytes()
    api.run_train(api.TrainRequest(config_path=str(cfg_path), out_dir=str(out)))
    assert (out / "model.ckpt").read_bytes() == ckpt1
    assert (out / "metrics.json").read_bytes() == metrics1
    report("determinism", "(checkpoint and metrics JSON bit-identical)")
