import numpy as np
import pytest

from scprg import numkit as nk
from scprg.corpus import Document, EventFrame
from scprg.encoder import (
    EncoderOutput,
    ToyEncoderParams,
    export_encoder_output,
    import_encoder_output,
    read_container,
    toy_encode,
    toy_forward,
    write_container,
)
from scprg.errors import ContractError, FormatError, VocabError
from scprg.sequence import TokenizerSpec, assemble_sequence


def small_setup(n_words=6, roles=("alpha", "beta"), seed=0, **toy_kw):
    doc = Document("d", tuple(f"w{i}" for i in range(n_words)), (0,))
    frame = EventFrame("d", 0, "evt", (0, 0), tuple(roles), ())
    spec = TokenizerSpec.build([doc], ["evt"], list(roles))
    seq = assemble_sequence(doc, frame, spec)
    kw = dict(layers=2, heads=2, dim=8, ff_dim=16, seed=seed)
    kw.update(toy_kw)
    params = ToyEncoderParams.create(vocab_size=spec.size, **kw)
    return doc, frame, spec, seq, params


class TestToyForward:
    def test_zero_layers_rejected(self):
        with pytest.raises(ContractError):
            ToyEncoderParams.create(vocab_size=10, layers=0)

    def test_single_token_attention_is_one(self):
        params = ToyEncoderParams.create(vocab_size=4, layers=1, heads=2, dim=8, ff_dim=16)
        hidden, attn = toy_forward([2], params)
        for a in attn:
            assert a.shape == (1, 1)
            assert np.allclose(a.data, 1.0)

    def test_out_of_range_id(self):
        params = ToyEncoderParams.create(vocab_size=4, layers=1, heads=1, dim=4, ff_dim=8)
        with pytest.raises(VocabError):
            toy_forward([0, 7], params)

    def test_matches_step_by_step_oracle(self):
        # d=8, H=2, L=1 on a 5-token input, checked against an independent
        # plain-numpy reimplementation of the same stack
        params = ToyEncoderParams.create(vocab_size=9, layers=1, heads=2, dim=8, ff_dim=16, seed=3)
        ids = [1, 4, 2, 8, 0]
        hidden, attn = toy_forward(ids, params)

        w = {k: t.data for k, t in params.weights.items()}
        x = w["tok"][ids] + w["pos"][: len(ids)]

        def ln(v, g, b, eps=1e-5):
            mu = v.mean(axis=1, keepdims=True)
            var = ((v - mu) ** 2).mean(axis=1, keepdims=True)
            return (v - mu) / np.sqrt(var + eps) * g + b

        def gelu(v):
            c = np.sqrt(2 / np.pi)
            return 0.5 * v * (1 + np.tanh(c * (v + 0.044715 * v**3)))

        q, k, v = x @ w["l0.wq"], x @ w["l0.wk"], x @ w["l0.wv"]
        outs, attns = [], []
        for h in range(2):
            sl = slice(h * 4, (h + 1) * 4)
            s = q[:, sl] @ k[:, sl].T / np.sqrt(4)
            e = np.exp(s - s.max(axis=1, keepdims=True))
            a = e / e.sum(axis=1, keepdims=True)
            attns.append(a)
            outs.append(a @ v[:, sl])
        ctx = np.concatenate(outs, axis=1) @ w["l0.wo"]
        x1 = ln(x + ctx, w["l0.ln1_g"], w["l0.ln1_b"])
        ff = gelu(x1 @ w["l0.ff1"] + w["l0.ff1_b"]) @ w["l0.ff2"] + w["l0.ff2_b"]
        x2 = ln(x1 + ff, w["l0.ln2_g"], w["l0.ln2_b"])

        assert np.allclose(hidden.data, x2, atol=1e-12)
        for got, want in zip(attn, attns):
            assert np.allclose(got.data, want, atol=1e-12)

    def test_attention_rows_are_distributions(self):
        _, _, spec, seq, params = small_setup()
        out = toy_encode(seq, params, spec)
        out.validate()

    def test_gradient_reaches_every_parameter(self):
        params = ToyEncoderParams.create(vocab_size=6, layers=1, heads=2, dim=4, ff_dim=8, seed=1)
        ids = [0, 3, 5, 2]

        def loss():
            hidden, attn = toy_forward(ids, params)
            return nk.sum_all(nk.mul(hidden, hidden))

        plist = params.params()
        nk.zero_grads(plist)
        loss().backward()
        for name, t in sorted(params.weights.items()):
            if name == "pos":
                # only the first len(ids) rows participate
                assert t.grad is not None and np.any(t.grad[: len(ids)] != 0), name
            elif name == "tok":
                assert t.grad is not None and np.any(t.grad != 0), name
            else:
                assert t.grad is not None and np.any(t.grad != 0), name
        err = nk.grad_check(loss, [params.weights["l0.wq"], params.weights["l0.ff1_b"]])
        assert err < 1e-5

    def test_eval_mode_deterministic(self):
        _, _, spec, seq, params = small_setup()
        a = toy_encode(seq, params, spec).hidden.data
        b = toy_encode(seq, params, spec).hidden.data
        assert np.array_equal(a, b)


class TestViews:
    def test_views_partition_positions(self):
        _, _, spec, seq, params = small_setup()
        out = toy_encode(seq, params, spec)
        assert out.context_hidden().shape == (seq.l_w, params.dim)
        assert out.role_hidden().shape == (seq.l_r, params.dim)
        assert out.event_hidden().shape == (1, params.dim)
        assert out.none_hidden().shape == (1, params.dim)
        for a in out.context_attention():
            assert a.shape == (seq.l_w, seq.l_w)
            assert np.allclose(a.data.sum(axis=1), 1.0, atol=1e-9)
        for a in out.role_attention():
            assert a.shape == (seq.l_w, seq.l_r)
            assert np.allclose(a.data.sum(axis=1), 1.0, atol=1e-9)

    def test_zero_role_event_has_no_role_view(self):
        doc = Document("d", ("a", "b"), (0,))
        frame = EventFrame("d", 0, "evt", (0, 0), (), ())
        spec = TokenizerSpec.build([doc], ["evt"], [])
        seq = assemble_sequence(doc, frame, spec)
        params = ToyEncoderParams.create(vocab_size=spec.size, layers=1, heads=1, dim=4, ff_dim=8)
        out = toy_encode(seq, params, spec)
        with pytest.raises(ContractError):
            out.role_hidden()


class TestInterchange:
    def test_round_trip_bit_identical(self, tmp_path):
        _, _, spec, seq, params = small_setup()
        out = toy_encode(seq, params, spec)
        p1, p2 = tmp_path / "a.scprgt", tmp_path / "b.scprgt"
        export_encoder_output(p1, out)
        imported = import_encoder_output(p1)
        export_encoder_output(p2, imported)
        assert p1.read_bytes() == p2.read_bytes()
        # payload identical to the float32 cast of the source
        assert np.array_equal(imported.hidden.data, out.hidden.data.astype("<f4").astype(np.float64))

    def test_truncated_payload_names_byte_counts(self, tmp_path):
        _, _, spec, seq, params = small_setup()
        out = toy_encode(seq, params, spec)
        p = tmp_path / "x.scprgt"
        export_encoder_output(p, out)
        raw = p.read_bytes()
        p.write_bytes(raw[:-17])
        with pytest.raises(FormatError, match=r"bytes"):
            import_encoder_output(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.scprgt"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            import_encoder_output(p)

    def test_bad_version(self, tmp_path):
        _, _, spec, seq, params = small_setup()
        out = toy_encode(seq, params, spec)
        p = tmp_path / "x.scprgt"
        export_encoder_output(p, out)
        raw = bytearray(p.read_bytes())
        raw[8] = 9
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            import_encoder_output(p)

    def test_row_sum_validation(self, tmp_path):
        _, _, spec, seq, params = small_setup()
        out = toy_encode(seq, params, spec)
        broken = np.stack([a.data for a in out.attn_heads])
        broken[0, 0, :] *= 1.5
        p = tmp_path / "x.scprgt"
        meta = {"event_token_pos": seq.event_token_pos, "context_range": list(seq.context_range),
                "role_token_pos": list(seq.role_token_pos), "none_pos": seq.none_pos,
                "H": out.n_heads, "d": out.dim, "l_s": seq.length}
        write_container(p, {"H_s": out.hidden.data, "A": broken}, meta)
        with pytest.raises(FormatError, match="sum"):
            import_encoder_output(p)

    def test_missing_required_metadata(self, tmp_path):
        p = tmp_path / "x.scprgt"
        write_container(p, {"H_s": np.zeros((3, 2)), "A": np.full((1, 3, 3), 1 / 3)},
                        {"event_token_pos": 1})
        with pytest.raises(FormatError, match="metadata"):
            import_encoder_output(p)

    def test_container_generic_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"x": rng.standard_normal((3, 4)).astype(np.float32),
                   "y": rng.standard_normal(7).astype(np.float32)}
        p = tmp_path / "c.bin"
        write_container(p, tensors, {"note": "hi", "n": 3})
        got, meta = read_container(p)
        assert meta["note"] == "hi" and meta["n"] == 3
        for k in tensors:
            assert np.array_equal(got[k], tensors[k].astype(np.float64))
