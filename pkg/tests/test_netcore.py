import math

import numpy as np
import pytest

from gradcheck import TOY, random_docs, relative_errors
from riskrank.corpus import CLS, SEP, EncodedDocument
from riskrank.errors import (
    CheckpointError,
    EmptyDocument,
    InternalInvariantViolation,
    MissingTrace,
    NonFiniteGradient,
)
from riskrank.losses import triplet_loss_on_scores
from riskrank.netcore import (
    ModelConfig,
    backward,
    context_encode,
    document_embedding,
    encode_sentence,
    forward,
    forward_batch,
    gru_cell,
    init_state,
    is_encoder_param,
    load_checkpoint,
    pooled_document_embedding,
    risk_logit,
    save_checkpoint,
    scores,
    sentence_attention,
    sgd_step,
)
from riskrank.netcore.checkpoint import MAGIC, from_bytes, to_bytes
from riskrank.netcore.encoder import encoder_backward, encoder_forward
from riskrank.netcore.layers import GRU_BLOCKS, gru_cell_backward, gru_cell_forward

CFG = ModelConfig(**TOY)


def state_for(cfg=CFG, seed=0, jitter=0.3):
    st = init_state(cfg, seed=seed)
    rng = np.random.default_rng(seed + 100)
    return st.with_params(**{k.replace(".", "__"): v + jitter * rng.standard_normal(v.shape)
                             for k, v in st.params.items()})


def docs(n=6, seed=0):
    return random_docs(np.random.default_rng(seed), n=n, L=TOY["L"], l=TOY["l"], vocab_size=TOY["vocab_size"])


def one_sentence_doc(doc_id="one"):
    ids = np.zeros((TOY["L"], TOY["l"]), dtype=np.int64)
    ids[0, :4] = [CLS, 5, 6, SEP]
    mask = ids != 0
    return EncodedDocument(doc_id, 2000, ids, mask, mask.any(axis=1), 0)


def fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel(a, n):
    return np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-4)


class TestConfig:
    def test_invariants(self):
        from riskrank.errors import ConfigError

        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=10, attdim=7)
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=10, m=10, H=4)
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=0)

    def test_init_scheme(self):
        st = init_state(CFG, seed=1)
        assert not st["att.u"].any() and not st["enc.bq"].any() and st["head.b"] == 0
        assert np.all(st["enc.ln1_g"] == 1.0)
        a = math.sqrt(6 / (CFG.m + CFG.m))
        assert np.abs(st["enc.wq"]).max() <= a
        assert init_state(CFG, seed=1).equals(st)
        assert not init_state(CFG, seed=2).equals(st)

    def test_parameter_groups(self):
        assert is_encoder_param("embedding") and is_encoder_param("enc.w1")
        assert not is_encoder_param("gru_f.wz") and not is_encoder_param("att.u") and not is_encoder_param("head.w")


class TestGRU:
    P = {b: np.zeros((3, 2)) if b[0] == "w" else np.zeros((2, 2)) if b[0] == "u" else np.zeros(2) for b in GRU_BLOCKS}

    def test_zero_params_halve_state(self):
        v = np.array([0.4, -1.0])
        np.testing.assert_array_equal(gru_cell(np.ones(3), v, self.P), 0.5 * v)

    def test_zero_fixed_point(self):
        np.testing.assert_array_equal(gru_cell(np.ones(3), np.zeros(2), self.P), np.zeros(2))

    def test_gate_equations(self):
        rng = np.random.default_rng(0)
        p = {k: rng.normal(size=v.shape) for k, v in self.P.items()}
        x, h = rng.normal(size=3), rng.normal(size=2)
        sig = lambda a: 1 / (1 + np.exp(-a))
        z = sig(x @ p["wz"] + h @ p["uz"] + p["bz"])
        r = sig(x @ p["wr"] + h @ p["ur"] + p["br"])
        c = np.tanh(x @ p["wh"] + (r * h) @ p["uh"] + p["bh"])
        np.testing.assert_allclose(gru_cell(x, h, p), z * h + (1 - z) * c, atol=1e-15)

    def test_block_gradients(self):
        rng = np.random.default_rng(1)
        p = {k: rng.normal(size=v.shape) for k, v in self.P.items()}
        x, h = rng.normal(size=(1, 3)), rng.normal(size=(1, 2))
        c = rng.normal(size=(1, 2))
        _, cache = gru_cell_forward(x, h, p)
        g = {k: np.zeros_like(v) for k, v in p.items()}
        gru_cell_backward(c, cache, p, g)
        for name in GRU_BLOCKS:
            num = fd(lambda: float((gru_cell(x, h, p) * c).sum()), p[name])
            assert rel(g[name], num) < 1e-4, name


class TestEncoder:
    st = state_for()

    def row(self):
        ids = np.array([CLS, 7, 9, 11, SEP, 0, 0, 0])
        return ids, ids != 0

    def test_word_attention_normalized(self):
        ids, mask = self.row()
        emb, att = encode_sentence(ids, mask, self.st)
        assert emb.shape == (CFG.m,)
        assert np.all(att >= 0) and att[mask].sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(att[~mask] == 0)

    def test_pad_ids_ignored(self):
        ids, mask = self.row()
        other = ids.copy()
        other[~mask] = [4, 13, 19]
        a, _ = encode_sentence(ids, mask, self.st)
        b, _ = encode_sentence(other, mask, self.st)
        np.testing.assert_array_equal(a, b)

    def test_all_masked_present_row(self):
        ids, _ = self.row()
        with pytest.raises(InternalInvariantViolation):
            encode_sentence(ids, np.zeros(8, dtype=bool), self.st)

    def test_cls_gradient(self):
        ids = np.array([[CLS, 7, 9, 11, 12, 4, 5, SEP]])
        mask = np.ones_like(ids, dtype=bool)
        c = np.random.default_rng(2).normal(size=CFG.m)
        p = {k: v.copy() for k, v in self.st.params.items()}

        def f():
            return float(encoder_forward(ids, mask, p, CFG.H)[0][0, 0] @ c)

        _, _, cache = encoder_forward(ids, mask, p, CFG.H)
        dy2 = np.zeros((1, 8, CFG.m))
        dy2[0, 0] = c
        g = {k: np.zeros_like(v) for k, v in p.items()}
        encoder_backward(dy2, cache, p, g)
        for name in p:
            if name == "embedding" or name.startswith("enc."):
                assert rel(g[name], fd(f, p[name], h=1e-5)) < 1e-4, name


class TestContext:
    def test_zero_params(self):
        st = init_state(CFG).with_params(**{f"{d}__{b}": np.zeros_like(init_state(CFG)[f"{d}.{b}"])
                                            for d in ("gru_f", "gru_b") for b in GRU_BLOCKS})
        h = context_encode(np.ones((4, CFG.m)), [True, True, True, False], st)
        np.testing.assert_array_equal(h, 0.0)

    def test_single_sentence_halves_agree(self):
        st = init_state(CFG, seed=4)
        shared = {f"gru_b__{b}": st[f"gru_f.{b}"] for b in GRU_BLOCKS}
        st = st.with_params(**shared)
        x = np.random.default_rng(4).normal(size=(4, CFG.m))
        h = context_encode(x, [True, False, False, False], st)
        half = CFG.attdim // 2
        np.testing.assert_array_equal(h[0, :half], h[0, half:])
        np.testing.assert_array_equal(h[1:], 0.0)

    def test_unrolled_oracle(self):
        st = state_for(seed=5)
        x = np.random.default_rng(5).normal(size=(4, CFG.m))
        h = context_encode(x, [True] * 4, st)
        pf = {b: st[f"gru_f.{b}"] for b in GRU_BLOCKS}
        pb = {b: st[f"gru_b.{b}"] for b in GRU_BLOCKS}
        half = CFG.attdim // 2
        hf, hb = np.zeros(half), np.zeros(half)
        fwd, bwd = [], [None] * 4
        for t in range(4):
            hf = gru_cell(x[t], hf, pf)
            fwd.append(hf)
        for t in range(3, -1, -1):
            hb = gru_cell(x[t], hb, pb)
            bwd[t] = hb
        np.testing.assert_allclose(h, np.hstack([np.array(fwd), np.array(bwd)]), atol=1e-14)


class TestSentenceAttention:
    st = state_for(seed=6)

    def test_zero_vector_is_uniform(self):
        st = self.st.with_params(att__u=np.zeros(CFG.attdim))
        h = np.random.default_rng(0).normal(size=(4, CFG.attdim))
        np.testing.assert_allclose(sentence_attention(h, [1, 1, 1, 0], st), [1 / 3, 1 / 3, 1 / 3, 0], atol=1e-15)

    def test_engineered_scores(self):
        # with W = I, b = 0 and h rows pushed through tanh, pick U so scores are 0 and ln 3
        a = CFG.attdim
        h = np.zeros((2, a))
        h[1, 0] = np.arctanh(0.5)
        u = np.zeros(a)
        u[0] = 2 * math.log(3)
        st = init_state(ModelConfig(**{**TOY, "L": 2})).with_params(att__w=np.eye(a), att__b=np.zeros(a), att__u=u)
        np.testing.assert_allclose(sentence_attention(h, [1, 1], st), [0.25, 0.75], atol=1e-12)

    def test_normalized(self):
        h = np.random.default_rng(1).normal(size=(4, CFG.attdim))
        alpha = sentence_attention(h, [1, 0, 1, 1], self.st)
        assert alpha.sum() == pytest.approx(1.0, abs=1e-12) and alpha[1] == 0

    def test_empty(self):
        with pytest.raises(EmptyDocument):
            sentence_attention(np.zeros((4, CFG.attdim)), [0, 0, 0, 0], self.st)


class TestEmbeddingAndHead:
    def test_document_embedding(self):
        h = np.random.default_rng(2).normal(size=(4, 8))
        np.testing.assert_array_equal(document_embedding([0, 0, 1, 0], h), h[2])
        np.testing.assert_allclose(document_embedding([0.5, 0.5, 0, 0], h), h[:2].mean(axis=0), atol=1e-15)
        a = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_allclose(document_embedding(a, h), sum(a[i] * h[i] for i in range(4)), atol=1e-12)

    def test_pooling(self):
        x = np.array([[1.0, 0.0], [3.0, 2.0], [99.0, 99.0]])
        keep = [True, True, False]
        np.testing.assert_array_equal(pooled_document_embedding(x, keep, "mean"), [2.0, 1.0])
        np.testing.assert_array_equal(pooled_document_embedding(x, keep, "max"), [3.0, 2.0])
        for mode in ("mean", "max"):
            np.testing.assert_array_equal(pooled_document_embedding(x, [False, True, False], mode), [3.0, 2.0])
        with pytest.raises(EmptyDocument):
            pooled_document_embedding(x, [False] * 3)

    def test_pooling_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.normal(size=(12, 5))
            keep = rng.random(12) < 0.5
            keep[0] = True
            rows = [x[i] for i in range(12) if keep[i]]
            np.testing.assert_allclose(pooled_document_embedding(x, keep, "mean"), sum(rows) / len(rows), atol=1e-12)
            np.testing.assert_array_equal(pooled_document_embedding(x, keep, "max"),
                                          [max(r[j] for r in rows) for j in range(5)])

    def test_risk_logit(self):
        st = state_for(seed=7)
        d = np.random.default_rng(7).normal(size=CFG.attdim)
        assert risk_logit(np.zeros(CFG.attdim), st) == st["head.b"]
        assert risk_logit(d, st.with_params(head__w=np.zeros(CFG.attdim))) == st["head.b"]
        assert risk_logit(d, st) == pytest.approx(sum(d * st["head.w"]) + st["head.b"], abs=1e-12)


class TestForward:
    st = state_for(seed=8)

    def test_normalization(self):
        for t, d in zip(forward_batch(docs(), self.st), docs()):
            assert t.sentence_attention.sum() == pytest.approx(1.0, abs=1e-6)
            assert np.all(t.sentence_attention[~d.sentence_mask] == 0)
            for s in np.flatnonzero(d.sentence_mask):
                assert t.word_attention[s][d.token_mask[s]].sum() == pytest.approx(1.0, abs=1e-6)

    def test_single_sentence(self):
        t = forward(one_sentence_doc(), self.st)
        np.testing.assert_array_equal(t.sentence_attention, [1.0, 0.0, 0.0, 0.0])

    def test_deterministic(self):
        a, b = forward(docs()[0], self.st), forward(docs()[0], self.st)
        assert a.risk_logit == b.risk_logit
        np.testing.assert_array_equal(a.sentence_attention, b.sentence_attention)
        np.testing.assert_array_equal(a.word_attention, b.word_attention)

    def test_batch_independence(self):
        ds = docs(3)
        for t, d in zip(forward_batch(ds, self.st), ds):
            single = forward(d, self.st)
            assert t.risk_logit == pytest.approx(single.risk_logit, abs=1e-12)
            np.testing.assert_allclose(t.sentence_attention, single.sentence_attention, atol=1e-12)

    def test_pad_invariance(self):
        d = docs(1)[0]
        ids = d.token_ids.copy()
        ids[~d.token_mask] = 17
        other = EncodedDocument(d.doc_id, d.year, ids, d.token_mask, d.sentence_mask, d.label)
        a, b = forward(d, self.st), forward(other, self.st)
        assert a.risk_logit == b.risk_logit
        np.testing.assert_array_equal(a.sentence_attention, b.sentence_attention)

    def test_empty_document(self):
        ids = np.zeros((TOY["L"], TOY["l"]), dtype=np.int64)
        empty = EncodedDocument("e", 2000, ids, ids != 0, np.zeros(TOY["L"], bool), 0)
        with pytest.raises(EmptyDocument):
            forward(empty, self.st)

    def test_positive_scaling(self):
        ds = docs()
        base = scores(ds, self.st)
        scaled = scores(ds, self.st.with_params(head__w=3 * self.st["head.w"], head__b=3 * self.st["head.b"]))
        np.testing.assert_allclose(scaled, 3 * base, rtol=1e-12)
        np.testing.assert_array_equal(np.argsort(scaled), np.argsort(base))


class TestBackward:
    st = state_for(seed=9)

    def test_zero_loss_gradient(self):
        traces = forward_batch(docs(), self.st, cache=True)
        grads = backward(traces, [0.0] * 6, self.st)
        assert all(not g.any() for g in grads.values())

    def test_satisfied_triplet(self):
        traces = forward_batch(docs(), self.st, cache=True)
        z = np.array([t.risk_logit for t in traces])
        value, g = triplet_loss_on_scores(z, [(0, 0, 0)], margin=0.0)
        assert value == 0.0
        assert all(not v.any() for v in backward(traces, list(g), self.st).values())

    def test_missing_cache(self):
        traces = forward_batch(docs(), self.st)
        with pytest.raises(MissingTrace):
            backward(traces, [1.0] * 6, self.st)


class TestGradientFidelity:
    @pytest.mark.parametrize("kind", ["triplet", "pairwise", "cross_entropy"])
    def test_hierarchical(self, kind):
        errors = relative_errors(kind)
        worst = max(errors, key=errors.get)
        assert errors[worst] < 1e-4, (worst, errors[worst])

    @pytest.mark.parametrize("aggregator", ["mean_pool", "max_pool"])
    def test_pooling(self, aggregator):
        errors = relative_errors("pairwise", aggregator=aggregator)
        worst = max(errors, key=errors.get)
        assert errors[worst] < 1e-4, (worst, errors[worst])


class TestSGD:
    def test_update_rule(self):
        st = init_state(CFG)
        grads = {k: np.zeros_like(v) for k, v in st.params.items()}
        grads["head.w"] = np.full(CFG.attdim, 2.0)
        grads["embedding"] = np.ones_like(st["embedding"])
        new = sgd_step(st.with_params(head__w=np.ones(CFG.attdim)), grads, encoder_lr=0.5, head_lr=0.1)
        np.testing.assert_allclose(new["head.w"], 0.8)
        np.testing.assert_allclose(new["embedding"], st["embedding"] - 0.5)

    def test_fixed_points(self):
        st = state_for()
        zero = {k: np.zeros_like(v) for k, v in st.params.items()}
        assert sgd_step(st, zero, 0.1, 0.1).equals(st)
        ones = {k: np.ones_like(v) for k, v in st.params.items()}
        assert sgd_step(st, ones, 0.0, 0.0).equals(st)

    def test_non_finite(self):
        st = init_state(CFG)
        with pytest.raises(NonFiniteGradient):
            sgd_step(st, {"head.b": np.array(np.nan)}, 0.1, 0.1)

    def test_repeatable_training_steps(self):
        def run():
            st = init_state(CFG, seed=11)
            ds = docs()
            for _ in range(3):
                traces = forward_batch(ds, st, cache=True)
                g = backward(traces, [t.risk_logit for t in traces], st)
                st = sgd_step(st, g, 0.05, 0.05)
            return st

        assert run().equals(run())


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        st = state_for()
        save_checkpoint(tmp_path / "m.ckpt", st, {"note": "x"})
        back, extra = load_checkpoint(tmp_path / "m.ckpt")
        assert back.equals(st) and extra == {"note": "x"}
        assert (tmp_path / "m.ckpt").read_bytes() == to_bytes(st, {"note": "x"})
        assert not (tmp_path / "m.ckpt.tmp").exists()

    def test_corruption(self, tmp_path):
        raw = to_bytes(state_for())
        assert raw.startswith(MAGIC)
        with pytest.raises(CheckpointError):
            from_bytes(b"XXXXXXXX" + raw[8:])
        with pytest.raises(CheckpointError):
            from_bytes(raw[:-16])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.ckpt")
