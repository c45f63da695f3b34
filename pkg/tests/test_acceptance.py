"""End-to-end acceptance checks, one test per criterion.

A pass/fail line per criterion is printed in the pytest summary.
"""
import math
import time

import numpy as np
import pytest

from mvgpt import datapipe as D
from mvgpt import metrics
from mvgpt import objectives as O
from mvgpt import tensor as T
from mvgpt.checkpoint import from_bytes, load_checkpoint, save_checkpoint, to_bytes
from mvgpt.config import ModelConfig, TrainConfig
from mvgpt.model import MVGPT
from mvgpt.selfcheck import beam_mismatches, causality_violations, gradient_check, metric_oracle_error, random_example, tiny_config
from mvgpt.tensor import Tensor
from mvgpt.tokenizer import BOS1, BOS2, CLS1, CLS2, EOS, MASK, NUM_SPECIAL, TokenStream, build_vocab, decode
from mvgpt.trainer import lr_at, make_checkpoint, resume, train

criterion = pytest.mark.criterion


def toy_config(vocab_size, **kw):
    base = dict(vocab_size=vocab_size, d_model=32, heads=2, text_layers=1, spatial_layers=1, temporal_layers=1,
                fusion_layers=1, decoder_layers=1, frame_height=16, frame_width=16, tubelet_h=8, tubelet_w=8,
                tubelet_t=2, max_frames=8, max_text_len=16, max_gen_len=16)
    base.update(kw)
    return ModelConfig(**base)


@criterion(1, "gradient fidelity")
def test_gradient_fidelity():
    t0 = time.time()
    cfg = tiny_config()
    assert (cfg.d_model, cfg.vocab_size, cfg.decoder_layers) == (16, 32, 1)
    errs = [gradient_check(seed, n_coords=200) for seed in range(2)]
    assert max(errs) < 1e-4, errs
    assert time.time() - t0 < 60


@criterion(2, "decoder causality")
def test_causality():
    assert sum(causality_violations(seed) for seed in range(20)) == 0


@criterion(3, "token configurations")
def test_token_configurations(tiny_model, rng):
    ex = random_example(rng, tiny_model.cfg)
    cases = [("forward", ex.u, ex.w, CLS1, BOS1), ("backward", ex.w, ex.u, CLS2, BOS2), ("caption", ex.u, ex.w, CLS1, BOS2)]
    for direction, src, tgt, cls, bos in cases:
        with tiny_model.record_streams() as log:
            O.generation_loss(tiny_model, ex.frames, src, tgt, direction)
        assert log == [("text", (cls, *src)), ("decoder", (bos, *tgt))], direction
    with tiny_model.record_streams() as log:
        O.caption_loss(tiny_model, ex)
    assert log == [("text", (CLS1, *ex.u)), ("decoder", (BOS2, *ex.w))]


@pytest.fixture(scope="module")
def overfit_run():
    triplets, corpus = D.synth_dataset(0, 8)
    vocab = build_vocab(corpus)
    examples = D.to_examples(triplets, vocab)
    model = MVGPT(toy_config(len(vocab)))
    tc = TrainConfig(total_steps=600, warmup_steps=100, batch_size=8, lr_peak=3e-3)
    t0 = time.time()
    res = train(model, examples, tc)
    return model, examples, res, time.time() - t0


@pytest.mark.slow
@criterion(4, "overfit eight triplets")
def test_overfit(overfit_run):
    model, examples, res, seconds = overfit_run
    assert seconds < 600
    with T.no_grad():
        rep = O.pretrain_loss(model, examples, np.random.default_rng(0), TrainConfig(w_mlm=0.0))
    assert rep.fg.item() + rep.bg.item() < 0.1
    for e in examples:
        assert model.generate(e.frames, [CLS1] + e.u, BOS1, greedy=True, max_len=16) == e.w + [EOS]


@pytest.mark.slow
def test_overfit_loss_curve_is_eventually_monotone(overfit_run):
    totals = np.array([r["total"] for r in overfit_run[2].losses])
    half = len(totals) // 2
    windows = [totals[t : t + 100].mean() for t in range(half, len(totals), 100)]
    assert all(a > b for a, b in zip(windows, windows[1:])), windows


def caption_word_accuracy(seed, use_visual):
    train_set, c1 = D.synth_dataset(100 + seed, 1024)
    test_set, c2 = D.synth_dataset(10_000 + seed, 256)
    vocab = build_vocab(c1 + c2)
    model = MVGPT(toy_config(len(vocab), use_visual=use_visual, seed=seed))
    tc = TrainConfig(total_steps=800, warmup_steps=80, batch_size=16, train_seed=seed, lr_peak=1e-3)
    train(model, D.to_examples(train_set, vocab, target="caption"), tc, "caption")
    hits = 0
    for t in test_set:
        ids = [CLS1] + [vocab.id(w) for w in t.U.split()]
        words = decode(vocab, model.generate(t.frames, ids, BOS2, greedy=True, max_len=8)).split()
        hits += len(words) == 5 and words[4] == t.caption.split()[4]
    return hits / len(test_set)


@pytest.mark.slow
@criterion(5, "modality signal")
def test_modality_signal():
    visual = [caption_word_accuracy(s, True) for s in range(5)]
    text_only = [caption_word_accuracy(s, False) for s in range(5)]
    print("visual", visual, "text-only", text_only)
    assert visual == [1.0] * 5
    assert max(text_only) <= 0.35


@criterion(6, "metric oracles")
def test_metric_oracles():
    assert max(metric_oracle_error(seed) for seed in range(50)) < 1e-9
    rng = np.random.default_rng(6)
    for _ in range(10):
        corpus = [(c, [c]) for c in (" ".join(f"w{i}" for i in rng.integers(0, 9, 6)) for _ in range(4))]
        assert metrics.bleu(corpus, 4) == 1.0
        assert metrics.rouge_l(corpus) == 1.0
        assert metrics.cider(corpus) == 10.0


@criterion(7, "beam search correctness")
def test_beam():
    bad = 0
    for vocab in (2, 3, 4):
        for max_len in (1, 2, 3, 4):
            for alpha in (0.0, 0.6, 1.0):
                bad += sum(beam_mismatches(seed, vocab, max_len, alpha) for seed in range(3))
    assert bad == 0


def random_transcript(rng, n):
    t, out = float(rng.uniform(0, 3)), []
    for k in range(n):
        dur = float(rng.choice([0.5, 1.0, 2.5, 4.0, 6.0, 9.0]))
        out.append(D.TimedUtterance(f"sentence {k}", t, t + dur))
        t += dur + float(rng.choice([0.0, 0.0, 0.5]))
    return out


@criterion(8, "triplet extraction")
def test_triplet_extraction():
    rng = np.random.default_rng(8)
    for _ in range(100):
        tr = random_transcript(rng, int(rng.integers(1, 15)))
        trips = D.extract_triplets(tr)
        assert len(trips) == len(tr) - 1
        for i, t in enumerate(trips):
            start, end = t.span
            assert end - start >= 5.0 or t.present[0] is tr[0]
            assert (start, end) == (t.present[0].start, t.present[-1].end)
            assert t.present[-1] is tr[i] and t.future is tr[i + 1]
    hand = [D.TimedUtterance("s1", 0, 2), D.TimedUtterance("s2", 2, 4.5), D.TimedUtterance("s3", 4.5, 9),
            D.TimedUtterance("s4", 9, 10)]
    trace = [(t.U, t.W, t.span) for t in D.extract_triplets(hand)]
    assert trace == [("s1", "s2", (0, 2)), ("s1 s2", "s3", (0, 4.5)), ("s2 s3", "s4", (2, 9))]


@criterion(9, "determinism and persistence")
def test_determinism(tmp_path):
    cfg = tiny_config(seed=9)
    data = [random_example(np.random.default_rng(k), cfg) for k in range(4)]
    tc = TrainConfig(total_steps=8, warmup_steps=2, batch_size=2, train_seed=9)
    a, b = (train(MVGPT(cfg), data, tc) for _ in range(2))
    blob = to_bytes(make_checkpoint(a.model, tc, a.state, a.rng))
    assert blob == to_bytes(make_checkpoint(b.model, tc, b.state, b.rng))
    save_checkpoint(tmp_path / "a.ckpt", from_bytes(blob))
    assert (tmp_path / "a.ckpt").read_bytes() == blob
    assert to_bytes(load_checkpoint(tmp_path / "a.ckpt")) == blob
    half = train(MVGPT(cfg), data, tc, stop_at=5)
    save_checkpoint(tmp_path / "half.ckpt", make_checkpoint(half.model, tc, half.state, half.rng))
    rest = resume(tmp_path / "half.ckpt", data)
    assert to_bytes(make_checkpoint(rest.model, tc, rest.state, rest.rng)) == blob


@criterion(10, "learning-rate schedule")
def test_schedule():
    tc = TrainConfig()
    peak, warm, total = tc.lr_peak, tc.warmup_steps, tc.total_steps
    assert warm == 500
    assert lr_at(0, peak, warm, total) == 0.0
    assert lr_at(500, peak, warm, total) == peak
    assert lr_at(total, peak, warm, total) == 0.0
    # both branches agree at the boundary
    left = peak * warm / warm
    right = peak * 0.5 * (1 + math.cos(math.pi * 0 / (total - warm)))
    assert abs(left - right) < 1e-12 and abs(lr_at(warm, peak, warm, total) - left) < 1e-12
    eps = 1e-9
    assert abs(peak * (warm - eps) / warm - peak) < 1e-12


@criterion(11, "decoder MLM locality and masking statistics")
def test_mlm_locality_and_statistics(tiny_model, rng):
    f = rng.random((4, 16, 16, 3))
    seen = []
    orig = tiny_model.project

    def project(h):
        out = Tensor(orig(h).data, requires_grad=True)
        seen.append(out)
        return out

    tiny_model.project = project
    masked = O.MaskedStream(np.array([CLS1, 9, MASK, 11, 12]), np.array([CLS1, 9, 10, 11, 12]),
                            np.array([False, False, True, False, False]))
    loss = O.mlm_d_loss(tiny_model, f, masked)
    T.backward(loss)
    g = seen[0].grad[0]
    assert np.all(g[[0, 1, 3, 4]] == 0.0) and np.any(g[2] != 0.0)
    relabelled = O.MaskedStream(masked.ids, np.array([CLS1, 20, 10, 21, 22]), masked.is_masked)
    assert O.mlm_d_loss(tiny_model, f, relabelled).item() == loss.item()

    stream = TokenStream.of(list(range(NUM_SPECIAL, NUM_SPECIAL + 20)))
    sel = mask_tok = rand_tok = kept = 0
    srng = np.random.default_rng(11)
    for _ in range(10_000):
        m = O.mask_for_mlm(stream, 0.15, srng, 10_000)
        out = m.ids[m.is_masked]
        orig_ids = stream.ids[m.is_masked]
        sel += m.is_masked.sum()
        mask_tok += np.sum(out == MASK)
        kept += np.sum(out == orig_ids)
        rand_tok += np.sum((out != MASK) & (out != orig_ids))
    assert abs(sel / (10_000 * 20) - 0.15) <= 0.02
    assert abs(mask_tok / sel - 0.8) <= 0.02
    assert abs(rand_tok / sel - 0.1) <= 0.02
    assert abs(kept / sel - 0.1) <= 0.02


@criterion(12, "bidirectional NCE")
def test_bi_nce():
    rng = np.random.default_rng(12)
    assert O.bi_nce_loss(Tensor(rng.normal(size=(1, 8))), Tensor(rng.normal(size=(1, 8)))).item() == 0.0
    loss = O.bi_nce_loss(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]), temperature=1.0).item()
    assert abs(loss - (-math.log(math.e / (math.e + 1)))) <= 1e-12
    model = MVGPT(tiny_config(use_nce=True, init_std=0.3))
    batch = [random_example(rng, model.cfg) for _ in range(3)]
    with_nce = O.pretrain_loss(model, batch, np.random.default_rng(1), TrainConfig(nce_weight=0.001))
    without = O.pretrain_loss(model, batch, np.random.default_rng(1), TrainConfig(nce_weight=0.0))
    assert with_nce.nce.item() == without.nce.item() > 0
    assert with_nce.total.item() == (without.total + with_nce.nce * 0.001).item()
    diff = with_nce.total.item() - without.total.item()
    assert abs(diff - 0.001 * with_nce.nce.item()) <= 4 * np.spacing(with_nce.total.item())
