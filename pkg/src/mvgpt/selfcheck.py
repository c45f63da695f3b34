"""Fast built-in verification suites behind ``mvgpt selfcheck``."""
from __future__ import annotations

import time

import numpy as np

from . import metrics, oracles
from . import tensor as T
from .config import ModelConfig
from .decoder import beam_search, greedy_search
from .model import MVGPT, pad_batch
from .objectives import Example, pretrain_loss
from .tokenizer import BOS1, NUM_SPECIAL


def tiny_config(**overrides) -> ModelConfig:
    """d=16, one layer per stack, 4-frame 16x16 clips in 8x8x2 tubelets."""
    base = dict(
        vocab_size=32, d_model=16, heads=2, text_layers=1, spatial_layers=1, temporal_layers=1,
        fusion_layers=1, decoder_layers=1, frame_height=16, frame_width=16, tubelet_h=8, tubelet_w=8,
        tubelet_t=2, max_frames=8, max_text_len=16, max_gen_len=16, nce_text_layers=1,
    )
    base.update(overrides)
    return ModelConfig(**base)


def random_example(rng: np.random.Generator, cfg: ModelConfig, n_u: int = 3, n_w: int = 4) -> Example:
    frames = rng.random((4, cfg.frame_height, cfg.frame_width, cfg.channels))
    u = rng.integers(NUM_SPECIAL, cfg.vocab_size, n_u).tolist()
    w = rng.integers(NUM_SPECIAL, cfg.vocab_size, n_w).tolist()
    return Example(frames, u, w)


def gradient_check(seed: int = 0, n_coords: int = 200, init_std: float = 0.5) -> float:
    """Worst relative finite-difference error of the pretraining loss on the tiny model."""
    cfg = tiny_config(init_std=init_std, seed=seed)
    model = MVGPT(cfg)
    ex = random_example(np.random.default_rng(seed), cfg)

    def f():
        return pretrain_loss(model, ex, np.random.default_rng(seed + 1)).total

    return T.finite_diff_check(f, model.parameters(), h=1e-5, n_coords=n_coords, seed=seed)


def causality_violations(seed: int, n_tokens: int = 6) -> int:
    """Count logits rows before the perturbed position that changed at all."""
    rng = np.random.default_rng(seed)
    cfg = tiny_config(seed=seed, init_std=float(rng.uniform(0.05, 0.8)), decoder_layers=int(rng.integers(1, 3)))
    model = MVGPT(cfg)
    ex = random_example(rng, cfg)
    ids, valid = pad_batch([[4] + ex.u])
    with T.no_grad():
        ctx = model.context(model.encode_visual(ex.frames), ids, valid)
        toks = np.concatenate([[BOS1], rng.integers(NUM_SPECIAL, cfg.vocab_size, n_tokens - 1)])[None]
        base, _, _ = model.decode(ctx, toks)
        bad = 0
        for j in range(1, n_tokens):
            other = toks.copy()
            other[0, j:] = rng.integers(NUM_SPECIAL, cfg.vocab_size, n_tokens - j)
            pert, _, _ = model.decode(ctx, other)
            bad += int(not np.array_equal(base.data[0, :j], pert.data[0, :j]))
    return bad


def random_corpus(rng: np.random.Generator, n_examples: int, words: int = 5, max_len: int = 8):
    vocab = [f"w{i}" for i in range(words)]

    def sent():
        return [vocab[i] for i in rng.integers(0, words, int(rng.integers(1, max_len + 1)))]

    return [(sent(), [sent() for _ in range(int(rng.integers(1, 4)))]) for _ in range(n_examples)]


def metric_oracle_error(seed: int) -> float:
    rng = np.random.default_rng(seed)
    corpus = random_corpus(rng, int(rng.integers(2, 6)))
    errs = [
        abs(metrics.bleu(corpus, 4) - oracles.bleu_bruteforce(corpus, 4)),
        abs(metrics.bleu(corpus, 1) - oracles.bleu_bruteforce(corpus, 1)),
        abs(metrics.rouge_l(corpus) - oracles.rouge_l_bruteforce(corpus)),
        abs(metrics.cider(corpus) - oracles.cider_dense(corpus)),
    ]
    return max(errs)


def toy_step(seed: int, vocab: int):
    """A fixed random next-token distribution that depends on the whole prefix."""

    def step(prefixes):
        rows = []
        for p in prefixes:
            z = np.random.default_rng([seed, *map(int, p)]).normal(size=vocab) * 2.0
            rows.append(z - z.max() - np.log(np.exp(z - z.max()).sum()))
        return np.stack(rows)

    return step


def beam_mismatches(seed: int, vocab: int = 4, max_len: int = 4, length_alpha: float = 0.6) -> int:
    """0 when full-width beam agrees with enumeration and beam=1 agrees with greedy."""
    step = toy_step(seed, vocab)
    eos = vocab - 1
    bos = vocab  # outside the output vocabulary, like the real BOS tokens
    full = vocab**max_len
    bad = int(beam_search(step, bos, full, max_len, length_alpha, eos) != oracles.exhaustive_best(step, bos, eos, vocab, max_len, length_alpha))
    bad += int(beam_search(step, bos, 1, max_len, length_alpha, eos) != greedy_search(step, bos, max_len, eos))
    return bad


def run_all(seed: int = 0, out=print) -> bool:
    ok = True

    def report(name, passed, detail, t0):
        nonlocal ok
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'}\t{name}\t{detail}\t{time.time() - t0:.1f}s")

    t0 = time.time()
    err = gradient_check(seed)
    report("gradient", err < 1e-4, f"max_rel_err={err:.2e}", t0)
    t0 = time.time()
    bad = sum(causality_violations(seed + k) for k in range(5))
    report("causality", bad == 0, f"violations={bad}", t0)
    t0 = time.time()
    worst = max(metric_oracle_error(seed + k) for k in range(20))
    report("metric-oracles", worst < 1e-9, f"max_abs_err={worst:.1e}", t0)
    t0 = time.time()
    bad = sum(beam_mismatches(seed + k) for k in range(10))
    report("beam-vs-exhaustive", bad == 0, f"mismatches={bad}", t0)
    return ok
