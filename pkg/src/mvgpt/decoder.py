"""Prefix-conditioned sentence decoder and greedy / beam generation."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import layers as L
from . import tensor as T
from .config import ModelConfig
from .layers import Params
from .tensor import Tensor
from .tokenizer import BOS1, BOS2, EOS


def init_decoder(p: Params, cfg: ModelConfig) -> None:
    d = cfg.d_model
    p.embedding("decoder.tok_emb", cfg.vocab_size, d)
    p.embedding("decoder.pos_emb", cfg.max_gen_len + 1, d)
    p.embedding("decoder.seg_emb", 2, d)
    L.init_stack(p, "decoder.blocks", cfg.decoder_layers, d, cfg.d_ff)
    if not cfg.tie_phi:
        p.weight("decoder.phi", cfg.vocab_size, d)
    p.bias("decoder.phi_b", cfg.vocab_size)


def phi(p: Params, cfg: ModelConfig) -> Tensor:
    """The (vocab, d) output projection."""
    return p["decoder.tok_emb"] if cfg.tie_phi else p["decoder.phi"]


def project(p: Params, cfg: ModelConfig, h: Tensor) -> Tensor:
    return T.matmul(h, phi(p, cfg).T) + p["decoder.phi_b"]


def prefix_mask(ctx_valid: np.ndarray, n_gen: int) -> np.ndarray:
    """Additive (B, Nc+n, Nc+n) mask: context sees context, generation sees context + its own past."""
    ctx_valid = np.atleast_2d(np.asarray(ctx_valid, bool))
    b, nc = ctx_valid.shape
    n = nc + n_gen
    allowed = np.zeros((b, n, n), bool)
    allowed[:, :, :nc] = ctx_valid[:, None, :]
    allowed[:, nc:, nc:] = np.tril(np.ones((n_gen, n_gen), bool))
    return np.where(allowed, 0.0, T.NEG_INF)


def decode(
    p: Params,
    cfg: ModelConfig,
    C: Tensor,
    ctx_valid: np.ndarray,
    token_ids: np.ndarray | None,
) -> tuple[Tensor | None, Tensor, Tensor | None]:
    """One transformer pass over ``[C; H]``.

    ``C`` is (B, Nc, d), ``token_ids`` (B, n) or None for a context-only
    pass. Returns ``(logits, C_tilde, H_tilde)``; logits row i is read from
    the decoder output at generated position i.
    """
    b, nc, d = C.shape
    x = C + p["decoder.seg_emb"][0]
    n = 0
    if token_ids is not None:
        token_ids = np.atleast_2d(np.asarray(token_ids, np.int64))
        n = token_ids.shape[1]
        if n > cfg.max_gen_len + 1:
            raise ValueError(f"{n} decoder tokens exceed max_gen_len + 1 = {cfg.max_gen_len + 1}")
        h = T.embedding(p["decoder.tok_emb"], token_ids) + p["decoder.pos_emb"][:n] + p["decoder.seg_emb"][1]
        x = T.concat([x, h], axis=1)
    mask = prefix_mask(ctx_valid, n)
    out = L.stack(p, "decoder.blocks", cfg.decoder_layers, x, cfg.heads, cfg.ln_eps, mask=mask)
    if n == 0:
        return None, out, None
    c_tilde, h_tilde = out[:, :nc], out[:, nc:]
    return project(p, cfg, h_tilde), c_tilde, h_tilde


def check_bos(token_ids) -> None:
    ids = np.atleast_2d(np.asarray(token_ids))
    if ids.shape[1] == 0 or not np.isin(ids[:, 0], (BOS1, BOS2)).all():
        raise ValueError("decoder input must start with BOS1 or BOS2")


def decoder_forward(p: Params, cfg: ModelConfig, C: Tensor, ctx_valid, token_ids) -> tuple[Tensor, Tensor]:
    """Logits (B, n, vocab) for ``token_ids`` and the decoder's copy of the context."""
    check_bos(token_ids)
    logits, c_tilde, _ = decode(p, cfg, C, ctx_valid, token_ids)
    return logits, c_tilde


# ----------------------------------------------------------------------------
# generation

StepFn = Callable[[Sequence[Sequence[int]]], np.ndarray]


def model_step_fn(p: Params, cfg: ModelConfig, C: Tensor, ctx_valid) -> StepFn:
    """Next-token log-probs for a list of equal-length prefixes, one context."""
    C_data = C.data[:1]
    valid = np.atleast_2d(np.asarray(ctx_valid, bool))[:1]

    def step(prefixes):
        ids = np.asarray(prefixes, np.int64)
        k = ids.shape[0]
        with T.no_grad():
            ctx = Tensor(np.repeat(C_data, k, axis=0))
            logits, _, _ = decode(p, cfg, ctx, np.repeat(valid, k, axis=0), ids)
            return T.log_softmax(logits[:, -1]).data

    return step


def greedy_search(step: StepFn, bos: int, max_len: int, eos: int = EOS) -> list[int]:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    seq = [bos]
    for _ in range(max_len):
        tok = int(np.argmax(step([seq])[0]))
        seq.append(tok)
        if tok == eos:
            break
    return seq[1:]


@dataclass(order=True)
class Hypothesis:
    sort_key: tuple = field(init=False, repr=False)
    ids: tuple[int, ...]
    score: float
    finished: bool = False

    def __post_init__(self):
        self.sort_key = (-self.score, self.ids)


def beam_search(
    step: StepFn,
    bos: int,
    beam: int,
    max_len: int,
    length_alpha: float = 0.6,
    eos: int = EOS,
) -> list[int]:
    """Beam search over ``step`` log-probs; excludes BOS from the result.

    Each round keeps the ``beam`` best extensions of the live hypotheses
    (ties go to the lexicographically smaller sequence, so the lower token id
    wins). Extensions ending in EOS are retired and ranked by
    ``logP / len**length_alpha``.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    live = [Hypothesis((bos,), 0.0)]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        logp = step([h.ids for h in live])
        cands = [
            Hypothesis(h.ids + (tok,), h.score + float(lp))
            for h, row in zip(live, logp)
            for tok, lp in enumerate(row)
        ]
        live = []
        for c in heapq.nsmallest(beam, cands):
            if c.ids[-1] == eos:
                c.finished = True
                finished.append(c)
            else:
                live.append(c)
        if not live:
            break

    def norm_key(h: Hypothesis):
        n = len(h.ids) - 1
        return (-h.score / (n**length_alpha), h.ids)

    pool = finished if finished else live
    return list(min(pool, key=norm_key).ids[1:])


def greedy_generate(p: Params, cfg: ModelConfig, C: Tensor, ctx_valid, bos: int, max_len: int) -> list[int]:
    if bos not in (BOS1, BOS2):
        raise ValueError("generation must start from BOS1 or BOS2")
    return greedy_search(model_step_fn(p, cfg, C, ctx_valid), bos, max_len)


def beam_generate(
    p: Params, cfg: ModelConfig, C: Tensor, ctx_valid, bos: int, beam: int, max_len: int, length_alpha: float = 0.6
) -> list[int]:
    if bos not in (BOS1, BOS2):
        raise ValueError("generation must start from BOS1 or BOS2")
    return beam_search(model_step_fn(p, cfg, C, ctx_valid), bos, beam, max_len, length_alpha)
