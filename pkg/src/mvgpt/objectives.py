"""Pretraining and transfer losses.

Token configurations: forward generation encodes ``CLS1 + U`` and decodes
from ``BOS1``; backward encodes ``CLS2 + W`` and decodes from ``BOS2``;
captioning encodes ``CLS1 + U`` and decodes from ``BOS2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import layers as L
from . import tensor as T
from .config import TrainConfig
from .encoders import encode_text
from .model import MVGPT, Context, pad_batch
from .tensor import Tensor
from .tokenizer import BOS1, BOS2, CLS1, CLS2, EOS, MASK, NUM_SPECIAL, TokenStream

DIRECTIONS = {
    "forward": (CLS1, BOS1),
    "backward": (CLS2, BOS2),
    "caption": (CLS1, BOS2),
}


@dataclass
class Example:
    """A tokenised triplet: frames plus special-free body ids of U and W."""

    frames: np.ndarray
    u: list[int]
    w: list[int]
    id: str = ""


@dataclass
class MaskedStream:
    ids: np.ndarray
    labels: np.ndarray
    is_masked: np.ndarray


@dataclass
class LossReport:
    fg: Tensor
    bg: Tensor
    mlm_u: Tensor
    mlm_w: Tensor
    nce: Tensor
    total: Tensor

    def floats(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("fg", "bg", "mlm_u", "mlm_w", "nce", "total")}


ZERO = Tensor(0.0)


def _strip_prefix(ids: Sequence[int], expected: int) -> list[int]:
    ids = [int(i) for i in ids]
    if ids and ids[0] in (CLS1, CLS2):
        if ids[0] != expected:
            raise ValueError(f"input text carries prefix {ids[0]}, direction needs {expected}")
        ids = ids[1:]
    return ids


def _input_ids(model: MVGPT, body: Sequence[int], cls: int) -> list[int]:
    return [cls] + list(body)[: model.cfg.max_text_len - 1]


def _target_ids(model: MVGPT, body: Sequence[int]) -> list[int]:
    body = [int(t) for t in body]
    if body and body[-1] == EOS:
        body = body[:-1]
    if not body:
        raise ValueError("empty generation target")
    return body[: model.cfg.max_gen_len] + [EOS]


def _frames_batch(frames_list) -> np.ndarray:
    shapes = {np.shape(f) for f in frames_list}
    if len(shapes) != 1:
        raise ValueError(f"clips in one batch must share a shape, got {sorted(shapes)}")
    return np.stack([np.asarray(f, np.float64) for f in frames_list])


def _generation(model: MVGPT, V: Tensor, inputs, targets, direction: str) -> tuple[Tensor, Context]:
    cls, bos = DIRECTIONS[direction]
    ids, valid = pad_batch([_input_ids(model, b, cls) for b in inputs])
    ctx = model.context(V, ids, valid)
    tgt, tvalid = pad_batch([_target_ids(model, t) for t in targets])
    dec_in = np.concatenate([np.full((len(tgt), 1), bos), tgt[:, :-1]], axis=1)
    logits, _, _ = model.decode(ctx, dec_in)
    loss = T.cross_entropy(T.reshape(logits, (-1, logits.shape[-1])), tgt.reshape(-1), ~tvalid.reshape(-1))
    return loss, ctx


def generation_loss(model: MVGPT, frames, input_ids, target_ids, direction: str = "forward") -> Tensor:
    """Mean per-token NLL of ``target_ids`` (EOS included) given the clip and input text.

    ``input_ids`` and ``target_ids`` are token ids without configuration
    tokens; the direction decides which CLS/BOS pair is attached.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    if isinstance(input_ids, TokenStream):
        input_ids = input_ids.ids[input_ids.pad_mask]
    if isinstance(target_ids, TokenStream):
        target_ids = target_ids.ids[target_ids.pad_mask]
    body = _strip_prefix(input_ids, DIRECTIONS[direction][0])
    V = model.encode_visual(frames)
    loss, _ = _generation(model, V, [body], [list(target_ids)], direction)
    return loss


# ----------------------------------------------------------------------------
# masked language modelling


def mask_for_mlm(stream, rate: float, rng: np.random.Generator, vocab_size: int | None = None) -> MaskedStream:
    """Select ``max(1, round(rate * n))`` of the ``n`` maskable positions uniformly.

    Maskable means a real, non-special token. Selected positions become MASK
    (80%), a random non-special token (10%) or stay unchanged (10%).
    """
    if not isinstance(stream, TokenStream):
        stream = TokenStream.of(stream)
    ids = stream.ids.copy()
    maskable = np.nonzero(stream.pad_mask & (ids >= NUM_SPECIAL))[0]
    if maskable.size == 0:
        raise ValueError("stream has no maskable token")
    n_sel = max(1, math.floor(rate * maskable.size + 0.5))
    chosen = np.sort(rng.choice(maskable, size=n_sel, replace=False))
    is_masked = np.zeros(len(ids), bool)
    is_masked[chosen] = True
    labels = stream.ids.copy()
    high = int(vocab_size) if vocab_size is not None else int(ids.max()) + 1
    for pos in chosen:
        u = rng.random()
        if u < 0.8:
            ids[pos] = MASK
        elif u < 0.9 and high > NUM_SPECIAL:
            ids[pos] = int(rng.integers(NUM_SPECIAL, high))
    return MaskedStream(ids, labels, is_masked)


def _mlm(model: MVGPT, V: Tensor, masked: Sequence[MaskedStream], bos: int, target: str = "decoder") -> Tensor:
    ids, valid = pad_batch([m.ids for m in masked])
    labels, _ = pad_batch([m.labels for m in masked])
    is_masked = np.zeros_like(valid)
    for i, m in enumerate(masked):
        is_masked[i, : len(m.is_masked)] = m.is_masked
    if not is_masked.any():
        raise ValueError("no masked position to predict")
    ctx = model.context(V, ids, valid)
    if target == "decoder":
        _, c_tilde, _ = model.decode(ctx, np.full((len(masked), 1), bos))
        rows = c_tilde[:, : ids.shape[1]]
    elif target == "encoder":
        rows = ctx.E_hat
    else:
        raise ValueError(f"unknown MLM target {target!r}")
    logits = model.project(rows)
    return T.cross_entropy(T.reshape(logits, (-1, logits.shape[-1])), labels.reshape(-1), ~is_masked.reshape(-1))


def mlm_d_loss(model: MVGPT, frames, masked: MaskedStream, bos: int = BOS1, target: str = "decoder") -> Tensor:
    """Cross-entropy at masked positions, read from the decoder's copy of the text.

    The decoder sees only ``bos`` on its generation side. ``masked.ids``
    include the CLS prefix.
    """
    if not np.any(masked.is_masked):
        raise ValueError("no masked position to predict")
    return _mlm(model, model.encode_visual(frames), [masked], bos, target)


# ----------------------------------------------------------------------------
# contrastive retrieval loss


def bi_nce_loss(video_emb: Tensor, text_emb: Tensor, temperature: float = 0.1) -> Tensor:
    """Symmetric in-batch NCE over L2-normalised (B, d) embeddings."""
    if video_emb.shape != text_emb.shape or video_emb.ndim != 2:
        raise T.ShapeError(f"embedding shapes {video_emb.shape} and {text_emb.shape}")
    v = T.l2_normalize(video_emb)
    t = T.l2_normalize(text_emb)
    sim = T.matmul(v, t.T) * (1.0 / temperature)
    diag = np.arange(sim.shape[0])
    return (T.cross_entropy(sim, diag) + T.cross_entropy(sim.T, diag)) * 0.5


def _masked_mean(x: Tensor, valid: np.ndarray) -> Tensor:
    w = np.asarray(valid, float)
    return T.sum(x * w[..., None], axis=1) * (1.0 / w.sum(axis=1))[:, None]


def _video_embedding(model: MVGPT, ctx: Context) -> Tensor:
    return L.dense(model.params, "nce.video_proj", _masked_mean(ctx.C, ctx.valid))


def _text_embedding(model: MVGPT, bodies) -> Tensor:
    ids, valid = pad_batch([list(b)[: model.cfg.max_text_len] for b in bodies])
    E = encode_text(model.params, model.cfg, ids, valid, prefix="nce.text", layers=model.cfg.nce_text_layers)
    return L.dense(model.params, "nce.text_proj", _masked_mean(E, valid))


# ----------------------------------------------------------------------------
# combined objective


def pretrain_loss(
    model: MVGPT,
    batch,
    rng: np.random.Generator,
    tcfg: TrainConfig | None = None,
    use_nce: bool | None = None,
) -> LossReport:
    """Bidirectional generation + decoder MLM (+ optional Bi-NCE) on a batch of examples.

    The clip is encoded once and shared by the four passes. Terms whose
    weight is zero are skipped and reported as 0.
    """
    tcfg = tcfg or TrainConfig()
    batch = [batch] if isinstance(batch, Example) else list(batch)
    if any(not e.u or not e.w for e in batch):
        raise ValueError("U and W must both be non-empty")
    use_nce = model.cfg.use_nce if use_nce is None else use_nce
    if use_nce and "nce.video_proj.w" not in model.params:
        raise RuntimeError("model was built without NCE parameters")
    V = model.encode_visual(_frames_batch([e.frames for e in batch]))
    us, ws = [e.u for e in batch], [e.w for e in batch]

    fg = bg = mlm_u = mlm_w = nce = ZERO
    need_fg = tcfg.w_fg != 0 or use_nce
    need_bg = tcfg.w_bg != 0 or use_nce
    if need_fg:
        fg, ctx_f = _generation(model, V, us, ws, "forward")
    if need_bg:
        bg, ctx_b = _generation(model, V, ws, us, "backward")
    if tcfg.w_mlm != 0:
        vs = model.cfg.vocab_size
        mu = [mask_for_mlm(TokenStream.of(_input_ids(model, u, CLS1)), tcfg.mlm_rate, rng, vs) for u in us]
        mw = [mask_for_mlm(TokenStream.of(_input_ids(model, w, CLS2)), tcfg.mlm_rate, rng, vs) for w in ws]
        mlm_u = _mlm(model, V, mu, BOS1, tcfg.mlm_target)
        mlm_w = _mlm(model, V, mw, BOS2, tcfg.mlm_target)

    parts = [(tcfg.w_fg, fg), (tcfg.w_bg, bg), (tcfg.w_mlm, mlm_u), (tcfg.w_mlm, mlm_w)]
    total = ZERO
    for i, (weight, term) in enumerate(p for p in parts if p[0] != 0):
        scaled = term if weight == 1.0 else term * weight
        total = scaled if i == 0 else total + scaled
    if use_nce:
        tau = tcfg.nce_temperature
        nce_f = bi_nce_loss(_video_embedding(model, ctx_f), _text_embedding(model, ws), tau)
        nce_b = bi_nce_loss(_video_embedding(model, ctx_b), _text_embedding(model, us), tau)
        nce = nce_f + nce_b
        total = total + nce * tcfg.nce_weight
    return LossReport(fg, bg, mlm_u, mlm_w, nce, total)


def caption_loss(model: MVGPT, batch) -> Tensor:
    """Finetuning loss: ``CLS1 + U`` in, caption decoded from ``BOS2``. ``Example.w`` holds the caption."""
    batch = [batch] if isinstance(batch, Example) else list(batch)
    V = model.encode_visual(_frames_batch([e.frames for e in batch]))
    loss, _ = _generation(model, V, [e.u for e in batch], [e.w for e in batch], "caption")
    return loss


def pooled_classify(model: MVGPT, frames, text_ids, num_classes: int) -> Tensor:
    """Class logits (num_classes,) from the mean-pooled context-only decoder pass."""
    if "cls_head.out.w" not in model.params:
        model.attach_classifier(num_classes)
    elif model.params["cls_head.out.w"].shape[1] != num_classes:
        raise ValueError("classifier head was built for a different number of classes")
    return model.pooled_logits(frames, list(text_ids))[0]
