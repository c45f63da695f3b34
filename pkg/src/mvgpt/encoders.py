"""Text encoder and the tubelet-embedding / factorised visual encoder.

All functions take batched inputs: text as (B, L) id/mask arrays and clips as
(B, N_f, H, W, Ch) pixel arrays.
"""
from __future__ import annotations

import numpy as np

from . import layers as L
from . import tensor as T
from .config import ModelConfig
from .layers import Params
from .tensor import ShapeError, Tensor


def init_text_encoder(p: Params, cfg: ModelConfig, prefix: str = "text", layers: int | None = None) -> None:
    d = cfg.d_model
    p.embedding(f"{prefix}.tok_emb", cfg.vocab_size, d)
    p.embedding(f"{prefix}.pos_emb", cfg.max_text_len, d)
    L.init_stack(p, f"{prefix}.blocks", cfg.text_layers if layers is None else layers, d, cfg.d_ff)


def init_visual_encoder(p: Params, cfg: ModelConfig) -> None:
    d = cfg.d_model
    tube = cfg.tubelet_h * cfg.tubelet_w * cfg.tubelet_t * cfg.channels
    p.linear("visual.tube", tube, d)
    p.embedding("visual.spatial_pos", cfg.spatial_tokens, d)
    p.embedding("visual.spatial_cls", d)
    L.init_stack(p, "visual.spatial", cfg.spatial_layers, d, cfg.d_ff)
    p.embedding("visual.temporal_pos", cfg.max_temporal, d)
    p.embedding("visual.temporal_cls", d)
    L.init_stack(p, "visual.temporal", cfg.temporal_layers, d, cfg.d_ff)


def encode_text(
    p: Params,
    cfg: ModelConfig,
    ids: np.ndarray,
    valid: np.ndarray,
    prefix: str = "text",
    layers: int | None = None,
) -> Tensor:
    """Contextualised embeddings (B, L, d); padded rows are zero."""
    ids = np.atleast_2d(np.asarray(ids, np.int64))
    valid = np.atleast_2d(np.asarray(valid, bool))
    n = ids.shape[1]
    if n > cfg.max_text_len:
        raise ValueError(f"text of {n} tokens exceeds max_text_len={cfg.max_text_len}")
    if not valid.any(axis=1).all():
        raise ValueError("text stream has no real tokens")
    x = T.embedding(p[f"{prefix}.tok_emb"], ids) + p[f"{prefix}.pos_emb"][:n]
    nl = cfg.text_layers if layers is None else layers
    x = L.stack(p, f"{prefix}.blocks", nl, x, cfg.heads, cfg.ln_eps, mask=L.key_mask(valid))
    return x * valid[..., None].astype(float)


def tubelets(frames: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Cut (B, N_f, H, W, Ch) pixels into (B, T, S, t*h*w*Ch) flattened tubes."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 4:
        frames = frames[None]
    b, nf, hh, ww, ch = frames.shape
    th, tw, tt = cfg.tubelet_h, cfg.tubelet_w, cfg.tubelet_t
    for axis, size, ext in (("frames", nf, tt), ("height", hh, th), ("width", ww, tw)):
        if size % ext:
            raise ShapeError(f"clip {axis}={size} is not divisible by tubelet extent {ext}")
    if ch != cfg.channels:
        raise ShapeError(f"clip has {ch} channels, config expects {cfg.channels}")
    nt, nh, nw = nf // tt, hh // th, ww // tw
    x = frames.reshape(b, nt, tt, nh, th, nw, tw, ch)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)  # B, T, nh, nw, t, h, w, ch
    return x.reshape(b, nt, nh * nw, tt * th * tw * ch)


def tubelet_embed(p: Params, cfg: ModelConfig, frames: np.ndarray) -> Tensor:
    """Tube tokens (B, T, S, d): linear projection plus spatial position embedding."""
    tubes = tubelets(frames, cfg)
    s = tubes.shape[2]
    if s != cfg.spatial_tokens:
        raise ShapeError(f"clip yields {s} spatial tokens, config expects {cfg.spatial_tokens}")
    return L.dense(p, "visual.tube", Tensor(tubes)) + p["visual.spatial_pos"]


def encode_visual(p: Params, cfg: ModelConfig, tokens: Tensor) -> Tensor:
    """Factorised encoder over (B, T, S, d) tube tokens; returns (B, T+1, d)."""
    if tokens.ndim != 4 or tokens.shape[-1] != cfg.d_model:
        raise ShapeError(f"expected (B, T, S, {cfg.d_model}) tokens, got {tokens.shape}")
    b, nt, s, d = tokens.shape
    if nt > cfg.max_temporal:
        raise ShapeError(f"{nt} temporal groups exceed max_temporal={cfg.max_temporal}")
    cls = T.broadcast_to(p["visual.spatial_cls"], (b, nt, 1, d))
    x = T.concat([cls, tokens], axis=2)
    x = L.stack(p, "visual.spatial", cfg.spatial_layers, x, cfg.heads, cfg.ln_eps)
    summary = x[:, :, 0, :] + p["visual.temporal_pos"][:nt]
    tcls = T.broadcast_to(p["visual.temporal_cls"], (b, 1, d))
    y = T.concat([tcls, summary], axis=1)
    return L.stack(p, "visual.temporal", cfg.temporal_layers, y, cfg.heads, cfg.ln_eps)
