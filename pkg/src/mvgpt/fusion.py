"""Two-stream co-attentional multimodal encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .config import ModelConfig
from .layers import Params
from .tensor import ShapeError, Tensor


@dataclass
class FusedFeatures:
    E_hat: Tensor
    V_hat: Tensor


def init_fusion(p: Params, cfg: ModelConfig) -> None:
    d, dff = cfg.d_model, cfg.d_ff
    for r in range(cfg.fusion_layers):
        pre = f"fusion.{r}"
        L.init_block(p, f"{pre}.text_cross", d, dff, cross=True)
        L.init_block(p, f"{pre}.text_self", d, dff)
        L.init_block(p, f"{pre}.visual_cross", d, dff, cross=True)
        L.init_block(p, f"{pre}.visual_self", d, dff)


def coattend(
    p: Params,
    cfg: ModelConfig,
    E: Tensor,
    text_valid: np.ndarray,
    V: Tensor,
    trace: list | None = None,
) -> FusedFeatures:
    """Run ``cfg.fusion_layers`` co-attention layers over text (B, N_x, d) and video (B, T+1, d).

    Each layer: text queries cross-attend to the video, then self-attend; the
    video stream does the same against the text (padded text keys hidden).
    Both streams read the previous layer's outputs. ``trace``, if given,
    receives one dict per layer holding the key/value tensors each stream
    attended to and the tensors it produced.
    """
    if E.shape[-1] != V.shape[-1]:
        raise ShapeError(f"text dim {E.shape[-1]} != visual dim {V.shape[-1]}")
    text_valid = np.atleast_2d(np.asarray(text_valid, bool))
    tmask = L.key_mask(text_valid)
    keep = text_valid[..., None].astype(float)
    h, eps = cfg.heads, cfg.ln_eps
    e, v = E, V
    for r in range(cfg.fusion_layers):
        pre = f"fusion.{r}"
        e_next = L.block(p, f"{pre}.text_cross", e, h, eps, kv=v)
        e_next = L.block(p, f"{pre}.text_self", e_next, h, eps, mask=tmask)
        v_next = L.block(p, f"{pre}.visual_cross", v, h, eps, kv=e, mask=tmask)
        v_next = L.block(p, f"{pre}.visual_self", v_next, h, eps)
        if trace is not None:
            trace.append({"layer": r, "text_kv": v, "visual_kv": e, "text_out": None, "visual_out": v_next})
        e, v = e_next * keep, v_next
        if trace is not None:
            trace[-1]["text_out"] = e
    return FusedFeatures(e, v)
