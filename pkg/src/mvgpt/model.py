"""The assembled video-captioning model: encoders, co-attention fusion, decoder."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import decoder as dec
from . import encoders as enc
from . import fusion as fus
from . import layers as L
from . import tensor as T
from .config import ModelConfig
from .layers import Params
from .tensor import Tensor
from .tokenizer import PAD


@dataclass
class Context:
    """Fused features ready for the decoder."""

    E_hat: Tensor  # (B, N_x, d)
    V_hat: Tensor  # (B, T+1, d)
    text_valid: np.ndarray  # (B, N_x)

    @property
    def C(self) -> Tensor:
        return T.concat([self.E_hat, self.V_hat], axis=1)

    @property
    def valid(self) -> np.ndarray:
        b, nv = self.V_hat.shape[0], self.V_hat.shape[1]
        return np.concatenate([self.text_valid, np.ones((b, nv), bool)], axis=1)


def pad_batch(seqs) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences into (B, L) ids and validity mask."""
    seqs = [list(s) for s in seqs]
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), PAD, np.int64)
    valid = np.zeros((len(seqs), n), bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        valid[i, : len(s)] = True
    return ids, valid


class MVGPT:
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        p = Params(seed=cfg.seed, std=cfg.init_std)
        enc.init_text_encoder(p, cfg)
        enc.init_visual_encoder(p, cfg)
        fus.init_fusion(p, cfg)
        dec.init_decoder(p, cfg)
        if cfg.use_nce:
            enc.init_text_encoder(p, cfg, prefix="nce.text", layers=cfg.nce_text_layers)
            p.linear("nce.video_proj", cfg.d_model, cfg.d_model)
            p.linear("nce.text_proj", cfg.d_model, cfg.d_model)
        self.params = p
        self.recorder: list | None = None

    # -- bookkeeping ---------------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def attach_classifier(self, num_classes: int, seed: int | None = None) -> None:
        """Append a randomly initialised two-layer MLP head for pooled classification."""
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        p = self.params
        saved = p.rng
        p.rng = np.random.default_rng(self.cfg.seed + 1 if seed is None else seed)
        d = self.cfg.d_model
        p.linear("cls_head.hidden", d, d)
        p.linear("cls_head.out", d, num_classes)
        p.rng = saved

    @contextlib.contextmanager
    def record_streams(self):
        """Collect ``(role, ids)`` for every text-encoder and decoder input while active."""
        log: list = []
        prev, self.recorder = self.recorder, log
        try:
            yield log
        finally:
            self.recorder = prev

    def _record(self, role: str, ids: np.ndarray, valid: np.ndarray | None = None) -> None:
        if self.recorder is None:
            return
        for i, row in enumerate(np.atleast_2d(ids)):
            keep = row if valid is None else row[np.atleast_2d(valid)[i]]
            self.recorder.append((role, tuple(int(t) for t in keep)))

    # -- forward pieces ------------------------------------------------------

    def encode_visual(self, frames: np.ndarray) -> Tensor:
        frames = np.asarray(frames, np.float64)
        if frames.ndim == 4:
            frames = frames[None]
        if not self.cfg.use_visual:
            frames = np.zeros_like(frames)
        tokens = enc.tubelet_embed(self.params, self.cfg, frames)
        return enc.encode_visual(self.params, self.cfg, tokens)

    def encode_text(self, ids: np.ndarray, valid: np.ndarray) -> Tensor:
        self._record("text", ids, valid)
        return enc.encode_text(self.params, self.cfg, ids, valid)

    def context(self, V: Tensor, ids: np.ndarray, valid: np.ndarray, trace: list | None = None) -> Context:
        E = self.encode_text(ids, valid)
        fused = fus.coattend(self.params, self.cfg, E, valid, V, trace=trace)
        return Context(fused.E_hat, fused.V_hat, np.atleast_2d(np.asarray(valid, bool)))

    def decode(self, ctx: Context, token_ids: np.ndarray | None):
        if token_ids is not None:
            dec.check_bos(token_ids)
            self._record("decoder", token_ids)
        return dec.decode(self.params, self.cfg, ctx.C, ctx.valid, token_ids)

    def project(self, h: Tensor) -> Tensor:
        return dec.project(self.params, self.cfg, h)

    # -- generation ----------------------------------------------------------

    def build_context(self, frames, text_ids) -> Context:
        """Context for a single clip and its (prefixed) input text ids."""
        ids, valid = pad_batch([text_ids])
        with T.no_grad():
            return self.context(self.encode_visual(frames), ids, valid)

    def generate(self, frames, text_ids, bos: int, beam: int = 1, max_len: int | None = None,
                 length_alpha: float = 0.6, greedy: bool = False) -> list[int]:
        ctx = self.build_context(frames, text_ids)
        max_len = self.cfg.max_gen_len if max_len is None else max_len
        self._record("decoder", np.array([[bos]]))
        if greedy:
            return dec.greedy_generate(self.params, self.cfg, ctx.C, ctx.valid, bos, max_len)
        return dec.beam_generate(self.params, self.cfg, ctx.C, ctx.valid, bos, beam, max_len, length_alpha)

    # -- pooled head ---------------------------------------------------------

    def pooled_logits(self, frames, text_ids) -> Tensor:
        """Context-only decoder pass, mean-pooled over valid rows, through the MLP head."""
        if "cls_head.out.w" not in self.params:
            raise RuntimeError("call attach_classifier() first")
        frames = np.asarray(frames, np.float64)
        if frames.ndim == 4:
            frames = frames[None]
            text_ids = [text_ids]
        ids, valid = pad_batch(text_ids)
        ctx = self.context(self.encode_visual(frames), ids, valid)
        _, c_tilde, _ = self.decode(ctx, None)
        w = ctx.valid.astype(float)
        pooled = T.sum(c_tilde * w[..., None], axis=1) * (1.0 / w.sum(axis=1))[:, None]
        hidden = T.gelu(L.dense(self.params, "cls_head.hidden", pooled))
        return L.dense(self.params, "cls_head.out", hidden)
