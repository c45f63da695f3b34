"""Parameter registry and the pre-norm transformer block shared by every stack."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

WEIGHT, BIAS, NORM, EMBEDDING = "weight", "bias", "norm", "embedding"


class Params(dict):
    """Ordered ``name -> Tensor`` map that also records each parameter's kind.

    Kinds drive weight decay: only ``"weight"`` entries are decayed.
    """

    def __init__(self, seed: int = 0, std: float = 0.02):
        super().__init__()
        self.kinds: dict[str, str] = {}
        self.rng = np.random.default_rng(seed)
        self.std = std

    def _add(self, name: str, data: np.ndarray, kind: str) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(data, requires_grad=True, name=name)
        self[name] = t
        self.kinds[name] = kind
        return t

    def weight(self, name: str, *shape: int) -> Tensor:
        return self._add(name, self.rng.normal(0.0, self.std, size=shape), WEIGHT)

    def embedding(self, name: str, *shape: int) -> Tensor:
        return self._add(name, self.rng.normal(0.0, self.std, size=shape), EMBEDDING)

    def bias(self, name: str, n: int) -> Tensor:
        return self._add(name, np.zeros(n), BIAS)

    def norm(self, prefix: str, d: int) -> None:
        self._add(f"{prefix}.g", np.ones(d), NORM)
        self._add(f"{prefix}.b", np.zeros(d), NORM)

    def linear(self, prefix: str, d_in: int, d_out: int) -> None:
        self.weight(f"{prefix}.w", d_in, d_out)
        self.bias(f"{prefix}.b", d_out)


def init_block(p: Params, prefix: str, d: int, d_ff: int, cross: bool = False) -> None:
    p.norm(f"{prefix}.ln1", d)
    if cross:
        p.norm(f"{prefix}.ln_kv", d)
    for name in ("q", "k", "v", "o"):
        p.linear(f"{prefix}.attn.{name}", d, d)
    p.norm(f"{prefix}.ln2", d)
    p.linear(f"{prefix}.ffn.in", d, d_ff)
    p.linear(f"{prefix}.ffn.out", d_ff, d)


def init_stack(p: Params, prefix: str, layers: int, d: int, d_ff: int) -> None:
    for i in range(layers):
        init_block(p, f"{prefix}.{i}", d, d_ff)
    p.norm(f"{prefix}.ln_f", d)


def norm(p: Params, prefix: str, x: Tensor, eps: float) -> Tensor:
    return T.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"], eps)


def dense(p: Params, prefix: str, x: Tensor) -> Tensor:
    return T.linear(x, p[f"{prefix}.w"], p[f"{prefix}.b"])


def block(
    p: Params,
    prefix: str,
    x: Tensor,
    heads: int,
    eps: float,
    kv: Tensor | None = None,
    mask=None,
) -> Tensor:
    """Pre-norm block: attention sublayer then GELU feed-forward, both residual.

    With ``kv`` given the attention is cross-attention onto ``kv`` (normalised
    by its own layer norm); otherwise self-attention.
    """
    h = norm(p, f"{prefix}.ln1", x, eps)
    src = h if kv is None else norm(p, f"{prefix}.ln_kv", kv, eps)
    a = T.attention(
        dense(p, f"{prefix}.attn.q", h),
        dense(p, f"{prefix}.attn.k", src),
        dense(p, f"{prefix}.attn.v", src),
        heads,
        mask,
    )
    x = x + dense(p, f"{prefix}.attn.o", a)
    f = dense(p, f"{prefix}.ffn.out", T.gelu(dense(p, f"{prefix}.ffn.in", norm(p, f"{prefix}.ln2", x, eps))))
    return x + f


def stack(p: Params, prefix: str, layers: int, x: Tensor, heads: int, eps: float, mask=None) -> Tensor:
    for i in range(layers):
        x = block(p, f"{prefix}.{i}", x, heads, eps, mask=mask)
    return norm(p, f"{prefix}.ln_f", x, eps)


def key_mask(valid: np.ndarray) -> np.ndarray:
    """Additive mask (..., 1, n) hiding invalid key positions."""
    return np.where(np.asarray(valid, bool), 0.0, T.NEG_INF)[..., None, :]
