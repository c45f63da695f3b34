"""Adam with decoupled weight decay, warmup + cosine schedule, and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, dump_config, parse_config_text, resolve
from .layers import WEIGHT
from .model import MVGPT
from .objectives import Example, LossReport, caption_loss, pretrain_loss


def lr_at(step: int, lr_peak: float, warmup: int, total: int) -> float:
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if step < warmup:
        return lr_peak * step / warmup
    if total == warmup:
        return lr_peak
    return lr_peak * 0.5 * (1.0 + math.cos(math.pi * (step - warmup) / (total - warmup)))


@dataclass
class OptimState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, tcfg: TrainConfig) -> OptimState:
        return cls(tcfg.beta1, tcfg.beta2, tcfg.adam_eps, tcfg.weight_decay)


def adam_step(
    params: dict[str, T.Tensor],
    grads: dict[str, np.ndarray],
    state: OptimState,
    lr: float,
    kinds: dict[str, str] | None = None,
) -> None:
    """One in-place bias-corrected Adam update.

    Decay ``p -= lr * wd * p`` touches only parameters whose kind is
    ``"weight"``; with ``kinds`` unset every parameter counts as a weight.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay and (kinds is None or kinds.get(name) == WEIGHT):
            update = update + lr * state.weight_decay * p.data
        p.data -= update


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Examples for update ``step`` (0-based): a fresh seeded permutation per epoch."""
    per_epoch = math.ceil(n / batch_size)
    epoch, k = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return perm[k * batch_size : (k + 1) * batch_size]


@dataclass
class TrainResult:
    model: MVGPT
    state: OptimState
    rng: np.random.Generator
    losses: list[dict[str, float]]


def make_checkpoint(model: MVGPT, tcfg: TrainConfig, state: OptimState, rng: np.random.Generator | None) -> Checkpoint:
    return Checkpoint(
        config_text=dump_config(model.cfg, tcfg),
        tensors={k: p.data.copy() for k, p in model.params.items()},
        opt_step=state.step,
        opt_m={k: v.copy() for k, v in state.m.items()},
        opt_v={k: v.copy() for k, v in state.v.items()},
        rng_state=None if rng is None else rng.bit_generator.state,
    )


def load_into(model: MVGPT, tensors: dict[str, np.ndarray]) -> None:
    """Copy ``tensors`` into ``model``; every parameter must be present with matching shape."""
    if "cls_head.out.w" in tensors and "cls_head.out.w" not in model.params:
        model.attach_classifier(tensors["cls_head.out.w"].shape[1])
    missing = [k for k in model.params if k not in tensors]
    if missing:
        raise KeyError(f"checkpoint lacks parameter {missing[0]}")
    for name, p in model.params.items():
        if tensors[name].shape != p.data.shape:
            raise T.ShapeError(f"tensor {name}: checkpoint shape {tensors[name].shape} != model shape {p.data.shape}")
    extra = [k for k in tensors if k not in model.params]
    if extra:
        raise KeyError(f"checkpoint has unknown parameter {extra[0]}")
    for name, p in model.params.items():
        p.data = tensors[name].copy()


def restore(ck: Checkpoint) -> tuple[MVGPT, TrainConfig, OptimState, np.random.Generator | None]:
    mcfg, tcfg = resolve(parse_config_text(ck.config_text))
    model = MVGPT(mcfg)
    load_into(model, ck.tensors)
    state = OptimState.from_config(tcfg)
    state.step = ck.opt_step
    state.m = {k: v.copy() for k, v in ck.opt_m.items()}
    state.v = {k: v.copy() for k, v in ck.opt_v.items()}
    rng = None
    if ck.rng_state is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = ck.rng_state
    return model, tcfg, state, rng


def train(
    model: MVGPT,
    examples: Sequence[Example],
    tcfg: TrainConfig,
    objective: str = "pretrain",
    state: OptimState | None = None,
    rng: np.random.Generator | None = None,
    stop_at: int | None = None,
    checkpoint_path: str | Path | None = None,
    callbacks: Sequence[Callable[[int, dict], None]] = (),
) -> TrainResult:
    """Run updates until ``stop_at`` (default ``tcfg.total_steps``).

    Batch order is a pure function of ``(train_seed, step)`` and the masking
    RNG is part of the checkpoint, so resuming reproduces an uninterrupted run.
    """
    if not examples:
        raise ValueError("empty training set")
    if objective not in ("pretrain", "caption"):
        raise ValueError(f"unknown objective {objective!r}")
    state = state or OptimState.from_config(tcfg)
    rng = rng or np.random.default_rng(tcfg.train_seed)
    stop = tcfg.total_steps if stop_at is None else stop_at
    params = model.parameters()
    losses: list[dict[str, float]] = []
    while state.step < stop:
        idx = batch_indices(len(examples), tcfg.batch_size, tcfg.train_seed, state.step)
        batch = [examples[i] for i in idx]
        T.zero_grad(params)
        if objective == "pretrain":
            report: LossReport = pretrain_loss(model, batch, rng, tcfg)
            loss, record = report.total, report.floats()
        else:
            loss = caption_loss(model, batch)
            record = {"caption": loss.item(), "total": loss.item()}
        T.backward(loss, params)
        grads = {k: p.grad for k, p in model.params.items()}
        lr = lr_at(state.step + 1, tcfg.lr_peak, tcfg.warmup_steps, tcfg.total_steps)
        adam_step(model.params, grads, state, lr, model.params.kinds)
        record["step"], record["lr"] = state.step, lr
        losses.append(record)
        for cb in callbacks:
            cb(state.step, record)
        if checkpoint_path and tcfg.checkpoint_every and state.step % tcfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, make_checkpoint(model, tcfg, state, rng))
    T.zero_grad(params)
    return TrainResult(model, state, rng, losses)


def resume(path: str | Path, examples: Sequence[Example], objective: str = "pretrain", **kw) -> TrainResult:
    model, tcfg, state, rng = restore(load_checkpoint(path))
    return train(model, examples, tcfg, objective, state=state, rng=rng, **kw)
