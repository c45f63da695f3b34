"""Model and training hyperparameters, plus the ``key = value`` config format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class ModelConfig:
    vocab_size: int = 64
    d_model: int = 64
    heads: int = 4
    ffn_mult: int = 4
    text_layers: int = 2
    spatial_layers: int = 2
    temporal_layers: int = 1
    fusion_layers: int = 2
    decoder_layers: int = 2
    max_text_len: int = 32
    max_gen_len: int = 32
    frame_height: int = 32
    frame_width: int = 32
    channels: int = 3
    tubelet_h: int = 16
    tubelet_w: int = 16
    tubelet_t: int = 4
    max_frames: int = 32
    tie_phi: bool = False
    # False feeds a blank clip, the text-only ablation
    use_visual: bool = True
    use_nce: bool = False
    nce_text_layers: int = 2
    init_std: float = 0.02
    ln_eps: float = 1e-5
    seed: int = 0

    @property
    def d_ff(self) -> int:
        return self.ffn_mult * self.d_model

    @property
    def spatial_tokens(self) -> int:
        return (self.frame_height // self.tubelet_h) * (self.frame_width // self.tubelet_w)

    @property
    def max_temporal(self) -> int:
        return self.max_frames // self.tubelet_t

    def validate(self) -> None:
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        for name, size, ext in (
            ("frame_height", self.frame_height, self.tubelet_h),
            ("frame_width", self.frame_width, self.tubelet_w),
            ("max_frames", self.max_frames, self.tubelet_t),
        ):
            if size % ext:
                raise ValueError(f"{name}={size} not divisible by tubelet extent {ext}")
        if self.temporal_layers < 1:
            raise ValueError("temporal_layers must be >= 1")
        if self.fusion_layers < 0:
            raise ValueError("fusion_layers must be >= 0")


@dataclass
class TrainConfig:
    lr_peak: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_steps: int = 500
    total_steps: int = 2000
    batch_size: int = 8
    train_seed: int = 0
    checkpoint_every: int = 0
    w_fg: float = 1.0
    w_bg: float = 1.0
    w_mlm: float = 1.0
    mlm_rate: float = 0.15
    mlm_target: str = "decoder"
    nce_weight: float = 0.001
    nce_temperature: float = 0.1
    beam: int = 5
    length_alpha: float = 0.6

    def validate(self) -> None:
        if self.mlm_target not in ("decoder", "encoder"):
            raise ValueError(f"mlm_target must be 'decoder' or 'encoder', got {self.mlm_target!r}")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps exceeds total_steps")


def _coerce(kind, raw: str, key: str):
    if kind in (bool, "bool"):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw.strip()


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def resolve(
    pairs: dict[str, str], model: ModelConfig | None = None, train: TrainConfig | None = None
) -> tuple[ModelConfig, TrainConfig]:
    """Apply string ``pairs`` on top of the given (or default) configs.

    Unknown keys raise ``KeyError``.
    """
    model = dataclasses.replace(model) if model else ModelConfig()
    train = dataclasses.replace(train) if train else TrainConfig()
    mfields = {f.name: f.type for f in fields(ModelConfig)}
    tfields = {f.name: f.type for f in fields(TrainConfig)}
    for key, raw in pairs.items():
        if key not in mfields and key not in tfields:
            raise KeyError(f"unknown config key {key!r}")
        if key in mfields:
            setattr(model, key, _coerce(mfields[key], raw, key))
        else:
            setattr(train, key, _coerce(tfields[key], raw, key))
    model.validate()
    train.validate()
    return model, train


def load_config(path: str | Path | None, overrides: list[str] = ()) -> tuple[ModelConfig, TrainConfig]:
    pairs = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return resolve(pairs)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(model: ModelConfig, train: TrainConfig | None = None) -> str:
    lines = ["# model"] + [f"{f.name} = {_fmt(getattr(model, f.name))}" for f in fields(model)]
    if train is not None:
        lines.append("# train")
        lines += [f"{f.name} = {_fmt(getattr(train, f.name))}" for f in fields(train)]
    return "\n".join(lines) + "\n"
