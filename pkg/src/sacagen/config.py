"""Model and training configuration, with a plain ``key = value`` file format.

One file holds both groups; keys are the dataclass field names below. Lines
starting with ``#`` are comments. Booleans accept true/false/1/0/yes/no;
``freeze`` takes a comma-separated list of parameter groups.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class ModelConfig:
    vocab_size: int = 0
    model_dim: int = 256
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_dim: int = 512
    adapter_dim: int = 256
    saca_dim: int = 256
    saca_layers: int = 2
    saca_heads: int = 1
    gate_dim: int = 256
    use_saca: bool = True
    use_dgp: bool = True
    structural_adapter: bool = True
    ffn_adapter: bool = True
    span_positions: bool = False
    max_positions: int = 256
    dropout: float = 0.0
    init_seed: int = 0

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.saca_dim % self.saca_heads:
            raise ValueError("saca_dim not divisible by saca_heads")
        if self.adapter_dim <= 0:
            raise ValueError("adapter_dim must be positive")
        if self.use_dgp and not self.use_saca:
            raise ValueError("use_dgp requires use_saca")
        if self.use_saca and self.saca_layers < 0:
            raise ValueError("saca_layers must be >= 0")

    def variant(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def hash(self) -> str:
        text = "\n".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass
class TrainConfig:
    lam: float = 1e-3
    batch_size: int = 4
    lr: float = 1e-4
    weight_decay: float = 0.0
    max_steps: int = 1000
    eval_every: int = 200
    seed: int = 0
    beam: int = 5
    max_len: int = 128
    length_penalty: float = 1.0
    min_freq: int = 1
    dtype: str = "float32"
    freeze: tuple = ()
    eval_limit: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if isinstance(self.freeze, str):
            self.freeze = tuple(s for s in (x.strip() for x in self.freeze.split(",")) if s)
        self.freeze = tuple(self.freeze)


LAMBDA_GRID = (1e-2, 5e-3, 1e-3, 5e-4)


def _coerce(value: str, typ):
    typ = typ if isinstance(typ, type) else {"int": int, "float": float, "bool": bool, "str": str,
                                              "tuple": tuple}.get(str(typ), str)
    if typ is bool:
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if typ is tuple:
        return tuple(s.strip() for s in value.split(",") if s.strip())
    return typ(value.strip())


def parse_config_text(text: str, overrides: dict | None = None) -> tuple[ModelConfig, TrainConfig]:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        raw[k.strip()] = v.strip()
    raw.update(overrides or {})
    mfields = {f.name: f.type for f in fields(ModelConfig)}
    tfields = {f.name: f.type for f in fields(TrainConfig)}
    mkw, tkw = {}, {}
    for k, v in raw.items():
        if k in mfields:
            mkw[k] = _coerce(v, mfields[k])
        elif k in tfields:
            tkw[k] = _coerce(v, tfields[k])
        else:
            raise ValueError(f"unknown config key {k!r}")
    return ModelConfig(**mkw), TrainConfig(**tkw)


def load_config(path, overrides: dict | None = None) -> tuple[ModelConfig, TrainConfig]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), overrides)


def format_config(model: ModelConfig, train: TrainConfig | None = None) -> str:
    lines = []
    for cfg in (model, train):
        if cfg is None:
            continue
        for f in fields(cfg):
            v = getattr(cfg, f.name)
            if isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
