"""Experiment configuration as flat ``key = value`` INI sections."""

from __future__ import annotations

import configparser
import dataclasses
import enum
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

from .params import PGTConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSection:
    kind: str = "train-mlp"
    method: str = "pgt-adam"
    epochs: int = 40
    seed: int = 0
    out: str = ""


@dataclass
class PGTSection:
    range: int = 1
    delta: float = 0.01
    dropout_scale: float = 0.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    resample_policy: str = "per-sample"


@dataclass
class BackpropSection:
    learning_rate: float = 3e-3


@dataclass
class DataSection:
    path: str = ""
    train_fraction: float = 0.8
    split_seed: int = 0
    task: str = "copy"
    n_train: int = 250
    n_test: int = 250
    vocab_size: int = 16
    seq_len: int = 8


@dataclass
class ModelSection:
    loss_reduction: str = "mean"
    embed_dim: int = 32
    n_heads: int = 2
    init_seed: int = -1
    stop_fraction: float = 0.0


@dataclass
class ReservoirSection:
    kind: str = "frozen-net"
    widths: Tuple[int, ...] = (200, 100, 200, 100)
    loop_count: int = 2
    activation: str = "tanh"
    gain: float = 1.0
    stateful: bool = False
    leak: float = 0.5
    feedback_scale: float = 1.0
    spectral_radius: float = 0.9
    gradient_available: bool = True
    seed: int = 1234
    taps: int = 5


@dataclass
class CharacterizeSection:
    t_max_stm: int = 10
    t_max_pc: int = 4
    n: int = 4000
    ridge: float = 1e-6
    washout: int = 100
    train_fraction: float = 0.6
    parity_window: str = "inclusive"
    alphabet: str = "binary"


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    pgt: PGTSection = field(default_factory=PGTSection)
    backprop: BackpropSection = field(default_factory=BackpropSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    reservoir: ReservoirSection = field(default_factory=ReservoirSection)
    characterize: CharacterizeSection = field(default_factory=CharacterizeSection)

    def pgt_config(self) -> PGTConfig:
        method = self.experiment.method
        if not method.startswith("pgt-"):
            raise ConfigError(f"method {method!r} is not a PGT method")
        p = self.pgt
        return PGTConfig(range=p.range, delta=p.delta, dropout_scale=p.dropout_scale,
                         learning_rate=p.learning_rate, optimizer=method[4:], beta1=p.beta1,
                         beta2=p.beta2, eps=p.eps, resample_policy=p.resample_policy,
                         seed=self.experiment.seed)

    def reservoir_config(self, input_dim: int, output_dim: int) -> Dict[str, object]:
        r = self.reservoir
        if r.kind == "delay-line":
            return {"kind": "delay-line", "taps": r.taps}
        return {"kind": "frozen-net", "input_dim": input_dim, "output_dim": output_dim,
                "widths": tuple(r.widths), "loop_count": r.loop_count,
                "activation": r.activation, "gain": r.gain, "stateful": r.stateful,
                "leak": r.leak, "feedback_scale": r.feedback_scale,
                "spectral_radius": r.spectral_radius,
                "gradient_available": r.gradient_available, "seed": r.seed}

    # --- serialisation -------------------------------------------------

    def sections(self) -> List[Tuple[str, object]]:
        return [(f.name, getattr(self, f.name)) for f in dataclasses.fields(self)]

    def to_text(self) -> str:
        parts = []
        for name, sec in self.sections():
            parts.append(f"[{name}]")
            for f in dataclasses.fields(sec):
                parts.append(f"{f.name} = {_format(getattr(sec, f.name))}")
            parts.append("")
        return "\n".join(parts)

    def snapshot_lines(self) -> List[str]:
        """Config as comment-ready lines, e.g. ``pgt.delta = 0.01``."""
        return [f"{name}.{f.name} = {_format(getattr(sec, f.name))}"
                for name, sec in self.sections() for f in dataclasses.fields(sec)]

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        cfg = cls()
        known = dict(cfg.sections())
        for name in parser.sections():
            if name not in known:
                raise ConfigError(f"unknown section [{name}]")
            sec = known[name]
            hints = typing.get_type_hints(type(sec))
            for key, raw in parser.items(name):
                if key not in hints:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                try:
                    setattr(sec, key, _parse(hints[key], raw))
                except ValueError as exc:
                    raise ConfigError(f"[{name}] {key}: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(tp, raw: str):
    raw = raw.strip()
    if tp is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    if typing.get_origin(tp) is tuple:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return raw
