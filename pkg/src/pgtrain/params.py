"""Flat parameter vectors and integer perturbation directions."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


class ResamplePolicy(str, enum.Enum):
    PER_SAMPLE = "per-sample"
    PER_EPOCH = "per-epoch"


@dataclass(frozen=True)
class Slot:
    name: str
    shape: Tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


class Layout:
    """Ordered mapping from named tensors onto contiguous ranges of a flat array."""

    def __init__(self, shapes: Iterable[Tuple[str, Sequence[int]]] = ()):
        self.slots: List[Slot] = []
        self._by_name: Dict[str, Slot] = {}
        self.size = 0
        for name, shape in shapes:
            self.add(name, shape)

    def add(self, name: str, shape: Sequence[int]) -> Slot:
        if name in self._by_name:
            raise ValueError(f"duplicate parameter name {name!r}")
        slot = Slot(name, tuple(int(s) for s in shape), self.size)
        self.slots.append(slot)
        self._by_name[name] = slot
        self.size += slot.size
        return slot

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> Slot:
        return self._by_name[name]

    def __len__(self) -> int:
        return len(self.slots)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Layout) and self.slots == other.slots

    def views(self, flat: np.ndarray) -> Dict[str, np.ndarray]:
        """Reshaped views (not copies) of ``flat`` keyed by slot name."""
        if flat.shape != (self.size,):
            raise ValueError(f"flat array has shape {flat.shape}, layout needs ({self.size},)")
        return {s.name: flat[s.offset:s.offset + s.size].reshape(s.shape) for s in self.slots}

    def flatten(self, tensors: Dict[str, np.ndarray]) -> np.ndarray:
        out = np.empty(self.size)
        for s in self.slots:
            arr = np.asarray(tensors[s.name], dtype=float)
            if arr.shape != s.shape:
                raise ValueError(f"{s.name}: expected shape {s.shape}, got {arr.shape}")
            out[s.offset:s.offset + s.size] = arr.ravel()
        return out


@dataclass
class ParameterVector:
    """All trainable weights as one flat float array plus the layout that shapes it."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size != self.layout.size:
            raise ValueError(
                f"values of length {self.values.size} do not match layout size {self.layout.size}")

    def __len__(self) -> int:
        return self.values.size

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def unflatten(self) -> Dict[str, np.ndarray]:
        return self.layout.views(self.values)

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "ParameterVector":
        layout = Layout((k, np.shape(v)) for k, v in tensors.items())
        return cls(layout.flatten(tensors), layout)

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(values, self.layout)


@dataclass
class PGTConfig:
    range: int = 1
    delta: float = 0.01
    dropout_scale: float = 0.0
    learning_rate: float = 1e-3
    optimizer: Optimizer = Optimizer.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    resample_policy: ResamplePolicy = ResamplePolicy.PER_SAMPLE
    seed: int = 0

    def __post_init__(self):
        self.optimizer = Optimizer(self.optimizer)
        self.resample_policy = ResamplePolicy(self.resample_policy)
        if int(self.range) != self.range or self.range < 1:
            raise ValueError(f"range must be a positive integer, got {self.range}")
        self.range = int(self.range)
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not 0.0 <= self.dropout_scale <= 1.0:
            raise ValueError(f"dropout_scale must lie in [0, 1], got {self.dropout_scale}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def as_dict(self) -> Dict[str, object]:
        return {
            "range": self.range,
            "delta": self.delta,
            "dropout_scale": self.dropout_scale,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer.value,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "resample_policy": self.resample_policy.value,
            "seed": self.seed,
        }


@dataclass
class PerturbationMatrix:
    entries: np.ndarray
    range: int
    counts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.int64)
        if self.range < 1:
            raise ValueError("range must be >= 1")
        if np.any(np.abs(self.entries) > self.range):
            raise ValueError(f"entries exceed range {self.range}")
        self.counts = np.abs(self.entries)

    def __len__(self) -> int:
        return self.entries.size

    @property
    def active(self) -> int:
        """Number of parameters actually perturbed."""
        return int(np.count_nonzero(self.entries))


def sample_perturbation(length: int, config: PGTConfig,
                        rng: np.random.Generator) -> PerturbationMatrix:
    """Draw a perturbation direction.

    Entries are uniform over the ``2r + 1`` integers in ``[-r, r]``; each is
    then independently zeroed with probability ``config.dropout_scale``.
    """
    if length <= 0:
        raise ValueError(f"perturbation length must be positive, got {length}")
    p = config.dropout_scale
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout_scale must lie in [0, 1], got {p}")
    r = config.range
    entries = rng.integers(-r, r + 1, size=length, dtype=np.int64)
    if p > 0.0:
        entries[rng.random(length) < p] = 0
    return PerturbationMatrix(entries, r)


def count_2d_directions(r: int) -> int:
    """Distinct rays through the origin reachable by integer steps in ``[-r, r]^2``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    rays = set()
    for a in range(-r, r + 1):
        for b in range(-r, r + 1):
            if a == 0 and b == 0:
                continue
            g = math.gcd(abs(a), abs(b))
            rays.add((a // g, b // g))
    return len(rays)


def apply_perturbation(theta: ParameterVector, pm: PerturbationMatrix, delta: float,
                       sign: int) -> ParameterVector:
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    if len(pm) != len(theta):
        raise ValueError(f"perturbation length {len(pm)} != parameter length {len(theta)}")
    return theta.with_values(perturbed_values(theta.values, pm, delta, sign))


def perturbed_values(values: np.ndarray, pm: PerturbationMatrix, delta: float,
                     sign: int, out: Optional[np.ndarray] = None) -> np.ndarray:
    """``values + sign * delta * pm`` on raw arrays, optionally into ``out``."""
    if pm.entries.shape != values.shape:
        raise ValueError(f"perturbation length {len(pm)} != parameter length {values.size}")
    step = pm.entries * (sign * delta)
    return np.add(values, step, out=out)
