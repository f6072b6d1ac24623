"""Short-term-memory and parity-check capacity of a reservoir.

Delay ``d`` (1-based) refers to the input ``d - 1`` steps before the current
one, so delay 1 is the most recent input the reservoir has received. The
readout is a ridge regression with bias trained on the first part of the run
and scored on the rest.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .reservoir import Reservoir

# Reported for the magnonic ring; kept for reference, not reproduced here.
HARDWARE_REFERENCE = {"stm": 2.91, "pc": 0.01}


class Task(str, enum.Enum):
    STM = "stm"
    PC = "pc"


class SingularReadoutError(np.linalg.LinAlgError):
    pass


@dataclass
class CapacityReport:
    task: Task
    cor2: np.ndarray
    ridge: float
    degenerate: List[int] = field(default_factory=list)

    @property
    def capacity(self) -> float:
        return float(np.sum(self.cor2))

    @property
    def t_max(self) -> int:
        return self.cor2.size

    def rows(self) -> List[Tuple[str, str, str]]:
        out = [(self.task.value, str(d), repr(float(c))) for d, c in enumerate(self.cor2, 1)]
        out.append((self.task.value, "TOTAL", repr(self.capacity)))
        return out


def reports_to_csv(reports: Sequence[CapacityReport], comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("task", "t_delay", "cor2"))
    for rep in reports:
        w.writerows(rep.rows())
    return buf.getvalue()


def generate_binary_sequence(n: int, rng: Union[np.random.Generator, int]) -> np.ndarray:
    if n <= 0:
        raise ValueError("n must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return rng.integers(0, 2, size=n, dtype=np.int64)


def stm_target(seq: Sequence[int], t: int, t_delay: int) -> int:
    if t_delay < 0 or t - t_delay < 0 or t >= len(seq):
        raise IndexError(f"delay {t_delay} at t={t} falls outside the sequence")
    return int(seq[t - t_delay])


def parity_target(seq: Sequence[int], t: int, t_delay: int, inclusive: bool = True) -> int:
    """XOR of ``seq[t - t_delay .. t]``; with ``inclusive=False`` the window stops at ``t - 1``."""
    if t_delay < 0 or t - t_delay < 0 or t >= len(seq):
        raise IndexError(f"delay {t_delay} at t={t} falls outside the sequence")
    stop = t + 1 if inclusive else t
    if stop <= t - t_delay:
        raise IndexError("exclusive parity window needs t_delay >= 1")
    return int(np.sum(seq[t - t_delay:stop]) % 2)


def _targets(bits: np.ndarray, task: Task, delay: int, idx: np.ndarray,
             inclusive: bool) -> np.ndarray:
    """Vectorised targets for the 1-based ``delay`` at time indices ``idx``."""
    if task is Task.STM:
        return bits[idx - (delay - 1)].astype(float)
    csum = np.concatenate([[0], np.cumsum(bits)])
    if inclusive:
        lo, hi = idx - (delay - 1), idx + 1
    else:
        lo, hi = idx - delay, idx
    return ((csum[hi] - csum[lo]) % 2).astype(float)


def train_linear_readout(states: np.ndarray, targets: np.ndarray, ridge: float = 1e-6) -> np.ndarray:
    """Ridge regression with a bias column; the bias is the last weight.

    With ``ridge == 0`` a rank-deficient design raises instead of being
    pseudo-inverted.
    """
    x = np.asarray(states, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(targets, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} state rows but {y.shape[0]} targets")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    xa = np.hstack([x, np.ones((x.shape[0], 1))])
    gram = xa.T @ xa
    if ridge == 0:
        if np.linalg.matrix_rank(xa) < xa.shape[1]:
            raise SingularReadoutError("readout design matrix is rank deficient and ridge is 0")
        return np.linalg.lstsq(xa, y, rcond=None)[0]
    return np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), xa.T @ y)


def apply_readout(weights: np.ndarray, states: np.ndarray) -> np.ndarray:
    x = np.asarray(states, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x @ weights[:-1] + weights[-1]


def squared_correlation(target: np.ndarray, output: np.ndarray) -> Optional[float]:
    """Squared Pearson correlation, or None when either side has zero variance."""
    a = np.asarray(target, float) - np.mean(target)
    b = np.asarray(output, float) - np.mean(output)
    va, vb = float(a @ a), float(b @ b)
    if va <= 1e-300 or vb <= 1e-300:
        return None
    return float((a @ b) ** 2 / (va * vb))


def drive(res: Reservoir, inputs: np.ndarray) -> np.ndarray:
    """Reset ``res`` and feed it one scalar per step; returns one output row per step."""
    res.reset()
    out = np.empty((inputs.size, res.output_dim))
    for t, u in enumerate(inputs):
        out[t] = res.forward(np.full(res.input_dim, u))
    return out


def capacity(res: Reservoir, task: Union[Task, str], t_max: int, n: int,
             rng: Union[np.random.Generator, int], ridge: float = 1e-6, washout: int = 100,
             train_fraction: float = 0.6, alphabet: Tuple[float, float] = (0.0, 1.0),
             parity_inclusive: bool = True,
             bits: Optional[np.ndarray] = None) -> CapacityReport:
    """Sum over delays 1..t_max of squared correlation between readout and target."""
    task = Task(task)
    if not res.stateful:
        raise ValueError("capacity needs a stateful reservoir; a stateless one has no memory")
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    washout = max(washout, t_max)
    if n <= washout + 10:
        raise ValueError(f"sequence of {n} steps is too short for washout {washout}")
    if bits is None:
        bits = generate_binary_sequence(n, rng)
    states = drive(res, np.where(bits == 1, alphabet[1], alphabet[0]).astype(float))
    idx = np.arange(washout, n)
    n_train = int(round(train_fraction * idx.size))
    tr, ev = idx[:n_train], idx[n_train:]
    cor2 = np.zeros(t_max)
    degenerate = []
    for d in range(1, t_max + 1):
        y_tr = _targets(bits, task, d, tr, parity_inclusive)
        y_ev = _targets(bits, task, d, ev, parity_inclusive)
        w = train_linear_readout(states[tr], y_tr, ridge)
        c = squared_correlation(y_ev, apply_readout(w, states[ev]))
        if c is None:
            degenerate.append(d)
            c = 0.0
        cor2[d - 1] = c
    return CapacityReport(task, cor2, ridge, degenerate)
