"""Perturbative gradient training: two forward passes per sample, no backward pass.

A model handed to :func:`pgt_train` needs three things:

* ``parameters()`` returning its live :class:`~pgtrain.params.ParameterVector`
  (reservoir internals are never part of it),
* ``loss(values, x, y)`` evaluating the loss of one sample at an arbitrary flat
  parameter array without touching the stored parameters,
* ``stateless`` telling whether two loss calls may run concurrently.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .params import (Optimizer, ParameterVector, PerturbationMatrix, PGTConfig,
                     ResamplePolicy, perturbed_values, sample_perturbation)

log = logging.getLogger(__name__)

Sample = Tuple[np.ndarray, np.ndarray]
TRACE_HEADER = ("epoch", "train_loss", "test_loss", "seconds")


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class GradientEstimate:
    grad: float
    update: np.ndarray
    loss_plus: float
    loss_minus: float


@dataclass
class OptimizerState:
    kind: Optimizer
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    t: int = 0

    @classmethod
    def fresh(cls, kind: Optimizer, n: int) -> "OptimizerState":
        kind = Optimizer(kind)
        if kind is Optimizer.ADAM:
            return cls(kind, np.zeros(n), np.zeros(n), 0)
        return cls(kind)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float
    seconds: float


@dataclass
class TrainingTrace:
    records: List[EpochRecord] = field(default_factory=list)
    config: Dict[str, object] = field(default_factory=dict)
    seed: int = 0

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must be strictly increasing")
        if not (math.isfinite(record.train_loss) and math.isfinite(record.test_loss)):
            raise NonFiniteLossError(f"non-finite loss recorded at epoch {record.epoch}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def epochs(self) -> np.ndarray:
        return np.array([r.epoch for r in self.records])

    @property
    def train_loss(self) -> np.ndarray:
        return np.array([r.train_loss for r in self.records])

    @property
    def test_loss(self) -> np.ndarray:
        return np.array([r.test_loss for r in self.records])

    def best(self) -> Tuple[int, float]:
        """(epoch, loss) of the lowest test loss."""
        i = int(np.argmin(self.test_loss))
        return self.records[i].epoch, self.records[i].test_loss

    def to_csv(self, timing: bool = True, comments: Sequence[str] = ()) -> str:
        """Render as CSV text.

        ``comments`` become ``#``-prefixed lines above the header. With
        ``timing=False`` the seconds column is left blank so the text depends
        only on config and seed.
        """
        buf = io.StringIO()
        for line in comments:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.records:
            w.writerow([r.epoch, repr(float(r.train_loss)), repr(float(r.test_loss)),
                        repr(float(r.seconds)) if timing else ""])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainingTrace":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        reader = csv.reader(lines)
        header = next(reader)
        if tuple(header) != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {header}")
        trace = cls()
        for row in reader:
            secs = float(row[3]) if row[3] else float("nan")
            trace.append(EpochRecord(int(row[0]), float(row[1]), float(row[2]), secs))
        return trace


def build_update(grad: float, pm: PerturbationMatrix) -> np.ndarray:
    """``grad * entries / counts`` with zero wherever the count is zero."""
    update = np.zeros(pm.entries.shape)
    np.divide(pm.entries, pm.counts, out=update, where=pm.counts > 0)
    update *= grad
    return update


def _checked(loss: float, which: str) -> float:
    loss = float(loss)
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"loss from the {which} perturbation pass is {loss}")
    return loss


def estimate_gradient(loss_oracle: Callable[[np.ndarray], float], theta,
                      pm: PerturbationMatrix, delta: float,
                      executor: Optional[ThreadPoolExecutor] = None) -> GradientEstimate:
    """Central difference of the loss along ``delta * pm``.

    Calls ``loss_oracle`` exactly twice. ``theta`` may be a ParameterVector or
    a raw flat array.
    """
    values = theta.values if isinstance(theta, ParameterVector) else np.asarray(theta, float)
    plus = perturbed_values(values, pm, delta, +1)
    minus = perturbed_values(values, pm, delta, -1)
    if executor is None:
        lp = _checked(loss_oracle(plus), "+")
        lm = _checked(loss_oracle(minus), "-")
    else:
        fp, fm = executor.submit(loss_oracle, plus), executor.submit(loss_oracle, minus)
        lp, lm = _checked(fp.result(), "+"), _checked(fm.result(), "-")
    grad = (lp - lm) / (2.0 * delta)
    return GradientEstimate(grad, build_update(grad, pm), lp, lm)


def sgd_step(theta: np.ndarray, update: np.ndarray, learning_rate: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    update = np.asarray(update, dtype=float)
    if theta.shape != update.shape:
        raise ValueError(f"update shape {update.shape} != parameter shape {theta.shape}")
    return theta - learning_rate * update


def adam_step(theta: np.ndarray, update: np.ndarray, state: OptimizerState,
              learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> Tuple[np.ndarray, OptimizerState]:
    """One bias-corrected Adam step treating ``update`` as the gradient."""
    theta = np.asarray(theta, dtype=float)
    update = np.asarray(update, dtype=float)
    if state.m is None or state.m.shape != theta.shape or update.shape != theta.shape:
        raise ValueError("optimizer state / update dimensions do not match parameters")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * update
    v = beta2 * state.v + (1.0 - beta2) * update * update
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
        raise NonFiniteLossError("Adam moments became non-finite")
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = theta - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return new, OptimizerState(state.kind, m, v, t)


class Stepper:
    """Applies SGD or Adam updates in place on a flat parameter array."""

    def __init__(self, kind: Optimizer, n: int, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.state = OptimizerState.fresh(kind, n)
        self.lr, self.beta1, self.beta2, self.eps = learning_rate, beta1, beta2, eps

    def step(self, values: np.ndarray, update: np.ndarray) -> None:
        st = self.state
        st.t += 1
        if st.kind is Optimizer.SGD:
            values -= self.lr * update
            return
        # in-place form of adam_step; equivalence is covered by the tests
        b1, b2 = self.beta1, self.beta2
        st.m *= b1
        st.m += (1.0 - b1) * update
        st.v *= b2
        st.v += (1.0 - b2) * (update * update)
        if not math.isfinite(st.m.sum() + st.v.sum()):
            raise NonFiniteLossError("Adam moments became non-finite")
        denom = np.sqrt(st.v / (1.0 - b2 ** st.t))
        denom += self.eps
        values -= (self.lr / (1.0 - b1 ** st.t)) * st.m / denom

    def skip(self) -> None:
        self.state.t += 1


def mean_loss(model, values: np.ndarray, samples: Sequence[Sample]) -> float:
    if not samples:
        return float("nan")
    return float(np.mean([model.loss(values, x, y) for x, y in samples]))


def _epoch_loop(model, train: Sequence[Sample], test: Sequence[Sample], epochs: int,
                seed: int, config: Dict[str, object],
                train_one: Callable[[np.ndarray, np.ndarray], float],
                stop: Optional[Callable[[TrainingTrace], bool]]) -> TrainingTrace:
    values = model.parameters().values
    order_rng = np.random.default_rng([seed, 1])
    trace = TrainingTrace(config=dict(config), seed=seed)
    t0 = time.perf_counter()
    test_set = test if test else train
    trace.append(EpochRecord(0, mean_loss(model, values, train),
                             mean_loss(model, values, test_set), 0.0))
    for epoch in range(1, epochs + 1):
        losses = [train_one(*train[i]) for i in order_rng.permutation(len(train))]
        rec = EpochRecord(epoch, float(np.mean(losses)), mean_loss(model, values, test_set),
                          time.perf_counter() - t0)
        trace.append(rec)
        log.debug("epoch %d train %.6g test %.6g", epoch, rec.train_loss, rec.test_loss)
        if stop is not None and stop(trace):
            break
    return trace


def pgt_train(model, train: Sequence[Sample], test: Sequence[Sample], config: PGTConfig,
              epochs: int, stop: Optional[Callable[[TrainingTrace], bool]] = None,
              concurrent_passes: bool = False) -> TrainingTrace:
    """Train ``model`` in place with perturbative gradients.

    Epoch 0 of the returned trace holds the untrained losses. The reported
    train loss of an epoch is the mean of ``(L+ + L-) / 2`` over its samples,
    so no extra forward passes are spent on it. Test loss is evaluated once
    per epoch at the unperturbed parameters.

    ``concurrent_passes`` runs the two perturbed passes in parallel threads and
    is only allowed for stateless models.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if concurrent_passes and not getattr(model, "stateless", False):
        raise ValueError("concurrent perturbation passes require a stateless model")
    values = model.parameters().values
    rng = np.random.default_rng([config.seed, 0])
    stepper = Stepper(config.optimizer, values.size, config.learning_rate,
                      config.beta1, config.beta2, config.eps)
    executor = ThreadPoolExecutor(2) if concurrent_passes else None
    per_epoch = config.resample_policy is ResamplePolicy.PER_EPOCH
    held: Dict[str, PerturbationMatrix] = {}
    seen = [0]

    def train_one(x, y):
        if per_epoch and seen[0] % max(len(train), 1) == 0:
            held["pm"] = sample_perturbation(values.size, config, rng)
        seen[0] += 1
        pm = held["pm"] if per_epoch else sample_perturbation(values.size, config, rng)
        est = estimate_gradient(lambda v: model.loss(v, x, y), values, pm, config.delta, executor)
        if pm.active == 0:
            stepper.skip()
        else:
            stepper.step(values, est.update)
        return 0.5 * (est.loss_plus + est.loss_minus)

    snapshot = {"trainer": "pgt", "pass_mode": "concurrent" if executor else "sequential",
                **config.as_dict()}
    try:
        return _epoch_loop(model, train, test, epochs, config.seed, snapshot, train_one, stop)
    finally:
        if executor is not None:
            executor.shutdown()


def backprop_train(model, train: Sequence[Sample], test: Sequence[Sample],
                   optimizer: Optimizer, learning_rate: float, epochs: int, seed: int = 0,
                   stop: Optional[Callable[[TrainingTrace], bool]] = None) -> TrainingTrace:
    """Per-sample gradient descent using the model's analytic ``loss_and_grad``.

    Produces a trace in the same format as :func:`pgt_train`; the train loss
    of an epoch is the mean pre-update loss of its samples.
    """
    optimizer = Optimizer(optimizer)
    values = model.parameters().values
    stepper = Stepper(optimizer, values.size, learning_rate)

    def train_one(x, y):
        loss, grad = model.loss_and_grad(values, x, y)
        _checked(loss, "forward")
        stepper.step(values, grad)
        return loss

    snapshot = {"trainer": f"backprop-{optimizer.value}", "learning_rate": learning_rate,
                "seed": seed}
    return _epoch_loop(model, train, test, epochs, seed, snapshot, train_one, stop)
