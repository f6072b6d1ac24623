"""Experiment runners shared by the CLI and the acceptance tests."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import capacity as cap
from .config import ConfigError, ExperimentConfig
from .data import load_wdbc, make_seq2seq
from .engine import TrainingTrace, backprop_train, pgt_train
from .nn import mlp_with_reservoir
from .reservoir import DelayLineReservoir, FrozenNetReservoir, Reservoir, reservoir_from_config
from .transformer import ReservoirTransformer, TransformerConfig

METHODS = ("pgt-sgd", "pgt-adam", "backprop-sgd", "backprop-adam")


def _init_seed(cfg: ExperimentConfig) -> int:
    return cfg.experiment.seed if cfg.model.init_seed < 0 else cfg.model.init_seed


def _check_method(cfg: ExperimentConfig) -> str:
    method = cfg.experiment.method
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return method


def _train(cfg: ExperimentConfig, model, train, test, stop=None) -> TrainingTrace:
    method = _check_method(cfg)
    if method.startswith("pgt-"):
        trace = pgt_train(model, train, test, cfg.pgt_config(), cfg.experiment.epochs, stop=stop)
    else:
        trace = backprop_train(model, train, test, method.split("-")[1],
                               cfg.backprop.learning_rate, cfg.experiment.epochs,
                               seed=cfg.experiment.seed, stop=stop)
    trace.config = {"method": method, **trace.config}
    return trace


def run_mlp(cfg: ExperimentConfig) -> TrainingTrace:
    """Dense 30-200-200-5 net, 5-in/100-out reservoir, 100-2 readout, on WDBC."""
    d = cfg.data
    ds = load_wdbc(d.path or None, d.train_fraction, d.split_seed)
    reservoir = reservoir_from_config(cfg.reservoir_config(5, 100))
    model = mlp_with_reservoir(reservoir, seed=_init_seed(cfg), reduction=cfg.model.loss_reduction)
    return _train(cfg, model, ds.train, ds.test)


def build_transformer(cfg: ExperimentConfig) -> ReservoirTransformer:
    res = cfg.reservoir_config(5, 100)
    res.pop("input_dim", None)
    res.pop("output_dim", None)
    tcfg = TransformerConfig(vocab_size=cfg.data.vocab_size, embed_dim=cfg.model.embed_dim,
                             n_heads=cfg.model.n_heads, max_seq_len=cfg.data.seq_len,
                             reduction=cfg.model.loss_reduction, seed=_init_seed(cfg),
                             reservoir=res)
    return ReservoirTransformer(tcfg)


def halving_stop(fraction: float):
    """Stop once test loss falls to ``fraction`` of the epoch-0 test loss."""
    def stop(trace: TrainingTrace) -> bool:
        return trace.records[-1].test_loss <= fraction * trace.records[0].test_loss
    return stop


def run_transformer(cfg: ExperimentConfig) -> Tuple[TrainingTrace, ReservoirTransformer]:
    d = cfg.data
    ds = make_seq2seq(d.task, d.n_train, d.n_test, d.vocab_size, d.seq_len, d.split_seed)
    model = build_transformer(cfg)
    stop = halving_stop(cfg.model.stop_fraction) if cfg.model.stop_fraction > 0 else None
    return _train(cfg, model, ds.train, ds.test, stop), model


def characterization_reservoir(cfg: ExperimentConfig) -> Reservoir:
    r = cfg.reservoir
    if r.kind == "delay-line":
        return DelayLineReservoir(r.taps)
    if not r.stateful:
        raise ConfigError("capacity needs fading memory; the stateless frozen net has none "
                          "(use the delay-line or leaky frozen-net reservoir)")
    return reservoir_from_config(cfg.reservoir_config(1, 100))


def run_characterize(cfg: ExperimentConfig) -> List[cap.CapacityReport]:
    res = characterization_reservoir(cfg)
    c = cfg.characterize
    if c.parity_window not in ("inclusive", "exclusive"):
        raise ConfigError("parity_window must be 'inclusive' or 'exclusive'")
    alphabet = {"binary": (0.0, 1.0), "bipolar": (-1.0, 1.0)}.get(c.alphabet)
    if alphabet is None:
        raise ConfigError("alphabet must be 'binary' or 'bipolar'")
    bits = cap.generate_binary_sequence(c.n, cfg.experiment.seed)
    reports = []
    for task, t_max in ((cap.Task.STM, c.t_max_stm), (cap.Task.PC, c.t_max_pc)):
        reports.append(cap.capacity(res, task, t_max, c.n, None, ridge=c.ridge,
                                    washout=c.washout, train_fraction=c.train_fraction,
                                    alphabet=alphabet,
                                    parity_inclusive=c.parity_window == "inclusive",
                                    bits=bits))
    return reports


@dataclass
class Comparison:
    epochs: np.ndarray
    losses: Dict[str, np.ndarray]
    deltas: Dict[str, np.ndarray]
    note: Optional[str] = None

    def to_csv(self, comments=()) -> str:
        buf = io.StringIO()
        lines = list(comments) + ([self.note] if self.note else [])
        for line in lines:
            buf.write(f"# {line}\n")
        names = list(self.losses)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch"] + [f"{n}_test_loss" for n in names] + list(self.deltas))
        for i, e in enumerate(self.epochs):
            w.writerow([int(e)] + [repr(float(self.losses[n][i])) for n in names]
                       + [repr(float(d[i])) for d in self.deltas.values()])
        return buf.getvalue()


def compare_traces(traces: Dict[str, TrainingTrace]) -> Comparison:
    """Align runs on their common epoch range; deltas are each run minus the first."""
    if len(traces) < 2:
        raise ValueError("compare needs at least two traces")
    names = list(traces)
    common = None
    for tr in traces.values():
        ep = set(tr.epochs.tolist())
        common = ep if common is None else common & ep
    epochs = np.array(sorted(common), dtype=int)
    if epochs.size == 0:
        raise ValueError("traces share no epochs")
    note = None
    lengths = [len(tr) for tr in traces.values()]
    if any(n != epochs.size for n in lengths):
        note = (f"truncated to common epochs {epochs[0]}..{epochs[-1]} "
                f"({epochs.size} rows; input lengths {', '.join(map(str, lengths))})")
    losses = {}
    for name, tr in traces.items():
        lookup = dict(zip(tr.epochs.tolist(), tr.test_loss.tolist()))
        losses[name] = np.array([lookup[e] for e in epochs])
    base = names[0]
    deltas = {f"delta_{n}_minus_{base}": losses[n] - losses[base] for n in names[1:]}
    return Comparison(epochs, losses, deltas, note)
