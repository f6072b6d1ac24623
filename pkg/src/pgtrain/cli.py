"""Train reservoir models with perturbative gradients, measure memory capacity, compare runs."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .config import ConfigError, ExperimentConfig
from .data import DataError
from .engine import NonFiniteLossError, TrainingTrace
from .experiments import (METHODS, compare_traces, run_characterize, run_mlp,
                          run_transformer)
from .reservoir import GradientUnavailable
from .transformer import save_checkpoint

log = logging.getLogger("pgtrain")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default,
                        help="experiment config file (INI sections)")
    parser.add_argument("--seed", type=int, default=default, help="experiment seed")
    parser.add_argument("--out", type=Path, default=default, help="output CSV path")
    parser.add_argument("--no-plot", action="store_true", default=default or False,
                        help="skip the PNG figure written next to the CSV")
    parser.add_argument("--timing", choices=("sidecar", "inline"), default=default,
                        help="put wall-clock seconds in <out>.timing.csv (default) or in the trace")


def _training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=METHODS)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--dropout", type=float, help="PGT dropout scale")
    parser.add_argument("--range", type=int, dest="pgt_range", help="PGT perturbation range")
    parser.add_argument("--delta", type=float, help="PGT perturbation scale")
    parser.add_argument("--lr", type=float, help="learning rate of the chosen method")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgtrain", description=__doc__)
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-mlp", help="dense net + reservoir on WDBC")
    _global_flags(p, suppress=True)
    _training_flags(p)
    p.add_argument("--data", help="WDBC CSV path (default: bundled copy)")

    p = sub.add_parser("train-transformer", help="reservoir transformer on a synthetic task")
    _global_flags(p, suppress=True)
    _training_flags(p)
    p.add_argument("--task", choices=("copy", "reverse"))
    p.add_argument("--stop-fraction", type=float,
                   help="stop once test loss <= this fraction of the initial loss")
    p.add_argument("--checkpoint", type=Path, help="write the trained model here")

    p = sub.add_parser("characterize", help="STM and parity-check capacity")
    _global_flags(p, suppress=True)
    p.add_argument("--reservoir", required=True, choices=("delay-line", "leaky-frozen", "frozen"))
    p.add_argument("--taps", type=int)
    p.add_argument("--leak", type=float)
    p.add_argument("--n", type=int, help="length of the random bit sequence")

    p = sub.add_parser("compare", help="merge traces by epoch with loss deltas")
    _global_flags(p, suppress=True)
    p.add_argument("traces", nargs="+", type=Path)
    p.add_argument("--names", help="comma-separated run names (default: file stems)")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    if args.seed is not None:
        cfg.experiment.seed = args.seed
    for flag, section, key in (("method", "experiment", "method"), ("epochs", "experiment", "epochs"),
                               ("dropout", "pgt", "dropout_scale"), ("pgt_range", "pgt", "range"),
                               ("delta", "pgt", "delta"), ("data", "data", "path"),
                               ("task", "data", "task"), ("stop_fraction", "model", "stop_fraction"),
                               ("taps", "reservoir", "taps"), ("leak", "reservoir", "leak"),
                               ("n", "characterize", "n")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(getattr(cfg, section), key, value)
    if getattr(args, "lr", None) is not None:
        target = cfg.pgt if cfg.experiment.method.startswith("pgt-") else cfg.backprop
        target.learning_rate = args.lr


def _header(cfg: ExperimentConfig) -> List[str]:
    return [f"seed = {cfg.experiment.seed}"] + cfg.snapshot_lines()


def _write_trace(trace: TrainingTrace, cfg: ExperimentConfig, out: Path, timing: str,
                 plot: bool, title: str) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(trace.to_csv(timing=timing == "inline", comments=_header(cfg)))
    if timing == "sidecar":
        rows = "".join(f"{r.epoch},{r.seconds!r}\n" for r in trace.records)
        out.with_suffix(".timing.csv").write_text("epoch,seconds\n" + rows)
    if plot:
        from .plotting import figure_path, plot_traces
        plot_traces({cfg.experiment.method: trace}, figure_path(out), title)
    epoch, loss = trace.best()
    print(f"{cfg.experiment.method}: min test loss {loss:.6g} at epoch {epoch} "
          f"({len(trace) - 1} epochs) -> {out}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        cfg.experiment.kind = args.command
        timing = args.timing or "sidecar"
        plot = not args.no_plot

        if args.command in ("train-mlp", "train-transformer"):
            if args.config is None and args.command == "train-transformer":
                # PGT-SGD until the test loss halves; Adam's sign-like steps stall on this task
                cfg.experiment.method = "pgt-sgd"
                cfg.experiment.epochs = 1000
                cfg.model.stop_fraction = 0.5
            _apply_overrides(cfg, args)
            out = args.out or Path(cfg.experiment.out or f"{args.command}-{cfg.experiment.method}.csv")
            if args.command == "train-mlp":
                trace = run_mlp(cfg)
            else:
                trace, model = run_transformer(cfg)
                if args.checkpoint:
                    save_checkpoint(args.checkpoint, model, cfg.experiment.seed)
            _write_trace(trace, cfg, out, timing, plot, args.command)

        elif args.command == "characterize":
            r = cfg.reservoir
            if args.reservoir == "delay-line":
                r.kind = "delay-line"
            else:
                r.kind = "frozen-net"
                r.stateful = args.reservoir == "leaky-frozen"
                if r.stateful:
                    r.gradient_available = False
            _apply_overrides(cfg, args)
            reports = run_characterize(cfg)
            from .capacity import reports_to_csv
            out = args.out or Path(cfg.experiment.out or "capacity.csv")
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(reports_to_csv(reports, _header(cfg)))
            if plot:
                from .plotting import figure_path, plot_capacity
                plot_capacity(reports, figure_path(out))
            for rep in reports:
                print(f"C_{rep.task.value.upper()} = {rep.capacity:.4f}")

        else:
            if len(args.traces) < 2:
                parser.error("compare needs at least two trace files")
            names = args.names.split(",") if args.names else [p.stem for p in args.traces]
            if len(names) != len(args.traces) or len(set(names)) != len(names):
                parser.error("--names must give one distinct name per trace")
            traces = {}
            for name, path in zip(names, args.traces):
                try:
                    traces[name] = TrainingTrace.from_csv(path.read_text())
                except OSError as exc:
                    raise ConfigError(f"cannot read trace {path}: {exc}") from None
            merged = compare_traces(traces)
            out = args.out or Path("compare.csv")
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(merged.to_csv([f"inputs = {', '.join(map(str, args.traces))}"]))
            if plot:
                from .plotting import figure_path, plot_compare
                plot_compare(merged.epochs, merged.losses, merged.deltas, figure_path(out))
            if merged.note:
                print(merged.note)
            print(f"merged {len(traces)} traces over {merged.epochs.size} epochs -> {out}")
    except (ConfigError, DataError, GradientUnavailable, NonFiniteLossError, ValueError) as exc:
        print(f"pgtrain: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
