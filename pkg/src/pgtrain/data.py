"""WDBC loading, synthetic sequence-to-sequence tasks and seeded splits."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

N_FEATURES = 30
DIAGNOSIS = {"M": (1.0, 0.0), "B": (0.0, 1.0)}


class DataError(ValueError):
    pass


def bundled_wdbc() -> Path:
    """Path of the WDBC file shipped with the package (UCI layout, synthetic ids)."""
    return Path(str(resources.files("pgtrain") / "data" / "wdbc.data"))


@dataclass
class TabularDataset:
    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]

    def split(self, which: str) -> List[Tuple[np.ndarray, np.ndarray]]:
        idx = self.train_idx if which == "train" else self.test_idx
        return [(self.features[i], self.labels[i]) for i in idx]

    @property
    def train(self):
        return self.split("train")

    @property
    def test(self):
        return self.split("test")


def split_indices(n: int, train_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError("train_fraction must lie in (0, 1]")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _is_header(row: Sequence[str]) -> bool:
    try:
        float(row[-1])
    except (ValueError, IndexError):
        return True
    return False


def parse_wdbc(rows: Sequence[Sequence[str]]) -> Tuple[np.ndarray, np.ndarray]:
    """Raw features and one-hot labels from UCI-layout rows (id, diagnosis, 30 features)."""
    feats, labels = [], []
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if lineno == 1 and _is_header(row):
            continue
        if len(row) != N_FEATURES + 2:
            raise DataError(f"row {lineno}: expected {N_FEATURES + 2} columns, got {len(row)}")
        code = row[1].strip().upper()
        if code not in DIAGNOSIS:
            raise DataError(f"row {lineno}: unknown diagnosis code {row[1]!r}")
        try:
            values = [float(c) for c in row[2:]]
        except ValueError as exc:
            raise DataError(f"row {lineno}: {exc}") from None
        if not np.all(np.isfinite(values)):
            raise DataError(f"row {lineno}: non-finite feature value")
        feats.append(values)
        labels.append(DIAGNOSIS[code])
    if not feats:
        raise DataError("no data rows")
    return np.array(feats), np.array(labels)


def load_wdbc(path: Union[str, Path, None] = None, train_fraction: float = 0.8,
              seed: int = 0) -> TabularDataset:
    """Load the Wisconsin Diagnostic Breast Cancer CSV.

    M maps to [1, 0] and B to [0, 1]. Features are z-scored with statistics
    of the training split only.
    """
    path = Path(path) if path is not None else bundled_wdbc()
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    raw, labels = parse_wdbc(rows)
    train_idx, test_idx = split_indices(len(raw), train_fraction, seed)
    mean = raw[train_idx].mean(axis=0)
    std = raw[train_idx].std(axis=0)
    std[std == 0] = 1.0
    return TabularDataset((raw - mean) / std, labels, train_idx, test_idx, mean, std)


class Task(str, enum.Enum):
    COPY = "copy"
    REVERSE = "reverse"


@dataclass
class SequencePairDataset:
    train: List[Tuple[np.ndarray, np.ndarray]]
    test: List[Tuple[np.ndarray, np.ndarray]]
    vocab_size: int
    task: Task

    def to_text(self, which: str = "train") -> str:
        pairs = self.train if which == "train" else self.test
        return "".join(" ".join(map(str, s)) + "\t" + " ".join(map(str, t)) + "\n"
                       for s, t in pairs)


def apply_task(task: Task, source: Sequence[int]) -> np.ndarray:
    source = np.asarray(source, dtype=np.int64)
    return source.copy() if Task(task) is Task.COPY else source[::-1].copy()


def make_seq2seq(task: Union[Task, str], n_train: int, n_test: int, vocab_size: int,
                 seq_len: int, rng: Union[np.random.Generator, int]) -> SequencePairDataset:
    task = Task(task)
    if vocab_size < 2 or seq_len < 1:
        raise ValueError("need vocab_size >= 2 and seq_len >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    src = rng.integers(0, vocab_size, size=(n_train + n_test, seq_len))
    pairs = [(s.copy(), apply_task(task, s)) for s in src]
    return SequencePairDataset(pairs[:n_train], pairs[n_train:], vocab_size, task)


def read_pairs(text: str) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Parse ``src_ids<TAB>tgt_ids`` lines."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"line {lineno}: expected one tab separator")
        pairs.append((np.array(parts[0].split(), dtype=np.int64),
                      np.array(parts[1].split(), dtype=np.int64)))
    return pairs
