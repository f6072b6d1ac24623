"""Dense networks with an optional black-box reservoir stage, plus manual backprop."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .engine import backprop_train  # noqa: F401  re-exported baseline trainer
from .params import Layout, ParameterVector
from .reservoir import FrozenNetReservoir, GradientUnavailable, Reservoir

ACTIVATIONS = ("identity", "tanh", "relu")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _dact(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0).astype(float)
    return np.ones_like(z)


def mse_loss(y: np.ndarray, y_target: np.ndarray, reduction: str = "sum") -> float:
    """Squared error summed over components (``reduction="mean"`` divides by their number)."""
    y = np.asarray(y, dtype=float)
    y_target = np.asarray(y_target, dtype=float)
    if y.shape != y_target.shape:
        raise ValueError(f"output shape {y.shape} != target shape {y_target.shape}")
    total = float(np.sum((y - y_target) ** 2))
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / max(y.size, 1)
    raise ValueError(f"unknown reduction {reduction!r}")


@dataclass(frozen=True)
class DenseLayer:
    """Shape and activation of one affine layer; its weights live in the model's flat vector."""

    n_in: int
    n_out: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class DenseNet:
    """``pre`` layers, then an optional reservoir, then ``post`` layers.

    Only the dense layers are trainable; the reservoir is called as a black box.
    """

    def __init__(self, pre: Sequence[DenseLayer], reservoir: Optional[Reservoir] = None,
                 post: Sequence[DenseLayer] = (), seed: int = 0, reduction: str = "sum"):
        self.pre, self.post = list(pre), list(post)
        self.reservoir = reservoir
        self.reduction = reduction
        chain = self.pre + self.post
        if not chain:
            raise ValueError("network needs at least one dense layer")
        for a, b in zip(self.pre, self.pre[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer sizes do not chain: {a} -> {b}")
        for a, b in zip(self.post, self.post[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer sizes do not chain: {a} -> {b}")
        if reservoir is not None:
            if self.pre and self.pre[-1].n_out != reservoir.input_dim:
                raise ValueError("last pre-reservoir layer does not match reservoir input")
            if self.post and self.post[0].n_in != reservoir.output_dim:
                raise ValueError("first readout layer does not match reservoir output")
        elif self.pre and self.post and self.pre[-1].n_out != self.post[0].n_in:
            raise ValueError("pre and post stacks do not chain")

        self._names: List[Tuple[str, str, DenseLayer]] = []
        layout = Layout()
        for stage, layers in (("pre", self.pre), ("post", self.post)):
            for i, layer in enumerate(layers):
                w, b = f"{stage}.{i}.weight", f"{stage}.{i}.bias"
                layout.add(w, (layer.n_out, layer.n_in))
                layout.add(b, (layer.n_out,))
                self._names.append((w, b, layer))
        values = np.empty(layout.size)
        rng = np.random.default_rng(seed)
        views = layout.views(values)
        for w, b, layer in self._names:
            bound = 1.0 / np.sqrt(layer.n_in)
            views[w][...] = rng.uniform(-bound, bound, size=views[w].shape)
            views[b][...] = rng.uniform(-bound, bound, size=views[b].shape)
        self._params = ParameterVector(values, layout)
        self.n_in = chain[0].n_in if self.pre else reservoir.input_dim
        self.n_out = self.post[-1].n_out if self.post else (
            reservoir.output_dim if reservoir is not None else self.pre[-1].n_out)

    @property
    def stateless(self) -> bool:
        return self.reservoir is None or not self.reservoir.stateful

    def parameters(self) -> ParameterVector:
        return self._params

    def _split(self):
        n_pre = len(self.pre)
        return self._names[:n_pre], self._names[n_pre:]

    def forward(self, values: np.ndarray, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_in,):
            raise ValueError(f"input has shape {x.shape}, network expects ({self.n_in},)")
        views = self._params.layout.views(values)
        pre, post = self._split()
        h = x
        for w, b, layer in pre:
            h = _act(layer.activation, views[w] @ h + views[b])
        if self.reservoir is not None:
            if self.reservoir.stateful:
                self.reservoir.reset()
            h = self.reservoir.forward(h)
        for w, b, layer in post:
            h = _act(layer.activation, views[w] @ h + views[b])
        return h

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(self._params.values, x)

    def loss(self, values: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        return mse_loss(self.forward(values, x), y, self.reduction)

    def loss_and_grad(self, values: np.ndarray, x: np.ndarray,
                      y: np.ndarray) -> Tuple[float, np.ndarray]:
        """Loss and its exact gradient with respect to the flat trainable vector."""
        if self.reservoir is not None and not self.reservoir.gradient_available:
            raise GradientUnavailable("gradient unavailable: reservoir is a black box")
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        views = self._params.layout.views(values)
        grad = np.zeros_like(values)
        gviews = self._params.layout.views(grad)
        pre, post = self._split()
        tape = []
        h = x
        for w, b, layer in pre:
            z = views[w] @ h + views[b]
            a = _act(layer.activation, z)
            tape.append((w, b, layer, h, z, a))
            h = a
        res_cache = None
        if self.reservoir is not None:
            h, res_cache = self.reservoir.forward_with_cache(h)
        post_tape = []
        for w, b, layer in post:
            z = views[w] @ h + views[b]
            a = _act(layer.activation, z)
            post_tape.append((w, b, layer, h, z, a))
            h = a
        diff = h - y
        scale = 1.0 if self.reduction == "sum" else 1.0 / h.size
        loss = float(np.sum(diff * diff)) * scale
        g = 2.0 * scale * diff

        def back(entries, g):
            for w, b, layer, h_in, z, a in reversed(entries):
                gz = g * _dact(layer.activation, z, a)
                gviews[w][...] = np.outer(gz, h_in)
                gviews[b][...] = gz
                g = views[w].T @ gz
            return g

        g = back(post_tape, g)
        if self.reservoir is not None:
            g = self.reservoir.backward(res_cache, g)
        back(tape, g)
        return loss, grad


def mlp_with_reservoir(reservoir: Optional[Reservoir] = None, seed: int = 0,
                       reduction: str = "sum", sizes: Sequence[int] = (30, 200, 200, 5),
                       n_classes: int = 2) -> DenseNet:
    """Dense stack 30-200-200-5 feeding a 5-in/100-out reservoir and a 100-2 readout.

    Hidden layers use tanh; the layer into the reservoir and the readout are linear.
    """
    if reservoir is None:
        reservoir = FrozenNetReservoir(input_dim=sizes[-1])
    pre = [DenseLayer(a, b, "tanh") for a, b in zip(sizes[:-2], sizes[1:-1])]
    pre.append(DenseLayer(sizes[-2], sizes[-1], "identity"))
    post = [DenseLayer(reservoir.output_dim, n_classes, "identity")]
    return DenseNet(pre, reservoir, post, seed=seed, reduction=reduction)
