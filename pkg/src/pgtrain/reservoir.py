"""Black-box reservoirs: a frozen recurrent dense network and a delay-line oracle.

Nothing outside this module touches reservoir weights. Models hold a
reservoir and only ever call ``forward``, ``reset`` and (when
``gradient_available``) ``backward``.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "identity": (lambda z: z, lambda a: np.ones_like(a)),
}


class GradientUnavailable(RuntimeError):
    pass


class Reservoir:
    """Opaque map from ``input_dim`` to ``output_dim`` values."""

    input_dim: int
    output_dim: int
    stateful: bool = False
    gradient_available: bool = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def reset(self) -> None:
        pass

    def forward_with_cache(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        raise GradientUnavailable(f"{type(self).__name__} does not expose gradients")

    def backward(self, cache: Any, grad_out: np.ndarray) -> np.ndarray:
        raise GradientUnavailable(f"{type(self).__name__} does not expose gradients")

    def config(self) -> Dict[str, Any]:
        raise NotImplementedError

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.input_dim:
            raise ValueError(f"reservoir expects {self.input_dim} inputs, got {x.size}")
        return x


@dataclass
class FrozenNetConfig:
    input_dim: int = 5
    output_dim: int = 100
    widths: Tuple[int, ...] = (200, 100, 200, 100)
    loop_count: int = 2
    activation: str = "tanh"
    gain: float = 1.0
    use_bias: bool = True
    stateful: bool = False
    leak: float = 0.5
    feedback_scale: float = 1.0
    spectral_radius: float = 0.9
    gradient_available: bool = True
    seed: int = 1234


class FrozenNetReservoir(Reservoir):
    """Dense layers cycled ``loop_count`` times; weights fixed at construction.

    Stateless mode maps ``x -> tap(loops(act(adapter(x))))``. Stateful mode
    keeps a leaky state ``s`` of width ``widths[0]``::

        s <- leak * s + loops(act(adapter(x) + leak * feedback_scale * W_fb s))

    and taps the output from ``s``. ``W_fb`` is rescaled to the configured
    spectral radius.
    """

    def __init__(self, config: Optional[FrozenNetConfig] = None, **overrides):
        cfg = config or FrozenNetConfig()
        if overrides:
            cfg = FrozenNetConfig(**{**asdict(cfg), **overrides})
        cfg.widths = tuple(int(w) for w in cfg.widths)
        if len(cfg.widths) < 1 or cfg.loop_count < 1:
            raise ValueError("need at least one layer and one loop")
        if cfg.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {cfg.activation!r}")
        if cfg.stateful and not 0.0 < cfg.leak < 1.0:
            raise ValueError(f"leak must lie in (0, 1), got {cfg.leak}")
        self._cfg = cfg
        self.input_dim, self.output_dim = cfg.input_dim, cfg.output_dim
        self.stateful = cfg.stateful
        self.gradient_available = cfg.gradient_available and not cfg.stateful
        self._act, self._dact = _ACTIVATIONS[cfg.activation]

        rng = np.random.default_rng(cfg.seed)

        def dense(n_in, n_out):
            a = cfg.gain / np.sqrt(n_in)
            w = rng.uniform(-a, a, size=(n_out, n_in))
            b = rng.uniform(-a, a, size=n_out) if cfg.use_bias else np.zeros(n_out)
            return w, b

        w = cfg.widths
        self._adapter = dense(cfg.input_dim, w[0])
        self._loop = [dense(w[i], w[(i + 1) % len(w)]) for i in range(len(w))]
        self._tap = dense(w[0], cfg.output_dim)
        fb = rng.standard_normal((w[0], w[0]))
        self._feedback = fb * (cfg.spectral_radius / np.max(np.abs(np.linalg.eigvals(fb))))
        for arr in self._arrays():
            arr.setflags(write=False)
        self._state = np.zeros(w[0])

    def _arrays(self) -> List[np.ndarray]:
        out = [*self._adapter, *self._tap, self._feedback]
        for wb in self._loop:
            out.extend(wb)
        return out

    def config(self) -> Dict[str, Any]:
        d = asdict(self._cfg)
        d["kind"] = "frozen-net"
        d["widths"] = list(self._cfg.widths)
        return d

    def parameter_checksum(self) -> str:
        h = hashlib.sha256()
        for arr in self._arrays():
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def zero_adapter(self) -> "FrozenNetReservoir":
        """Copy whose input adapter weights are zero, so output ignores input."""
        clone = FrozenNetReservoir(self._cfg)
        w, b = clone._adapter
        clone._adapter = (np.zeros_like(w), b)
        return clone

    def reset(self) -> None:
        self._state = np.zeros_like(self._state)

    def _loops(self, h: np.ndarray, cache: Optional[list] = None) -> np.ndarray:
        act = self._act
        for _ in range(self._cfg.loop_count):
            for w, b in self._loop:
                if cache is not None:
                    cache.append(h)
                h = act(w @ h + b)
                if cache is not None:
                    cache.append(h)
        return h

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        aw, ab = self._adapter
        z = aw @ x + ab
        if not self.stateful:
            h = self._loops(self._act(z))
            tw, tb = self._tap
            return self._act(tw @ h + tb)
        lam = self._cfg.leak
        z = z + (lam * self._cfg.feedback_scale) * (self._feedback @ self._state)
        self._state = lam * self._state + self._loops(self._act(z))
        tw, tb = self._tap
        return self._act(tw @ self._state + tb)

    def forward_with_cache(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        if not self.gradient_available:
            raise GradientUnavailable("reservoir was built without gradient passthrough")
        x = self._check(x)
        aw, ab = self._adapter
        h0 = self._act(aw @ x + ab)
        acts: list = []
        h = self._loops(h0, acts)
        tw, tb = self._tap
        out = self._act(tw @ h + tb)
        return out, (h0, acts, h, out)

    def backward(self, cache: Any, grad_out: np.ndarray) -> np.ndarray:
        """Gradient of a scalar loss with respect to the reservoir input."""
        if not self.gradient_available:
            raise GradientUnavailable("reservoir was built without gradient passthrough")
        h0, acts, h, out = cache
        tw, _ = self._tap
        g = tw.T @ (grad_out * self._dact(out))
        layers = self._loop * self._cfg.loop_count
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            a_out = acts[2 * i + 1]
            g = w.T @ (g * self._dact(a_out))
        aw, _ = self._adapter
        return aw.T @ (g * self._dact(h0))


class DelayLineReservoir(Reservoir):
    """Shift register of the last ``taps`` scalar inputs, oldest first.

    With ``projection_dim`` set, the register is mapped through a fixed random
    matrix instead of being exposed directly.
    """

    stateful = True
    gradient_available = False

    def __init__(self, taps: int, projection_dim: Optional[int] = None, seed: int = 0):
        if taps < 1:
            raise ValueError("taps must be >= 1")
        self.taps = int(taps)
        self.input_dim = 1
        self.projection_dim = projection_dim
        self.seed = seed
        self._proj = None
        if projection_dim is not None:
            self._proj = np.random.default_rng(seed).standard_normal((projection_dim, taps))
            self._proj.setflags(write=False)
        self.output_dim = projection_dim if projection_dim is not None else self.taps
        self._register = np.zeros(self.taps)

    def reset(self) -> None:
        self._register = np.zeros(self.taps)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        self._register = np.concatenate([self._register[1:], x])
        if self._proj is None:
            return self._register.copy()
        return self._proj @ self._register

    def config(self) -> Dict[str, Any]:
        return {"kind": "delay-line", "taps": self.taps,
                "projection_dim": self.projection_dim, "seed": self.seed}


class CountingReservoir(Reservoir):
    """Transparent wrapper that counts ``forward`` calls."""

    def __init__(self, inner: Reservoir):
        self.inner = inner
        self.input_dim, self.output_dim = inner.input_dim, inner.output_dim
        self.stateful = inner.stateful
        self.gradient_available = inner.gradient_available
        self.calls = 0

    def forward(self, x):
        self.calls += 1
        return self.inner.forward(x)

    def forward_with_cache(self, x):
        self.calls += 1
        return self.inner.forward_with_cache(x)

    def backward(self, cache, grad_out):
        return self.inner.backward(cache, grad_out)

    def reset(self):
        self.inner.reset()

    def config(self):
        return self.inner.config()


def reservoir_from_config(cfg: Dict[str, Any]) -> Reservoir:
    cfg = dict(cfg)
    kind = cfg.pop("kind", "frozen-net")
    if kind == "frozen-net":
        if "widths" in cfg:
            cfg["widths"] = tuple(cfg["widths"])
        return FrozenNetReservoir(FrozenNetConfig(**cfg))
    if kind == "delay-line":
        return DelayLineReservoir(**cfg)
    raise ValueError(f"unknown reservoir kind {kind!r}")
