"""Single-layer encoder-decoder transformer whose feed-forward blocks are reservoirs.

Each feed-forward block is ``x + up(reservoir(down(x)))`` applied one token at a
time. The decoder output is left in embedding space and scored with squared
error against the (trainable) embeddings of the target tokens.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .params import Layout, ParameterVector
from .reservoir import (FrozenNetReservoir, GradientUnavailable, Reservoir,
                        reservoir_from_config)

CHECKPOINT_VERSION = 1
_ATTN = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


@dataclass
class TransformerConfig:
    vocab_size: int = 16
    embed_dim: int = 32
    n_heads: int = 2
    max_seq_len: int = 8
    reservoir_in: int = 5
    reservoir_out: int = 100
    residual: bool = True
    reduction: str = "mean"
    seed: int = 0
    reservoir: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.embed_dim % self.n_heads:
            raise ValueError("embed_dim must be divisible by n_heads")
        if self.vocab_size < 2 or self.max_seq_len < 1:
            raise ValueError("need vocab_size >= 2 and max_seq_len >= 1")


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def attention(queries: np.ndarray, keys: np.ndarray, values: np.ndarray,
              mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Scaled dot-product attention for one head.

    ``mask`` is boolean with True marking allowed (query, key) pairs.
    Returns ``(context, weights)``.
    """
    q, k, v = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (queries, keys, values))
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ValueError(f"incompatible shapes q{q.shape} k{k.shape} v{v.shape}")
    scores = q @ k.T / np.sqrt(q.shape[1])
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    w = softmax(scores)
    return w @ v, w


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class ReservoirFFN:
    """Trainable down/up projections around a black-box reservoir.

    Weights are looked up by ``prefix`` in whatever parameter views are passed
    in, so the block itself holds no trainable state.
    """

    def __init__(self, prefix: str, reservoir: Reservoir, residual: bool = True):
        self.prefix = prefix
        self.reservoir = reservoir
        self.residual = residual

    def slots(self, embed_dim: int) -> List[Tuple[str, Tuple[int, ...]]]:
        r = self.reservoir
        p = self.prefix
        return [(f"{p}.down.weight", (r.input_dim, embed_dim)), (f"{p}.down.bias", (r.input_dim,)),
                (f"{p}.up.weight", (embed_dim, r.output_dim)), (f"{p}.up.bias", (embed_dim,))]

    def forward(self, views: Dict[str, np.ndarray], x: np.ndarray, tape: Optional[list] = None):
        p = self.prefix
        wd, bd = views[f"{p}.down.weight"], views[f"{p}.down.bias"]
        wu, bu = views[f"{p}.up.weight"], views[f"{p}.up.bias"]
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            d = wd @ x[i] + bd
            if tape is None:
                r = self.reservoir.forward(d)
            else:
                r, cache = self.reservoir.forward_with_cache(d)
                tape.append((d, r, cache))
            out[i] = wu @ r + bu
            if self.residual:
                out[i] += x[i]
        return out

    def backward(self, views, grads, x, tape, g_out):
        p = self.prefix
        wd, wu = views[f"{p}.down.weight"], views[f"{p}.up.weight"]
        gx = g_out.copy() if self.residual else np.zeros_like(g_out)
        for i, (d, r, cache) in enumerate(tape):
            gu = g_out[i]
            grads[f"{p}.up.weight"] += np.outer(gu, r)
            grads[f"{p}.up.bias"] += gu
            gd = self.reservoir.backward(cache, wu.T @ gu)
            grads[f"{p}.down.weight"] += np.outer(gd, x[i])
            grads[f"{p}.down.bias"] += gd
            gx[i] += wd.T @ gd
        return gx


class _MHA:
    def __init__(self, prefix: str, embed_dim: int, n_heads: int):
        self.prefix, self.d, self.h = prefix, embed_dim, n_heads

    def slots(self):
        d, p = self.d, self.prefix
        out = []
        for name in _ATTN:
            out.append((f"{p}.{name}", (d, d) if name[0] == "w" else (d,)))
        return out

    def _w(self, views):
        return [views[f"{self.prefix}.{n}"] for n in _ATTN]

    def forward(self, views, xq, xkv, mask=None, tape: Optional[dict] = None):
        wq, bq, wk, bk, wv, bv, wo, bo = self._w(views)
        q, k, v = xq @ wq.T + bq, xkv @ wk.T + bk, xkv @ wv.T + bv
        dh = self.d // self.h
        heads, weights = [], []
        for j in range(self.h):
            sl = slice(j * dh, (j + 1) * dh)
            ctx, w = attention(q[:, sl], k[:, sl], v[:, sl], mask)
            heads.append(ctx)
            weights.append(w)
        concat = np.concatenate(heads, axis=1)
        if tape is not None:
            tape.update(xq=xq, xkv=xkv, q=q, k=k, v=v, a=weights, concat=concat)
        return concat @ wo.T + bo

    def backward(self, views, grads, tape, g_out):
        wq, bq, wk, bk, wv, bv, wo, bo = self._w(views)
        p = self.prefix
        grads[f"{p}.wo"] += g_out.T @ tape["concat"]
        grads[f"{p}.bo"] += g_out.sum(axis=0)
        g_concat = g_out @ wo
        q, k, v = tape["q"], tape["k"], tape["v"]
        gq, gk, gv = np.zeros_like(q), np.zeros_like(k), np.zeros_like(v)
        dh = self.d // self.h
        for j, a in enumerate(tape["a"]):
            sl = slice(j * dh, (j + 1) * dh)
            gc = g_concat[:, sl]
            ga = gc @ v[:, sl].T
            gv[:, sl] = a.T @ gc
            gs = a * (ga - np.sum(ga * a, axis=1, keepdims=True)) / np.sqrt(dh)
            gq[:, sl] = gs @ k[:, sl]
            gk[:, sl] = gs.T @ q[:, sl]
        xq, xkv = tape["xq"], tape["xkv"]
        grads[f"{p}.wq"] += gq.T @ xq
        grads[f"{p}.bq"] += gq.sum(axis=0)
        grads[f"{p}.wk"] += gk.T @ xkv
        grads[f"{p}.bk"] += gk.sum(axis=0)
        grads[f"{p}.wv"] += gv.T @ xkv
        grads[f"{p}.bv"] += gv.sum(axis=0)
        return gq @ wq, gk @ wk + gv @ wv


class ReservoirTransformer:
    """Encoder and decoder of one layer each; trainable vector excludes reservoir internals."""

    def __init__(self, config: Optional[TransformerConfig] = None,
                 reservoirs: Optional[Tuple[Reservoir, Reservoir]] = None):
        cfg = config or TransformerConfig()
        self.config = cfg
        if reservoirs is None:
            res_cfg = {"input_dim": cfg.reservoir_in, "output_dim": cfg.reservoir_out,
                       **cfg.reservoir}
            shared = reservoir_from_config(res_cfg)
            reservoirs = (shared, shared)
        for r in reservoirs:
            if (r.input_dim, r.output_dim) != (cfg.reservoir_in, cfg.reservoir_out):
                raise ValueError("reservoir dims do not match the adapter contract")
        d = cfg.embed_dim
        self.enc_attn = _MHA("enc.self", d, cfg.n_heads)
        self.enc_ffn = ReservoirFFN("enc.ffn", reservoirs[0], cfg.residual)
        self.dec_attn = _MHA("dec.self", d, cfg.n_heads)
        self.cross_attn = _MHA("dec.cross", d, cfg.n_heads)
        self.dec_ffn = ReservoirFFN("dec.ffn", reservoirs[1], cfg.residual)

        layout = Layout([("embed", (cfg.vocab_size, d))])
        for block in (self.enc_attn, self.dec_attn, self.cross_attn):
            for name, shape in block.slots():
                layout.add(name, shape)
        for ffn in (self.enc_ffn, self.dec_ffn):
            for name, shape in ffn.slots(d):
                layout.add(name, shape)
        values = np.empty(layout.size)
        rng = np.random.default_rng(cfg.seed)
        views = layout.views(values)
        fan_in = d
        for slot in layout.slots:
            if slot.name == "embed":
                views["embed"][...] = rng.standard_normal(slot.shape)
                continue
            if len(slot.shape) == 2:
                fan_in = slot.shape[1]
            # a bias shares the fan-in of the weight slot right before it
            bound = 1.0 / np.sqrt(fan_in)
            views[slot.name][...] = rng.uniform(-bound, bound, size=slot.shape)
        self._params = ParameterVector(values, layout)
        self._pos = sinusoidal_positions(cfg.max_seq_len, d)

    @property
    def stateless(self) -> bool:
        return not (self.enc_ffn.reservoir.stateful or self.dec_ffn.reservoir.stateful)

    def parameters(self) -> ParameterVector:
        return self._params

    @staticmethod
    def analytic_parameter_count(cfg: TransformerConfig) -> int:
        d = cfg.embed_dim
        attention_params = 3 * 4 * (d * d + d)
        ffn = 2 * (cfg.reservoir_in * d + cfg.reservoir_in + d * cfg.reservoir_out + d)
        return cfg.vocab_size * d + attention_params + ffn

    def _check_tokens(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
        if tokens.size > self.config.max_seq_len:
            raise ValueError(f"sequence length {tokens.size} exceeds {self.config.max_seq_len}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise ValueError(f"token id outside [0, {self.config.vocab_size})")
        return tokens

    def _reset(self):
        for ffn in (self.enc_ffn, self.dec_ffn):
            if ffn.reservoir.stateful:
                ffn.reservoir.reset()

    def forward(self, values: np.ndarray, source, target, tape: Optional[dict] = None):
        """Teacher-forced decoder outputs, one embedding per target position."""
        src, tgt = self._check_tokens(source), self._check_tokens(target)
        views = self._params.layout.views(values)
        emb = views["embed"]
        self._reset()
        t = {} if tape is not None else None
        x = emb[src] + self._pos[:src.size]
        enc_a = self.enc_attn.forward(views, x, x, None, None if t is None else t.setdefault("ea", {}))
        x1 = x + enc_a
        memory = self.enc_ffn.forward(views, x1, None if t is None else t.setdefault("ef", []))

        dec_in = np.zeros((tgt.size, emb.shape[1]))
        dec_in[1:] = emb[tgt[:-1]]
        y = dec_in + self._pos[:tgt.size]
        mask = causal_mask(tgt.size)
        y1 = y + self.dec_attn.forward(views, y, y, mask, None if t is None else t.setdefault("da", {}))
        y2 = y1 + self.cross_attn.forward(views, y1, memory, None,
                                          None if t is None else t.setdefault("ca", {}))
        out = self.dec_ffn.forward(views, y2, None if t is None else t.setdefault("df", []))
        if t is not None:
            t.update(src=src, tgt=tgt, x1=x1, y2=y2)
            tape.update(t)
        return out

    def target_embeddings(self, values: np.ndarray, target) -> np.ndarray:
        tgt = self._check_tokens(target)
        return self._params.layout.views(values)["embed"][tgt]

    def _scale(self, n: int) -> float:
        return 1.0 if self.config.reduction == "sum" else 1.0 / n

    def loss(self, values: np.ndarray, source, target) -> float:
        out = self.forward(values, source, target)
        diff = out - self.target_embeddings(values, target)
        return float(np.sum(diff * diff)) * self._scale(diff.size)

    def loss_and_grad(self, values: np.ndarray, source, target) -> Tuple[float, np.ndarray]:
        for ffn in (self.enc_ffn, self.dec_ffn):
            if not ffn.reservoir.gradient_available:
                raise GradientUnavailable("gradient unavailable: reservoir is a black box")
        tape: dict = {}
        out = self.forward(values, source, target, tape)
        views = self._params.layout.views(values)
        grad = np.zeros_like(values)
        grads = self._params.layout.views(grad)
        src, tgt = tape["src"], tape["tgt"]
        diff = out - views["embed"][tgt]
        scale = self._scale(diff.size)
        loss = float(np.sum(diff * diff)) * scale
        g_out = 2.0 * scale * diff
        np.add.at(grads["embed"], tgt, -g_out)

        g_y2 = self.dec_ffn.backward(views, grads, tape["y2"], tape["df"], g_out)
        g_q, g_mem = self.cross_attn.backward(views, grads, tape["ca"], g_y2)
        g_y1 = g_y2 + g_q
        g_sq, g_skv = self.dec_attn.backward(views, grads, tape["da"], g_y1)
        g_y = g_y1 + g_sq + g_skv
        if tgt.size > 1:
            np.add.at(grads["embed"], tgt[:-1], g_y[1:])

        g_x1 = self.enc_ffn.backward(views, grads, tape["x1"], tape["ef"], g_mem)
        g_eq, g_ekv = self.enc_attn.backward(views, grads, tape["ea"], g_x1)
        g_x = g_x1 + g_eq + g_ekv
        np.add.at(grads["embed"], src, g_x)
        return loss, grad


def save_checkpoint(path: Union[str, Path], model: ReservoirTransformer, seed: int) -> None:
    """Write config, reservoir config, flat parameters and seed to an ``.npz`` file."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "reservoirs": [model.enc_ffn.reservoir.config(), model.dec_ffn.reservoir.config()],
        "shared_reservoir": model.enc_ffn.reservoir is model.dec_ffn.reservoir,
        "seed": int(seed),
    }
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)),
                 values=model.parameters().values)


def load_checkpoint(path: Union[str, Path]) -> Tuple[ReservoirTransformer, int]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        values = data["values"].copy()
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    cfg = TransformerConfig(**meta["config"])
    enc = reservoir_from_config(meta["reservoirs"][0])
    dec = enc if meta["shared_reservoir"] else reservoir_from_config(meta["reservoirs"][1])
    model = ReservoirTransformer(cfg, (enc, dec))
    if values.size != model.parameters().values.size:
        raise ValueError("checkpoint parameter count does not match its config")
    model.parameters().values[:] = values
    return model, int(meta["seed"])
