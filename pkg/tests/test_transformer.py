import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pgtrain.data import make_seq2seq
from pgtrain.engine import pgt_train
from pgtrain.nn import mse_loss
from pgtrain.params import PGTConfig, sample_perturbation
from pgtrain.reservoir import (CountingReservoir, FrozenNetReservoir, GradientUnavailable,
                               Reservoir)
from pgtrain.transformer import (ReservoirFFN, ReservoirTransformer, TransformerConfig, attention,
                                 causal_mask, load_checkpoint, save_checkpoint)


def small_config(**kw):
    base = dict(vocab_size=5, embed_dim=4, n_heads=2, max_seq_len=3, reservoir_in=2,
                reservoir_out=3, reservoir={"widths": [6, 5], "loop_count": 2, "seed": 3})
    base.update(kw)
    return TransformerConfig(**base)


class Doubler(Reservoir):
    input_dim, output_dim = 1, 2

    def forward(self, x):
        x = self._check(x)
        return np.array([2 * x[0], -x[0]])


def test_single_position_attention_returns_value():
    ctx, w = attention([[0.3, -1.0]], [[2.0, 5.0]], [[7.0, 8.0]])
    np.testing.assert_allclose(ctx, [[7.0, 8.0]])
    np.testing.assert_allclose(w, [[1.0]])


def test_identical_keys_give_uniform_weights():
    _, w = attention([[1.0, 2.0]], np.ones((4, 2)), np.eye(4))
    np.testing.assert_allclose(w, 0.25)


def test_hand_computed_attention():
    _, w = attention([[1.0]], [[1.0], [-1.0]], [[1.0], [0.0]])
    e = np.exp(1.0)
    np.testing.assert_allclose(w[0], [e / (e + 1 / e), (1 / e) / (e + 1 / e)])
    np.testing.assert_allclose(w[0], [0.8808, 0.1192], atol=1e-4)


def test_attention_shape_errors():
    with pytest.raises(ValueError):
        attention(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 4)))


@given(hnp.arrays(np.float64, (4, 3), elements=st.floats(-5, 5)),
       hnp.arrays(np.float64, (6, 3), elements=st.floats(-5, 5)))
def test_attention_rows_sum_to_one(q, k):
    _, w = attention(q, k, np.ones((6, 2)))
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    assert np.all(w >= 0)


def test_causal_mask_weights():
    rng = np.random.default_rng(0)
    q = rng.standard_normal((5, 4))
    _, w = attention(q, q, q, causal_mask(5))
    assert np.all(np.triu(w, 1) == 0)


def test_decoder_does_not_see_future_targets():
    model = ReservoirTransformer(TransformerConfig(seed=1))
    values = model.parameters().values
    src = [1, 2, 3, 4, 5, 6, 7, 8]
    tgt = np.array([3, 1, 4, 1, 5, 9, 2, 6])
    base = model.forward(values, src, tgt)
    for i in range(len(tgt) - 1):
        mutated = tgt.copy()
        mutated[i + 1:] = (mutated[i + 1:] + 7) % 16
        np.testing.assert_array_equal(model.forward(values, src, mutated)[:i + 1], base[:i + 1])


def test_ffn_with_zero_up_projection_is_residual():
    ffn = ReservoirFFN("f", FrozenNetReservoir(), residual=True)
    views = {name: np.zeros(shape) for name, shape in ffn.slots(8)}
    views["f.down.weight"][...] = 1.0
    x = np.random.default_rng(0).standard_normal((3, 8))
    np.testing.assert_array_equal(ffn.forward(views, x), x)


def test_ffn_hand_computed():
    ffn = ReservoirFFN("f", Doubler(), residual=False)
    views = {"f.down.weight": np.array([[0.5]]), "f.down.bias": np.array([1.0]),
             "f.up.weight": np.array([[1.0, 3.0]]), "f.up.bias": np.array([0.25])}
    # down: 0.5*2+1 = 2 ; reservoir: [4, -2] ; up: 4 - 6 + 0.25
    np.testing.assert_allclose(ffn.forward(views, np.array([[2.0]])), [[-1.75]])


def test_same_token_same_ffn_output():
    ffn = ReservoirFFN("f", FrozenNetReservoir(), residual=True)
    rng = np.random.default_rng(1)
    views = {name: rng.standard_normal(shape) for name, shape in ffn.slots(8)}
    row = rng.standard_normal(8)
    out = ffn.forward(views, np.stack([row, row]))
    np.testing.assert_array_equal(out[0], out[1])


def test_reservoir_called_once_per_token_per_ffn():
    enc, dec = CountingReservoir(FrozenNetReservoir()), CountingReservoir(FrozenNetReservoir())
    model = ReservoirTransformer(TransformerConfig(), (enc, dec))
    model.forward(model.parameters().values, list(range(8)), list(range(8)))
    assert enc.calls == 8 and dec.calls == 8


def test_parameter_vector_excludes_reservoir():
    cfg = TransformerConfig()
    model = ReservoirTransformer(cfg)
    assert model.parameters().values.size == ReservoirTransformer.analytic_parameter_count(cfg)
    assert model.parameters().values.size == 19_978
    names = [s.name for s in model.parameters().layout.slots]
    assert not any("reservoir" in n for n in names)


def test_own_outputs_give_zero_loss():
    model = ReservoirTransformer(TransformerConfig())
    out = model.forward(model.parameters().values, [1, 2, 3], [4, 5, 6])
    assert mse_loss(out, out, "mean") == 0.0


def test_untrained_loss_finite_and_deterministic():
    a = ReservoirTransformer(TransformerConfig(seed=2))
    b = ReservoirTransformer(TransformerConfig(seed=2))
    la = a.loss(a.parameters().values, [1, 2], [2, 1])
    assert np.isfinite(la) and la > 0
    assert la == b.loss(b.parameters().values, [1, 2], [2, 1])


def test_token_validation():
    model = ReservoirTransformer(TransformerConfig())
    with pytest.raises(ValueError, match="token id"):
        model.forward(model.parameters().values, [16], [0])
    with pytest.raises(ValueError, match="exceeds"):
        model.forward(model.parameters().values, list(range(9)), [0])
    with pytest.raises(ValueError):
        TransformerConfig(embed_dim=5, n_heads=2)


def test_mismatched_reservoir_rejected():
    with pytest.raises(ValueError, match="adapter"):
        ReservoirTransformer(TransformerConfig(), (Doubler(), Doubler()))


@pytest.mark.parametrize("reduction", ["mean", "sum"])
def test_gradient_matches_finite_differences(reduction):
    model = ReservoirTransformer(small_config(reduction=reduction, seed=4))
    values = model.parameters().values.copy()
    src, tgt = [1, 4, 2], [0, 3, 3]
    _, grad = model.loss_and_grad(values, src, tgt)
    h = 1e-5
    fd = np.empty_like(values)
    for i in range(values.size):
        e = np.zeros_like(values)
        e[i] = h
        fd[i] = (model.loss(values + e, src, tgt) - model.loss(values - e, src, tgt)) / (2 * h)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-8)


def test_black_box_reservoir_blocks_backprop():
    cfg = small_config(reservoir={"widths": [6], "gradient_available": False})
    model = ReservoirTransformer(cfg)
    with pytest.raises(GradientUnavailable):
        model.loss_and_grad(model.parameters().values, [1], [2])


def test_checkpoint_roundtrip(tmp_path):
    model = ReservoirTransformer(small_config(seed=6))
    model.parameters().values[:] += 0.125
    path = tmp_path / "model.npz"
    save_checkpoint(path, model, seed=11)
    again, seed = load_checkpoint(path)
    assert seed == 11
    assert again.parameters().values.tobytes() == model.parameters().values.tobytes()
    assert again.enc_ffn.reservoir is again.dec_ffn.reservoir
    assert again.enc_ffn.reservoir.parameter_checksum() == model.enc_ffn.reservoir.parameter_checksum()
    v = model.parameters().values
    assert again.loss(again.parameters().values, [1, 2], [3, 4]) == model.loss(v, [1, 2], [3, 4])


def test_full_dropout_leaves_model_unchanged():
    model = ReservoirTransformer(small_config())
    before = model.parameters().values.copy()
    checksum = model.enc_ffn.reservoir.parameter_checksum()
    ds = make_seq2seq("copy", 3, 2, 5, 3, 0)
    trace = pgt_train(model, ds.train, ds.test, PGTConfig(dropout_scale=1.0), epochs=2)
    assert len(set(trace.test_loss)) == 1
    np.testing.assert_array_equal(model.parameters().values, before)
    assert model.enc_ffn.reservoir.parameter_checksum() == checksum


def test_surviving_perturbations_at_extreme_dropout():
    n, p = 3_363_652, 0.9999
    expected = n * (1 - p) * 2 / 3
    assert expected == pytest.approx(224.2, abs=0.1)
    # counting dropout alone would give about 336
    assert n * (1 - p) == pytest.approx(336.4, abs=0.1)
    pm = sample_perturbation(n, PGTConfig(range=1, dropout_scale=p), np.random.default_rng(0))
    assert abs(pm.active - expected) < 4 * np.sqrt(expected)
