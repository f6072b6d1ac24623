import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pgtrain.params import (Layout, ParameterVector, PerturbationMatrix, PGTConfig,
                            apply_perturbation, count_2d_directions, sample_perturbation)


def rays_by_angle(r):
    """Independent oracle: distinct directions are distinct polar angles."""
    angles = {round(math.atan2(b, a), 12)
              for a in range(-r, r + 1) for b in range(-r, r + 1) if (a, b) != (0, 0)}
    return len(angles)


def test_layout_roundtrip():
    tensors = {"w": np.arange(6.0).reshape(2, 3), "b": np.array([7.0, 8.0]), "s": np.array(9.0)}
    pv = ParameterVector.from_tensors(tensors)
    assert len(pv) == 9
    offsets = [s.offset for s in pv.layout.slots]
    sizes = [s.size for s in pv.layout.slots]
    assert offsets == [0, 6, 8] and sum(sizes) == 9
    back = pv.unflatten()
    np.testing.assert_array_equal(back["w"], tensors["w"])
    np.testing.assert_array_equal(pv.layout.flatten(back), pv.values)


def test_unflatten_returns_views():
    pv = ParameterVector.from_tensors({"w": np.zeros((2, 2))})
    pv.unflatten()["w"][0, 1] = 5.0
    assert pv.values[1] == 5.0


def test_layout_rejects_duplicates_and_bad_lengths():
    with pytest.raises(ValueError):
        Layout([("a", (2,)), ("a", (3,))])
    with pytest.raises(ValueError):
        ParameterVector(np.zeros(3), Layout([("a", (2,))]))


@pytest.mark.parametrize("kwargs", [dict(range=0), dict(delta=0.0), dict(dropout_scale=1.5),
                                    dict(dropout_scale=-0.1), dict(learning_rate=-1.0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        PGTConfig(**kwargs)


def test_full_dropout_zeroes_everything():
    pm = sample_perturbation(5, PGTConfig(range=1, dropout_scale=1.0), np.random.default_rng(0))
    np.testing.assert_array_equal(pm.entries, np.zeros(5))
    assert pm.active == 0


def test_uniform_over_three_values():
    pm = sample_perturbation(100_000, PGTConfig(range=1), np.random.default_rng(1))
    for value in (-1, 0, 1):
        assert abs(np.mean(pm.entries == value) - 1 / 3) < 0.01


def test_zero_rate_with_dropout():
    p, r = 0.5, 2
    expected = p + (1 - p) / (2 * r + 1)
    pm = sample_perturbation(100_000, PGTConfig(range=r, dropout_scale=p), np.random.default_rng(2))
    assert expected == pytest.approx(0.6)
    assert abs(np.mean(pm.entries == 0) - expected) < 0.01


def test_sampling_rejects_bad_input():
    with pytest.raises(ValueError):
        sample_perturbation(0, PGTConfig(), np.random.default_rng(0))
    cfg = PGTConfig()
    cfg.dropout_scale = 2.0
    with pytest.raises(ValueError):
        sample_perturbation(3, cfg, np.random.default_rng(0))


def test_same_seed_same_matrix():
    cfg = PGTConfig(range=3, dropout_scale=0.3)
    a = sample_perturbation(1000, cfg, np.random.default_rng(42))
    b = sample_perturbation(1000, cfg, np.random.default_rng(42))
    assert a.entries.tobytes() == b.entries.tobytes()


@given(st.integers(1, 5), st.floats(0, 1), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_entries_in_range_and_counts(r, p, seed):
    pm = sample_perturbation(200, PGTConfig(range=r, dropout_scale=p), np.random.default_rng(seed))
    assert np.all(np.abs(pm.entries) <= r)
    np.testing.assert_array_equal(pm.counts, np.abs(pm.entries))
    np.testing.assert_array_equal(pm.counts == 0, pm.entries == 0)


def test_matrix_rejects_out_of_range():
    with pytest.raises(ValueError):
        PerturbationMatrix(np.array([0, 2]), 1)


@pytest.mark.parametrize("r,expected", [(1, 8), (2, 16)])
def test_direction_count_examples(r, expected):
    assert count_2d_directions(r) == expected


def test_direction_count_r3_against_angle_oracle():
    assert rays_by_angle(3) == 32
    assert count_2d_directions(3) == 32


@pytest.mark.parametrize("r", range(1, 8))
def test_direction_count_oracle_agrees(r):
    assert count_2d_directions(r) == rays_by_angle(r)


def test_direction_count_rejects_zero():
    with pytest.raises(ValueError):
        count_2d_directions(0)


@pytest.mark.parametrize("entries,sign,expected", [
    ([0, 0], 1, [1.0, 2.0]),
    ([1, -2], 1, [1.1, 1.8]),
    ([1, -2], -1, [0.9, 2.2]),
])
def test_apply_perturbation_examples(entries, sign, expected):
    theta = ParameterVector.from_tensors({"p": np.array([1.0, 2.0])})
    out = apply_perturbation(theta, PerturbationMatrix(np.array(entries), 2), 0.1, sign)
    np.testing.assert_allclose(out.values, expected, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(theta.values, [1.0, 2.0])


def test_apply_perturbation_length_mismatch():
    theta = ParameterVector.from_tensors({"p": np.zeros(3)})
    with pytest.raises(ValueError):
        apply_perturbation(theta, PerturbationMatrix(np.array([1, 0]), 1), 0.1, 1)
    with pytest.raises(ValueError):
        apply_perturbation(theta, PerturbationMatrix(np.array([1, 0, 0]), 1), 0.1, 0)


@given(hnp.arrays(np.float64, 20, elements=st.floats(-1e3, 1e3)),
       hnp.arrays(np.int64, 20, elements=st.integers(-3, 3)),
       st.floats(1e-6, 1.0))
def test_plus_minus_average_back_to_theta(values, entries, delta):
    theta = ParameterVector.from_tensors({"p": values})
    pm = PerturbationMatrix(entries, 3)
    plus = apply_perturbation(theta, pm, delta, 1).values
    minus = apply_perturbation(theta, pm, delta, -1).values
    tol = 4 * np.spacing(np.maximum(np.abs(values), 3 * delta))
    assert np.all(np.abs(0.5 * (plus + minus) - values) <= tol)
