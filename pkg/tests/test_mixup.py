import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from salt.errors import InputError, InternalError
from salt.mixup import coefficient_rng, mix_embeddings, mix_rows, mixed_input, sample_coefficients

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_boundaries_exact():
    rng = np.random.default_rng(0)
    h_s, h_t = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    np.testing.assert_array_equal(mix_embeddings(h_s, h_t, np.ones(8)), h_s)
    np.testing.assert_array_equal(mix_embeddings(h_s, h_t, np.zeros(8)), h_t)


def test_hand_computed():
    h_s = np.array([1.0, 2.0, -4.0])
    h_t = np.array([3.0, 2.0, 0.0])
    r = np.array([0.25, 0.5, 0.75])
    # 0.25*1 + 0.75*3, 0.5*2 + 0.5*2, 0.75*-4 + 0.25*0
    np.testing.assert_allclose(mix_embeddings(h_s, h_t, r), [2.5, 2.0, -3.0])


@settings(max_examples=100, deadline=None)
@given(
    h_s=arrays(np.float64, (4, 6), elements=finite),
    h_t=arrays(np.float64, (4, 6), elements=finite),
    r=arrays(np.float64, 6, elements=st.floats(0, 1)),
)
def test_per_dimension_convexity(h_s, h_t, r):
    out = mix_embeddings(h_s, h_t, r)
    lo, hi = np.minimum(h_s, h_t), np.maximum(h_s, h_t)
    tol = 1e-9 * (1 + np.abs(h_s) + np.abs(h_t))
    assert (out >= lo - tol).all() and (out <= hi + tol).all()


@settings(max_examples=50, deadline=None)
@given(h=arrays(np.float64, (3, 5), elements=finite), r=arrays(np.float64, 5, elements=st.floats(0, 1)))
def test_same_input_degenerates(h, r):
    np.testing.assert_allclose(mix_embeddings(h, h, r), h, rtol=1e-12, atol=1e-9)


def test_uniform_coefficients_monte_carlo():
    draws = sample_coefficients(100_000, np.random.default_rng(1234))
    assert draws.min() >= 0 and draws.max() < 1
    assert abs(draws.mean() - 0.5) < 0.01
    # variance of U[0, 1] is 1/12
    assert abs(draws.var() - 1 / 12) < 0.005


def test_rng_streams_are_keyed():
    a = sample_coefficients(4, coefficient_rng(1, 0, (7, 0)))
    b = sample_coefficients(4, coefficient_rng(1, 0, (7, 0)))
    c = sample_coefficients(4, coefficient_rng(1, 1, (7, 0)))
    d = sample_coefficients(4, coefficient_rng(1, 0, (7, 1)))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_shape_errors():
    with pytest.raises(InputError):
        mix_embeddings(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros(3))
    with pytest.raises(InputError):
        sample_coefficients(0, np.random.default_rng(0))


def test_mix_rows_keeps_identical_ids_untouched():
    emb = torch.nn.Embedding(10, 4)
    orig = torch.tensor([1, 2, 3])
    sw = torch.tensor([1, 5, 3])
    r = torch.full((4,), 0.3)
    out = mix_rows(emb(orig), emb(sw), orig == sw, r)
    torch.testing.assert_close(out[0], emb.weight[1])
    torch.testing.assert_close(out[1], 0.3 * emb.weight[2] + 0.7 * emb.weight[5])


def test_mixed_input_per_instance_vs_per_position():
    emb = torch.nn.Embedding(10, 4)
    orig, sw = [1, 2, 3], [4, 5, 6]
    h_s, h_t = emb(torch.tensor(orig)), emb(torch.tensor(sw))
    out = mixed_input(orig, sw, emb, np.random.default_rng(0))
    r = torch.as_tensor(np.random.default_rng(0).random(4), dtype=h_s.dtype)
    torch.testing.assert_close(out, r * h_s + (1 - r) * h_t)
    out_pp = mixed_input(orig, sw, emb, np.random.default_rng(0), per_position=True)
    r_pp = np.random.default_rng(0)
    rows = torch.as_tensor(np.stack([r_pp.random(4) for _ in range(3)]), dtype=h_s.dtype)
    torch.testing.assert_close(out_pp, rows * h_s + (1 - rows) * h_t)
    with pytest.raises(InternalError):
        mixed_input([1, 2], [1], emb, np.random.default_rng(0))


def test_gradient_flows_to_both_lookups():
    emb = torch.nn.Embedding(10, 4)
    out = mixed_input([1], [2], emb, np.random.default_rng(0))
    out.sum().backward()
    g = emb.weight.grad
    assert g[1].abs().sum() > 0 and g[2].abs().sum() > 0
    torch.testing.assert_close(g[1] + g[2], torch.ones(4))
