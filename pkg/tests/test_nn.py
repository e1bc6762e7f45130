import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierforecast import autodiff as ad
from hierforecast.errors import ConfigurationError, DimensionError, VocabularyError
from hierforecast.nn import (DURATION_FLOOR, EmbeddingTable, GruCell, MlpHead, TaskWeights, duration_bin,
                             embed_inputs, gru_step, head_predict, mse_loss, nll_loss, weighted_total_loss)


def _zero_cell(inp=3, hid=4):
    cell = GruCell.create(inp, hid, seed=0)
    for p in cell.parameters():
        p.value[...] = 0.0
    return cell


def test_gru_zero_params_halves_state():
    cell = _zero_cell()
    h = np.array([0.2, -0.4, 1.0, 0.0])
    out = gru_step(cell, np.array([5.0, -1.0, 2.0]), h).value
    assert np.allclose(out, 0.5 * h, atol=0)


def test_gru_zero_params_zero_state():
    out = gru_step(_zero_cell(), np.ones(3), np.zeros(4)).value
    assert np.array_equal(out, np.zeros(4))


def _scalar_gru(cell, x, h):
    """Independent per-unit evaluation of the four gate formulas."""
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    W = {k: getattr(cell, k).value for k in ("W_r", "W_z", "W_n", "U_r", "U_z", "U_n", "b_r", "b_z", "b_n")}
    H = len(h)
    out = []
    for k in range(H):
        def lin(w, u, b):
            return (sum(W[w][k, j] * x[j] for j in range(len(x))),
                    sum(W[u][k, j] * h[j] for j in range(H)), W[b][k])
        a, b, c = lin("W_r", "U_r", "b_r")
        r = sig(a + b + c)
        a, b, c = lin("W_z", "U_z", "b_z")
        z = sig(a + b + c)
        a, b, c = lin("W_n", "U_n", "b_n")
        n = math.tanh(a + r * b + c)
        out.append((1 - z) * h[k] + z * n)
    return np.array(out)


def test_gru_matches_scalar_oracle(rng):
    cell = GruCell.create(5, 4, seed=11)
    for _ in range(10):
        x, h = rng.normal(size=5), rng.normal(size=4)
        assert np.allclose(gru_step(cell, x, h).value, _scalar_gru(cell, x, h), rtol=1e-12, atol=1e-14)


def test_gru_dimension_errors_name_gate():
    cell = GruCell.create(3, 4, seed=0)
    with pytest.raises(DimensionError, match="input gate"):
        gru_step(cell, np.ones(2), np.zeros(4))
    with pytest.raises(DimensionError, match="update gate"):
        gru_step(cell, np.ones(3), np.zeros(5))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_gru_output_bound(seed, scale):
    rng = np.random.default_rng(seed)
    cell = GruCell.create(3, 4, seed=seed)
    h = rng.normal(size=4) * scale
    out = gru_step(cell, rng.normal(size=3) * scale, h).value
    assert np.all(np.abs(out) <= np.maximum(np.abs(h), 1.0) + 1e-12)


def test_duration_binning():
    assert duration_bin(0.0) == 0
    assert duration_bin(1.0) == 99
    assert duration_bin(0.375) == 37


def test_embed_inputs_deterministic_and_checked():
    labels = EmbeddingTable.create(3, 2, 0, "l")
    durs = EmbeddingTable.create(100, 2, 0, "d")
    a = embed_inputs(1, 0.4, labels, durs).value
    b = embed_inputs(1, 0.4, labels, durs).value
    assert a.shape == (4,) and np.array_equal(a, b)
    assert np.array_equal(a[2:], durs.matrix.value[40])
    with pytest.raises(VocabularyError):
        embed_inputs(3, 0.4, labels, durs)


def test_head_zero_weights():
    head = MlpHead.create(4, 3, 0, "h")
    for p in head.parameters():
        p.value[...] = 0.0
    logits, dur = head_predict(head, ad.constant(np.ones(4)))
    assert np.array_equal(logits.value, np.zeros(3))
    assert dur.item() == 0.5


def test_head_duration_clamped(rng):
    head = MlpHead.create(4, 3, 0, "h")
    for p in head.parameters():
        p.value *= 30.0
    for _ in range(1000):
        _, d = head_predict(head, ad.constant(rng.normal(size=4) * 10))
        assert DURATION_FLOOR <= d.item() <= 1.0


def test_head_argmax_invariant_to_shared_bias(rng):
    head = MlpHead.create(4, 3, 0, "h")
    h = ad.constant(rng.normal(size=4))
    before = int(np.argmax(head_predict(head, h)[0].value))
    head.mlp.layers[-1].bias.value[:3] += 7.5
    assert int(np.argmax(head_predict(head, h)[0].value)) == before


def test_nll_values():
    assert abs(nll_loss(ad.constant([0.0, 0.0]), 0).item() - math.log(2)) < 1e-15
    assert abs(nll_loss(ad.constant([10.0, -10.0]), 0).item() - 2.0611536e-9) < 1e-15


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=5), st.floats(-50, 50), st.data())
def test_nll_nonnegative_and_shift_invariant(logits, c, data):
    t = data.draw(st.integers(0, len(logits) - 1))
    a = nll_loss(ad.constant(logits), t).item()
    b = nll_loss(ad.constant(np.array(logits) + c), t).item()
    assert a >= 0 and abs(a - b) <= 1e-9


def test_mse():
    assert mse_loss(ad.constant(0.3), 0.3).item() == 0.0
    assert mse_loss(ad.constant(0.0), 1.0).item() == 1.0


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_mse_symmetric(a, b):
    assert mse_loss(ad.constant(a), b).item() == mse_loss(ad.constant(b), a).item()


def test_weighted_loss_unit_weights():
    w = TaskWeights.create(["a", "b"])
    total = weighted_total_loss({"a": ad.constant(1.5), "b": ad.constant(0.25)}, w)
    assert total.item() == 1.75


def test_weighted_loss_optimum_at_zero_for_unit_loss():
    w = TaskWeights.create(["a"])
    s = w.log_vars["a"]
    ad.backward(weighted_total_loss({"a": ad.constant(1.0)}, w))
    assert abs(float(s.grad)) < 1e-15
    report = ad.grad_check(lambda: weighted_total_loss({"a": ad.constant(1.0)}, w), [s])
    assert report.passed


def test_weighted_loss_gradients_match_differences(rng):
    w = TaskWeights.create(["a", "b", "c"])
    for p in w.parameters():
        p.value[...] = rng.normal()
    x = ad.Parameter(rng.normal(size=3), name="x")

    def f():
        return weighted_total_loss({"a": mse_loss(ad.pick(x, 0), 0.2), "b": mse_loss(ad.pick(x, 1), -1.0),
                                    "c": nll_loss(x, 2)}, w)

    report = ad.grad_check(f, w.parameters() + [x])
    assert report.passed, report.max_rel_error


def test_weighted_loss_finite_for_extreme_log_vars():
    w = TaskWeights.create(["a"])
    w.log_vars["a"].value[...] = -1e6
    assert math.isfinite(weighted_total_loss({"a": ad.constant(2.0)}, w).item())


def test_weighted_loss_missing_task():
    with pytest.raises(ConfigurationError):
        weighted_total_loss({"nope": ad.constant(1.0)}, TaskWeights.create(["a"]))
