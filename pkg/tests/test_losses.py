
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adsd import ops
from adsd.data.dataset import Batch
from adsd.decoder import DecoderOutput, TaskKind
from adsd.errors import DataError
from adsd.losses import (berhu_loss, compute_losses, depth_loss, downsample_labels, median_frequency_weights,
                         normal_loss, pyramid_loss, total_loss)
from adsd.tensor import Tensor, backward

import oracles


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ---- median-frequency weights ---------------------------------------------

def test_uniform_histogram_gives_ones():
    np.testing.assert_array_equal(median_frequency_weights([7, 7, 7, 7]).alpha, 1.0)


def test_three_class_example():
    w = median_frequency_weights([50, 30, 20])
    np.testing.assert_allclose(w.alpha, [0.6, 1.0, 1.5], rtol=1e-15)


def test_lower_median_convention():
    w = median_frequency_weights([70, 10, 10, 10])
    assert w.median_prob == pytest.approx(0.1)
    np.testing.assert_allclose(w.alpha, [1 / 7, 1, 1, 1], rtol=1e-15)
    even = median_frequency_weights([40, 30, 20, 10])
    assert even.median_prob == pytest.approx(0.2)


def test_absent_class_weight_zero():
    w = median_frequency_weights([10, 0, 30])
    assert w.alpha[1] == 0.0
    assert w.median_prob == pytest.approx(0.25)


def test_empty_histogram_rejected():
    with pytest.raises(DataError):
        median_frequency_weights([0, 0, 0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=2, max_size=12).filter(lambda h: sum(h) > 0))
def test_weights_match_direct_formula(hist):
    assert median_frequency_weights(hist).alpha.tolist() == oracles.median_frequency_loop(hist)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 1000), min_size=3, max_size=8), st.data())
def test_doubling_a_count_halves_weight_at_fixed_median(hist, data):
    w = median_frequency_weights(hist)
    c = data.draw(st.integers(0, len(hist) - 1))
    # alpha_c * p_c == p_m for every present class
    assert w.alpha[c] * w.class_probs[c] == pytest.approx(w.median_prob, rel=1e-12)
    p = w.class_probs.copy()
    ratio = (w.median_prob / (2 * p[c])) / (w.median_prob / p[c])
    assert ratio == pytest.approx(0.5)


# ---- berHu ----------------------------------------------------------------

def test_berhu_zero_residual():
    assert berhu_loss(t64(np.ones(5)), np.ones(5)).item() == 0.0


def test_berhu_worked_case_is_exact():
    loss = berhu_loss(t64([1.0, 2.0, 10.0]), np.zeros(3)).item()
    assert loss == 29 / 3


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_berhu_continuous_at_kink(beta):
    below = berhu_loss(t64([beta]), np.zeros(1), beta=beta).item()
    above = berhu_loss(t64([beta * (1 + 1e-12)]), np.zeros(1), beta=beta).item()
    quad = (beta * beta + beta * beta) / (2 * beta)
    assert abs(below - beta) <= 1e-9 * max(1, beta)
    assert abs(quad - beta) <= 1e-9 * max(1, beta)
    assert abs(above - below) <= 1e-9 * max(1, beta)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
def test_berhu_matches_piecewise_oracle(res):
    if max(abs(r) for r in res) < 1e-300:      # beta would underflow to 0
        return
    got = berhu_loss(t64(res), np.zeros(len(res))).item()
    assert got == pytest.approx(oracles.berhu_loop(res), rel=1e-12, abs=1e-15)


def test_berhu_gradient_magnitudes():
    pred = t64([0.5, -1.0, 4.0, -10.0], grad=True)
    backward(berhu_loss(pred, np.zeros(4), beta=2.0))
    g = pred.grad * 4   # undo the mean
    np.testing.assert_allclose(g, [1.0, -1.0, 2.0, -5.0])
    assert abs(g[0]) == 1 and abs(g[2]) > 1


def test_berhu_beta_is_per_batch_max():
    pred = t64([[1.0, 0.0], [0.0, 5.0]])
    # beta = 1 from the max residual 5: r=1 sits on the kink
    assert berhu_loss(pred, np.zeros((2, 2))).item() == pytest.approx((1 + (25 + 1) / 2) / 4)


def test_berhu_mask_and_empty():
    pred = t64([1.0, 100.0])
    # a single valid residual r sets beta = r / 5, so it lands on the quadratic branch
    assert berhu_loss(pred, np.zeros(2), np.array([True, False])).item() == pytest.approx((1 + 0.04) / 0.4)
    with pytest.raises(DataError):
        berhu_loss(pred, np.zeros(2), np.array([False, False]))


def test_normal_loss_all_quadratic_case():
    pred = t64(np.full((1, 3, 1, 1), 0.1))
    target = np.zeros((1, 3, 1, 1))
    loss = normal_loss(pred, target, valid_mask=np.ones((1, 1, 1, 1), bool)).item()
    assert loss == pytest.approx(0.26, rel=1e-12)


def test_normal_loss_equals_flat_berhu():
    rng = np.random.default_rng(0)
    pred = rng.standard_normal((2, 3, 4, 4))
    target = rng.standard_normal((2, 3, 4, 4))
    target /= np.linalg.norm(target, axis=1, keepdims=True)
    a = normal_loss(t64(pred), target).item()
    b = berhu_loss(t64(pred.reshape(-1)), target.reshape(-1)).item()
    assert a == pytest.approx(b, rel=1e-14)


def test_depth_loss_skips_invalid_pixels():
    target = np.array([[[[2.0, 0.0]]]])
    pred = t64([[[[2.5, 9.0]]]])
    assert depth_loss(pred, target).item() == pytest.approx((0.25 + 0.01) / 0.2)


# ---- pyramid and total ----------------------------------------------------

def test_downsample_labels_nearest():
    lab = np.arange(16).reshape(1, 4, 4)
    np.testing.assert_array_equal(downsample_labels(lab, 2), [[[0, 2], [8, 10]]])


def test_pyramid_terms_vanish_for_confident_correct_logits():
    labels = np.random.default_rng(0).integers(0, 3, (1, 16, 16))
    sides = []
    for s in (2, 4, 8, 16):
        lab = downsample_labels(labels, s)
        sides.append(t64(np.moveaxis(np.eye(3)[lab] * 50.0, -1, 1)))
    terms = pyramid_loss(sides, labels)
    assert len(terms) == 4 and all(t.item() < 1e-3 for t in terms)


def test_pyramid_matches_composition():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 3, (2, 16, 16))
    weights = np.array([0.5, 1.0, 2.0])
    sides = [t64(rng.standard_normal((2, 3, 16 // s, 16 // s))) for s in (2, 4, 8, 16)]
    for term, side, s in zip(pyramid_loss(sides, labels, weights), sides, (2, 4, 8, 16)):
        ref = oracles.cross_entropy_loop(side.data, labels[:, ::s, ::s], weights)
        assert term.item() == pytest.approx(ref, rel=1e-12)


def test_total_loss_arithmetic():
    b = total_loss(t64(1.0), t64(0.5), [t64(0.1)] * 4)
    assert b.total.item() == pytest.approx(1.9)
    assert total_loss(t64(0.0), t64(0.0), [t64(0.0)] * 4).total.item() == 0.0
    vals = b.values()
    assert list(vals) == ["L", "L_S", "L_T", "L_P1", "L_P2", "L_P3", "L_P4"]


def test_total_gradient_is_sum_of_component_gradients():
    rng = np.random.default_rng(2)
    logits = t64(rng.standard_normal((1, 3, 8, 8)), grad=True)
    labels = rng.integers(0, 3, (1, 8, 8))

    def parts():
        return ops.softmax_cross_entropy(logits, labels), berhu_loss(logits, np.zeros((1, 3, 8, 8)), beta=0.5)

    s, t = parts()
    backward(total_loss(s, t, []).total)
    g_total = logits.grad.copy()
    grads = []
    for k in range(2):
        logits.grad = None
        backward(parts()[k])
        grads.append(logits.grad.copy())
    np.testing.assert_allclose(g_total, grads[0] + grads[1], rtol=1e-13, atol=1e-16)


def test_compute_losses_breakdown_is_additive():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 4, (2, 32, 32))
    normals = rng.standard_normal((2, 3, 32, 32))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    batch = Batch(None, rng.random((2, 1, 32, 32)) + 1, labels, normals)
    out = DecoderOutput(t64(rng.standard_normal((2, 4, 32, 32))),
                        [t64(rng.standard_normal((2, 4, 32 // s, 32 // s))) for s in (2, 4, 8, 16)],
                        t64(rng.standard_normal((2, 3, 32, 32))))
    b = compute_losses(out, batch, median_frequency_weights(np.bincount(labels.ravel())), TaskKind.NORMAL)
    v = b.values()
    assert abs(v["L"] - (v["L_S"] + v["L_T"] + sum(v[f"L_P{k}"] for k in range(1, 5)))) <= 1e-12
