import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from samcal import losses
from samcal import tensor as T
from samcal.losses import binary_entropy, cross_entropy, csam_outer_loss, focal_loss, predictive_entropy
from samcal.tensor import Tensor, grad_check


def lp_of(p_true, K=2):
    """Log-probability rows whose label-0 entry is ``p_true``."""
    p = np.asarray(p_true, dtype=float).reshape(-1)
    rest = (1.0 - p)[:, None] / (K - 1) * np.ones((1, K - 1))
    with np.errstate(divide="ignore"):
        lp = np.log(np.concatenate([p[:, None], rest], axis=1))
    return lp, np.zeros(p.size, dtype=int)


def test_cross_entropy_values():
    lp, y = lp_of([1.0])
    assert cross_entropy(lp, y)[0].data == pytest.approx(0.0, abs=0.0)
    lp = np.log(np.full((1, 5), 0.2))
    assert float(cross_entropy(lp, [3])[0].data) == pytest.approx(math.log(5), rel=1e-14)
    lp, y = lp_of([0.4])
    assert float(cross_entropy(lp, y)[0].data) == pytest.approx(0.916290731874155, rel=1e-12)


def test_cross_entropy_label_range():
    with pytest.raises(ValueError):
        cross_entropy(np.log(np.full((1, 2), 0.5)), [2])


def test_csam_examples():
    lp, y = lp_of([0.4])
    assert float(csam_outer_loss(lp, y, 2.0)[0].data) == pytest.approx(-math.log(0.4), rel=1e-14)
    lp, y = lp_of([0.8])
    assert float(csam_outer_loss(lp, y, 1.0)[0].data) == pytest.approx(-math.log(0.8) / 1.8, rel=1e-12)
    assert float(csam_outer_loss(lp, y, 1.0)[0].data) == pytest.approx(0.12397, abs=5e-6)


def test_csam_branch_is_at_half():
    lp, y = lp_of([0.5])
    assert float(csam_outer_loss(lp, y, 2.0)[0].data) == pytest.approx(math.log(2), rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=8))
def test_csam_gamma0_is_cross_entropy_exactly(ps):
    lp, y = lp_of(ps, K=3)
    a, pa = csam_outer_loss(lp, y, 0.0)
    b, pb = cross_entropy(lp, y)
    assert np.array_equal(pa, pb)
    assert float(a.data) == float(b.data)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1.0), st.floats(0.0, 2.0), st.floats(0.0, 5.0))
def test_loss_orderings(p, gamma, gamma_f):
    lp, y = lp_of([p])
    ce = cross_entropy(lp, y)[1][0]
    cs = csam_outer_loss(lp, y, gamma)[1][0]
    fl = focal_loss(lp, y, gamma_f)[1][0]
    if p > 0.5:
        assert cs <= ce
    else:
        assert cs == ce
    assert 0.0 <= fl <= ce + 1e-15


def test_focal_examples():
    lp, y = lp_of([0.3, 0.9])
    assert np.array_equal(focal_loss(lp, y, 0.0)[1], cross_entropy(lp, y)[1])
    lp, y = lp_of([1.0])
    assert focal_loss(lp, y, 2.0)[1][0] == 0.0
    lp, y = lp_of([0.5])
    assert focal_loss(lp, y, 2.0)[1][0] == pytest.approx(0.25 * math.log(2), rel=1e-14)
    assert focal_loss(lp, y, 2.0)[1][0] == pytest.approx(0.1733, abs=5e-5)


def test_binary_entropy():
    assert binary_entropy(0.0) == 0.0 and binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == pytest.approx(math.log(2), rel=1e-15)
    assert binary_entropy(0.9) == pytest.approx(-0.9 * math.log(0.9) - 0.1 * math.log(0.1), rel=1e-14)
    assert binary_entropy(0.9) == pytest.approx(0.3251, abs=5e-5)
    with pytest.raises(ValueError):
        binary_entropy(1.2)


def test_predictive_entropy():
    h, cat = predictive_entropy([[0.0, 1.0, 0.0]], [1])
    assert h[0] == 0.0 and cat[0] == 0.0
    h, cat = predictive_entropy([[0.25] * 4], [2])
    assert cat[0] == pytest.approx(math.log(4), rel=1e-14)
    assert h[0] == pytest.approx(binary_entropy(0.25), rel=1e-14)
    h, _ = predictive_entropy([[0.7, 0.3]], [0])
    assert h[0] == pytest.approx(0.6109, abs=5e-5)
    with pytest.raises(ValueError):
        predictive_entropy([[0.5, 0.6]], [0])


@pytest.mark.parametrize("kind", [
    losses.LossKind("cross_entropy"),
    losses.LossKind("focal", focal_gamma=0.0),
    losses.LossKind("focal", focal_gamma=1.0),
    losses.LossKind("focal", focal_gamma=2.0),
    losses.LossKind("csam_outer", gamma=0.0),
    losses.LossKind("csam_outer", gamma=1.0),
    losses.LossKind("csam_outer", gamma=2.0),
])
def test_loss_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(11)
    fn = losses.loss_fn(kind)
    for _ in range(30):
        z = rng.normal(scale=2.0, size=(5, 3))
        y = rng.integers(0, 3, size=5)
        p = np.exp(T.log_softmax(z).data)[np.arange(5), y]
        if np.any(np.abs(p - 0.5) < 1e-3):
            continue  # the CSAM loss jumps at p = 1/2
        err = grad_check(lambda ts: fn(T.log_softmax(ts[0]), y)[0], [z])
        assert err < 1e-5


def test_csam_factor_is_differentiated():
    # d/dz of -(1+p)^-g log p differs from the detached-factor gradient
    z = np.array([[2.0, 0.0]])
    tape = T.Tape()
    zt = tape.variable(z)
    (g,) = tape.backward(csam_outer_loss(T.log_softmax(zt), [0], 1.0)[0], [zt])
    p = 1 / (1 + math.exp(-2.0))
    dl_dp = (1 + p) ** -2 * math.log(p) - (1 + p) ** -1 / p
    assert g[0, 0] == pytest.approx(dl_dp * p * (1 - p), rel=1e-10)


def test_loss_kind_validation():
    with pytest.raises(ValueError):
        losses.LossKind("csam_outer", gamma=2.5)
    with pytest.raises(ValueError):
        losses.LossKind("hinge")
    with pytest.raises(ValueError):
        csam_outer_loss(np.log([[0.5, 0.5]]), [0], -0.1)
