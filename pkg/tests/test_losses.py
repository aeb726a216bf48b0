import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsngae import autodiff as ad
from hsngae.autodiff import LOG_EPS
from hsngae.layers import GaeModel, MlpHead
from hsngae.losses import (
    LossWeights,
    associative_loss,
    autoencoder_loss,
    classification_loss,
    cross_entropy,
    pooling_loss,
    reconstruction_loss,
    transition_probabilities,
    visit_loss,
    walker_loss,
    walker_targets,
)
from hsngae.sitegraph import normalize_adjacency


def test_reconstruction_is_mse():
    x = np.array([[1.0, 2.0], [0.0, 4.0]])
    assert reconstruction_loss(x, np.zeros((2, 2))).value.item() == pytest.approx(21 / 4)
    with pytest.raises(ad.ShapeError):
        reconstruction_loss(x, np.zeros((2, 3)))


def test_pooling_zero_for_one_hot_consistent_graph():
    s = np.eye(3)[[0, 0, 1, 2, 2]]
    assert pooling_loss(s @ s.T, s).value.item() == 0.0


def test_pooling_hand_value():
    s = np.full((2, 2), 0.5)
    a = np.eye(2)
    # ||I - 0.5 * ones||_F = 1, entropy per row = ln 2
    assert pooling_loss(a, s).value.item() == pytest.approx(1 + math.log(2))


def test_walker_targets():
    t = walker_targets([1, 2, 1, 1])
    np.testing.assert_allclose(t[0], [1 / 3, 0, 1 / 3, 1 / 3])
    np.testing.assert_allclose(t.sum(axis=1), 1.0)


def test_walker_zero_for_single_pair():
    pst, pts = transition_probabilities(np.ones((1, 3)), np.ones((1, 3)))
    assert abs(walker_loss(pst, pts, [4]).value.item()) <= 1e-9


def test_visit_uniform_two_targets_is_ln2():
    pst, _ = transition_probabilities(np.ones((1, 2)), np.ones((2, 2)))
    assert visit_loss(pst).value.item() == pytest.approx(math.log(2), abs=1e-9)


def test_associative_weights():
    rng = np.random.default_rng(0)
    zs, zt, y = rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), [0, 1, 0, 1]
    pst, pts = transition_probabilities(zs, zt)
    w, v = walker_loss(pst, pts, y).value.item(), visit_loss(pst).value.item()
    got = associative_loss(zs, zt, y, LossWeights(beta_walker=2.0, beta_visit=0.5)).value.item()
    assert got == pytest.approx(2 * w + 0.5 * v)


def test_cross_entropy_and_l2():
    p = np.full((2, 13), 1 / 13)
    assert cross_entropy(p, [0, 5]).value.item() == pytest.approx(math.log(13))
    mlp = MlpHead(3)
    penalty = sum((w.value ** 2).sum() for w in mlp.weights())
    got = classification_loss(p, [0, 5], 0.1, mlp.weights()).value.item()
    assert got == pytest.approx(math.log(13) + 0.1 * penalty)
    with pytest.raises(ad.ShapeError):
        classification_loss(np.full((2, 4), 0.25), [0, 1])


def test_weight_validation():
    with pytest.raises(ValueError):
        LossWeights(alpha_pool=-1)


def test_autoencoder_loss_ignores_target_labels_by_construction():
    rng = np.random.default_rng(2)
    a = normalize_adjacency(np.ones((4, 4)) - np.eye(4))
    xs, xt = rng.integers(0, 3, size=(3, 4, 6)).astype(float), rng.integers(0, 3, size=(2, 4, 6)).astype(float)
    m = GaeModel(seed=0)
    terms = autoencoder_loss(m, (a, xs, [1, 2, 1]), (a, xt))
    w = LossWeights()
    expect = terms.rec + w.alpha_pool * terms.pool + w.alpha_assoc * (terms.walker + w.beta_visit * terms.visit)
    assert terms.value == pytest.approx(expect)
    with pytest.raises(ValueError):
        autoencoder_loss(m, (a, xs, [1, 2]), (a, xt))


@given(st.integers(0, 2**32 - 1))
def test_losses_are_non_negative(seed):
    """Random instances.

    Walker and visit take log(p + eps) of probabilities p <= 1, so their exact
    minimum is -log(1 + eps) ~ -1e-12 (reached e.g. with a single target).
    """
    rng = np.random.default_rng(seed)
    n, k = rng.integers(1, 7), rng.integers(1, 5)
    logits = rng.normal(scale=3, size=(n, k))
    s = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    a = rng.random((n, n))
    ns, nt, d = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 4)
    zs, zt = rng.normal(scale=2, size=(ns, d)), rng.normal(scale=2, size=(nt, d))
    y = rng.integers(0, 3, size=ns)
    pst, pts = transition_probabilities(zs, zt)
    floor = math.log1p(LOG_EPS) + 1e-15
    w = LossWeights()
    checks = [
        (reconstruction_loss(rng.normal(size=(n, 6)), rng.normal(size=(n, 6))), 0.0),
        (pooling_loss(a + a.T, s), 0.0),
        (walker_loss(pst, pts, y), floor),
        (visit_loss(pst), floor),
        (associative_loss(zs, zt, y), (w.beta_walker + w.beta_visit) * floor),
        (cross_entropy(np.full((2, 13), 1 / 13), [1, 2]), floor),
    ]
    for loss, bound in checks:
        assert loss.value.item() >= -bound
