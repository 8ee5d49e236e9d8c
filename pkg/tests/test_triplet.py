import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmodal import nn
from xmodal.errors import DimMismatch, SingleClass, ZeroVector
from xmodal.triplet import (
    TnnConfig,
    refine,
    sample_triplets,
    train_tnn,
    triplet_loss,
    triplet_losses,
)


def fd(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_inactive_hinge_has_zero_gradients():
    cfg = TnnConfig(margin=1.0, distance="sqeuclidean")
    a = np.array([0.0, 0.0])
    p = np.array([0.0, 0.0])          # d(a, p) = 0
    n = np.array([1.0, 1.0])          # d(a, n) = 2
    loss, ga, gp, gn = triplet_loss(a, p, n, cfg)
    assert loss == 0.0
    for g in (ga, gp, gn):
        np.testing.assert_array_equal(g, 0.0)


def test_equal_distances_give_margin():
    cfg = TnnConfig(margin=0.5, distance="sqeuclidean")
    loss, *_ = triplet_loss(np.zeros(2), np.array([1.0, 0.0]), np.array([0.0, 1.0]), cfg)
    assert loss == pytest.approx(0.5)
    # cosine: orthogonal p and n both sit at distance 1 from a
    cfg = TnnConfig(margin=0.5)
    loss, *_ = triplet_loss(np.array([1.0, 1.0, 0.0]), np.array([1.0, -1.0, 0.0]),
                            np.array([0.0, 0.0, 1.0]), cfg)
    assert loss == pytest.approx(0.5)


def test_zero_vector_cosine():
    with pytest.raises(ZeroVector):
        triplet_loss(np.zeros(3), np.ones(3), np.ones(3))


@pytest.mark.parametrize("distance", ["cosine", "sqeuclidean"])
def test_gradients_match_finite_differences(distance):
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 20:
        a, p, n = rng.normal(size=(3, 5))
        cfg = TnnConfig(margin=2.0 if distance == "cosine" else 5.0, distance=distance)
        loss, ga, gp, gn = triplet_loss(a, p, n, cfg)
        if loss < 1e-3:
            continue
        f = lambda x, slot: triplet_loss(*[x if i == slot else v for i, v in enumerate((a, p, n))],
                                         cfg)[0]
        for slot, g in enumerate((ga, gp, gn)):
            num = fd(lambda x: f(x, slot), (a, p, n)[slot])
            assert np.max(np.abs(g - num)) / max(np.max(np.abs(num)), 1e-12) < 1e-4
        checked += 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["cosine", "sqeuclidean"]),
       st.floats(0.01, 2.0))
def test_loss_properties(seed, distance, margin):
    rng = np.random.default_rng(seed)
    A, P, N = rng.normal(size=(3, 8, 4))
    loss, *_ = triplet_losses(A, P, N, margin, distance)
    assert np.all(loss >= 0)
    from xmodal.triplet import _distance
    dap, dan = _distance(A, P, distance)[0], _distance(A, N, distance)[0]
    np.testing.assert_array_equal(loss == 0, dan >= dap + margin)
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    rotated, *_ = triplet_losses(A @ Q, P @ Q, N @ Q, margin, distance)
    np.testing.assert_allclose(rotated, loss, atol=1e-10)


def test_forced_triplets_two_samples():
    cfg = TnnConfig(triplets_per_anchor=3)
    trip = sample_triplets(np.eye(2), np.eye(2), [0, 1], cfg, seed=0)
    assert len(trip) == 2 * 2 * 3
    for t in trip:
        assert t.positive_idx == t.anchor_idx
        assert t.negative_idx == 1 - t.anchor_idx


def test_single_class_rejected():
    with pytest.raises(SingleClass):
        sample_triplets(np.eye(3), np.eye(3), [1, 1, 1])


def test_sampled_triplets_respect_labels():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, size=40)
    E = rng.normal(size=(40, 5))
    for mining in ("random", "hard"):
        cfg = TnnConfig(mining=mining)
        trip = sample_triplets(E, E + 0.1, labels, cfg, seed=3)
        assert len(trip) == 2 * 40 * cfg.triplets_per_anchor
        for t in trip:
            assert labels[t.anchor_idx] == labels[t.positive_idx]
            assert labels[t.anchor_idx] != labels[t.negative_idx]
        firsts = [t for i, t in enumerate(trip) if i % cfg.triplets_per_anchor == 0]
        assert all(t.positive_idx == t.anchor_idx for t in firsts)
        assert {t.anchor_view for t in trip} == {"A", "B"}


def test_hard_mining_picks_closest_negative():
    EA = np.array([[1.0, 0.0], [0.0, 1.0], [0.9, 0.1], [-1.0, 0.0]])
    labels = [0, 0, 1, 1]
    cfg = TnnConfig(mining="hard", triplets_per_anchor=1, distance="cosine")
    trip = sample_triplets(EA, EA, labels, cfg)
    first = next(iter(trip))
    assert first.negative_idx == 2


def separable(seed=0, M=80, k=6):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(4), M // 4)
    centers = rng.normal(size=(4, k)) * 2
    EA = centers[labels] + 0.5 * rng.normal(size=(M, k))
    EB = centers[labels] + 0.5 * rng.normal(size=(M, k))
    return EA, EB, labels


def test_training_satisfies_margin():
    EA, EB, labels = separable()
    cfg = TnnConfig(epochs=40, k_t=6, seed=1)
    model = train_tnn(EA, EB, labels, cfg)
    RA, RB = refine(model, EA, "A"), refine(model, EB, "B")
    trip = sample_triplets(RA, RB, labels, cfg, seed=99)
    from xmodal.triplet import _gather
    loss, *_ = triplet_losses(*_gather(RA, RB, trip), cfg.margin, cfg.distance)
    assert np.mean(loss == 0) >= 0.95
    assert model.training_trace[-1][1] < model.training_trace[0][1]


def test_training_is_deterministic():
    EA, EB, labels = separable(M=40)
    cfg = TnnConfig(epochs=3, k_t=6, seed=5)
    a, b = train_tnn(EA, EB, labels, cfg), train_tnn(EA, EB, labels, cfg)
    assert a.training_trace == b.training_trace
    for p, q in zip(a.refinerA.params(), b.refinerA.params()):
        np.testing.assert_array_equal(p, q)


def test_zero_learning_rate_identity_is_noop():
    EA, EB, labels = separable(M=40)
    cfg = TnnConfig(epochs=3, k_t=6, learning_rate=0.0, init_noise=0.0)
    model = train_tnn(EA, EB, labels, cfg)
    np.testing.assert_allclose(refine(model, EA, "A"), EA, atol=1e-14)
    np.testing.assert_allclose(refine(model, EB, "B"), EB, atol=1e-14)


def test_refine_errors_and_finiteness():
    EA, EB, labels = separable(M=40)
    model = train_tnn(EA, EB, labels, TnnConfig(epochs=1, k_t=4, init="glorot"))
    assert refine(model, EA, "A").shape == (40, 4)
    assert np.all(np.isfinite(refine(model, EB, "B")))
    with pytest.raises(DimMismatch):
        refine(model, np.ones((2, 3)), "A")
