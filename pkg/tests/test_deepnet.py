import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmodal import nn
from xmodal.cca import CcaConfig, fit_cca, total_correlation
from xmodal.dataio import SynthConfig, generate_synthetic, split
from xmodal.deepnet import (
    TrainConfig,
    corr_objective,
    embed,
    fit_sdcca,
    train_dcca,
)
from xmodal.errors import DimMismatch, NonFiniteLoss, TooFewSamples
from xmodal.retrieval import evaluate
from conftest import make_pair


def fd_grad(f, X, h=1e-5):
    g = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        E = np.zeros_like(X)
        E[idx] = h
        g[idx] = (f(X + E) - f(X - E)) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


# -- forward / backprop ---------------------------------------------------

def test_identity_linear_layer(rng):
    net = nn.BranchNetwork((nn.Layer(np.eye(3), np.zeros(3), "linear"),))
    X = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(nn.forward(net, X), X)


def test_relu_kills_negative_input():
    net = nn.BranchNetwork((
        nn.Layer(np.eye(2), np.zeros(2), "relu"),
        nn.Layer(np.eye(2), np.zeros(2), "linear"),
    ))
    np.testing.assert_array_equal(nn.forward(net, -np.ones((3, 2))), 0.0)


def test_forward_dim_mismatch(rng):
    net = nn.init_branch(3, [4], 2, "relu", rng)
    with pytest.raises(DimMismatch):
        nn.forward(net, np.ones((2, 5)))


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_jacobian_matches_finite_differences(rng, activation):
    net = nn.init_branch(4, [6], 3, activation, rng)
    net = net.with_params([p + 0.1 * rng.normal(size=p.shape) for p in net.params()])
    x = rng.normal(size=(1, 4))
    out, acts = nn.forward(net, x, cache=True)
    for j in range(3):
        seed = np.zeros((1, 3))
        seed[0, j] = 1.0
        analytic = nn.input_gradient(net, acts, seed)
        numeric = fd_grad(lambda z: nn.forward(net, z)[0, j], x)
        assert rel_err(analytic, numeric) < 1e-4


def test_parameter_gradients_match_finite_differences(rng):
    net = nn.init_branch(3, [5], 2, "tanh", rng)
    X = rng.normal(size=(6, 3))
    target = rng.normal(size=(6, 2))
    loss = lambda n: 0.5 * np.sum((nn.forward(n, X) - target) ** 2)
    out, acts = nn.forward(net, X, cache=True)
    grads = nn.backward(net, acts, out - target)
    params = net.params()
    for i, p in enumerate(params):
        def f(q, i=i):
            ps = list(params)
            ps[i] = q
            return loss(net.with_params(ps))
        assert rel_err(grads[i], fd_grad(f, p)) < 1e-4


def test_identity_branch_is_identity(rng):
    X = rng.normal(size=(8, 4))
    for hidden in ([], [8], [10, 12]):
        net = nn.identity_branch(4, hidden)
        np.testing.assert_allclose(nn.forward(net, X), X, atol=1e-14)


# -- correlation objective ------------------------------------------------

def test_identical_views_give_minus_k(rng):
    H = rng.normal(size=(50, 4))
    loss, _, _ = corr_objective(H, H, 4, 1e-10)
    assert loss == pytest.approx(-4.0, abs=1e-6)


def objective_case(seed, n=20, kp=4):
    rng = np.random.default_rng(seed)
    Hx = rng.normal(size=(n, kp))
    Hy = Hx @ rng.normal(size=(kp, kp)) + rng.normal(size=(n, kp))
    return Hx, Hy


@pytest.mark.parametrize("seed", range(5))
def test_objective_gradients_finite_differences(seed):
    Hx, Hy = objective_case(seed)
    _, gx, gy = corr_objective(Hx, Hy, 3, 1e-3)
    nx = fd_grad(lambda H: corr_objective(H, Hy, 3, 1e-3)[0], Hx)
    ny = fd_grad(lambda H: corr_objective(Hx, H, 3, 1e-3)[0], Hy)
    assert rel_err(gx, nx) < 1e-4
    assert rel_err(gy, ny) < 1e-4


def test_objective_rotation_invariant(rng):
    Hx, Hy = objective_case(1)
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a = corr_objective(Hx, Hy, 3, 1e-3)[0]
    b = corr_objective(Hx @ Q, Hy, 3, 1e-3)[0]
    assert abs(a - b) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 4), st.sampled_from([0.0, 1e-4, 1e-1]))
def test_objective_bounds_and_permutation(seed, k, reg):
    Hx, Hy = objective_case(seed, n=25)
    loss, gx, gy = corr_objective(Hx, Hy, k, reg)
    assert -k - 1e-9 <= loss <= 1e-9
    perm = np.random.default_rng(seed).permutation(25)
    loss_p, gx_p, gy_p = corr_objective(Hx[perm], Hy[perm], k, reg)
    assert abs(loss - loss_p) < 1e-10
    np.testing.assert_allclose(gx_p, gx[perm], atol=1e-10)
    np.testing.assert_allclose(gy_p, gy[perm], atol=1e-10)


def test_objective_matches_cca_total(rng):
    Hx, Hy = objective_case(3, n=40, kp=5)
    loss, _, _ = corr_objective(Hx, Hy, 5, 1e-4)
    assert -loss == pytest.approx(total_correlation(fit_cca(Hx, Hy, CcaConfig(5, 1e-4))), abs=1e-12)


def test_objective_too_few_samples():
    with pytest.raises(TooFewSamples):
        corr_objective(np.ones((1, 2)), np.ones((1, 2)), 1, 1e-3)


# -- training -------------------------------------------------------------

def small_data(seed=0, **kw):
    cfg = SynthConfig(**{**dict(classes=3, per_class=20, dimA=12, dimB=15, latent_dim=4), **kw})
    return generate_synthetic(cfg, seed)


def test_sgd_descent_is_monotone():
    ds = small_data()
    cfg = TrainConfig(hidden_sizes=(16,), activation="tanh", epochs=50, learning_rate=1e-4,
                      k=3, optimizer="sgd", reg_out=1e-3)
    trace = [loss for _, loss in train_dcca(ds, cfg).training_trace]
    assert len(trace) == 50
    assert np.all(np.diff(trace) <= 1e-6)


def test_linear_dcca_reaches_cca_optimum():
    ds = small_data(seed=2, per_class=40, dimA=8, dimB=10, latent_dim=5, noise_sigma=1.0)
    cfg = TrainConfig(hidden_sizes=(), activation="linear", epochs=600, learning_rate=1e-2,
                      k=4, reg_out=1e-6)
    model = train_dcca(ds, cfg)
    target = total_correlation(fit_cca(ds.a.matrix(), ds.b.matrix(), CcaConfig(4, 1e-6)))
    assert total_correlation(model.cca_head) == pytest.approx(target, rel=0.02)


def test_training_is_deterministic():
    ds = small_data()
    cfg = TrainConfig(hidden_sizes=(8,), epochs=5, k=3, seed=4)
    a, b = train_dcca(ds, cfg), train_dcca(ds, cfg)
    assert a.training_trace == b.training_trace
    for p, q in zip(a.netA.params() + a.netB.params(), b.netA.params() + b.netB.params()):
        np.testing.assert_array_equal(p, q)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_non_finite():
    ds = small_data()
    cfg = TrainConfig(hidden_sizes=(8,), epochs=30, k=3, learning_rate=1e200, optimizer="sgd")
    with pytest.raises(NonFiniteLoss) as info:
        train_dcca(ds, cfg)
    assert isinstance(info.value.trace, list)


def test_too_few_rows():
    ds = small_data(per_class=2)
    with pytest.raises(TooFewSamples):
        train_dcca(ds, TrainConfig(k=10, epochs=1))


def test_embed_whitened_and_default_dim():
    ds = small_data(seed=1, per_class=30)
    model = train_dcca(ds, TrainConfig(hidden_sizes=(16,), epochs=10, reg_out=0.0))
    E = embed(model, ds.a.matrix(), "A")
    assert E.shape[1] == 10
    np.testing.assert_allclose(E.var(axis=0, ddof=1), 1.0, atol=1e-4)


def test_zero_epoch_model_is_finite():
    ds = small_data()
    model = train_dcca(ds, TrainConfig(hidden_sizes=(8,), epochs=0, k=3))
    assert model.training_trace == ()
    assert np.all(np.isfinite(embed(model, ds.b.matrix(), "B")))


def test_embed_dim_mismatch():
    ds = small_data()
    model = train_dcca(ds, TrainConfig(hidden_sizes=(8,), epochs=1, k=3))
    with pytest.raises(DimMismatch):
        embed(model, np.ones((2, 3)), "A")


def test_sdcca_singletons_equal_dcca(rng):
    XA, XB = rng.normal(size=(12, 5)), rng.normal(size=(12, 6))
    ds = make_pair(XA, XB, np.arange(12))
    cfg = TrainConfig(hidden_sizes=(8,), epochs=5, k=3)
    a, b = fit_sdcca(ds, "groundtruth", cfg), train_dcca(ds, cfg)
    assert a.training_trace == b.training_trace
    np.testing.assert_array_equal(a.cca_head.Wx, b.cca_head.Wx)
    c = fit_sdcca(ds, "fullcross", cfg)
    assert c.training_trace == b.training_trace


def test_sdcca_deterministic():
    ds = small_data()
    cfg = TrainConfig(hidden_sizes=(8,), epochs=5, k=3)
    a, b = fit_sdcca(ds, "onetoone", cfg), fit_sdcca(ds, "onetoone", cfg)
    assert a.training_trace == b.training_trace
    np.testing.assert_array_equal(a.netB.layers[0].W, b.netB.layers[0].W)


@pytest.mark.slow
def test_sdcca_beats_unsupervised_dcca():
    """Standard 4-class benchmark, 10 paired seeds, mean of both directions."""
    wins = 0
    for seed in range(10):
        ds = generate_synthetic(SynthConfig(), seed)
        train, test = split(ds, 0.8, seed)
        TA, TB = test.a.matrix(), test.b.matrix()
        cfg = TrainConfig(seed=seed)
        scores = []
        for model in (train_dcca(train, cfg), fit_sdcca(train, "fullcross", cfg)):
            r = evaluate(embed(model, TA, "A"), embed(model, TB, "B"), test.labels)
            scores.append((r.map_ab + r.map_ba) / 2)
        wins += scores[1] > scores[0]
    assert wins >= 8
