import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphmemad import autodiff as ad
from graphmemad.autodiff import ParamRegistry, Tensor, gradient_check
from graphmemad.decoder import (ReconOutput, decode, decode_attributes, decode_neighborhood,
                                init_decoder_params, kl_diag_gaussian, predict_edges,
                                reconstruction_losses)
from graphmemad.graph import VAR_FLOOR, Graph, neighborhood_table

from .oracles import random_graph


def decoder(d_out=3, d_h=4, heads=2, seed=0):
    reg = ParamRegistry(np.random.default_rng(seed))
    init_decoder_params(reg, d_out, d_h, heads)
    return reg


def zero_all(reg):
    for _, t in reg.items():
        t.data[...] = 0.0


def test_zero_weights_zero_attributes():
    reg = decoder()
    zero_all(reg)
    h = Tensor(np.random.default_rng(0).normal(size=(5, 8)))
    assert np.array_equal(decode_attributes(h, reg, 2).data, np.zeros((5, 3)))


def test_single_node_attributes_finite():
    out = decode_attributes(Tensor(np.random.default_rng(0).normal(size=(1, 8))), decoder(), 2).data
    assert out.shape == (1, 3) and np.all(np.isfinite(out))


def test_zero_heads_give_unit_variance_and_zero_count():
    reg = decoder()
    zero_all(reg)
    c, eps, log_omega = decode_neighborhood(Tensor(np.ones((4, 8))), reg)
    assert np.array_equal(c.data, np.zeros((4, 1)))
    assert np.array_equal(np.exp(log_omega.data), np.ones((4, 3)))


def test_attribute_decoder_gradient_check():
    rng = np.random.default_rng(1)
    reg = decoder(d_out=16, d_h=4, heads=2, seed=1)
    h = Tensor(rng.normal(size=(10, 8)))
    x = Tensor(rng.normal(size=(10, 16)))
    res = gradient_check(lambda: ad.sum(ad.square(x - decode_attributes(h, reg, 2))), reg,
                         n_samples=250, seed=2)
    assert res.max_rel_error < 1e-3


def test_neighborhood_heads_gradient_check():
    rng = np.random.default_rng(2)
    reg = decoder(seed=2)
    h = Tensor(rng.normal(size=(6, 8)))
    w = [Tensor(rng.normal(size=s)) for s in ((6, 1), (6, 3), (6, 3))]

    def f():
        c, eps, log_omega = decode_neighborhood(h, reg)
        return ad.sum(c * w[0]) + ad.sum(eps * w[1]) + ad.sum(ad.exp(log_omega) * w[2])

    names = [k for k in reg if k.split(".")[1] in ("count", "mean", "logvar")]
    sub = ParamRegistry()
    for k in names:
        sub._params[k] = reg[k]
    assert gradient_check(f, sub).max_rel_error < 1e-3


# ---------------------------------------------------------------- edges


def test_orthogonal_rows_half():
    a = predict_edges(Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))).data
    assert a[0, 1] == 0.5


def test_equal_rows_sigmoid_three():
    h = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    assert abs(predict_edges(Tensor(h)).data[0, 1] - 0.9525741268224334) < 1e-15


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 10_000))
def test_edges_symmetric_bounded_and_equivariant(n, d, seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(n, d))
    a = predict_edges(Tensor(h)).data
    assert np.max(np.abs(a - a.T)) < 1e-12
    assert np.all((a > 0) & (a < 1))
    perm = rng.permutation(n)
    # BLAS may round a permuted product differently in the last ulp
    assert np.max(np.abs(predict_edges(Tensor(h[perm])).data - a[np.ix_(perm, perm)])) < 1e-12


# ---------------------------------------------------------------- KL


def test_kl_examples():
    assert abs(kl_diag_gaussian([0.0], [1.0], [0.0], [1.0])) <= 1e-12
    assert abs(kl_diag_gaussian([0.0], [1.0], [1.0], [1.0]) - 0.5) <= 1e-12
    assert abs(kl_diag_gaussian([0.0], [1.0], [0.0], [np.e]) - 1 / (2 * np.e)) <= 1e-12


def test_kl_rejects_non_positive_variance():
    with pytest.raises(ValueError):
        kl_diag_gaussian([0.0], [0.0], [0.0], [1.0])
    with pytest.raises(ValueError):
        kl_diag_gaussian([0.0], [1.0], [0.0], [-1.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_kl_non_negative_and_zero_iff_equal(d, seed):
    rng = np.random.default_rng(seed)
    m1, m2 = rng.normal(size=d), rng.normal(size=d)
    v1, v2 = rng.uniform(0.01, 5, size=d), rng.uniform(0.01, 5, size=d)
    assert kl_diag_gaussian(m1, v1, m2, v2) >= 0
    assert abs(kl_diag_gaussian(m1, v1, m1, v1)) <= 1e-12


# ---------------------------------------------------------------- losses


def fixed_recon(g, stats, a_hat=None):
    var = np.maximum(stats.var, VAR_FLOOR)
    return ReconOutput(
        x_hat=Tensor(g.features.copy()),
        a_hat=Tensor(g.adjacency.copy() if a_hat is None else a_hat),
        c_hat=Tensor(stats.count[:, None].astype(float)),
        eps_hat=Tensor(stats.mean.copy()),
        log_omega_hat=Tensor(np.log(var)),
    )


def test_perfect_reconstruction_zero_losses():
    g = random_graph(np.random.default_rng(0), 9, 0.4)
    stats = neighborhood_table(g)
    l_s, l_a, l_n = reconstruction_losses(g, fixed_recon(g, stats), stats)
    assert np.all(l_s.data == 0) and np.all(l_a.data == 0)
    assert np.max(np.abs(l_n.data)) <= 1e-12


def test_edgeless_half_edges():
    n = 7
    g = Graph(np.zeros((n, n)), np.zeros((n, 2)))
    stats = neighborhood_table(g)
    l_s, _, l_n = reconstruction_losses(g, fixed_recon(g, stats, a_hat=np.full((n, n), 0.5)), stats)
    assert np.allclose(l_s.data, 0.25 * (n - 1), atol=1e-15)
    assert np.all(l_n.data == 0)  # isolated nodes with predicted count 0


def test_isolated_node_only_count_term():
    g = Graph.from_edges(3, [(0, 1)], np.random.default_rng(0).normal(size=(3, 2)))
    stats = neighborhood_table(g)
    recon = fixed_recon(g, stats)
    recon.c_hat = Tensor(np.array([[1.0], [1.0], [2.0]]))
    recon.eps_hat = Tensor(recon.eps_hat.data + 5.0)  # ignored for the isolated node
    _, _, l_n = reconstruction_losses(g, recon, stats)
    assert l_n.data[2] == 4.0


def test_loss_matches_per_node_formula():
    rng = np.random.default_rng(3)
    g = random_graph(rng, 8, 0.4, d=2)
    stats = neighborhood_table(g)
    reg = decoder(d_out=2, seed=3)
    recon = decode(Tensor(rng.normal(size=(8, 8))), reg, 2)
    l_s, l_a, l_n = reconstruction_losses(g, recon, stats)
    a_hat, x_hat = recon.a_hat.data, recon.x_hat.data
    for i in range(g.n):
        s = sum((g.adjacency[i, j] - a_hat[i, j]) ** 2 for j in range(g.n) if j != i)
        assert abs(l_s.data[i] - s) <= 1e-12
        assert abs(l_a.data[i] - np.sum((g.features[i] - x_hat[i]) ** 2)) <= 1e-12
        count = (stats.count[i] - recon.c_hat.data[i, 0]) ** 2
        kl = 0.0 if stats.count[i] == 0 else kl_diag_gaussian(
            stats.mean[i], np.maximum(stats.var[i], VAR_FLOOR), recon.eps_hat.data[i], recon.omega_hat[i])
        assert abs(l_n.data[i] - (kl + count)) <= 1e-9
    for t in (l_s, l_a, l_n):
        assert np.all(t.data >= 0) and np.all(np.isfinite(t.data))
