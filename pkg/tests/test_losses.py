"""Objectives and metrics: fixtures, oracles, monotonicity, invariances."""
import numpy as np
import pytest

from posetransfer import autodiff as ad
from posetransfer.autodiff import Tensor
from posetransfer.errors import DegenerateInputError, ShapeError
from posetransfer.losses import (LossWeights, f_adv, f_adv_exponential, l_edge,
                                 l_full, l_rec, pmd)

RNG = np.random.default_rng(12)


def test_l_rec_identical_is_zero():
    v = RNG.normal(size=(10, 3))
    assert l_rec(v, v.copy()).item() == 0.0


def test_l_rec_uniform_offset():
    v = RNG.normal(size=(10, 3))
    shifted = v + np.array([0.01, 0.0, 0.0])
    assert abs(l_rec(shifted, v).item() - 1e-4) < 1e-18


def test_l_rec_loop_oracle():
    a = RNG.normal(size=(7, 3))
    b = RNG.normal(size=(7, 3))
    oracle = sum(np.sum((a[i] - b[i]) ** 2) for i in range(7)) / 7
    assert abs(l_rec(a, b).item() - oracle) < 1e-12


def test_l_rec_count_mismatch():
    with pytest.raises(ShapeError):
        l_rec(np.zeros((5, 3)), np.zeros((6, 3)))


def test_l_edge_zero_when_equal():
    v = RNG.normal(size=(4, 3))
    edges = np.array([[0, 1], [1, 2], [2, 3]])
    assert l_edge(v, v.copy(), edges).item() == 0.0


def test_l_edge_single_stretched_edge():
    gt = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    result = np.array([[0.0, 0, 0], [1.1, 0, 0]])
    out = l_edge(result, gt, np.array([[0, 1]])).item()
    assert abs(out - 0.01) < 1e-12


def test_l_edge_loop_oracle():
    gt = RNG.normal(size=(6, 3))
    result = gt + 0.05 * RNG.normal(size=(6, 3))
    edges = np.array([[0, 1], [2, 3], [4, 5], [1, 4]])
    oracle = 0.0
    for i, j in edges:
        lr = np.linalg.norm(result[i] - result[j])
        lg = np.linalg.norm(gt[i] - gt[j])
        oracle += (lr - lg) ** 2
    oracle /= len(edges)
    assert abs(l_edge(result, gt, edges).item() - oracle) < 1e-12


def test_l_edge_translation_invariance():
    gt = RNG.normal(size=(6, 3))
    result = gt + 0.05 * RNG.normal(size=(6, 3))
    edges = np.array([[0, 1], [2, 3], [4, 5]])
    base = l_edge(result, gt, edges).item()
    shifted = l_edge(result + np.array([10.0, -4.0, 2.0]),
                     gt + np.array([-3.0, 7.0, 1.0]), edges).item()
    assert abs(base - shifted) < 1e-12


def test_l_edge_empty_edges():
    with pytest.raises(DegenerateInputError):
        l_edge(np.zeros((3, 3)), np.zeros((3, 3)), np.empty((0, 2)))


def test_l_full_arithmetic():
    v = RNG.normal(size=(5, 3))
    g = RNG.normal(size=(5, 3))
    edges = np.array([[0, 1], [1, 2]])
    w = LossWeights(lambda_edge=0.0005)
    expected = l_rec(v, g).item() + 0.0005 * l_edge(v, g, edges).item()
    assert abs(l_full(v, g, edges, w).item() - expected) < 1e-15
    assert l_full(v, g, edges, LossWeights(lambda_edge=0.0)).item() == l_rec(v, g).item()


def test_l_full_gradient_linearity():
    v = RNG.normal(size=(5, 3))
    g = RNG.normal(size=(5, 3))
    edges = np.array([[0, 1], [1, 2], [3, 4]])
    lam = 0.0005

    def grad_of(fn):
        t = Tensor(v.T[None].copy(), requires_grad=True)
        fn(t).backward()
        return t.grad.copy()

    combined = grad_of(lambda t: l_full(t, g, edges, LossWeights(lambda_edge=lam)))
    separate = grad_of(lambda t: l_rec(t, g)) + lam * grad_of(lambda t: l_edge(t, g, edges))
    assert np.abs(combined - separate).max() < 1e-12


def test_pmd_fixtures():
    v = RNG.normal(size=(8, 3))
    assert pmd(v, v.copy()) == 0.0
    # uniform 0.01 offset: pmd is 1e-4 up to binary representation of 0.01
    gt = np.zeros((320, 3))
    result = gt.copy()
    result[:, 0] = 0.01
    assert pmd(result, gt) == pytest.approx(1e-4, rel=1e-14)
    assert pmd(v + np.array([0.01, 0.0, 0.0]), v) == pytest.approx(1e-4, rel=1e-12)


def test_pmd_equals_l_rec_bit_for_bit():
    a = RNG.normal(size=(320, 3))
    b = RNG.normal(size=(320, 3))
    assert pmd(a, b) == l_rec(a, b).item()


def test_pmd_metric_properties():
    a = RNG.normal(size=(9, 3))
    b = RNG.normal(size=(9, 3))
    assert pmd(a, b) > 0.0
    assert pmd(a, b) == pmd(b, a)


def test_f_adv_fixtures():
    # l_rec == 2: single vertex offset by sqrt(2) in one axis... use direct pair
    gt = np.zeros((1, 3))
    result = np.array([[np.sqrt(2.0), 0.0, 0.0]])
    assert f_adv(result, gt, delta=1e-12).item() == pytest.approx(0.5, rel=1e-9)
    v = RNG.normal(size=(5, 3))
    assert f_adv(v, v.copy(), delta=1e-8).item() == pytest.approx(1e8)
    with pytest.raises(ShapeError):
        f_adv(v, v, delta=0.0)


def test_f_adv_monotonicity():
    gt = RNG.normal(size=(10, 3))
    near = gt + 0.01 * RNG.normal(size=(10, 3))
    far = gt + 0.5 * RNG.normal(size=(10, 3))
    assert l_rec(near, gt).item() < l_rec(far, gt).item()
    assert f_adv(near, gt).item() > f_adv(far, gt).item()


def test_f_adv_gradient_chain_rule():
    gt = RNG.normal(size=(4, 3))
    v = gt + 0.3 * RNG.normal(size=(4, 3))
    t = Tensor(v.T[None].copy(), requires_grad=True)
    delta = 1e-8
    f_adv(t, gt, delta).backward()
    analytic = t.grad.copy()

    t2 = Tensor(v.T[None].copy(), requires_grad=True)
    l_rec(t2, gt).backward()
    expected = -1.0 / (l_rec(v, gt).item() + delta) ** 2 * t2.grad
    assert np.abs(analytic - expected).max() < 1e-9

    h = 1e-6
    num = np.zeros_like(v)
    for i in range(v.shape[0]):
        for j in range(3):
            up, dn = v.copy(), v.copy()
            up[i, j] += h
            dn[i, j] -= h
            num[i, j] = (f_adv(up, gt, delta).item() - f_adv(dn, gt, delta).item()) / (2 * h)
    assert np.abs(analytic[0].T - num).max() / np.abs(num).max() < 1e-3


def test_exponential_variant_gradient_vanishes_at_large_error():
    """The rejected exp(-error) objective: gradient magnitude collapses as the
    transfer error grows, while the inverse form keeps a usable gradient."""
    gt = np.zeros((1, 3))
    # l_rec = 10 exactly
    v = np.array([[np.sqrt(10.0), 0.0, 0.0]])

    def grad_norm(fn):
        t = Tensor(v.T[None].copy(), requires_grad=True)
        fn(t).backward()
        return np.abs(t.grad).max()

    g_exp = grad_norm(lambda t: f_adv_exponential(t, gt))
    g_inv = grad_norm(lambda t: f_adv(t, gt))
    # analytically: |d exp(-r)/dr| = e^-10 ~ 4.5e-5, |d r^-1/dr| = 1e-2
    assert g_exp < 5e-3 * g_inv
    assert g_exp == pytest.approx(np.exp(-10.0) * 2 * np.sqrt(10.0), rel=1e-9)


def test_loss_weights_validation():
    with pytest.raises(ShapeError):
        LossWeights(lambda_edge=-1.0)
    with pytest.raises(ShapeError):
        LossWeights(delta_adv=0.0)
