"""Smoke tests: _gradattn ops against numpy/scipy/sklearn/torch oracles."""

import numpy as np
import pytest
import scipy.special
import sklearn.metrics
import torch
import torch.nn.functional as F

import _gradattn as ga

RNG = np.random.default_rng(42)


@pytest.fixture(autouse=True, scope="module")
def f64_mode():
    ga.set_numeric_mode("f64")
    yield
    ga.set_numeric_mode("f32")


def tt(a):
    return torch.tensor(a, dtype=torch.float64)


def test_relu_matches_numpy():
    x = RNG.normal(size=(4, 7))
    np.testing.assert_allclose(ga.relu(x), np.maximum(x, 0.0), rtol=0, atol=0)


def test_softmax_matches_scipy():
    x = RNG.normal(size=(5, 9)) * 10.0
    np.testing.assert_allclose(ga.softmax(x, -1), scipy.special.softmax(x, axis=-1),
                               atol=1e-12)
    np.testing.assert_allclose(ga.softmax(x, 0), scipy.special.softmax(x, axis=0),
                               atol=1e-12)


def test_linear_matches_numpy():
    x, w, b = RNG.normal(size=(6, 4)), RNG.normal(size=(3, 4)), RNG.normal(size=3)
    np.testing.assert_allclose(ga.linear(x, w, b), x @ w.T + b, atol=1e-12)


def test_conv2d_matches_torch():
    for stride, padding in [(1, 0), (2, 1), (1, 2), (3, 0)]:
        x = RNG.normal(size=(2, 3, 9, 9))
        w = RNG.normal(size=(4, 3, 3, 3))
        b = RNG.normal(size=4)
        want = F.conv2d(tt(x), tt(w), tt(b), stride=stride, padding=padding)
        got = ga.conv2d(x, w, b, stride=stride, padding=padding)
        np.testing.assert_allclose(got, want.numpy(), atol=1e-10)


def test_conv2d_vjp_matches_torch_autograd():
    x = RNG.normal(size=(2, 2, 6, 6))
    w = RNG.normal(size=(3, 2, 3, 3))
    b = RNG.normal(size=3)
    xt, wt, bt = (tt(a).requires_grad_(True) for a in (x, w, b))
    y = F.conv2d(xt, wt, bt, stride=2, padding=1)
    dy = RNG.normal(size=tuple(y.shape))
    y.backward(tt(dy))
    gx, gw, gb = ga.conv2d_vjp(x, w, b, 2, 1, dy)
    np.testing.assert_allclose(gx, xt.grad.numpy(), atol=1e-10)
    np.testing.assert_allclose(gw, wt.grad.numpy(), atol=1e-10)
    np.testing.assert_allclose(gb, bt.grad.numpy(), atol=1e-10)


def test_maxpool_matches_torch():
    x = RNG.normal(size=(2, 3, 7, 7))
    want = F.max_pool2d(tt(x), kernel_size=3, stride=2)
    np.testing.assert_allclose(ga.maxpool2d(x, 3, 2), want.numpy(), atol=0)


def test_global_avg_pool_matches_numpy():
    x = RNG.normal(size=(3, 5, 4, 6))
    got = ga.global_avg_pool(x)
    assert got.shape == (3, 5)
    np.testing.assert_allclose(got, x.mean(axis=(2, 3)), atol=1e-12)


def test_layernorm_matches_torch():
    x = RNG.normal(size=(2, 5, 8))
    g, b = RNG.normal(size=8), RNG.normal(size=8)
    want = F.layer_norm(tt(x), (8,), tt(g), tt(b), eps=1e-5)
    np.testing.assert_allclose(ga.layernorm(x, g, b, 1e-5), want.numpy(), atol=1e-12)


def test_batchnorm_eval_matches_torch():
    x = RNG.normal(size=(4, 3, 5, 5))
    g, b = RNG.normal(size=3), RNG.normal(size=3)
    rm, rv = RNG.normal(size=3), RNG.uniform(0.5, 2.0, size=3)
    want = F.batch_norm(tt(x), tt(rm), tt(rv), tt(g), tt(b), training=False, eps=1e-5)
    got = ga.batchnorm2d_eval(x, g, b, rm, rv, eps=1e-5)
    np.testing.assert_allclose(got, want.numpy(), atol=1e-12)


def test_cross_entropy_matches_torch():
    logits = RNG.normal(size=(8, 5)) * 3.0
    targets = RNG.integers(0, 5, size=8).tolist()
    want = F.cross_entropy(tt(logits), torch.tensor(targets))
    assert ga.cross_entropy(logits, targets) == pytest.approx(want.item(), abs=1e-12)

    lt = tt(logits).requires_grad_(True)
    F.cross_entropy(lt, torch.tensor(targets)).backward()
    np.testing.assert_allclose(ga.cross_entropy_grad(logits, targets),
                               lt.grad.numpy(), atol=1e-12)


def test_softmax_vjp_matches_torch_autograd():
    x = RNG.normal(size=(3, 6))
    dy = RNG.normal(size=(3, 6))
    xt = tt(x).requires_grad_(True)
    torch.softmax(xt, dim=-1).backward(tt(dy))
    np.testing.assert_allclose(ga.softmax_vjp(x, -1, dy), xt.grad.numpy(), atol=1e-12)


def test_scaled_dot_attention_matches_reference():
    q = RNG.normal(size=(2, 3, 5, 4))
    k = RNG.normal(size=(2, 3, 5, 4))
    v = RNG.normal(size=(2, 3, 5, 4))
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(4.0)
    want = scipy.special.softmax(scores, axis=-1) @ v
    np.testing.assert_allclose(ga.scaled_dot_attention(q, k, v), want, atol=1e-12)


def test_rope_matches_reference():
    x = RNG.normal(size=(2, 2, 6, 8))
    B, h, T, dh = x.shape
    ang = np.outer(np.arange(T), 10000.0 ** (-2.0 * np.arange(dh // 2) / dh))
    cos, sin = np.cos(ang), np.sin(ang)
    want = np.empty_like(x)
    want[..., 0::2] = x[..., 0::2] * cos - x[..., 1::2] * sin
    want[..., 1::2] = x[..., 0::2] * sin + x[..., 1::2] * cos
    np.testing.assert_allclose(ga.apply_rope(x), want, atol=1e-12)


def test_adam_step_matches_torch():
    w0 = RNG.normal(size=12)
    g0 = RNG.normal(size=12)
    lr, wd = 1e-3, 1e-4
    wt = tt(w0).requires_grad_(True)
    opt = torch.optim.Adam([wt], lr=lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=wd)
    wt.grad = tt(g0)
    opt.step()
    w1, m1, v1 = ga.adam_step(w0, g0, np.zeros(12), np.zeros(12), 0,
                              lr=lr, weight_decay=wd)
    np.testing.assert_allclose(w1, wt.detach().numpy(), atol=1e-12)
    np.testing.assert_allclose(m1, opt.state[wt]["exp_avg"].numpy(), atol=1e-12)
    np.testing.assert_allclose(v1, opt.state[wt]["exp_avg_sq"].numpy(), atol=1e-12)


def _random_preds(n, k):
    probs = scipy.special.softmax(RNG.normal(size=(n, k)) * 2.0, axis=-1)
    labels = RNG.integers(0, k, size=n).tolist()
    return probs, labels


def test_topk_matches_sklearn():
    probs, labels = _random_preds(200, 6)
    for k in (1, 2, 5):
        want = sklearn.metrics.top_k_accuracy_score(labels, probs, k=k,
                                                    labels=np.arange(6))
        assert ga.topk_accuracy(probs, labels, k) == pytest.approx(want, abs=1e-12)


def test_prf_matches_sklearn():
    probs, labels = _random_preds(300, 5)
    preds = probs.argmax(axis=1)
    for avg in ("macro", "weighted"):
        want = sklearn.metrics.precision_recall_fscore_support(
            labels, preds, labels=np.arange(5), average=avg, zero_division=0)
        got = ga.precision_recall_f1(probs, labels, avg)
        np.testing.assert_allclose(got, want[:3], atol=1e-12)


def test_ece_matches_reference_binning():
    probs, labels = _random_preds(400, 4)
    conf = probs.max(axis=1)
    correct = probs.argmax(axis=1) == np.asarray(labels)
    m = 15
    # bin i covers ((i-1)/m, i/m]; empty bins contribute nothing
    idx = np.clip(np.ceil(conf * m).astype(int) - 1, 0, m - 1)
    want = sum(np.mean(idx == i) * abs(correct[idx == i].mean() - conf[idx == i].mean())
               for i in range(m) if np.any(idx == i))
    assert ga.expected_calibration_error(probs, labels, m) == pytest.approx(want, abs=1e-12)


def test_gradient_health_score():
    norms = [("a", 1e-7), ("b", 0.5), ("c", 20.0), ("d", 1.0)]
    ghs, healthy, total = ga.gradient_health_score(norms, lo=1e-6, hi=10.0)
    assert (ghs, healthy, total) == (0.5, 2, 4)
    # closed range: both endpoints count as healthy
    ghs, healthy, total = ga.gradient_health_score([("x", 1e-6), ("y", 10.0)])
    assert (ghs, healthy, total) == (1.0, 2, 2)


def test_param_counts_anchor():
    base = ga.param_counts("resnet18", 200, 1.0, 64, 3)
    grad = ga.param_counts("gradattn", 200, 1.0, 64, 3)
    assert base["total"] == 11279112
    assert grad["total"] - base["total"] == 1620992
    assert abs(grad["total"] - base["total"] - 1.6e6) / 1.6e6 < 0.10
