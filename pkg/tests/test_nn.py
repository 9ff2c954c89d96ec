import numpy as np
import pytest

from vinn import nn


def fd(f, arrays, eps=1e-6):
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + eps
            up = f()
            a[idx] = old - eps
            down = f()
            a[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def test_forward_matches_explicit_layers(rng):
    p = nn.init_mlp([4, 5, 2], rng)
    x = rng.normal(size=(3, 4))
    h = np.maximum(x @ p.weights[0].T + p.biases[0], 0)
    assert np.allclose(nn.forward(p, x), h @ p.weights[1].T + p.biases[1])


def test_mlp_backward_against_finite_differences(rng):
    p = nn.init_mlp([3, 6, 4, 2], rng)
    x = rng.normal(size=(5, 3))
    r = rng.normal(size=(5, 2))
    out, acts = nn.forward(p, x, cache=True)
    grads, gx = nn.backward(p, acts, r)
    num = fd(lambda: float(np.sum(nn.forward(p, x) * r)), p.arrays())
    for a, b in zip(grads.arrays(), num):
        assert np.allclose(a, b, atol=1e-6)
    num_x = fd(lambda: float(np.sum(nn.forward(p, x) * r)), [x])[0]
    assert np.allclose(gx, num_x, atol=1e-6)


def test_patch_forward_unit_norm_and_zero_patch(rng):
    groups = ((0, 1), (2,), (3, 4, 5))
    p = nn.init_patch(groups, [8, 3], rng)
    assert p.embed_dim == 9 and p.obs_dim == 6
    x = rng.normal(size=(4, 6))
    x[1, [2]] = 0.0
    out = nn.patch_forward(p, x)
    norms = np.linalg.norm(out.reshape(4, 3, 3), axis=2)
    assert norms[1, 1] == 0.0
    live = np.ones_like(norms, bool)
    live[1, 1] = False
    dead = norms < 1e-12  # an all-negative ReLU layer is also a dead patch
    assert np.allclose(norms[live & ~dead], 1.0)


def test_patch_output_depends_only_on_own_group(rng):
    groups = ((0, 1), (2, 3))
    p = nn.init_patch(groups, [5, 2], rng)
    x = rng.normal(size=(1, 4))
    y = x.copy()
    y[0, 2:] = rng.normal(size=2)
    a, b = nn.patch_forward(p, x), nn.patch_forward(p, y)
    assert np.array_equal(a[:, :2], b[:, :2])


def test_patch_backward_against_finite_differences(rng):
    groups = ((0, 2), (1, 3, 4))
    p = nn.init_patch(groups, [6, 3], rng)
    x = rng.normal(size=(4, 5))
    r = rng.normal(size=(4, 6))
    _, caches = nn.patch_forward(p, x, cache=True)
    grads = nn.patch_backward(p, caches, r)
    num = fd(lambda: float(np.sum(nn.patch_forward(p, x) * r)), p.arrays())
    for a, b in zip(grads.arrays(), num):
        assert np.allclose(a, b, atol=1e-6)


def test_params_with_arrays_roundtrip(rng):
    for p in (nn.init_mlp([3, 4, 2], rng), nn.init_patch(((0,), (1, 2)), [4, 2], rng)):
        q = p.with_arrays(a + 1 for a in p.arrays())
        assert type(q) is type(p)
        assert all(np.array_equal(a + 1, b) for a, b in zip(p.arrays(), q.arrays()))
        assert p.copy() == p and q != p
        assert p.zeros_like().all_finite()


def test_adam_first_step_is_sign_times_lr(rng):
    p = nn.init_mlp([2, 2], rng)
    g = p.with_arrays(rng.normal(size=a.shape) for a in p.arrays())
    q = nn.Adam(0.01).update(p, g)
    for a, b, ga in zip(p.arrays(), q.arrays(), g.arrays()):
        assert np.allclose(a - b, 0.01 * np.sign(ga), atol=1e-6)


def test_sgd_step(rng):
    p = nn.init_mlp([2, 3], rng)
    g = p.with_arrays(np.ones_like(a) for a in p.arrays())
    q = nn.SGD(0.5).update(p, g)
    assert all(np.allclose(a - 0.5, b) for a, b in zip(p.arrays(), q.arrays()))


def test_make_optimizer():
    assert isinstance(nn.make_optimizer("adam", 1e-3), nn.Adam)
    assert isinstance(nn.make_optimizer("sgd", 1e-3), nn.SGD)
    with pytest.raises(ValueError):
        nn.make_optimizer("lion", 1e-3)
