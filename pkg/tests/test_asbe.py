import numpy as np
import pytest

import rdteunet.asbe as ab
import rdteunet.nn as nn
import rdteunet.tensor as T
from rdteunet.tensor import ConfigError, ParamStore, ShapeError, Tensor, gradcheck


def rx(shape, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return Tensor((scale * rng.standard_normal(shape)).astype(T.default_dtype()))


def make_arconv(c=2, n=3, r_max=7, seed=0):
    store = ParamStore()
    ar = ab.ArConv(store, "ar", np.random.default_rng(seed), c, n=n, r_max=r_max)
    return ar, store


# ---------------------------------------------------------------------------
# arconv

def test_arconv_config_contracts():
    store = ParamStore()
    rng = np.random.default_rng(1)
    with pytest.raises(ConfigError):
        ab.ArConv(store, "a", rng, 2, r_max=6)
    with pytest.raises(ConfigError):
        ab.ArConv(store, "b", rng, 2, n=1)


def test_arconv_degenerate_rectangle_collapses_to_center():
    ar, store = make_arconv(c=2, seed=2)
    # force predicted sizes to ~(1,1): zero shape-net weights, bias -20
    store.set_value("ar.shape2.w", T.zeros(store.value("ar.shape2.w").shape))
    store.set_value("ar.shape2.b", Tensor(np.full(2, -20.0, dtype=np.float32)))
    x = rx((1, 6, 6, 2), 3)
    y = ar(x).data
    w = store.value("ar.w").data
    b = store.value("ar.b").data
    expected = np.einsum("bhwc,co->bhwo", x.data, w.sum(axis=(0, 1))) + b
    assert np.allclose(y, expected, atol=1e-5)


def test_arconv_constant_input_interior():
    ar, store = make_arconv(c=2, seed=4)
    const = np.array([0.7, -0.3], dtype=np.float32)
    x = Tensor(np.broadcast_to(const, (1, 11, 11, 2)).copy())
    y = ar(x).data
    w = store.value("ar.w").data
    b = store.value("ar.b").data
    expected = const @ w.sum(axis=(0, 1)) + b
    # interior: rectangle (max extent r_max=7 -> reach 3) stays inside
    interior = y[0, 4:7, 4:7, :]
    assert np.allclose(interior, expected, atol=1e-4)


def test_arconv_shape_preserved():
    ar, _ = make_arconv(c=3, seed=5)
    assert ar(rx((2, 5, 7, 3), 6)).shape == (2, 5, 7, 3)


def test_arconv_gradcheck_input_and_shape_net():
    with T.using_dtype(np.float64):
        store = ParamStore()
        ar = ab.ArConv(store, "ar", np.random.default_rng(7), 2)
        x = rx((1, 5, 5, 2), 8)
        probe = rx((1, 5, 5, 2), 9)

        def fx(v):
            return T.tsum(T.mul(ar(v), probe))

        assert gradcheck(fx, x, eps=1e-5, tol=1e-2).passed

        # gradient must flow through the predicted rectangle sizes
        name = "ar.shape2.w"

        def fw(v):
            store.set_value(name, v)
            return T.tsum(T.mul(ar(x), probe))

        assert gradcheck(fw, store.value(name), eps=1e-5, tol=1e-2).passed

        name2 = "ar.w"

        def fk(v):
            store.set_value(name2, v)
            return T.tsum(T.mul(ar(x), probe))

        assert gradcheck(fk, store.value(name2), eps=1e-5, tol=1e-2).passed


def test_arconv_sizes_within_bounds():
    ar, _ = make_arconv(c=2, seed=10)
    sizes = ar.predicted_sizes(rx((1, 6, 6, 2), 11, scale=50.0)).data
    assert np.all(sizes >= 1.0)
    assert np.all(sizes <= 7.0)


# ---------------------------------------------------------------------------
# stem

def make_stem(cin=1, c_stem=16, seed=20):
    store = ParamStore()
    stem = ab.AsbeStem(store, "stem", np.random.default_rng(seed), cin, c_stem=c_stem)
    return stem, store


def test_boundary_cue_vanishes_on_constant_input():
    stem, _ = make_stem()
    x1 = Tensor(np.full((1, 6, 6, 8), 0.37, dtype=np.float32))
    d = stem.boundary_cue(x1).data
    assert np.all(np.abs(d) <= 1e-6)


def test_boundary_cue_step_edge_support():
    # vertical step a|b: |d| = |a-b|/3 in the two columns adjacent to the
    # edge (k=3 pooling with true-count borders), zero >= 2 px away
    a, b = 0.2, 0.8
    img = np.full((1, 6, 8, 1), a, dtype=np.float32)
    img[:, :, 4:, :] = b
    stem, _ = make_stem()
    d = stem.boundary_cue(Tensor(img)).data[0, :, :, 0]
    expect = abs(a - b) / 3
    assert np.allclose(np.abs(d[:, 3]), expect, atol=1e-6)
    assert np.allclose(np.abs(d[:, 4]), expect, atol=1e-6)
    assert np.all(np.abs(d[:, :3]) <= 1e-6)
    assert np.all(np.abs(d[:, 5:]) <= 1e-6)


def test_boundary_cue_scales_linearly_with_contrast():
    img = np.zeros((1, 5, 6, 1), dtype=np.float32)
    img[:, :, 3:, :] = 1.0
    stem, _ = make_stem()
    d1 = stem.boundary_cue(Tensor(img)).data
    d3 = stem.boundary_cue(Tensor(3.0 * img)).data
    assert np.allclose(d3, 3.0 * d1, atol=1e-6)


def test_stem_output_shape():
    stem, _ = make_stem(cin=1, c_stem=16)
    y = stem(rx((2, 8, 8, 1), 21))
    assert y.shape == (2, 8, 8, 16)


def test_stem_rejects_tiny_inputs():
    stem, _ = make_stem()
    with pytest.raises(ShapeError):
        stem(rx((1, 3, 8, 1), 22))


def test_stem_gradcheck_end_to_end():
    with T.using_dtype(np.float64):
        store = ParamStore()
        stem = ab.AsbeStem(store, "stem", np.random.default_rng(23), 1, c_stem=4, c_mid=2)
        x = rx((1, 6, 6, 1), 24)
        probe = rx((1, 6, 6, 4), 25)

        def f(v):
            return T.tsum(T.mul(stem(v), probe))

        assert gradcheck(f, x, eps=1e-5, tol=1e-2).passed
