import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aloe import nn
from aloe.energy import EnergyModel, energy
from aloe.rng import make_rng


def manual_forward(spec, params, x):
    """Independent recomputation with explicit loops over layers."""
    sizes = spec.layer_sizes
    h = np.array(x, dtype=float)
    off = 0
    for li, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = params[off:off + a * b].reshape(a, b)
        off += a * b
        bias = params[off:off + b]
        off += b
        z = np.array([sum(h[i] * W[i, j] for i in range(a)) + bias[j] for j in range(b)])
        if li < len(sizes) - 2:
            z = np.array([v if v > 0 else np.exp(v) - 1 for v in z])
        h = z
    return h


def test_identity_layer():
    spec = nn.DenseNetSpec((2, 2))
    params = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    np.testing.assert_array_equal(nn.net_forward(spec, params, np.array([0.5, -0.5])), [0.5, -0.5])


def test_elu_negative_one():
    assert nn.elu(np.array(-1.0)) == pytest.approx(np.exp(-1) - 1, abs=1e-15)
    assert nn.elu(np.array(-1.0)) == pytest.approx(-0.63212, abs=1e-5)
    np.testing.assert_array_equal(nn.elu(np.array([0.0, 2.5])), [0.0, 2.5])


def test_random_two_layer_matches_manual(rng):
    spec = nn.DenseNetSpec((3, 4, 2))
    params = rng.standard_normal(spec.n_params)
    x = rng.standard_normal(3)
    np.testing.assert_allclose(nn.net_forward(spec, params, x), manual_forward(spec, params, x), rtol=1e-13)


def test_batched_forward_matches_rows(rng):
    spec = nn.DenseNetSpec((5, 6, 6, 3))
    params = rng.standard_normal(spec.n_params)
    X = rng.standard_normal((7, 5))
    batch = nn.net_forward(spec, params, X)
    rows = np.stack([nn.net_forward(spec, params, x) for x in X])
    np.testing.assert_allclose(batch, rows, rtol=1e-14)


def test_linear_gradient_equals_input(rng):
    spec = nn.DenseNetSpec((4, 1))
    params = rng.standard_normal(spec.n_params)
    x = rng.standard_normal(4)
    g = nn.net_backward(spec, params, x, np.array([1.0]))
    np.testing.assert_array_equal(g[:4], x)
    assert g[4] == 1.0


def test_zero_upstream_gives_zero_gradient(rng):
    spec = nn.DenseNetSpec((4, 5, 2))
    params = rng.standard_normal(spec.n_params)
    g = nn.net_backward(spec, params, rng.standard_normal(4), np.zeros(2))
    np.testing.assert_array_equal(g, np.zeros(spec.n_params))


@pytest.mark.parametrize("transform,out", [("identity", 3), ("log_softmax", 3), ("log_sigmoid", 1)])
def test_backward_finite_differences(rng, transform, out):
    spec = nn.DenseNetSpec((5, 8, 7, out), output_transform=transform)
    params = nn.init_params(spec, rng) + 0.1 * rng.standard_normal(spec.n_params)
    X = rng.standard_normal((3, 5))
    u = rng.standard_normal((3, out))
    err = nn.gradient_check(lambda p: float(np.sum(nn.net_forward(spec, p, X) * u)),
                            nn.net_backward(spec, params, X, u), params)
    assert err < 1e-4


def test_input_gradient(rng):
    spec = nn.DenseNetSpec((4, 6, 2))
    params = rng.standard_normal(spec.n_params)
    x = rng.standard_normal((1, 4))
    u = rng.standard_normal((1, 2))
    _, cache = nn.forward(spec, params, x, keep_cache=True)
    _, gx = nn.backward(spec, params, cache, u, input_grad=True)
    err = nn.gradient_check(lambda v: float(np.sum(nn.net_forward(spec, params, v[None]) * u)), gx[0], x[0].copy())
    assert err < 1e-4


def test_log_softmax_normalizes(rng):
    spec = nn.DenseNetSpec((3, 5, 4), output_transform="log_softmax")
    params = 10 * rng.standard_normal(spec.n_params)
    out = nn.net_forward(spec, params, rng.standard_normal((20, 3)))
    np.testing.assert_allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-12)


def test_forward_deterministic(rng):
    spec = nn.DenseNetSpec((6, 9, 1))
    params = rng.standard_normal(spec.n_params)
    x = rng.standard_normal((4, 6))
    a = nn.net_forward(spec, params, x)
    b = nn.net_forward(spec, params, x)
    assert a.tobytes() == b.tobytes()


def test_init_is_glorot_uniform_with_zero_bias():
    spec = nn.DenseNetSpec((30, 50, 1))
    p = nn.init_params(spec, make_rng(0, "init"))
    (W1, b1), (W2, b2) = nn.layer_views(spec, p)
    assert np.abs(W1).max() <= np.sqrt(6 / 80)
    assert np.abs(W2).max() <= np.sqrt(6 / 51)
    assert not b1.any() and not b2.any()


def test_shape_errors(rng):
    spec = nn.DenseNetSpec((3, 2))
    with pytest.raises(nn.ShapeError):
        nn.net_forward(spec, np.zeros(spec.n_params + 1), np.zeros(3))
    with pytest.raises(nn.ShapeError):
        nn.net_forward(spec, np.zeros(spec.n_params), np.zeros(4))
    with pytest.raises(ValueError):
        nn.DenseNetSpec((3,))
    with pytest.raises(ValueError):
        nn.DenseNetSpec((3, 2), output_transform="log_sigmoid")


# Adam ----------------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    st0 = nn.AdamState.zeros(5, 0.01)
    p = np.arange(5.0)
    p1, st1 = nn.optimizer_step(st0, p, np.zeros(5))
    np.testing.assert_array_equal(p1, p)
    assert st1.step_count == 1


def test_adam_first_step_reference(rng):
    lr, b1, b2, eps = 0.003, 0.9, 0.999, 1e-8
    g = rng.standard_normal(6)
    p = rng.standard_normal(6)
    p1, _ = nn.optimizer_step(nn.AdamState.zeros(6, lr), p, g)
    m = (1 - b1) * g / (1 - b1)
    v = (1 - b2) * g ** 2 / (1 - b2)
    np.testing.assert_allclose(p1, p - lr * m / (np.sqrt(v) + eps), rtol=1e-14)
    np.testing.assert_allclose(np.abs(p1 - p), lr, rtol=1e-5)


def test_adam_two_steps_monotone(rng):
    g = rng.standard_normal(4)
    p0 = np.zeros(4)
    p1, s = nn.optimizer_step(nn.AdamState.zeros(4, 0.01), p0, g)
    p2, _ = nn.optimizer_step(s, p1, g)
    assert np.all(np.sign(p1 - p0) == -np.sign(g))
    assert np.all(np.sign(p2 - p1) == -np.sign(g))


def test_adam_rejects_nonfinite():
    with pytest.raises(nn.NonFiniteGradient) as e:
        nn.optimizer_step(nn.AdamState.zeros(3), np.zeros(3), np.array([0.0, np.nan, 1.0]))
    assert e.value.index == 1


# gradient_check --------------------------------------------------------------

def test_gradient_check_quadratic():
    spec = nn.DenseNetSpec((1, 1))
    x = np.array([[1.5]])

    def loss(p):
        return float(nn.net_forward(spec, p, x)[0, 0] ** 2)

    def grad(p):
        y = nn.net_forward(spec, p, x)
        return nn.net_backward(spec, p, x, 2 * y)
    assert nn.gradient_check(loss, grad, np.array([0.7, -0.2])) < 1e-8


def test_gradient_check_energy_net(rng):
    m = EnergyModel.create(16, 2, (32, 32), rng=rng)
    x = rng.integers(0, 2, 16)
    from aloe.energy import weighted_energy_grad
    err = nn.gradient_check(lambda p: float(energy(m.with_params(p), x)),
                            weighted_energy_grad(m, x[None], np.ones(1)), m.params,
                            indices=rng.choice(m.params.size, 100, replace=False))
    assert err < 1e-4


def test_gradient_check_flags_wrong_gradient():
    assert nn.gradient_check(lambda p: float(p @ p), np.zeros(2), np.array([1.0, 2.0])) > 0.5


@settings(max_examples=20, deadline=None)
@given(sizes=st.lists(st.integers(1, 6), min_size=2, max_size=4), seed=st.integers(0, 2 ** 32 - 1))
def test_gradcheck_property(sizes, seed):
    r = make_rng(seed, "prop")
    spec = nn.DenseNetSpec(tuple(sizes))
    params = r.standard_normal(spec.n_params)
    X = r.standard_normal((2, sizes[0]))
    u = r.standard_normal((2, sizes[-1]))
    err = nn.gradient_check(lambda p: float(np.sum(nn.net_forward(spec, p, X) * u)),
                            nn.net_backward(spec, params, X, u), params)
    assert err < 1e-4


# checkpoints -----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    spec = nn.DenseNetSpec((3, 4, 2), output_transform="log_softmax")
    p = rng.standard_normal(spec.n_params)
    nn.save_params(tmp_path / "net.ckpt", spec, p)
    spec2, p2 = nn.load_params(tmp_path / "net.ckpt")
    assert spec2 == spec
    assert p2.tobytes() == p.tobytes()


def test_truncated_checkpoint(tmp_path, rng):
    spec = nn.DenseNetSpec((3, 2))
    nn.save_params(tmp_path / "a", spec, rng.standard_normal(spec.n_params))
    data = (tmp_path / "a").read_bytes()
    (tmp_path / "b").write_bytes(data[:-4])
    with pytest.raises(ValueError):
        nn.load_params(tmp_path / "b")
