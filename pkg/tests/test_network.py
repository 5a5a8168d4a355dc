import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_state
from smoothbit.errors import PreconditionError, ShapeError
from smoothbit.network import (
    IDENTITY,
    TANH,
    Architecture,
    NetworkState,
    analytic_lipschitz_bound,
    beta_scale,
    estimate_forward_lipschitz,
    get_activation,
    layer_forward,
    network_forward,
    quantize_weights,
)
from smoothbit.quant_core import SmoothingParams

P = SmoothingParams(0.5)
# Generic 2x2 layer, W = [[0.3, -0.2], [0.5, 0.1]], x = (0.7, -0.4), eps 0.5, b 2,
# delta 0.5, tanh. Evaluated straight from the definitions in mpmath (40 digits).
LAYER_2X2 = (0.022540026933234745854, 0.41109002511582400344)

small = st.floats(-4, 4, allow_nan=False)


def test_architecture_checks_chaining():
    with pytest.raises(ShapeError):
        Architecture(((2, 3), (4, 1)), (TANH, TANH))
    with pytest.raises(ShapeError):
        Architecture(((2, 3),), (TANH, TANH))
    arch = Architecture.from_widths(5, [4, 3, 1])
    assert arch.dims == ((5, 4), (4, 3), (3, 1))
    assert arch.weight_shapes == [(4, 5), (3, 4), (1, 3)]
    assert (arch.depth, arch.input_dim, arch.output_dim) == (3, 5, 1)


def test_activation_constants():
    assert TANH.lipschitz == 1.0 and TANH.growth == 1.0
    z = np.linspace(-3, 3, 200001)
    second = -2 * np.tanh(z) * (1 - np.tanh(z) ** 2)
    assert np.max(np.abs(second)) <= TANH.curvature
    assert np.max(np.abs(second)) == pytest.approx(TANH.curvature, rel=1e-8)
    with pytest.raises(ValueError):
        get_activation("relu")


def test_state_shape_mismatch():
    arch = Architecture.from_widths(2, [3, 1])
    with pytest.raises(ShapeError):
        NetworkState(arch, [np.zeros((3, 2)), np.zeros((3, 1))], P)


# -- beta and quantized weights ---------------------------------------------


def test_beta_examples():
    assert beta_scale(np.full((3, 4), 0.7), P) == P.epsilon
    a, eps = 0.3, 0.4
    assert beta_scale(np.array([[a, -a]]), SmoothingParams(eps)) == pytest.approx(0.5, rel=1e-15)


@given(arrays(np.float64, (3, 4), elements=small), arrays(np.float64, (3, 4), elements=small))
def test_beta_lipschitz(W, V):
    diff = abs(beta_scale(W, P) - beta_scale(V, P))
    assert diff <= np.linalg.norm(W - V) / np.sqrt(12) * (1 + 1e-12) + 1e-15


@given(arrays(np.float64, (4, 3), elements=st.floats(-4, 4)))
def test_beta_range_on_clamped_weights(W):
    b = beta_scale(W, P)
    assert P.epsilon <= b <= np.hypot(2 * 4.0, P.epsilon)


def test_quantized_weight_examples():
    assert np.array_equal(quantize_weights(np.full((2, 3), -1.2), P), np.zeros((2, 3)))


@given(arrays(np.float64, (5, 6), elements=st.floats(-1e3, 1e3)))
def test_quantized_weights_in_open_interval(W):
    Q = quantize_weights(W, SmoothingParams(1.0))
    assert np.all(np.abs(Q) <= 1)


def test_quantized_weights_approach_sign():
    rng = np.random.default_rng(4)
    W = rng.uniform(-1, 1, size=(6, 5))
    PW = W - W.mean()
    PW[np.abs(PW) < 0.01] = 0.05  # keep entries away from zero
    W = PW - PW.mean()
    assert np.min(np.abs(W - W.mean())) > 0.008
    Q = quantize_weights(W, SmoothingParams(1e-3))
    assert np.max(np.abs(Q - np.sign(W - W.mean()))) < 1e-6


def test_shift_invariance_exact_for_dyadic_entries():
    # entries and their mean (0.28125) are exact binary fractions
    W = np.array([[0.5, -0.25], [0.125, 0.75]])
    for c in (1.0, -0.5, 3.25):
        assert np.array_equal(quantize_weights(W + c, P), quantize_weights(W, P))
        assert beta_scale(W + c, P) == beta_scale(W, P)


@given(arrays(np.float64, (4, 5), elements=st.floats(-2, 2)), st.floats(-2, 2))
def test_shift_invariance_up_to_rounding(W, c):
    # W + c rounds each entry, so bitwise equality only holds for exact cases
    assert np.allclose(quantize_weights(W + c, P), quantize_weights(W, P), rtol=0, atol=1e-14)
    assert beta_scale(W + c, P) == pytest.approx(beta_scale(W, P), rel=1e-14)


# -- forward ----------------------------------------------------------------


def test_constant_weights_collapse():
    x = np.array([0.3, -0.9, 0.1])
    out = layer_forward(x, np.full((4, 3), 0.8), P)
    assert np.array_equal(out, np.zeros(4))  # tanh(0)


def test_one_by_one_layer_is_zero():
    out = layer_forward(np.array([0.7]), np.array([[1.3]]), P, IDENTITY)
    assert out.tolist() == [0.0]


def test_two_by_two_layer_reference():
    W = np.array([[0.3, -0.2], [0.5, 0.1]])
    out = layer_forward(np.array([0.7, -0.4]), W, P)
    assert out == pytest.approx(LAYER_2X2, rel=1e-14)


def test_layer_shape_error():
    with pytest.raises(ShapeError):
        layer_forward(np.zeros(3), np.zeros((2, 4)), P)
    s = make_state(np.random.default_rng(0), [3, 1], 2)
    with pytest.raises(ShapeError):
        network_forward(np.zeros(4), s)


def test_depth_one_equals_layer():
    rng = np.random.default_rng(1)
    s = make_state(rng, [3], 4)
    x = rng.uniform(-1, 1, size=4)
    out, _ = network_forward(x, s)
    assert np.array_equal(out, layer_forward(x, s.weights[0], s.smoothing))


def test_forward_is_composition_and_trace_is_consistent():
    rng = np.random.default_rng(2)
    s = make_state(rng, [4, 3, 1], 2)
    X = rng.uniform(-1, 1, size=(7, 2))
    out, tr = network_forward(X, s)
    h = X
    for W in s.weights:
        h = layer_forward(h, W, s.smoothing)
    assert np.array_equal(out, h)
    for l, W in enumerate(s.weights):
        assert tr.wtilde[l].shape == W.shape
        assert np.all(np.abs(tr.wtilde[l]) < 1)
        assert tr.beta[l] >= s.smoothing.epsilon
        assert tr.pre[l].shape == (7, W.shape[0])


def test_batch_rows_match_single_inputs():
    rng = np.random.default_rng(3)
    s = make_state(rng, [3, 2], 2)
    X = rng.uniform(-1, 1, size=(5, 2))
    out, _ = network_forward(X, s)
    for i in range(5):
        single, _ = network_forward(X[i], s)
        assert np.allclose(out[i], single, rtol=1e-15, atol=1e-16)


@given(arrays(np.float64, (3, 2), elements=st.floats(-1, 1)), st.integers(0, 2**32 - 1),
       st.sampled_from([1.0, 0.1, 0.01]))
def test_output_finite_on_support(X, seed, eps):
    s = make_state(np.random.default_rng(seed), [5, 4, 1], 2, eps=eps, scale=4.0)
    out, _ = network_forward(X, s)
    assert np.all(np.isfinite(out))


# -- Lipschitz estimate -----------------------------------------------------


def test_zero_perturbation_is_skipped():
    s = make_state(np.random.default_rng(0), [3, 1], 2)
    assert estimate_forward_lipschitz(s, np.zeros((2, 2)), 5, 0, radius=0.0) == 0.0


def test_running_max_is_monotone_and_deterministic():
    rng = np.random.default_rng(5)
    s = make_state(rng, [4, 1], 3)
    X = rng.uniform(-1, 1, size=(10, 3))
    best, hist = estimate_forward_lipschitz(s, X, 40, 9, history=True)
    assert np.all(np.diff(hist) >= 0) and hist[-1] == best
    assert estimate_forward_lipschitz(s, X, 40, 9) == best
    with pytest.raises(PreconditionError):
        estimate_forward_lipschitz(s, X, 0, 9)


def test_depth_one_identity_within_analytic_bound():
    rng = np.random.default_rng(6)
    for eps in (1.0, 0.3, 0.05):
        s = make_state(rng, [3], 4, eps=eps, activation="identity")
        X = rng.uniform(-1, 1, size=(10, 4))
        est = estimate_forward_lipschitz(s, X, 100, 1, radius=1e-6, m_star=1.0)
        assert 0 < est <= analytic_lipschitz_bound(s.architecture, s.smoothing, 1.0)


def test_analytic_bound_recursion_by_hand():
    arch = Architecture.from_widths(2, [3, 1], "identity")
    p = SmoothingParams(0.5, bits=2)
    q, c = 2.0, np.hypot(2.0, 0.5)
    L1 = q + c * q / 0.5
    L2 = q + c * q / 0.5 + c * np.sqrt(3) * q * L1 / 0.5
    assert analytic_lipschitz_bound(arch, p, 1.0) == pytest.approx(L2, rel=1e-14)
