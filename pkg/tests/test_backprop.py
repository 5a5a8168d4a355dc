import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_dataset, make_state
from smoothbit.backprop import (
    LossSpec,
    compare_gradients,
    finite_difference_gradient,
    gradient_bound_check,
    kink_margin,
    reference_risk,
    risk,
    risk_gradient,
)
from smoothbit.constraints import layer_mean
from smoothbit.data import Dataset
from smoothbit.errors import DomainError
from smoothbit.network import Architecture, NetworkState, network_forward
from smoothbit.quant_core import SmoothingParams, quant_activation


def _instance(seed, widths, d, eps, samples=6):
    rng = np.random.default_rng(seed)
    return make_state(rng, widths, d, eps=eps), make_dataset(rng, samples, d, widths[-1])


# -- risk -------------------------------------------------------------------


def test_zero_output_zero_targets():
    arch = Architecture.from_widths(2, [3, 1])
    s = NetworkState(arch, [np.full(sh, 0.4) for sh in arch.weight_shapes], SmoothingParams(0.5))
    ds = Dataset(np.array([[0.2, -0.1], [0.5, 0.5]]), np.zeros((2, 1)), 1.0)
    assert risk(s, ds) == 0.0


def test_single_sample_is_its_loss():
    s, _ = _instance(0, [3, 1], 2, 0.5)
    ds = Dataset(np.array([[0.3, -0.6]]), np.array([[0.25]]), 1.0)
    out, _ = network_forward(ds.X, s)
    assert risk(s, ds) == 0.5 * (out[0, 0] - 0.25) ** 2


def test_two_sample_mean():
    s, _ = _instance(1, [2, 1], 2, 0.5)
    X = np.array([[0.3, -0.6], [-0.9, 0.1]])
    Y = np.array([[0.25], [-0.5]])
    out, _ = network_forward(X, s)
    expected = (0.5 * (out[0, 0] - 0.25) ** 2 + 0.5 * (out[1, 0] + 0.5) ** 2) / 2
    assert risk(s, Dataset(X, Y, 1.0)) == pytest.approx(expected, rel=1e-15)


def test_missing_dataset_rejected():
    s, _ = _instance(0, [2, 1], 2, 0.5)
    with pytest.raises(DomainError):
        risk(s, None)
    with pytest.raises(DomainError):
        Dataset(np.zeros((0, 2)), np.zeros((0, 1)), 1.0)


def test_reference_path_agrees_with_forward():
    s, ds = _instance(2, [4, 3, 1], 3, 0.3)
    assert float(reference_risk(s.weights, s, ds)) == pytest.approx(risk(s, ds), rel=1e-13)


# -- gradient ---------------------------------------------------------------


@pytest.mark.parametrize("eps", [1.0, 0.3, 0.05])
def test_gradient_matches_finite_differences_two_layer_width_three(eps):
    for seed in range(4):
        s, ds = _instance(seed, [3, 1], 3, eps)
        if kink_margin(s, ds.X) < 1e-6:
            continue
        cmp = compare_gradients(risk_gradient(s, ds).grads, finite_difference_gradient(s, ds))
        assert cmp["ok"], cmp


@pytest.mark.parametrize("variant", ["logistic", "interior"])
def test_gradient_matches_finite_differences_depth_three(variant):
    rng = np.random.default_rng(7)
    arch = Architecture.from_widths(2, [4, 3, 2])
    p = SmoothingParams(0.3, bits=3, delta=0.25, clip_variant=variant)
    s = NetworkState(arch, [rng.uniform(-1, 1, size=sh) for sh in arch.weight_shapes], p)
    ds = make_dataset(rng, 5, 2, 2)
    assert kink_margin(s, ds.X) > 1e-6
    cmp = compare_gradients(risk_gradient(s, ds).grads, finite_difference_gradient(s, ds))
    assert cmp["ok"], cmp


def test_gradient_at_constant_weights():
    # P(W) = 0 makes the scale term vanish; only the tanh' = 1/eps path remains
    arch = Architecture.from_widths(2, [3, 1])
    s = NetworkState(arch, [np.full((3, 2), 0.3), np.full((1, 3), -0.2)], SmoothingParams(0.5))
    ds = make_dataset(np.random.default_rng(3), 4, 2)
    cmp = compare_gradients(risk_gradient(s, ds).grads, finite_difference_gradient(s, ds))
    assert cmp["ok"], cmp


def test_closed_form_single_layer_identity():
    """f = beta * t * (q1 - q2) for W = [w1, w2], written out by hand.

    With d = (w1 - w2) / 2 we have P(W) = [d, -d], Wtilde = [t, -t] with
    t = tanh(d / eps), beta = sqrt(d^2 + eps^2); hence
    df/dd = (q1 - q2) * (beta sech^2(d/eps) / eps + t d / beta)
    and dR/dw1 = -dR/dw2 = (f - y) * df/dd / 2.
    """
    eps = 0.4
    p = SmoothingParams(eps)
    w1, w2 = 0.7, -0.1
    x, y = np.array([0.6, -0.3]), 0.2
    arch = Architecture.from_widths(2, [1], "identity")
    s = NetworkState(arch, [np.array([[w1, w2]])], p)
    q1, q2 = quant_activation(x, p)
    d = (w1 - w2) / 2
    t = np.tanh(d / eps)
    beta = np.hypot(d, eps)
    f = beta * t * (q1 - q2)
    dfdd = (q1 - q2) * (beta * (1 - t**2) / eps + t * d / beta)
    g = (f - y) * dfdd / 2
    grad = risk_gradient(s, Dataset(x[None, :], np.array([[y]]), 1.0)).grads[0]
    assert grad[0] == pytest.approx([g, -g], rel=1e-13)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 0.3, 0.05]))
def test_gradient_has_zero_layer_mean(seed, eps):
    s, ds = _instance(seed, [4, 3, 1], 3, eps)
    for G in risk_gradient(s, ds).grads:
        scale = max(1e-300, float(np.max(np.abs(G))))
        assert abs(layer_mean(G)) <= 1e-14 * scale
        # mean computed two ways
        assert abs(float(np.mean(G)) - layer_mean(G)) <= 1e-14 * scale


def test_gradient_shapes_and_value():
    s, ds = _instance(4, [3, 2], 2, 0.5)
    g = risk_gradient(s, ds)
    assert [G.shape for G in g.grads] == [W.shape for W in s.weights]
    assert g.value == risk(s, ds)


# -- comparison helpers -----------------------------------------------------


def test_compare_gradients_switches_to_absolute_near_zero():
    a = [np.array([1.0, 1e-12])]
    n = [np.array([1.0 + 5e-6, 5e-9])]
    out = compare_gradients(a, n)
    assert out["max_rel"] == pytest.approx(5e-6)
    assert out["max_abs"] == pytest.approx(5e-9 - 1e-12)
    assert out["ok"]
    assert not compare_gradients(a, [np.array([1.0 + 2e-5, 0.0])])["ok"]


def test_kink_margin_detects_ties():
    arch = Architecture.from_widths(1, [2, 1])
    # identical hidden rows give tied activations
    s = NetworkState(arch, [np.array([[0.5], [0.5]]), np.array([[0.3, -0.3]])],
                     SmoothingParams(0.5))
    assert kink_margin(s, np.array([[0.7]])) == 0.0


# -- gradient bound diagnostic ----------------------------------------------


def test_bound_ratio_zero_at_stationary_state():
    arch = Architecture.from_widths(2, [3, 1])
    s = NetworkState(arch, [np.full(sh, 0.4) for sh in arch.weight_shapes], SmoothingParams(0.5))
    ds = Dataset(np.array([[0.2, -0.1]]), np.zeros((1, 1)), 1.0)
    rep = gradient_bound_check(risk_gradient(s, ds), s, ds)
    assert rep["max_ratio"] == 0.0 and rep["finite"]


def test_bound_ratios_finite_over_random_states():
    rng = np.random.default_rng(8)
    for _ in range(100):
        eps = float(rng.choice([1.0, 0.3, 0.05]))
        s = make_state(rng, [4, 1], 2, eps=eps, scale=4.0)
        ds = make_dataset(rng, 8, 2)
        rep = gradient_bound_check(risk_gradient(s, ds), s, ds)
        assert rep["finite"]
        assert len(rep["ratios"]) == 2


def test_bound_ratio_recorded_across_eps():
    rng = np.random.default_rng(9)
    base = make_state(rng, [4, 1], 2)
    ds = make_dataset(rng, 8, 2)
    ratios = []
    for eps in (0.05, 0.1, 0.3, 1.0):
        s = base.replace(smoothing=SmoothingParams(eps))
        ratios.append(gradient_bound_check(risk_gradient(s, ds), s, ds)["max_ratio"])
    # recorded only: monotonicity in eps is not a guaranteed property
    assert all(np.isfinite(ratios))


def test_loss_constants():
    loss = LossSpec.squared(2.0, 4)
    assert loss.grad_growth == 4.0 and loss.curvature == 1.0
    with pytest.raises(ValueError):
        LossSpec("hinge")
