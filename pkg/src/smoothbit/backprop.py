"""Risk, its exact reverse-mode gradient, and finite-difference checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from smoothbit.data import Dataset
from smoothbit.errors import DomainError
from smoothbit.network import NetworkState, network_forward
from smoothbit.quant_core import quant_activation_vjp, smooth_sign_deriv

# Below this smoothing scale finite differences of the risk are expected to
# lose agreement with the analytic gradient; gradcheck reports rather than fails.
GRADCHECK_EPS_THRESHOLD = 0.05


@dataclass(frozen=True)
class LossSpec:
    """Loss ``l(u, y)`` with recorded growth/curvature constants.

    Only the squared loss ``||u - y||^2 / 2`` is provided. Its constants hold
    on the compact set of reachable outputs and targets rather than globally:
    ``grad_growth`` is L1 in ||grad_u l|| <= L1 (1 + ||u||) given ||y||_inf <= R,
    ``curvature`` is L2 (the u-Hessian is the identity).
    """

    kind: str = "squared"
    grad_growth: float = 1.0
    curvature: float = 1.0

    def __post_init__(self):
        if self.kind != "squared":
            raise ValueError(f"unsupported loss {self.kind!r}")

    @classmethod
    def squared(cls, support_bound: float = 1.0, output_dim: int = 1) -> "LossSpec":
        return cls("squared", max(1.0, support_bound * np.sqrt(output_dim)), 1.0)

    def value(self, u, y):
        d = np.asarray(u) - np.asarray(y)
        return 0.5 * np.sum(d * d, axis=-1)

    def grad(self, u, y):
        return np.asarray(u) - np.asarray(y)


@dataclass
class RiskGradient:
    grads: list[np.ndarray]
    value: float


def _mean(values):
    values = np.ascontiguousarray(values, dtype=float).ravel()
    return float(np.sum(values) / values.size)


def _check_dataset(dataset):
    if dataset is None or len(dataset) == 0:
        raise DomainError("risk needs a non-empty dataset")


def risk(s: NetworkState, dataset: Dataset, loss: LossSpec = LossSpec()) -> float:
    """Average loss of the network output over the dataset."""
    _check_dataset(dataset)
    out, _ = network_forward(dataset.X, s)
    return _mean(loss.value(out, dataset.Y))


def risk_gradient(
    s: NetworkState, dataset: Dataset, loss: LossSpec = LossSpec()
) -> RiskGradient:
    """Exact gradient of the smoothed risk with respect to every latent weight.

    Reverse accumulation over the stored forward trace. Both the quantized
    weights and the scale depend on W only through P(W), so each layer's
    gradient is P applied (P is self-adjoint) to the gradient with respect to
    the projected matrix.
    """
    _check_dataset(dataset)
    p = s.smoothing
    out, tr = network_forward(dataset.X, s)
    n_samples = len(dataset)
    value = _mean(loss.value(out, dataset.Y))
    upstream = loss.grad(out, dataset.Y) / n_samples
    grads = [None] * s.architecture.depth
    for l in reversed(range(s.architecture.depth)):
        act = s.architecture.activations[l]
        dpre = upstream * act.deriv(tr.pre[l])
        q, wt, PW, beta = tr.quantized[l], tr.wtilde[l], tr.projected[l], tr.beta[l]
        d_wt = beta * (dpre.T @ q)
        d_beta = float(np.sum(dpre * (q @ wt.T)))
        d_proj = d_wt * smooth_sign_deriv(PW, p.epsilon)
        d_proj += d_beta * (PW / np.hypot(PW, p.epsilon)) / PW.size
        grads[l] = d_proj - _mean(d_proj)
        if l > 0:
            upstream = quant_activation_vjp(tr.inputs[l], beta * (dpre @ wt), p)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite risk gradient")
    return RiskGradient(grads, value)


# ---------------------------------------------------------------------------
# Independent reference path for finite differences: straight-line forward
# pass in extended precision, sharing no code with the analytic route.


def _reference_forward(X, weights, activations, p):
    dt = np.longdouble
    eps = dt(p.epsilon)
    q_b = dt(p.q_b)
    lo, hi = -q_b + dt(p.delta), q_b - dt(p.delta)
    h = np.asarray(X, dtype=dt)
    for W, act in zip(weights, activations):
        W = np.asarray(W, dtype=dt)
        PW = W - W.sum() / dt(W.size)
        wt = np.tanh(PW / eps)
        beta = np.sqrt(PW * PW + eps * eps).sum() / dt(W.size)
        gamma = np.maximum(eps, np.abs(h).max(axis=1, keepdims=True))
        u = h * q_b / gamma
        if p.clip_variant == "logistic":
            qh = lo + (hi - lo) * special.expit((u - lo) / eps)
        else:
            upper = hi - eps * np.logaddexp(dt(0), (hi - u) / eps)
            qh = lo + eps * np.logaddexp(dt(0), (upper - lo) / eps)
        pre = beta * (qh @ wt.T)
        h = np.tanh(pre) if act.name == "tanh" else pre
    return h


def reference_risk(weights, s: NetworkState, dataset: Dataset) -> np.longdouble:
    """Squared-loss risk evaluated in long double precision."""
    out = _reference_forward(dataset.X, weights, s.architecture.activations, s.smoothing)
    d = out - np.asarray(dataset.Y, dtype=np.longdouble)
    return (d * d).sum() / np.longdouble(2 * len(dataset))


def finite_difference_gradient(
    s: NetworkState, dataset: Dataset, *, rel_step: float = 1e-6
) -> list[np.ndarray]:
    """Five-point central differences of :func:`reference_risk`.

    The step for entry (i, j) is ``rel_step * max(1, |W_ij|)``.
    """
    weights = [np.asarray(W, dtype=np.longdouble) for W in s.weights]
    grads = []
    for l, W in enumerate(weights):
        g = np.zeros(W.shape)
        for idx in np.ndindex(W.shape):
            h = np.longdouble(rel_step * max(1.0, abs(float(W[idx]))))
            vals = []
            for k in (-2, -1, 1, 2):
                Wk = W.copy()
                Wk[idx] += k * h
                trial = weights[:l] + [Wk] + weights[l + 1:]
                vals.append(reference_risk(trial, s, dataset))
            g[idx] = float((vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h))
        grads.append(g)
    return grads


def compare_gradients(analytic, numeric, *, rtol=1e-5, atol=1e-8, zero_tol=1e-10):
    """Worst-case disagreement between two gradient lists.

    Entries with |analytic| < ``zero_tol`` are compared absolutely against
    ``atol``; all others relatively against ``rtol``.

    Returns
    -------
    dict with ``max_rel`` (over relatively compared entries), ``max_abs``
    (over absolutely compared ones) and ``ok``.
    """
    max_rel = 0.0
    max_abs = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=float)
        n = np.asarray(n, dtype=float)
        small = np.abs(a) < zero_tol
        if np.any(small):
            max_abs = max(max_abs, float(np.max(np.abs(a[small] - n[small]))))
        if np.any(~small):
            rel = np.abs(a[~small] - n[~small]) / np.abs(a[~small])
            max_rel = max(max_rel, float(np.max(rel)))
    return {"max_rel": max_rel, "max_abs": max_abs, "ok": max_rel <= rtol and max_abs <= atol}


def kink_margin(s: NetworkState, X) -> float:
    """Distance of the forward pass from the non-smooth points of gamma_eps.

    For every quantizer input vector beyond the first layer this is the
    smaller of | ||h||_inf - eps | and the gap between the two largest |h_i|
    (where the argmax switches). Finite differences are only meaningful when
    the margin is well above the perturbation size.
    """
    _, tr = network_forward(X, s)
    eps = s.smoothing.epsilon
    margin = np.inf
    for h in tr.inputs[1:]:
        a = np.sort(np.abs(np.atleast_2d(h)), axis=1)
        margin = min(margin, float(np.min(np.abs(a[:, -1] - eps))))
        if a.shape[1] > 1:
            margin = min(margin, float(np.min(a[:, -1] - a[:, -2])))
    return margin


def gradient_bound_check(
    g: RiskGradient, s: NetworkState, dataset: Dataset, loss: LossSpec = LossSpec()
) -> dict:
    """Per-layer ratio max_ij |dR/dW_ij| / (1 + E||f_W(X)||).

    The ratios are the empirical counterparts of the per-layer gradient
    constants; ``finite`` reports whether every ratio is finite.
    """
    out, _ = network_forward(dataset.X, s)
    scale = 1.0 + _mean(np.linalg.norm(np.atleast_2d(out), axis=-1))
    ratios = [float(np.max(np.abs(G))) / scale for G in g.grads]
    return {
        "ratios": ratios,
        "max_ratio": max(ratios),
        "output_scale": scale,
        "finite": bool(np.all(np.isfinite(ratios))),
    }
