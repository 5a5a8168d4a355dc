"""Smoothed BitLinear layers and the L-layer forward recursion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from smoothbit.constraints import zero_mean_project
from smoothbit.errors import PreconditionError, ShapeError
from smoothbit.quant_core import (
    SmoothingParams,
    quant_activation,
    smooth_abs,
    smooth_sign,
)


@dataclass(frozen=True)
class Activation:
    """A componentwise C^2 activation with its recorded regularity constants.

    ``lipschitz`` bounds |sigma'|, ``curvature`` bounds |sigma''| and
    ``growth`` satisfies |sigma(z)| <= growth * (1 + |z|).
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    deriv: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lipschitz: float
    curvature: float
    growth: float


def _tanh_deriv(z):
    return 1.0 - np.tanh(z) ** 2


TANH = Activation(
    "tanh",
    np.tanh,
    _tanh_deriv,
    lipschitz=1.0,
    # max |d^2/dz^2 tanh| = 4 / (3 sqrt 3), attained at tanh(z) = 1/sqrt 3
    curvature=4.0 / (3.0 * np.sqrt(3.0)),
    growth=1.0,
)
IDENTITY = Activation(
    "identity",
    lambda z: np.array(z, dtype=float, copy=True),
    lambda z: np.ones_like(z, dtype=float),
    lipschitz=1.0,
    curvature=0.0,
    growth=1.0,
)
ACTIVATIONS = {a.name: a for a in (TANH, IDENTITY)}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}")


@dataclass(frozen=True)
class Architecture:
    """Layer shapes as (fan_in, width) pairs plus one activation per layer."""

    dims: tuple[tuple[int, int], ...]
    activations: tuple[Activation, ...]

    def __post_init__(self):
        dims = tuple((int(m), int(n)) for m, n in self.dims)
        if not dims:
            raise ShapeError("architecture needs at least one layer")
        if any(m < 1 or n < 1 for m, n in dims):
            raise ShapeError(f"layer dimensions must be positive: {dims}")
        for (_, n_prev), (m, _) in zip(dims, dims[1:]):
            if n_prev != m:
                raise ShapeError(f"width {n_prev} does not match next fan-in {m}")
        if len(self.activations) != len(dims):
            raise ShapeError("need exactly one activation per layer")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "activations", tuple(self.activations))

    @classmethod
    def from_widths(cls, input_dim: int, widths: Sequence[int], activation="tanh"):
        """Build from the input dimension and the list of layer widths.

        ``activation`` is either one name for all layers or one per layer.
        """
        fan_in = [input_dim, *widths[:-1]]
        names = [activation] * len(widths) if isinstance(activation, str) else activation
        acts = tuple(a if isinstance(a, Activation) else get_activation(a) for a in names)
        return cls(tuple(zip(fan_in, widths)), acts)

    @property
    def depth(self) -> int:
        return len(self.dims)

    @property
    def input_dim(self) -> int:
        return self.dims[0][0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1][1]

    @property
    def weight_shapes(self) -> list[tuple[int, int]]:
        return [(n, m) for m, n in self.dims]


@dataclass
class NetworkState:
    architecture: Architecture
    weights: list[np.ndarray]
    smoothing: SmoothingParams

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        shapes = [W.shape for W in self.weights]
        if shapes != self.architecture.weight_shapes:
            raise ShapeError(
                f"weight shapes {shapes} do not match architecture "
                f"{self.architecture.weight_shapes}"
            )

    def replace(self, weights=None, smoothing=None) -> "NetworkState":
        return NetworkState(
            self.architecture,
            [W.copy() for W in (self.weights if weights is None else weights)],
            self.smoothing if smoothing is None else smoothing,
        )

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(W))) for W in self.weights)


@dataclass
class ForwardTrace:
    """Intermediate quantities of one forward pass over a batch.

    Lists are indexed by layer (0-based). ``inputs[l]`` is the layer input
    h^(l-1), ``quantized[l]`` its smooth quantization, ``pre[l]`` the
    pre-activation and ``outputs[l]`` = activation(pre[l]).
    """

    inputs: list[np.ndarray] = field(default_factory=list)
    quantized: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    projected: list[np.ndarray] = field(default_factory=list)
    wtilde: list[np.ndarray] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)


def beta_scale(W, p: SmoothingParams) -> float:
    """Mean smoothed absolute value of the zero-mean projected weights."""
    PW = zero_mean_project(W)
    return float(np.sum(smooth_abs(PW, p.epsilon).ravel()) / PW.size)


def quantize_weights(W, p: SmoothingParams) -> np.ndarray:
    """tanh(P(W) / eps) entrywise; all entries lie in (-1, 1)."""
    return np.asarray(smooth_sign(zero_mean_project(W), p.epsilon))


def _layer(h, W, p, activation, trace=None):
    W = np.asarray(W, dtype=float)
    if h.shape[-1] != W.shape[1]:
        raise ShapeError(f"input dimension {h.shape[-1]} != fan-in {W.shape[1]}")
    PW = zero_mean_project(W)
    wt = np.tanh(PW / p.epsilon)
    beta = float(np.sum(smooth_abs(PW, p.epsilon).ravel()) / PW.size)
    q = quant_activation(h, p)
    pre = beta * (q @ wt.T)
    out = activation.fn(pre)
    if trace is not None:
        trace.inputs.append(h)
        trace.quantized.append(q)
        trace.pre.append(pre)
        trace.outputs.append(out)
        trace.projected.append(PW)
        trace.wtilde.append(wt)
        trace.beta.append(beta)
    return out


def layer_forward(x, W, p: SmoothingParams, activation: Activation = TANH) -> np.ndarray:
    """activation(beta(W) * Wtilde(W) @ quant_activation(x)).

    ``x`` may be a single vector or a batch with one sample per row.
    """
    x = np.asarray(x, dtype=float)
    return _layer(x, W, p, activation)


def network_forward(x, s: NetworkState) -> tuple[np.ndarray, ForwardTrace]:
    """Run the recursion h^(0) = x, h^(l) = layer_l(h^(l-1)) and keep the trace."""
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != s.architecture.input_dim:
        raise ShapeError(
            f"input dimension {h.shape[-1]} != network input {s.architecture.input_dim}"
        )
    trace = ForwardTrace()
    for W, act in zip(s.weights, s.architecture.activations):
        h = _layer(h, W, s.smoothing, act, trace)
    return h, trace


def analytic_lipschitz_bound(
    architecture: Architecture, p: SmoothingParams, m_star: float
) -> float:
    """Recursive worst-case constant for ||f_W(x) - f_What(x)|| / sum_l ||dW_l||_F.

    Starts from L_0 = 0 and applies, with C_beta = sqrt((2 M*)^2 + eps^2),

        L_l = C_l * max(Q + C_beta Q / eps + C_beta sqrt(n m) Q L_{l-1} / eps,
                        C_beta sqrt(n m) Q L_{l-1} / eps)
    """
    eps, q = p.epsilon, p.q_b
    c_beta = np.hypot(2.0 * m_star, eps)
    bound = 0.0
    for (m, n), act in zip(architecture.dims, architecture.activations):
        carry = c_beta * np.sqrt(n * m) * q * bound / eps
        bound = act.lipschitz * max(q + c_beta * q / eps + carry, carry)
    return float(bound)


def _sphere_direction(rng, shapes):
    parts = [rng.standard_normal(shape) for shape in shapes]
    norm = np.sqrt(sum(float(np.sum(d * d)) for d in parts))
    return [d / norm for d in parts]


def estimate_forward_lipschitz(
    s: NetworkState,
    X,
    trials: int,
    seed: int,
    *,
    radius: float = 1e-3,
    m_star: float | None = None,
    history: bool = False,
):
    """Largest observed ||f_W(x) - f_What(x)||_2 / sum_l ||W_l - What_l||_F.

    ``What`` is the state perturbed along a direction drawn uniformly from the
    joint Frobenius sphere of the given radius (then clamped to the box of
    half-width ``m_star`` when provided); ``x`` is a random row of ``X``.
    Pairs whose clamped perturbation vanishes are skipped.

    With ``history=True`` the running maximum after each trial is returned as
    well, which makes monotonicity in ``trials`` directly observable.
    """
    if trials < 1:
        raise PreconditionError("trials must be at least 1")
    X = np.atleast_2d(np.asarray(getattr(X, "X", X), dtype=float))
    rng = np.random.default_rng(seed)
    shapes = [W.shape for W in s.weights]
    best = 0.0
    running = []
    for _ in range(trials):
        x = X[rng.integers(len(X))]
        direction = _sphere_direction(rng, shapes)
        perturbed = [W + radius * d for W, d in zip(s.weights, direction)]
        if m_star is not None:
            perturbed = [np.clip(W, -m_star, m_star) for W in perturbed]
        denom = sum(float(np.linalg.norm(W - V)) for W, V in zip(s.weights, perturbed))
        if denom > 0.0:
            f0, _ = network_forward(x, s)
            f1, _ = network_forward(x, s.replace(weights=perturbed))
            best = max(best, float(np.linalg.norm(f0 - f1)) / denom)
        running.append(best)
    if history:
        return best, running
    return best
