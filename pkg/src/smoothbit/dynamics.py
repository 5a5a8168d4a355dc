"""Projected full-batch gradient descent on the latent weights.

Each step applies ``W <- clip(W - eta * grad R(W), -M*, M*)`` to every layer
simultaneously. Rows of a layer are treated as particles; the trajectory keeps
enough per-step bookkeeping to audit the layer-mean identity, the clamp, and
the Lipschitz-in-time behaviour of the row measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from smoothbit.backprop import LossSpec, risk_gradient
from smoothbit.constraints import layer_mean
from smoothbit.data import Dataset
from smoothbit.errors import DomainError, NumericalError
from smoothbit.network import Architecture, NetworkState
from smoothbit.quant_core import SmoothingParams

# Guards the step count against representation error, e.g. 0.3 / 0.1.
_STEP_SLACK = 1e-9


@dataclass(frozen=True)
class RunConfig:
    """Step size, horizon, clamp radius, init scale, seed and snapshot stride."""

    eta: float
    horizon: float
    m_star: float
    init_scale: float
    seed: int = 0
    stride: int = 1

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError("eta must be positive")
        if not self.horizon >= 0:
            raise DomainError("horizon must be non-negative")
        if not self.m_star > 0:
            raise DomainError("m_star must be positive")
        if not 0 <= self.init_scale <= self.m_star:
            raise DomainError("init scale M must satisfy 0 <= M <= M*")
        if self.stride < 1:
            raise DomainError("stride must be a positive integer")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self) -> int:
        """Smallest k with k * eta >= T, so the run covers [0, T]."""
        return max(0, int(math.ceil(self.horizon / self.eta - _STEP_SLACK)))


@dataclass
class StepReport:
    """Per-layer diagnostics of one projected gradient step.

    ``mean_after`` is the layer mean after the clamp; ``drift`` is the change
    of the layer mean before the clamp is applied.
    """

    clipped: list[bool]
    mean_before: list[float]
    mean_after: list[float]
    grad_mean: list[float]
    velocity_sup: list[float]
    velocity_rms: list[float]
    drift: list[float]
    risk: float

    @property
    def any_clipped(self) -> bool:
        return any(self.clipped)

    def mean_identity_residuals(self, eta: float) -> list[float]:
        """|Psi(W_{k+1}) - (Psi(W_k) - eta Psi(grad))| for each layer."""
        return [
            abs(after - (before - eta * gm))
            for before, after, gm in zip(self.mean_before, self.mean_after, self.grad_mean)
        ]


@dataclass
class ParticleTrajectory:
    """Recorded snapshots plus the full list of step reports."""

    architecture: Architecture
    smoothing: SmoothingParams
    eta: float
    m_star: float
    steps: list[int] = field(default_factory=list)
    snapshots: list[list[np.ndarray]] = field(default_factory=list)
    reports: list[StepReport] = field(default_factory=list)

    @property
    def times(self) -> list[float]:
        return [k * self.eta for k in self.steps]

    @property
    def layer_means(self) -> list[list[float]]:
        return [[layer_mean(W) for W in snap] for snap in self.snapshots]

    @property
    def clip_events(self) -> list[bool]:
        return [r.any_clipped for r in self.reports]

    def state_at(self, index: int) -> NetworkState:
        return NetworkState(self.architecture, self.snapshots[index], self.smoothing)

    def index_at(self, t: float) -> int:
        """Last recorded snapshot with k * eta <= t (piecewise-constant interpolant)."""
        k = int(math.floor(t / self.eta + _STEP_SLACK))
        idx = int(np.searchsorted(self.steps, k, side="right")) - 1
        if idx < 0:
            raise DomainError(f"time {t} precedes the first snapshot")
        return idx

    def velocity_sup(self, layer: int | None = None) -> float:
        """Largest row-gradient norm seen on any step (optionally one layer)."""
        if not self.reports:
            return 0.0
        if layer is None:
            return max(max(r.velocity_sup) for r in self.reports)
        return max(r.velocity_sup[layer] for r in self.reports)

    def velocity_rms_sup(self) -> float:
        """Largest root-mean-square row-gradient norm over steps and layers."""
        if not self.reports:
            return 0.0
        return max(max(r.velocity_rms) for r in self.reports)


@dataclass(frozen=True)
class Problem:
    """Everything needed to run one trajectory."""

    architecture: Architecture
    smoothing: SmoothingParams
    dataset: Dataset
    loss: LossSpec
    run: RunConfig


def init_weights(
    arch: Architecture, cfg: RunConfig, smoothing: SmoothingParams, envelope=None
) -> NetworkState:
    """I.i.d. uniform entries on [-M, M].

    Layer ``l`` draws from its own generator seeded by ``(seed, l)``. When an
    ``envelope`` architecture is given, a matrix of the envelope's shape is
    drawn and its top-left block kept, so narrower networks are prefixes of
    wider ones.
    """
    shapes = arch.weight_shapes
    big = shapes if envelope is None else envelope.weight_shapes
    M = cfg.init_scale
    weights = []
    for l, ((n, m), (N, K)) in enumerate(zip(shapes, big)):
        if n > N or m > K:
            raise DomainError("envelope must be at least as large as the architecture")
        rng = np.random.default_rng([cfg.seed, l])
        block = rng.uniform(-1.0, 1.0, size=(N, K))[:n, :m]
        weights.append(M * block)
    return NetworkState(arch, weights, smoothing)


def _row_norm_sup(G):
    return float(np.max(np.sqrt(np.sum(G * G, axis=1))))


def gd_step(
    s: NetworkState, dataset: Dataset, loss: LossSpec, cfg: RunConfig
) -> tuple[NetworkState, StepReport]:
    """One projected step ``W <- clip(W - eta * grad, -M*, M*)`` on all layers."""
    try:
        g = risk_gradient(s, dataset, loss)
    except FloatingPointError as exc:
        raise NumericalError(str(exc), state=s.replace()) from exc
    new, clipped, before, after, gmean, vsup, vrms, drift = [], [], [], [], [], [], [], []
    for W, G in zip(s.weights, g.grads):
        step = W - cfg.eta * G
        out = np.clip(step, -cfg.m_star, cfg.m_star)
        new.append(out)
        clipped.append(bool(np.any(out != step)))
        before.append(layer_mean(W))
        after.append(layer_mean(out))
        drift.append(layer_mean(step) - before[-1])
        gmean.append(layer_mean(G))
        vsup.append(_row_norm_sup(G))
        vrms.append(float(np.sqrt(np.sum(G * G) / G.shape[0])))
    report = StepReport(clipped, before, after, gmean, vsup, vrms, drift, g.value)
    return s.replace(weights=new), report


def run_trajectory(
    arch: Architecture,
    dataset: Dataset,
    loss: LossSpec,
    cfg: RunConfig,
    smoothing: SmoothingParams,
    *,
    initial: NetworkState | None = None,
    record_steps=(),
) -> ParticleTrajectory:
    """Iterate :func:`gd_step` for k = 0 .. ceil(T / eta) - 1.

    Snapshots are kept at k = 0, at every multiple of ``cfg.stride``, at any
    step listed in ``record_steps``, and at the final step.
    """
    s = initial if initial is not None else init_weights(arch, cfg, smoothing)
    n_steps = cfg.n_steps
    wanted = {0, n_steps, *(int(k) for k in record_steps)}
    traj = ParticleTrajectory(arch, smoothing, cfg.eta, cfg.m_star)
    traj.steps.append(0)
    traj.snapshots.append([W.copy() for W in s.weights])
    for k in range(1, n_steps + 1):
        s, report = gd_step(s, dataset, loss, cfg)
        traj.reports.append(report)
        if k % cfg.stride == 0 or k in wanted:
            traj.steps.append(k)
            traj.snapshots.append([W.copy() for W in s.weights])
    return traj


def run_problem(problem: Problem, *, envelope=None, record_steps=()) -> ParticleTrajectory:
    initial = init_weights(problem.architecture, problem.run, problem.smoothing, envelope)
    return run_trajectory(
        problem.architecture,
        problem.dataset,
        problem.loss,
        problem.run,
        problem.smoothing,
        initial=initial,
        record_steps=record_steps,
    )


def velocity_field(s: NetworkState, row, dataset: Dataset, loss: LossSpec) -> np.ndarray:
    """Finite-width velocity proxy for particle ``row = (layer, i)``.

    The negative gradient of the risk with respect to that row, standing in
    for the gradient of the functional derivative of the risk.
    """
    l, i = row
    if not 0 <= l < s.architecture.depth:
        raise IndexError(f"layer {l} out of range")
    n_rows = s.weights[l].shape[0]
    if not 0 <= i < n_rows:
        raise IndexError(f"row {i} out of range for layer {l} with {n_rows} rows")
    return -risk_gradient(s, dataset, loss).grads[l][i]
