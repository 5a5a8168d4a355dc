"""Row-wise empirical measures, exact Wasserstein distances, and convergence studies."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize, sparse

from smoothbit.backprop import risk_gradient
from smoothbit.dynamics import ParticleTrajectory, Problem, run_problem
from smoothbit.errors import CapacityError, DomainError
from smoothbit.network import Architecture, NetworkState
from smoothbit.quant_core import TAIL_MASS, sign_deriv_integral, smooth_sign_deriv

MAX_COUPLING_SIZE = 10**6
# Atoms whose probed coordinate is closer than this to zero sit on the singular set.
SINGULAR_ATOM_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform atomic probability measure on the rows of ``points``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or len(pts) == 0:
            raise DomainError("an empirical measure needs at least one atom")
        if not np.all(np.isfinite(pts)):
            raise DomainError("atoms must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct atoms and their total masses."""
        pts, counts = np.unique(self.points, axis=0, return_counts=True)
        return pts, counts / self.n

    def integrate(self, phi) -> float:
        return float(np.mean(phi(self.points)))


def empirical_measure(s: NetworkState, layer: int) -> EmpiricalMeasure:
    """Atoms are the rows of the layer's weight matrix."""
    return EmpiricalMeasure(s.weights[layer])


# ---------------------------------------------------------------------------
# Exact optimal transport


def _quantile_cost(a, b, power):
    """Integral of |F_a^{-1}(u) - F_b^{-1}(u)|^power over u in (0, 1)."""
    a = np.sort(a)
    b = np.sort(b)
    levels = np.union1d(np.arange(1, len(a) + 1) / len(a), np.arange(1, len(b) + 1) / len(b))
    levels = np.concatenate(([0.0], levels))
    mids = 0.5 * (levels[1:] + levels[:-1])
    widths = np.diff(levels)
    ia = np.minimum((mids * len(a)).astype(int), len(a) - 1)
    ib = np.minimum((mids * len(b)).astype(int), len(b) - 1)
    return float(np.sum(widths * np.abs(a[ia] - b[ib]) ** power))


def _transport_cost(mu, nu, power):
    if mu.dim != nu.dim:
        raise DomainError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.dim == 1:
        return _quantile_cost(mu.points[:, 0], nu.points[:, 0], power)
    n, k = mu.n, nu.n
    if n * k > MAX_COUPLING_SIZE:
        raise CapacityError(
            f"exact coupling of {n} x {k} atoms exceeds the limit of {MAX_COUPLING_SIZE}"
        )
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    cost = dist**power
    if n == k:
        rows, cols = optimize.linear_sum_assignment(cost)
        return float(np.sum(cost[rows, cols]) / n)
    return _transport_lp(cost)


def _transport_lp(cost):
    n, k = cost.shape
    # plan[i, j] flattened row-major; row sums 1/n, column sums 1/k
    cell = np.arange(n * k)
    rows = np.concatenate([cell // k, n + cell % k])
    A_eq = sparse.csr_matrix(
        (np.ones(2 * n * k), (rows, np.concatenate([cell, cell]))), shape=(n + k, n * k)
    )
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(k, 1.0 / k)])
    res = optimize.linprog(
        cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs",
        # tightest tolerances HiGHS accepts
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def wasserstein1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W1 between two uniform atomic measures.

    1-D: monotone quantile coupling. Equal atom counts: optimal assignment.
    Otherwise: the transportation linear program.
    """
    return max(_transport_cost(mu, nu, 1), 0.0)


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W2, computed like :func:`wasserstein1` with squared Euclidean cost."""
    return float(np.sqrt(max(_transport_cost(mu, nu, 2), 0.0)))


# ---------------------------------------------------------------------------
# Test functions


@dataclass(frozen=True)
class TestFunction:
    """C^1 test function with a closed-form gradient.

    kinds
    -----
    ``gaussian``: amplitude * exp(-|w - center|^2 / (2 width^2))
    ``spline``: cubic B-spline bump in |w - center| / width, support radius
        ``width``, value 1 at the center
    ``quadratic``: constant + linear . w + w . matrix . w
    """

    __test__ = False  # not a pytest class

    kind: str
    center: np.ndarray | None = None
    width: float = 1.0
    amplitude: float = 1.0
    constant: float = 0.0
    linear: np.ndarray | None = None
    matrix: np.ndarray | None = None

    @classmethod
    def gaussian(cls, center, width, amplitude=1.0):
        return cls("gaussian", center=np.atleast_1d(np.asarray(center, float)),
                   width=float(width), amplitude=float(amplitude))

    @classmethod
    def spline(cls, center, radius):
        return cls("spline", center=np.atleast_1d(np.asarray(center, float)), width=float(radius))

    @classmethod
    def quadratic(cls, linear, matrix, constant=0.0):
        return cls("quadratic", constant=float(constant),
                   linear=np.atleast_1d(np.asarray(linear, float)),
                   matrix=np.atleast_2d(np.asarray(matrix, float)))

    def _offset(self, w):
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return w - self.center

    def __call__(self, w) -> np.ndarray:
        if self.kind == "gaussian":
            d = self._offset(w)
            return self.amplitude * np.exp(-np.sum(d * d, axis=-1) / (2 * self.width**2))
        if self.kind == "spline":
            r = 2.0 * np.linalg.norm(self._offset(w), axis=-1) / self.width
            return _bspline(r) / _bspline(0.0)
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return self.constant + w @ self.linear + np.einsum("ni,ij,nj->n", w, self.matrix, w)

    def grad(self, w) -> np.ndarray:
        if self.kind == "gaussian":
            d = self._offset(w)
            return -d / self.width**2 * self(w)[:, None]
        if self.kind == "spline":
            d = self._offset(w)
            norm = np.linalg.norm(d, axis=-1)
            r = 2.0 * norm / self.width
            safe = np.where(norm > 0, norm, 1.0)
            radial = _bspline_deriv(r) * 2.0 / self.width / _bspline(0.0)
            return np.where(norm[:, None] > 0, radial[:, None] * d / safe[:, None], 0.0)
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return self.linear + w @ (self.matrix + self.matrix.T)

    def sup_norm(self, bound: float | None = None) -> float:
        """sup |phi|; quadratics need the box half-width ``bound`` of the domain."""
        if self.kind == "gaussian":
            return abs(self.amplitude)
        if self.kind == "spline":
            return 1.0
        if bound is None:
            raise DomainError("a quadratic is only bounded on a compact box")
        return (abs(self.constant) + bound * np.sum(np.abs(self.linear))
                + bound**2 * np.sum(np.abs(self.matrix)))


def _bspline(r):
    r = np.abs(np.asarray(r, dtype=float))
    inner = 2.0 / 3.0 - r**2 + 0.5 * r**3
    outer = (2.0 - r) ** 3 / 6.0
    return np.where(r < 1, inner, np.where(r < 2, outer, 0.0))


def _bspline_deriv(r):
    r = np.asarray(r, dtype=float)
    inner = -2.0 * r + 1.5 * r**2
    outer = -0.5 * (2.0 - r) ** 2
    return np.where(r < 1, inner, np.where(r < 2, outer, 0.0))


# ---------------------------------------------------------------------------
# Weak-form continuity residual


def continuity_residual(
    traj: ParticleTrajectory, layer: int, phi: TestFunction, t: float, dataset, loss
) -> dict:
    """Mismatch between d/dt int phi dmu and int grad(phi) . v dmu at time ``t``.

    The time derivative is a central difference over the neighbouring
    snapshots; at the ends of the record a one-sided difference is used and
    ``one_sided`` is set. ``v`` is the finite-width velocity proxy, i.e. the
    negative per-row risk gradient at the snapshot.
    """
    idx = traj.index_at(t)
    lo = max(idx - 1, 0)
    hi = min(idx + 1, len(traj.steps) - 1)
    if lo == hi:
        raise DomainError("need at least two snapshots to difference in time")
    times = traj.times

    def mass(i):
        return float(np.mean(phi(traj.snapshots[i][layer])))

    dmass = (mass(hi) - mass(lo)) / (times[hi] - times[lo])
    state = traj.state_at(idx)
    v = -risk_gradient(state, dataset, loss).grads[layer]
    transport = float(np.mean(np.sum(phi.grad(state.weights[layer]) * v, axis=-1)))
    return {
        "residual": abs(dmass - transport),
        "time": times[idx],
        "dmass_dt": dmass,
        "transport": transport,
        "one_sided": lo == idx or hi == idx,
    }


# ---------------------------------------------------------------------------
# Singular integrals against row measures


def probed_coordinate(mu: EmpiricalMeasure, column: int) -> np.ndarray:
    """Entry ``column`` of P applied to the matrix whose rows are the atoms.

    The projection subtracts the mean over all atom coordinates, so each atom
    contributes z_k = w_k[column] - mean(W).
    """
    if not 0 <= column < mu.dim:
        raise IndexError(f"column {column} out of range for dimension {mu.dim}")
    pts = mu.points
    return pts[:, column] - np.sum(pts.ravel()) / pts.size


def _smoothed_conditional(z_atoms, phi_atoms, bandwidth):
    """Nadaraya-Watson estimate of E[phi | z] with a Gaussian kernel.

    A convex combination of the atom values at every z, so it never exceeds
    max |phi_atoms|.
    """

    def psi(z):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        logw = -0.5 * ((z[:, None] - z_atoms[None, :]) / bandwidth) ** 2
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        return (w @ phi_atoms) / w.sum(axis=1)

    def scalar_psi(z):
        out = psi(z)
        return out if np.ndim(z) else float(out[0])

    return scalar_psi


def singular_integral_check(
    mu: EmpiricalMeasure,
    phi,
    column: int,
    eps_grid,
    *,
    phi_sup: float | None = None,
    bandwidth: float | None = None,
) -> dict:
    """Check |int phi sgn'_eps(P(w)_{., column}) d mu| <= 2 sup|phi| on an eps grid.

    Two forms are computed per eps:

    ``pointwise``: (1/n) sum_k phi(w_k) sgn'_eps(z_k). Not bounded uniformly
    in eps for atomic measures (an atom at z = 0 contributes 1/eps), so it is
    reported but never asserted.

    ``quadrature``: int psi(z) sgn'_eps(z) dz where psi is the kernel-smoothed
    conditional expectation of phi given the probed coordinate. This is the
    form that satisfies the 2 sup|phi| bound, and ``ok`` refers to it.
    """
    z = probed_coordinate(mu, column)
    phi_atoms = np.asarray(phi(mu.points), dtype=float)
    sup = float(np.max(np.abs(phi_atoms))) if phi_sup is None else float(phi_sup)
    if bandwidth is None:
        spread = float(np.std(z))
        bandwidth = 1.06 * spread * mu.n ** (-0.2) if spread > 0 else 0.1
    psi = _smoothed_conditional(z, phi_atoms, bandwidth)
    bound = 2.0 * sup
    rows = []
    for eps in eps_grid:
        pointwise = float(np.mean(phi_atoms * smooth_sign_deriv(z, eps)))
        quad, quad_err = sign_deriv_integral(psi, eps)
        rows.append({
            "epsilon": float(eps),
            "pointwise": pointwise,
            "quadrature": quad,
            "quad_error": quad_err + sup * TAIL_MASS,
            "within_bound": abs(quad) <= bound * (1 + 1e-9),
        })
    singular = np.flatnonzero(np.abs(z) < SINGULAR_ATOM_TOL)
    return {
        "bound": bound,
        "bandwidth": bandwidth,
        "min_abs_coordinate": float(np.min(np.abs(z))),
        "singular_atoms": singular.tolist(),
        "rows": rows,
        "ok": all(r["within_bound"] for r in rows),
    }


# ---------------------------------------------------------------------------
# Sweeps

DEFAULT_TIME_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


def default_comparison_times(horizon: float) -> list[float]:
    return [f * horizon for f in DEFAULT_TIME_FRACTIONS]


def _steps_for(times, eta):
    return [int(np.floor(t / eta + 1e-9)) for t in times]


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class SweepResult:
    """Long-format table of sweep measurements.

    Each row is a dict with keys metric, layer, time, epsilon, width, value,
    tag (``measured`` | ``diagnostic``).
    """

    rows: list[dict]
    trajectories: list[ParticleTrajectory]
    velocity_sup: list[float]

    def values(self, metric: str) -> list[float]:
        return [r["value"] for r in self.rows if r["metric"] == metric]


def _row(metric, value, tag, layer=None, time=None, epsilon=None, width=None):
    return {"metric": metric, "layer": layer, "time": time, "epsilon": epsilon,
            "width": width, "value": float(value), "tag": tag}


def eps_sweep(problem: Problem, eps_list, times=None, *, workers: int = 1) -> SweepResult:
    """Run one trajectory per smoothing scale and compare consecutive ones.

    All runs share the architecture, dataset, seed and initial weights. For
    every adjacent pair in ``eps_list`` and every comparison time the W1 and
    W2 distances between the layer measures are recorded, together with the
    velocity sup of each run. No convergence rate is asserted.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b > a for a, b in zip(eps_list, eps_list[1:])):
        raise DomainError("eps list must be non-increasing")
    times = default_comparison_times(problem.run.horizon) if times is None else list(times)
    record = _steps_for(times, problem.run.eta)

    def run(eps):
        return run_problem(
            dataclasses.replace(problem, smoothing=problem.smoothing.with_epsilon(eps)),
            record_steps=record,
        )

    trajs = _map(run, eps_list, workers)
    rows = []
    vsup = []
    for eps, traj in zip(eps_list, trajs):
        v = traj.velocity_sup()
        vsup.append(v)
        rows.append(_row("velocity_sup", v, "measured", epsilon=eps))
    for (e0, t0), (e1, t1) in zip(zip(eps_list, trajs), zip(eps_list[1:], trajs[1:])):
        for t in times:
            i0, i1 = t0.index_at(t), t1.index_at(t)
            for layer in range(problem.architecture.depth):
                mu = EmpiricalMeasure(t0.snapshots[i0][layer])
                nu = EmpiricalMeasure(t1.snapshots[i1][layer])
                rows.append(_row("w1_consecutive_eps", wasserstein1(mu, nu), "diagnostic",
                                 layer=layer, time=t, epsilon=e1))
                rows.append(_row("w2_consecutive_eps", wasserstein2(mu, nu), "diagnostic",
                                 layer=layer, time=t, epsilon=e1))
    return SweepResult(rows, trajs, vsup)


def with_hidden_width(arch: Architecture, width: int) -> Architecture:
    """Same depth and activations with every hidden layer set to ``width``."""
    widths = [width] * (arch.depth - 1) + [arch.output_dim]
    return Architecture.from_widths(arch.input_dim, widths, list(arch.activations))


def width_sweep(problem: Problem, widths, times=None, *, workers: int = 1) -> SweepResult:
    """W1 between consecutive-width layer measures at each comparison time.

    Initial weights are nested: every width draws from the envelope of the
    largest width and keeps the leading block. Only layers whose row dimension
    does not depend on the width (the first layer, and any layer whose fan-in
    is fixed) can be compared; the others are skipped.
    """
    widths = [int(w) for w in widths]
    if any(b < a for a, b in zip(widths, widths[1:])):
        raise DomainError("widths must be non-decreasing")
    times = default_comparison_times(problem.run.horizon) if times is None else list(times)
    record = _steps_for(times, problem.run.eta)
    archs = [with_hidden_width(problem.architecture, w) for w in widths]
    envelope = archs[-1]

    def run(arch):
        return run_problem(dataclasses.replace(problem, architecture=arch),
                           envelope=envelope, record_steps=record)

    trajs = _map(run, archs, workers)
    rows = []
    vsup = []
    for w, traj in zip(widths, trajs):
        v = traj.velocity_sup()
        vsup.append(v)
        rows.append(_row("velocity_sup", v, "measured", width=w))
    for (w0, t0), (w1, t1) in zip(zip(widths, trajs), zip(widths[1:], trajs[1:])):
        for t in times:
            i0, i1 = t0.index_at(t), t1.index_at(t)
            for layer in range(problem.architecture.depth):
                a, b = t0.snapshots[i0][layer], t1.snapshots[i1][layer]
                if a.shape[1] != b.shape[1]:
                    continue
                d = wasserstein1(EmpiricalMeasure(a), EmpiricalMeasure(b))
                rows.append(_row("w1_consecutive_width", d, "diagnostic",
                                 layer=layer, time=t, width=w1))
    return SweepResult(rows, trajs, vsup)
