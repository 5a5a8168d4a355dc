"""Invariant suites run by the ``verify`` command.

Each suite draws its random instances from generators seeded by
``(seed, suite_index, ...)``, returns long-format result rows and a single
pass/fail verdict. Rows carry no timings, so the emitted CSV is a pure
function of the config. Suites numbered 1 to 12 correspond to the acceptance
criteria listed in the README; the remaining suites cover further module
invariants.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from smoothbit.backprop import (
    GRADCHECK_EPS_THRESHOLD,
    LossSpec,
    compare_gradients,
    finite_difference_gradient,
    gradient_bound_check,
    kink_margin,
    risk_gradient,
)
from smoothbit.constraints import frobenius_inner, layer_mean, zero_mean_project
from smoothbit.data import Dataset
from smoothbit.dynamics import Problem, RunConfig, run_problem
from smoothbit.meanfield import (
    EmpiricalMeasure,
    TestFunction,
    continuity_residual,
    eps_sweep,
    singular_integral_check,
    wasserstein1,
    wasserstein2,
)
from smoothbit.network import (
    Architecture,
    NetworkState,
    analytic_lipschitz_bound,
    estimate_forward_lipschitz,
)
from smoothbit.quant_core import (
    SmoothingParams,
    sign_deriv_integral,
    smooth_abs,
    smooth_abs_deriv,
    smooth_clip,
    smooth_clip_deriv,
    smooth_sign,
    smooth_sign_deriv,
)
from smoothbit.results import records_from_rows, render_csv

QUADRATURE_EPS = (1.0, 0.5, 0.1, 0.05, 0.01)
DIRAC_EPS = tuple(2.0**-k for k in range(7))
SINGULAR_EPS = (1.0, 0.1, 0.01)
EPS_SWEEP_FACTOR = 4.0


@dataclass
class SuiteResult:
    name: str
    criterion: int | None
    passed: bool
    summary: str
    rows: list[dict] = field(default_factory=list)

    def line(self) -> str:
        label = f"criterion {self.criterion:2d}" if self.criterion else "invariant   "
        return f"{'PASS' if self.passed else 'FAIL'}  {label}  {self.name}: {self.summary}"


def _row(metric, value, tag="measured", **idx):
    return {"metric": metric, "value": float(value), "tag": tag, **idx}


def _rng(seed, *key):
    return np.random.default_rng([seed, *key])


# ---------------------------------------------------------------------------
# 1, 2: quadrature identity and Dirac limit


def quadrature_identity(tol=1e-8) -> SuiteResult:
    rows, worst = [], 0.0
    for eps in QUADRATURE_EPS:
        value, _ = sign_deriv_integral(lambda z: 1.0, eps)
        err = abs(value - 2.0)
        worst = max(worst, err)
        rows.append(_row("kernel_mass_error", err, epsilon=eps))
    rows.append(_row("kernel_mass_tolerance", tol, "bound"))
    return SuiteResult("quadrature_identity", 1, worst <= tol,
                       f"max |int sgn' - 2| = {worst:.2e} (tol {tol:g})", rows)


def dirac_bumps():
    """The two fixed bumps: a Gaussian of width 2 and a spline of radius 6."""
    gauss = TestFunction.gaussian([0.0], 2.0)
    spline = TestFunction.spline([0.0], 6.0)
    return {"gaussian": (gauss, ()), "spline": (spline, (-6.0, -3.0, 3.0, 6.0))}


def dirac_limit(tol=1e-4) -> SuiteResult:
    rows, ok, notes = [], True, []
    for k, (name, (phi, kinks)) in enumerate(dirac_bumps().items()):
        target = 2.0 * float(phi([0.0])[0])
        errs = []
        for eps in DIRAC_EPS:
            value, _ = sign_deriv_integral(lambda z: float(phi([z])[0]), eps, points=kinks)
            errs.append(abs(value - target))
            rows.append(_row("dirac_error", errs[-1], layer=k, epsilon=eps))
        decreasing = all(b < a for a, b in zip(errs, errs[1:]))
        ok &= decreasing and errs[-1] < tol
        notes.append(f"{name} {errs[-1]:.2e}{'' if decreasing else ' (not decreasing)'}")
    return SuiteResult("dirac_limit", 2, ok, "final errors " + ", ".join(notes), rows)


# ---------------------------------------------------------------------------
# 3: constraint algebra


def constraint_algebra(seed=0, count=1000, max_dim=64) -> SuiteResult:
    rng = _rng(seed, 3)
    worst = {"pythagoras": 0.0, "idempotence": 0.0, "self_adjoint": 0.0, "orthogonality": 0.0}
    for _ in range(count):
        n, m = (int(v) for v in rng.integers(1, max_dim + 1, size=2))
        scale = 10.0 ** rng.uniform(-3, 3)
        A = scale * (rng.standard_normal((n, m)) + rng.standard_normal())
        B = rng.standard_normal((n, m))
        PA, PB = zero_mean_project(A), zero_mean_project(B)
        lhs = frobenius_inner(A, A)
        rhs = n * m * layer_mean(A) ** 2 + frobenius_inner(PA, PA)
        worst["pythagoras"] = max(worst["pythagoras"], abs(lhs - rhs) / lhs)
        # absolute entrywise, relative to the entry scale of the input
        worst["idempotence"] = max(worst["idempotence"],
                                   float(np.max(np.abs(zero_mean_project(PA) - PA))) / scale)
        ab = frobenius_inner(A, PB)
        ba = frobenius_inner(PA, B)
        norm = math.sqrt(frobenius_inner(A, A) * frobenius_inner(B, B))
        worst["self_adjoint"] = max(worst["self_adjoint"], abs(ab - ba) / norm)
        orth = abs(float(np.sum(PA))) / (n * m) / scale
        worst["orthogonality"] = max(worst["orthogonality"], orth)
    tols = {"pythagoras": 1e-12, "idempotence": 1e-14, "self_adjoint": 1e-12,
            "orthogonality": 1e-12}
    rows = [_row(f"{k}_residual", v) for k, v in worst.items()]
    rows += [_row(f"{k}_tolerance", tols[k], "bound") for k in tols]
    ok = all(worst[k] <= tols[k] for k in tols)
    summary = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    return SuiteResult("constraint_algebra", 3, ok, summary, rows)


# ---------------------------------------------------------------------------
# 4: gradient correctness


def random_instance(rng, epsilon, *, max_depth=3, max_width=4, samples=5, margin=1e-6):
    """Random small (state, dataset) pair whose forward pass avoids the gamma kinks."""
    for _ in range(100):
        depth = int(rng.integers(1, max_depth + 1))
        widths = [int(w) for w in rng.integers(1, max_width + 1, size=depth)]
        d = int(rng.integers(1, max_width + 1))
        arch = Architecture.from_widths(d, widths)
        p = SmoothingParams(epsilon)
        s = NetworkState(arch, [rng.uniform(-1, 1, size=sh) for sh in arch.weight_shapes], p)
        ds = Dataset(rng.uniform(-1, 1, size=(samples, d)),
                     rng.uniform(-1, 1, size=(samples, widths[-1])), 1.0)
        if kink_margin(s, ds.X) >= margin:
            return s, ds
    raise RuntimeError("could not draw an instance away from the quantizer kinks")


def gradient_correctness(seed=0, instances=20, epsilons=(1.0, 0.3, 0.05),
                         rtol=1e-5, atol=1e-8) -> SuiteResult:
    rows, ok, worst_rel, worst_abs = [], True, 0.0, 0.0
    for i in range(instances):
        for eps in epsilons:
            rng = _rng(seed, 4, i, int(round(eps * 1e6)))
            s, ds = random_instance(rng, eps)
            g = risk_gradient(s, ds, LossSpec())
            cmp = compare_gradients(g.grads, finite_difference_gradient(s, ds),
                                    rtol=rtol, atol=atol)
            degraded = eps < GRADCHECK_EPS_THRESHOLD
            if not degraded:
                ok &= cmp["ok"]
                worst_rel = max(worst_rel, cmp["max_rel"])
                worst_abs = max(worst_abs, cmp["max_abs"])
            tag = "diagnostic" if degraded else "measured"
            rows.append(_row("gradcheck_max_rel", cmp["max_rel"], tag, layer=None,
                             epsilon=eps, width=i))
            rows.append(_row("gradcheck_max_abs", cmp["max_abs"], tag, epsilon=eps, width=i))
    rows.append(_row("gradcheck_rtol", rtol, "bound"))
    rows.append(_row("gradcheck_atol", atol, "bound"))
    return SuiteResult("gradient_correctness", 4, ok,
                       f"{instances} instances x {len(epsilons)} eps, max rel {worst_rel:.1e}, "
                       f"max abs {worst_abs:.1e}", rows)


# ---------------------------------------------------------------------------
# 5, 6: constraint preservation and clamp


def _small_problem(rng, *, eta, steps, m_star, init_scale, seed, widths=None, eps=0.5):
    d = int(rng.integers(1, 4))
    widths = widths or [int(rng.integers(2, 9)), 1]
    arch = Architecture.from_widths(d, widths)
    X = rng.uniform(-1, 1, size=(16, d))
    ds = Dataset(X, np.clip(np.sin(X.sum(axis=1, keepdims=True)), -1, 1), 1.0)
    run = RunConfig(eta, steps * eta, m_star, init_scale, seed=seed, stride=1)
    return Problem(arch, SmoothingParams(eps), ds, LossSpec(), run)


def constraint_preservation(seed=0, trajectories=10, steps=200, tol=1e-13):
    """Mean identity on unclipped steps (5) and the clamp on every snapshot (6)."""
    rows, worst, unclipped, clamp_ok, clamp_hits = [], 0.0, 0, True, 0
    trajs = []
    for k in range(trajectories):
        rng = _rng(seed, 5, k)
        prob = _small_problem(rng, eta=0.01, steps=steps, m_star=4.0, init_scale=0.5,
                              seed=seed * 1000 + k, eps=float(rng.choice([1.0, 0.5, 0.1])))
        trajs.append(prob)
    # trajectories where the clamp is active, to exercise (6) non-trivially
    for k in range(3):
        rng = _rng(seed, 6, k)
        trajs.append(_small_problem(rng, eta=5.0, steps=20, m_star=0.6, init_scale=0.5,
                                    seed=seed * 1000 + 500 + k))
    for k, prob in enumerate(trajs):
        traj = run_problem(prob)
        res = [max(r.mean_identity_residuals(prob.run.eta))
               for r in traj.reports if not r.any_clipped]
        if k < trajectories:
            unclipped += len(res)
            if len(res) != steps:
                worst = math.inf
        if res:
            worst = max(worst, max(res))
        sup = max(float(np.max(np.abs(W))) for snap in traj.snapshots for W in snap)
        clamp_ok &= sup <= prob.run.m_star
        clamp_hits += sum(traj.clip_events)
        rows.append(_row("max_abs_weight", sup, layer=None, width=k))
        rows.append(_row("clamp_radius", prob.run.m_star, "bound", width=k))
        rows.append(_row("mean_identity_residual", max(res) if res else 0.0, width=k))
    rows.append(_row("mean_identity_tolerance", tol, "bound"))
    rows.append(_row("clip_events", clamp_hits, "diagnostic"))
    preserve = SuiteResult(
        "constraint_preservation", 5, worst <= tol,
        f"{unclipped} unclipped steps over {trajectories} runs, max residual {worst:.1e}",
        rows)
    clamp = SuiteResult("clamp_boundedness", 6, bool(clamp_ok),
                        f"every snapshot within M*; {clamp_hits} clipped steps exercised",
                        [])
    return preserve, clamp


# ---------------------------------------------------------------------------
# 7: singular integrals


def singular_integrals(seed=0, measures=100, separation=1e-6) -> SuiteResult:
    rows, ok, worst_ratio, worst_point = [], True, 0.0, 0.0
    for k in range(measures):
        rng = _rng(seed, 7, k)
        n = int(rng.integers(2, 65))
        dim = int(rng.integers(1, 5))
        column = int(rng.integers(dim))
        pts = rng.uniform(-4.0, 4.0, size=(n, dim))
        mu = EmpiricalMeasure(pts)
        # push atoms off the singular hyperplane of the probed coordinate
        for _ in range(100):
            z = pts[:, column] - np.sum(pts) / pts.size
            close = np.abs(z) < separation
            if not np.any(close):
                break
            pts[close, column] += 10 * separation
            mu = EmpiricalMeasure(pts)
        phi = TestFunction.spline(rng.uniform(-2, 2, size=dim), rng.uniform(1.0, 6.0))
        rep = singular_integral_check(mu, phi, column, SINGULAR_EPS, phi_sup=phi.sup_norm())
        ok &= rep["ok"]
        for r in rep["rows"]:
            worst_ratio = max(worst_ratio, abs(r["quadrature"]) / rep["bound"])
            worst_point = max(worst_point, abs(r["pointwise"]) / rep["bound"])
            rows.append(_row("singular_quadrature", r["quadrature"], width=k,
                             epsilon=r["epsilon"]))
            rows.append(_row("singular_pointwise", r["pointwise"], "diagnostic", width=k,
                             epsilon=r["epsilon"]))
        rows.append(_row("singular_bound", rep["bound"], "bound", width=k))
    return SuiteResult(
        "singular_integrals", 7, ok,
        f"max |quadrature| / (2 sup phi) = {worst_ratio:.4f}; "
        f"pointwise form reaches {worst_point:.2f} (reported only)", rows)


# ---------------------------------------------------------------------------
# 8: Wasserstein exactness


def brute_force_cost(a, b, power):
    """Minimum over all n! assignments of the mean |a_i - b_pi(i)|^power."""
    n = len(a)
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1) ** power
    perms = np.array(list(itertools.permutations(range(n))))
    return float(np.min(cost[np.arange(n), perms].sum(axis=1)) / n)


def wasserstein_exactness(seed=0, pairs=50, triples=100, tol=1e-10) -> SuiteResult:
    rows, worst = [], 0.0
    for k in range(pairs):
        rng = _rng(seed, 8, k)
        n = int(rng.integers(1, 9))
        dim = int(rng.integers(1, 4))
        a, b = rng.uniform(-2, 2, size=(n, dim)), rng.uniform(-2, 2, size=(n, dim))
        mu, nu = EmpiricalMeasure(a), EmpiricalMeasure(b)
        e1 = abs(wasserstein1(mu, nu) - brute_force_cost(a, b, 1))
        e2 = abs(wasserstein2(mu, nu) - math.sqrt(brute_force_cost(a, b, 2)))
        worst = max(worst, e1, e2)
        rows.append(_row("w1_bruteforce_error", e1, width=k))
        rows.append(_row("w2_bruteforce_error", e2, width=k))
    axioms = {"symmetry": 0.0, "triangle": 0.0, "identity": 0.0, "jensen": 0.0}
    for k in range(triples):
        rng = _rng(seed, 80, k)
        dim = int(rng.integers(1, 4))
        ms = [EmpiricalMeasure(rng.uniform(-2, 2, size=(int(rng.integers(1, 7)), dim)))
              for _ in range(3)]
        for dist in (wasserstein1, wasserstein2):
            d = {(i, j): dist(ms[i], ms[j]) for i in range(3) for j in range(3)}
            axioms["symmetry"] = max(axioms["symmetry"],
                                     *(abs(d[i, j] - d[j, i]) for i, j in d))
            axioms["identity"] = max(axioms["identity"], *(d[i, i] for i in range(3)))
            for i, j, l in itertools.permutations(range(3)):
                axioms["triangle"] = max(axioms["triangle"], d[i, l] - d[i, j] - d[j, l])
        for i in range(3):
            for j in range(3):
                gap = wasserstein1(ms[i], ms[j]) - wasserstein2(ms[i], ms[j])
                axioms["jensen"] = max(axioms["jensen"], gap)
    limits = {"symmetry": 1e-12, "triangle": 1e-10, "identity": 1e-12, "jensen": 1e-12}
    rows += [_row(f"{k}_violation", v) for k, v in axioms.items()]
    rows.append(_row("bruteforce_tolerance", tol, "bound"))
    ok = worst <= tol and all(axioms[k] <= limits[k] for k in limits)
    return SuiteResult(
        "wasserstein_exactness", 8, ok,
        f"max brute-force gap {worst:.1e}; " + ", ".join(f"{k} {v:.1e}" for k, v in axioms.items()),
        rows)


# ---------------------------------------------------------------------------
# 9, 10, 11: trajectory-level diagnostics on the configured problem


def equicontinuity(problem: Problem, slack=1e-6) -> SuiteResult:
    """W2 between every pair of snapshots against the per-layer velocity sup."""
    prob = dataclasses.replace(problem, run=dataclasses.replace(problem.run, stride=1))
    traj = run_problem(prob)
    rows, worst, ok = [], 0.0, True
    times = traj.times
    for layer in range(prob.architecture.depth):
        vsup = traj.velocity_sup(layer)
        mus = [EmpiricalMeasure(s[layer]) for s in traj.snapshots]
        layer_worst = 0.0
        for i, j in itertools.combinations(range(len(mus)), 2):
            dt = abs(times[j] - times[i])
            w2 = wasserstein2(mus[i], mus[j])
            bound = vsup * dt * (1 + slack)
            ok &= w2 <= bound
            if vsup * dt > 0:
                layer_worst = max(layer_worst, w2 / (vsup * dt))
        worst = max(worst, layer_worst)
        rows.append(_row("velocity_sup", vsup, layer=layer))
        rows.append(_row("w2_speed_ratio_max", layer_worst, layer=layer))
    rows.append(_row("w2_speed_ratio_limit", 1 + slack, "bound"))
    return SuiteResult("equicontinuity", 9, bool(ok),
                       f"max W2 / (v_sup |t-s|) = {worst:.4f} over "
                       f"{len(traj.steps)} snapshots", rows)


RESIDUAL_ETAS = (1e-2, 5e-3, 2.5e-3)


def residual_test_functions(arch: Architecture, seed=0):
    """One fixed random quadratic per layer, scaled to the row dimension."""
    out = []
    for layer, (m, _) in enumerate(arch.dims):
        rng = _rng(seed, 10, layer)
        A = rng.standard_normal((m, m)) / m
        out.append(TestFunction.quadratic(rng.standard_normal(m) / math.sqrt(m), A + A.T))
    return out


def continuity_order(problem: Problem, seed=0, t=0.25, horizon=0.5, min_order=0.9):
    rows, ok, orders = [], True, []
    residuals = {}
    phis = residual_test_functions(problem.architecture, seed)
    for eta in RESIDUAL_ETAS:
        run = dataclasses.replace(problem.run, eta=eta, horizon=horizon, stride=1)
        prob = dataclasses.replace(problem, run=run)
        traj = run_problem(prob)
        if any(traj.clip_events):
            return SuiteResult("continuity_residual", 10, False,
                               f"clamp active at eta={eta}; the residual study needs "
                               "an unclipped trajectory", rows)
        for layer, phi in enumerate(phis):
            rep = continuity_residual(traj, layer, phi, t, prob.dataset, prob.loss)
            residuals.setdefault(layer, []).append(rep["residual"])
            # the CSV has no step-size column, so eta goes into the metric name
            rows.append(_row(f"continuity_residual_eta_{eta:g}", rep["residual"],
                             layer=layer, time=t))
    for layer, res in residuals.items():
        slope = float(np.polyfit(np.log(RESIDUAL_ETAS), np.log(res), 1)[0])
        orders.append(slope)
        ok &= slope >= min_order
        rows.append(_row("continuity_residual_order", slope, layer=layer, time=t))
    rows.append(_row("continuity_residual_min_order", min_order, "bound"))
    return SuiteResult("continuity_residual", 10, ok,
                       "log-log orders " + ", ".join(f"{o:.3f}" for o in orders), rows)


def eps_boundedness(problem: Problem, eps_list, workers=1, factor=EPS_SWEEP_FACTOR):
    sweep = eps_sweep(problem, eps_list, workers=workers)
    v = sweep.velocity_sup
    ratio = max(v) / min(v)
    rows = list(sweep.rows)
    rows.append(_row("velocity_sup_ratio", ratio))
    rows.append(_row("velocity_sup_ratio_limit", factor, "bound"))
    return SuiteResult("eps_sweep_boundedness", 11, ratio < factor,
                       f"velocity sup ratio {ratio:.3f} across {len(v)} eps "
                       f"(min {min(v):.3f}, max {max(v):.3f})", rows)


# ---------------------------------------------------------------------------
# further invariants


# The quotient carries roundoff ~ ulp(f) / h ~ 1e-10, so derivatives below
# this floor are compared absolutely (1e-6 * floor) instead of relatively.
FD_DERIV_FLOOR = 1e-3


def _fd_error(fd, an):
    return float(np.max(np.abs(fd - an) / np.maximum(np.abs(an), FD_DERIV_FLOOR)))


def quantizer_derivatives(seed=0, rtol=1e-6) -> SuiteResult:
    """Central differences of every scalar primitive, decay bound, clip Lipschitz."""
    rng = _rng(seed, 20)
    worst = 0.0
    decay_ok = True
    for eps in (1.0, 0.5, 0.1, 0.05, 0.01):
        z = rng.uniform(-3, 3, size=200) * max(eps, 0.05)
        h = 1e-6 * np.maximum(1.0, np.abs(z))
        for f, df in ((smooth_sign, smooth_sign_deriv), (smooth_abs, smooth_abs_deriv)):
            fd = (f(z + h, eps) - f(z - h, eps)) / (2 * h)
            an = df(z, eps)
            worst = max(worst, _fd_error(fd, an))
        fd = (smooth_clip(z + h, -1.5, 1.5, eps) - smooth_clip(z - h, -1.5, 1.5, eps)) / (2 * h)
        an = smooth_clip_deriv(z, -1.5, 1.5, eps)
        worst = max(worst, _fd_error(fd, an))
        grid = np.linspace(-20 * eps, 20 * eps, 4001)
        grid = grid[grid != 0]
        decay_ok &= bool(np.all(smooth_sign_deriv(grid, eps)
                                <= 4.0 / eps * np.exp(-2 * np.abs(grid) / eps) * (1 + 1e-12)))
    rows = [_row("derivative_fd_rel_error", worst), _row("derivative_fd_tolerance", rtol, "bound")]
    for eps in (1.0, 0.1, 0.01):
        x = np.linspace(-1.5 - 20 * eps, 1.5, 20001)
        lip = float(np.max(np.abs(np.diff(smooth_clip(x, -1.5, 1.5, eps)) / np.diff(x))))
        rows.append(_row("clip_lipschitz_measured", lip, "diagnostic", epsilon=eps))
    return SuiteResult("quantizer_derivatives", None, worst <= rtol and decay_ok,
                       f"max FD rel error {worst:.1e}; decay bound "
                       f"{'holds' if decay_ok else 'violated'}", rows)


def forward_lipschitz(seed=0, states=10, trials=200, m_star=1.0) -> SuiteResult:
    """Empirical forward Lipschitz ratios against the recursive analytic bound."""
    rows, ok, worst = [], True, 0.0
    for k in range(states):
        rng = _rng(seed, 21, k)
        depth = int(rng.integers(1, 4))
        widths = [int(w) for w in rng.integers(1, 9, size=depth - 1)] + [1]
        act = "identity" if k % 2 else "tanh"
        arch = Architecture.from_widths(int(rng.integers(1, 5)), widths, act)
        p = SmoothingParams(float(rng.choice([1.0, 0.5, 0.1])))
        s = NetworkState(arch, [rng.uniform(-m_star, m_star, size=sh)
                                for sh in arch.weight_shapes], p)
        X = rng.uniform(-1, 1, size=(32, arch.input_dim))
        est = estimate_forward_lipschitz(s, X, trials, seed + k, m_star=m_star)
        bound = analytic_lipschitz_bound(arch, p, m_star)
        ok &= est <= bound
        worst = max(worst, est / bound)
        rows.append(_row("forward_lipschitz_estimate", est, width=k, epsilon=p.epsilon))
        rows.append(_row("forward_lipschitz_bound", bound, "bound", width=k, epsilon=p.epsilon))
    return SuiteResult("forward_lipschitz", None, bool(ok),
                       f"max estimate / bound = {worst:.2e}", rows)


def gradient_bounds(seed=0, states=100) -> SuiteResult:
    """Finite gradient-bound ratios and the two-way mean-gradient identity."""
    rows, ok, worst, mean_gap = [], True, 0.0, 0.0
    for k in range(states):
        rng = _rng(seed, 22, k)
        s, ds = random_instance(rng, float(rng.choice([1.0, 0.3, 0.05])), margin=0.0)
        g = risk_gradient(s, ds)
        rep = gradient_bound_check(g, s, ds)
        ok &= rep["finite"]
        worst = max(worst, rep["max_ratio"])
        for G in g.grads:
            direct = float(np.mean(G))
            mean_gap = max(mean_gap, abs(direct - layer_mean(G)))
    ok &= mean_gap <= 1e-14
    rows.append(_row("gradient_bound_ratio_max", worst))
    rows.append(_row("mean_gradient_two_way_gap", mean_gap))
    return SuiteResult("gradient_bounds", None, bool(ok),
                       f"max ratio {worst:.3f} over {states} states; mean identity gap "
                       f"{mean_gap:.1e}", rows)


# ---------------------------------------------------------------------------


def run_all(cfg, *, workers=1, progress=None) -> list[SuiteResult]:
    """Every suite in criterion order; ``progress`` is called after each one."""
    seed = cfg.section("dynamics")["seed"]
    problem = cfg.problem()
    eps_list = cfg.section("smoothing")["epsilon_list"]
    gc = cfg.section("gradcheck")
    steps = [
        lambda: [quadrature_identity()],
        lambda: [dirac_limit()],
        lambda: [constraint_algebra(seed)],
        lambda: [gradient_correctness(seed, gc["instances"], gc["epsilons"])],
        lambda: list(constraint_preservation(seed)),
        lambda: [singular_integrals(seed)],
        lambda: [wasserstein_exactness(seed)],
        lambda: [equicontinuity(problem)],
        lambda: [continuity_order(problem, seed)],
        lambda: [eps_boundedness(problem, eps_list, workers)],
        lambda: [quantizer_derivatives(seed)],
        lambda: [forward_lipschitz(seed)],
        lambda: [gradient_bounds(seed)],
    ]
    results = []
    for step in steps:
        for res in step():
            results.append(res)
            if progress is not None:
                progress(res)
    rerun = {
        "constraint_algebra": lambda: constraint_algebra(seed),
        "wasserstein_exactness": lambda: wasserstein_exactness(seed),
        "continuity_residual": lambda: continuity_order(problem, seed),
        "eps_sweep_boundedness": lambda: eps_boundedness(problem, eps_list, workers),
    }
    res = determinism({r.name: r for r in results}, rerun)
    results.append(res)
    if progress is not None:
        progress(res)
    return results


def determinism(first: dict, rerun: dict) -> SuiteResult:
    """Recompute suites and compare their rendered CSV bytes with the first run."""
    def text(res):
        return render_csv(records_from_rows("rerun", res.rows))

    mismatched = [name for name, fn in rerun.items() if text(fn()) != text(first[name])]
    rows = [_row("rerun_identical", not mismatched)]
    summary = (f"{len(rerun)} suites rerun, CSV bytes identical" if not mismatched
               else "differs on rerun: " + ", ".join(mismatched))
    return SuiteResult("determinism", 12, not mismatched, summary, rows)
