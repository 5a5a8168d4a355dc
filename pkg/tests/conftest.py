import subprocess
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from smoothbit.backprop import LossSpec
from smoothbit.data import Dataset
from smoothbit.dynamics import Problem, RunConfig
from smoothbit.network import Architecture, NetworkState
from smoothbit.quant_core import SmoothingParams

settings.register_profile(
    "repo", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

# Lines printed in the terminal summary; filled by the acceptance tests.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    def record(number, name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def make_state(rng, widths, input_dim, eps=0.5, scale=1.0, activation="tanh"):
    arch = Architecture.from_widths(input_dim, widths, activation)
    weights = [rng.uniform(-scale, scale, size=s) for s in arch.weight_shapes]
    return NetworkState(arch, weights, SmoothingParams(eps))


def make_dataset(rng, n, input_dim, output_dim=1, bound=1.0):
    X = rng.uniform(-bound, bound, size=(n, input_dim))
    Y = rng.uniform(-bound, bound, size=(n, output_dim))
    return Dataset(X, Y, bound)


@pytest.fixture
def small_problem():
    rng = np.random.default_rng(11)
    arch = Architecture.from_widths(2, [6, 1])
    X = rng.uniform(-1, 1, size=(12, 2))
    ds = Dataset(X, np.clip(np.sin(X.sum(axis=1, keepdims=True)), -1, 1), 1.0)
    run = RunConfig(eta=0.02, horizon=0.4, m_star=4.0, init_scale=0.5, seed=5, stride=1)
    return Problem(arch, SmoothingParams(0.5), ds, LossSpec(), run)


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "smoothbit.cli", *map(str, args)],
        capture_output=True, text=True, cwd=cwd,
    )


@pytest.fixture(scope="session")
def verify_runs(tmp_path_factory):
    """Two independent CLI verify runs on the default config."""
    base = tmp_path_factory.mktemp("verify")
    cfg = base / "config.toml"
    cfg.write_text("[experiment]\nkind = \"verify\"\n")
    runs = []
    for name in ("first", "second"):
        out = base / name
        proc = run_cli("verify", "--config", cfg, "--out", out)
        runs.append((proc, out))
    return runs
