"""Experiment configuration: TOML sections, validation, canonical hashing.

A config file has the sections below; every key is optional and unknown
sections or keys are rejected::

    [experiment]
    kind = "verify"          # verify | train | sweep-eps | sweep-width | gradcheck
    output_dir = "results"

    [architecture]
    input_dim = 2
    widths = [32, 1]
    activation = "tanh"      # or one name per layer

    [smoothing]
    epsilon = 0.5
    epsilon_list = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]
    bits = 2
    delta = 0.5
    clip_variant = "logistic"

    [dynamics]
    eta = 0.05
    horizon = 2.0
    init_scale = 0.5
    m_star = 4.0
    seed = 3
    stride = 10

    [data]
    samples = 64
    support_bound = 1.0
    target = "sine"          # sine | teacher | zero
    seed = 1

    [sweep]
    widths = [8, 16, 32, 64]
    times = []               # empty: 0, T/4, T/2, 3T/4, T

    [gradcheck]
    instances = 20
    epsilons = [1.0, 0.3, 0.05]
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from smoothbit.backprop import LossSpec
from smoothbit.data import Dataset
from smoothbit.dynamics import Problem, RunConfig
from smoothbit.errors import ConfigError
from smoothbit.network import ACTIVATIONS, Architecture, NetworkState, network_forward
from smoothbit.quant_core import CLIP_VARIANTS, SmoothingParams

KINDS = ("verify", "train", "sweep-eps", "sweep-width", "gradcheck")
TARGETS = ("sine", "teacher", "zero")

DEFAULTS = {
    "experiment": {"kind": "verify", "output_dir": "results"},
    "architecture": {"input_dim": 2, "widths": [32, 1], "activation": "tanh"},
    "smoothing": {
        "epsilon": 0.5,
        "epsilon_list": [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125],
        "bits": 2,
        "delta": 0.5,
        "clip_variant": "logistic",
    },
    "dynamics": {
        "eta": 0.05,
        "horizon": 2.0,
        "init_scale": 0.5,
        "m_star": 4.0,
        "seed": 3,
        "stride": 10,
    },
    "data": {"samples": 64, "support_bound": 1.0, "target": "sine", "seed": 1},
    "sweep": {"widths": [8, 16, 32, 64], "times": []},
    "gradcheck": {"instances": 20, "epsilons": [1.0, 0.3, 0.05]},
}


def _err(tag, message):
    return ConfigError(f"{tag}: {message}")


def _number(section, key, value, *, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _err("config", f"[{section}] {key} must be a number, got {value!r}")
    if integer and int(value) != value:
        raise _err("config", f"[{section}] {key} must be an integer, got {value!r}")
    if not math.isfinite(value):
        raise _err("config", f"[{section}] {key} must be finite")
    return int(value) if integer else float(value)


def _number_list(section, key, value, *, integer=False):
    if not isinstance(value, list):
        raise _err("config", f"[{section}] {key} must be a list")
    return [_number(section, key, v, integer=integer) for v in value]


def _merge(raw):
    cfg = copy.deepcopy(DEFAULTS)
    for section, body in raw.items():
        if section not in DEFAULTS:
            raise _err("config", f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise _err("config", f"[{section}] must be a table")
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise _err("config", f"unknown key '{key}' in [{section}]")
            cfg[section][key] = value
    return cfg


def _check_epsilon(value, where):
    if not 0.0 < value <= 1.0:
        raise _err("R5", f"epsilon must lie in (0,1], got {value} ({where})")


def _validate(cfg):
    exp = cfg["experiment"]
    if exp["kind"] not in KINDS:
        raise _err("config", f"experiment kind must be one of {KINDS}, got {exp['kind']!r}")
    if not isinstance(exp["output_dir"], str):
        raise _err("config", "[experiment] output_dir must be a string")

    arch = cfg["architecture"]
    arch["input_dim"] = _number("architecture", "input_dim", arch["input_dim"], integer=True)
    arch["widths"] = _number_list("architecture", "widths", arch["widths"], integer=True)
    if arch["input_dim"] < 1 or not arch["widths"] or min(arch["widths"]) < 1:
        raise _err("config", "input_dim and all widths must be positive integers")
    acts = arch["activation"]
    names = [acts] if isinstance(acts, str) else acts
    if not isinstance(names, list) or (not isinstance(acts, str) and len(names) != len(arch["widths"])):
        raise _err("R3", "activation must be one name or one name per layer")
    for name in names:
        if name not in ACTIVATIONS:
            raise _err("R3", f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}")

    sm = cfg["smoothing"]
    sm["epsilon"] = _number("smoothing", "epsilon", sm["epsilon"])
    _check_epsilon(sm["epsilon"], "smoothing.epsilon")
    sm["epsilon_list"] = _number_list("smoothing", "epsilon_list", sm["epsilon_list"])
    for e in sm["epsilon_list"]:
        _check_epsilon(e, "smoothing.epsilon_list")
    if any(b > a for a, b in zip(sm["epsilon_list"], sm["epsilon_list"][1:])):
        raise _err("config", "smoothing.epsilon_list must be non-increasing")
    sm["bits"] = _number("smoothing", "bits", sm["bits"], integer=True)
    if sm["bits"] < 1:
        raise _err("R5", f"bits must be a positive integer, got {sm['bits']}")
    sm["delta"] = _number("smoothing", "delta", sm["delta"])
    if not 0.0 < sm["delta"] < 1.0:
        raise _err("R5", f"delta must lie in (0,1), got {sm['delta']}")
    if sm["clip_variant"] not in CLIP_VARIANTS:
        raise _err("config", f"clip_variant must be one of {CLIP_VARIANTS}")

    dyn = cfg["dynamics"]
    for key in ("eta", "horizon", "init_scale", "m_star"):
        dyn[key] = _number("dynamics", key, dyn[key])
    for key in ("seed", "stride"):
        dyn[key] = _number("dynamics", key, dyn[key], integer=True)
    if dyn["eta"] <= 0 or dyn["horizon"] < 0:
        raise _err("config", "eta must be positive and horizon non-negative")
    if dyn["m_star"] <= 0 or dyn["init_scale"] < 0:
        raise _err("R4", "m_star must be positive and init_scale non-negative")
    if dyn["init_scale"] > dyn["m_star"]:
        raise _err("R4", f"init_scale M={dyn['init_scale']} exceeds m_star={dyn['m_star']}")
    if dyn["stride"] < 1 or not 0 <= dyn["seed"] < 2**64:
        raise _err("config", "stride must be >= 1 and seed a 64-bit unsigned integer")

    data = cfg["data"]
    data["samples"] = _number("data", "samples", data["samples"], integer=True)
    data["support_bound"] = _number("data", "support_bound", data["support_bound"])
    data["seed"] = _number("data", "seed", data["seed"], integer=True)
    if data["samples"] < 1:
        raise _err("R1", "samples must be at least 1")
    if data["support_bound"] < 0:
        raise _err("R1", "support_bound must be finite and non-negative")
    if data["target"] not in TARGETS:
        raise _err("config", f"data.target must be one of {TARGETS}")

    sw = cfg["sweep"]
    sw["widths"] = _number_list("sweep", "widths", sw["widths"], integer=True)
    if not sw["widths"] or min(sw["widths"]) < 1:
        raise _err("config", "sweep.widths must be positive integers")
    if any(b < a for a, b in zip(sw["widths"], sw["widths"][1:])):
        raise _err("config", "sweep.widths must be non-decreasing")
    sw["times"] = _number_list("sweep", "times", sw["times"])
    if any(t < 0 or t > dyn["horizon"] for t in sw["times"]):
        raise _err("config", "sweep.times must lie in [0, horizon]")

    gc = cfg["gradcheck"]
    gc["instances"] = _number("gradcheck", "instances", gc["instances"], integer=True)
    gc["epsilons"] = _number_list("gradcheck", "epsilons", gc["epsilons"])
    for e in gc["epsilons"]:
        _check_epsilon(e, "gradcheck.epsilons")
    return cfg


def canonical_text(cfg: dict) -> str:
    """Sorted-key compact JSON of the filled config.

    The output directory only says where files go, so it is left out; the
    same experiment written to two places keeps one run id.
    """
    body = copy.deepcopy(cfg)
    body["experiment"].pop("output_dir", None)
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration with all defaults filled in."""

    data: dict

    @property
    def kind(self) -> str:
        return self.data["experiment"]["kind"]

    @property
    def output_dir(self) -> str:
        return self.data["experiment"]["output_dir"]

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_text(self.data).encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return f"{self.kind}-{self.config_hash[:12]}"

    def section(self, name: str) -> dict:
        return self.data[name]

    def with_overrides(self, kind=None, output_dir=None) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        if kind is not None:
            data["experiment"]["kind"] = kind
        if output_dir is not None:
            data["experiment"]["output_dir"] = str(output_dir)
        return ExperimentConfig(_validate(data))

    # -- builders ---------------------------------------------------------

    def architecture(self, widths=None) -> Architecture:
        arch = self.data["architecture"]
        return Architecture.from_widths(
            arch["input_dim"], widths or arch["widths"], arch["activation"]
        )

    def smoothing(self, epsilon=None) -> SmoothingParams:
        sm = self.data["smoothing"]
        return SmoothingParams(
            sm["epsilon"] if epsilon is None else epsilon,
            sm["bits"], sm["delta"], sm["clip_variant"],
        )

    def run_config(self, **overrides) -> RunConfig:
        dyn = dict(self.data["dynamics"])
        dyn.update(overrides)
        return RunConfig(
            eta=dyn["eta"], horizon=dyn["horizon"], m_star=dyn["m_star"],
            init_scale=dyn["init_scale"], seed=dyn["seed"], stride=dyn["stride"],
        )

    def loss(self) -> LossSpec:
        return LossSpec.squared(self.data["data"]["support_bound"], self.architecture().output_dim)

    def problem(self, **run_overrides) -> Problem:
        return Problem(
            self.architecture(), self.smoothing(), synthesize_dataset(self),
            self.loss(), self.run_config(**run_overrides),
        )


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise _err("parse error", str(exc)) from exc
    return ExperimentConfig(_validate(_merge(raw)))


def load_config(path) -> ExperimentConfig:
    """Read, merge with defaults and validate a TOML experiment config."""
    path = Path(path)
    if not path.is_file():
        raise _err("config", f"no such file: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def default_config() -> ExperimentConfig:
    return parse_config("")


def synthesize_dataset(cfg: ExperimentConfig) -> Dataset:
    """Inputs uniform on [-R, R]^d; targets from the configured rule.

    ``sine``: R * sin(sum of inputs), one column per output unit.
    ``teacher``: a fixed random network (same architecture, weights uniform on
    [-1, 1]) evaluated at the inputs and clamped to [-R, R].
    ``zero``: all-zero targets.
    """
    data = cfg.section("data")
    arch = cfg.architecture()
    R = data["support_bound"]
    rng = np.random.default_rng([data["seed"], 0])
    X = R * rng.uniform(-1.0, 1.0, size=(data["samples"], arch.input_dim))
    k = arch.output_dim
    if data["target"] == "zero" or R == 0:
        Y = np.zeros((len(X), k))
    elif data["target"] == "sine":
        Y = np.repeat(R * np.sin(X.sum(axis=1, keepdims=True)), k, axis=1)
    else:
        trng = np.random.default_rng([data["seed"], 1])
        teacher = NetworkState(
            arch, [trng.uniform(-1.0, 1.0, size=s) for s in arch.weight_shapes], cfg.smoothing()
        )
        out, _ = network_forward(X, teacher)
        Y = np.clip(out, -R, R)
    # R * sin(.) can land a rounding error past R
    Y = np.clip(Y, -R, R)
    return Dataset(X, Y, R)
