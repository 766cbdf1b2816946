# config.py
# RunConfig: the JSON document that drives the CLI and the web front end.

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .errors import ArgumentError, ConfigError
from .flr import DEFAULT_EVAL_POINTS, DEFAULT_M, LambdaRule
from .kernels import KernelSpec, kernel_from_dict
from .simgen import ScenarioConfig

SCHEMA_VERSION = 1
COMMANDS = ("simulate", "fit", "evaluate")
EXPERIMENT_KINDS = ("scenario", "heatmap", "mixture", "rate")
FIT_METHODS = ("oflr", "tlflr", "pooled", "naive", "atlflr_star", "atlflr_ew")


def parse_method(method: str, temperature: float) -> Tuple[str, float]:
    """Split an experiment method spec such as "atlflr_ew:0.5" into (name, temperature)."""
    if not isinstance(method, str):
        raise ArgumentError(f"method must be a string, got {method!r}")
    name, sep, t = method.partition(":")
    if name not in FIT_METHODS:
        raise ArgumentError(f"unknown method {method!r}, expected one of {FIT_METHODS}")
    if not sep:
        return name, temperature
    if name != "atlflr_ew":
        raise ArgumentError(f"only atlflr_ew takes a temperature, got {method!r}")
    try:
        value = float(t)
    except ValueError:
        raise ArgumentError(f"temperature in {method!r} is not a number") from None
    if not np.isfinite(value) or value <= 0:
        raise ArgumentError(f"temperature in {method!r} must be positive")
    return name, value


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "scenario"
    h_values: Tuple[float, ...] = (1.0, 10.0, 20.0, 40.0)
    s_sizes: Tuple[int, ...] = (1, 5, 10, 15)
    n_values: Tuple[int, ...] = (100, 200, 400, 800)
    methods: Tuple[str, ...] = ("oflr", "tlflr", "atlflr_star", "atlflr_ew")
    reps: int = 20
    n_mc: int = 1000
    M: int = DEFAULT_M
    temperature: float = 1.0


@dataclass(frozen=True)
class FitConfig:
    method: str = "atlflr_star"
    target_task: str = "target"
    sources: Optional[Tuple[str, ...]] = None
    test_fraction: float = 0.2
    M: int = DEFAULT_M
    temperature: float = 1.0
    eval_points: int = DEFAULT_EVAL_POINTS
    compare_to_oflr: bool = False
    replications: int = 100


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"


@dataclass(frozen=True)
class RunConfig:
    command: str = "simulate"
    seed: int = 0
    threads: int = 1
    kernel: KernelSpec = field(default_factory=KernelSpec.eigen_expansion)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    lambda_rule: LambdaRule = field(default_factory=LambdaRule)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "seed": self.seed,
            "threads": self.threads,
            "kernel": self.kernel.to_dict(),
            "scenario": {k: v for k, v in self.scenario.to_dict().items() if k not in ("seed", "replication")},
            "lambda_rule": _plain(asdict(self.lambda_rule)),
            "experiment": _plain(asdict(self.experiment)),
            "fit": _plain(asdict(self.fit)),
            "output": _plain(asdict(self.output)),
        }

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None,
                       threads: Optional[int] = None, replications: Optional[int] = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed), scenario=replace(cfg.scenario, seed=int(seed)))
        if out is not None:
            cfg = replace(cfg, output=OutputConfig(out))
        if threads is not None:
            if threads < 1:
                raise ConfigError("threads must be >= 1")
            cfg = replace(cfg, threads=int(threads))
        if replications is not None:
            if replications < 1:
                raise ConfigError("replications must be >= 1")
            cfg = replace(cfg, fit=replace(cfg.fit, replications=int(replications)))
        return cfg


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# execution settings; they never change a result
UNHASHED_KEYS = ("threads", "output")


def config_hash(obj) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace).

    A RunConfig is hashed without its threads and output settings.
    """
    if isinstance(obj, RunConfig):
        obj = {k: v for k, v in obj.to_dict().items() if k not in UNHASHED_KEYS}
    text = json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _check_keys(d: Any, allowed, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        dotted = ", ".join(f"{path}.{k}" if path else k for k in unknown)
        raise ConfigError(f"unknown config key(s): {dotted}")


def _build(cls, d: Dict[str, Any], path: str, skip=()):
    names = [f.name for f in fields(cls) if f.name not in skip]
    _check_keys(d, names, path)
    kwargs = {}
    for f in fields(cls):
        if f.name not in d:
            continue
        v = d[f.name]
        if isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except (ArgumentError, TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def _kernel(d: Any, path: str) -> KernelSpec:
    if not isinstance(d, dict):
        raise ConfigError(f"{path} must be a JSON object")
    try:
        return kernel_from_dict(d)
    except (ArgumentError, TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def _positive_ints(obj, names, path: str):
    for name in names:
        v = getattr(obj, name)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"{path}.{name} must be a positive integer, got {v!r}")


def parse_config(d: Dict[str, Any]) -> RunConfig:
    _check_keys(d, [f.name for f in fields(RunConfig)], "")
    command = d.get("command", "simulate")
    if command not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {command!r}")
    seed = d.get("seed", 0)
    threads = d.get("threads", 1)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    if not isinstance(threads, int) or isinstance(threads, bool) or threads < 1:
        raise ConfigError(f"threads must be a positive integer, got {threads!r}")

    kernel = _kernel(d["kernel"], "kernel") if "kernel" in d else KernelSpec.eigen_expansion()

    scen = dict(d.get("scenario", {}))
    _check_keys(scen, [f.name for f in fields(ScenarioConfig) if f.name not in ("seed", "replication")], "scenario")
    for cov in ("target_cov", "source_cov"):
        if cov in scen:
            scen[cov] = _kernel(scen[cov], f"scenario.{cov}")
    scenario = _build(ScenarioConfig, {**scen, "seed": seed}, "scenario")

    experiment = _build(ExperimentConfig, d.get("experiment", {}), "experiment")
    if experiment.kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"experiment.kind must be one of {EXPERIMENT_KINDS}")
    _positive_ints(experiment, ("reps", "n_mc", "M"), "experiment")
    for m in experiment.methods:
        try:
            parse_method(m, experiment.temperature)
        except ArgumentError as e:
            raise ConfigError(f"experiment.methods: {e}") from None

    fit = _build(FitConfig, d.get("fit", {}), "fit")
    if fit.method not in FIT_METHODS:
        raise ConfigError(f"fit.method must be one of {FIT_METHODS}, got {fit.method!r}")
    if not 0 <= fit.test_fraction < 1:
        raise ConfigError("fit.test_fraction must lie in [0, 1)")
    _positive_ints(fit, ("M", "eval_points", "replications"), "fit")

    return RunConfig(
        command=command,
        seed=seed,
        threads=threads,
        kernel=kernel,
        scenario=scenario,
        lambda_rule=_build(LambdaRule, d.get("lambda_rule", {}), "lambda_rule"),
        experiment=experiment,
        fit=fit,
        output=_build(OutputConfig, d.get("output", {}), "output"),
    )


def loads_config(text: str) -> RunConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: line {e.lineno}, column {e.colno}: {e.msg}") from None
    return parse_config(d)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return loads_config(text)
