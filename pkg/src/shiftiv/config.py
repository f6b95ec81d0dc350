"""Run configuration: one flat JSON object, overridable from the command line."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

SUBCOMMANDS = ("estimate", "simulate", "rate-study", "positivity-demo", "coverage")


@dataclass
class RunConfig:
    subcommand: str = "estimate"
    # estimate: input table and column mapping
    data: str | None = None
    y: str = "y"
    a: str = "a"
    z: str = "z"
    x: list = field(default_factory=list)
    # shift grid and optional instrument support
    deltas: list = field(default_factory=lambda: [1.0])
    z_min: float | None = None
    z_max: float | None = None
    # cross-fitting and nuisance learners
    folds: int = 5
    learners: list = field(default_factory=lambda: ["mean", "ols", "kernel"])
    density_learners: list = field(default_factory=lambda: ["mean", "ols", "kernel"])
    bandwidth: list | float | None = None
    holdout_fraction: float = 0.2
    stack_iterations: int = 500
    clip_eps: float = 1e-3
    clip_max: float = 1e3
    weak_threshold: float = 1e-3
    # inference
    level: float = 0.95
    bootstrap_b: int = 1000
    plugin_bootstrap_b: int = 500
    # simulation studies
    n: int = 5000
    reps: int = 500
    ns: list = field(default_factory=lambda: [100, 1000, 5000, 10000])
    ks: list = field(default_factory=lambda: [2, 3, 4, 6])
    alpha: list = field(default_factory=lambda: [1.0, 1.0, -1.0, -1.0])
    psi_true: float = 2.0
    z_noise_variance: float = 2.0
    pi_mode: str = "ratio"
    positivity_delta: float = 0.1
    # execution
    seed: int = 0
    threads: int = 1
    out: str = "out"

    def validate(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        if self.subcommand == "estimate" and not self.data:
            raise ConfigError("estimate needs a dataset path ('data')")
        grid = self.deltas
        if not isinstance(grid, list) or not grid:
            raise ConfigError("deltas must be a nonempty list")
        try:
            grid = [float(d) for d in grid]
        except (TypeError, ValueError):
            raise ConfigError("deltas must be numbers") from None
        if any(not d > 0 for d in grid):
            raise ConfigError("DegenerateIntervention: every delta must be strictly positive; "
                              "at delta = 0 the two shifted instruments coincide")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("deltas must be strictly ascending")
        if (self.z_min is None) != (self.z_max is None):
            raise ConfigError("set both z_min and z_max, or neither")
        if self.z_min is not None and not self.z_min < self.z_max:
            raise ConfigError("z_min must be below z_max")
        if not isinstance(self.folds, int) or self.folds < 2:
            raise ConfigError("folds must be an integer >= 2")
        if not 0 < self.clip_eps < self.clip_max:
            raise ConfigError("clip bounds must satisfy 0 < clip_eps < clip_max")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.bootstrap_b < 100:
            raise ConfigError("bootstrap_b must be >= 100")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must lie in (0, 1)")
        known = {"mean", "ols", "kernel"}
        for lib in (self.learners, self.density_learners):
            if not lib or not set(lib) <= known:
                raise ConfigError(f"learner lists must be nonempty subsets of {sorted(known)}")
        if self.pi_mode not in ("ratio", "density"):
            raise ConfigError("pi_mode must be 'ratio' or 'density'")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigError("threads must be a positive integer")
        return self

    @property
    def support(self):
        return None if self.z_min is None else (float(self.z_min), float(self.z_max))

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)


def parse_override(item: str):
    """'key=value' with value read as JSON when possible, else as a string."""
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value
