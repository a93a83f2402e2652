"""Run configuration: a flat JSON object, validated into typed pieces."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .core import CoarseGrid, PhysParams
from .coupling import CouplingSchedule
from .errors import ConfigurationError
from .harness import SCENARIOS, ScenarioSpec, make_scenario

MODELS = ("dem", "msdem")
REFERENCES = ("dem", "self")

# default continuum substeps per coarse step; see README for the sensitivity study
DEFAULT_N1 = 2


@dataclass
class RunConfig:
    scenario: str | None = None
    scale: float = 0.5
    model: str = "msdem"
    grid: str = "48x24"
    grids: list = field(default_factory=lambda: ["12x6", "24x12", "48x24"])
    T: float = 0.2
    times: list = field(default_factory=list)
    dt: float = 1e-4
    dT: float = 0.01
    n_t: int = 10
    N1: int = DEFAULT_N1
    rho_ice: float = 1.0
    d_o: float = 1.0
    rho_o: float = 1.0
    E: float = 1.0e4
    G: float = 1.0
    mu: float = 0.2
    conc_max: float = 0.91
    r_min: float = 1e-6
    semi_implicit: bool = True
    strict: bool = True
    out: str = "out"
    dump_fields: bool = False
    dump_floes: bool = False
    workers: int | None = None
    seed: int = 0
    cache_dir: str | None = None
    reference: str = "dem"

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = sorted(set(data) - set(cls.keys()))
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        return cls.from_dict(data)

    def merged(self, overrides: dict) -> "RunConfig":
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(data)

    # --- validated views -----------------------------------------------------

    def resolved_workers(self) -> int:
        w = self.workers
        if w is None:
            env = os.environ.get("MSDEM_WORKERS")
            if env:
                try:
                    w = int(env)
                except ValueError:
                    raise ConfigurationError(f"MSDEM_WORKERS must be an integer, got {env!r}") from None
            else:
                w = 1
        if w < 1:
            raise ConfigurationError(f"worker count must be >= 1, got {w}")
        return w

    def spec(self) -> ScenarioSpec:
        if self.scenario is None:
            raise ConfigurationError(f"scenario is required ({', '.join(SCENARIOS)})")
        return make_scenario(self.scenario, self.scale)

    def params(self) -> PhysParams:
        return PhysParams(rho_ice=self.rho_ice, d_o=self.d_o, rho_o=self.rho_o,
                          E=self.E, G=self.G, mu=self.mu)

    def schedule(self) -> CouplingSchedule:
        return CouplingSchedule(dt=self.dt, dT=self.dT, n_t=self.n_t, N1=self.N1, T=self.T)

    def coarse_grid(self, spec: str | None = None) -> CoarseGrid:
        grid = CoarseGrid.parse(spec or self.grid)
        self.spec().check_grid(grid)
        return grid

    def snapshot_times(self) -> list[float]:
        ts = sorted(set(float(t) for t in self.times) | {float(self.T)})
        if any(t < 0 or t > self.T for t in ts):
            raise ConfigurationError("snapshot times must lie in [0, T]")
        return ts

    def coarse_times(self) -> list[float]:
        sched = self.schedule()
        return [k * self.dT for k in range(sched.windows + 1)]

    def validate(self, convergence: bool = False) -> "RunConfig":
        if self.model not in MODELS:
            raise ConfigurationError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.reference not in REFERENCES:
            raise ConfigurationError(f"reference must be one of {REFERENCES}, got {self.reference!r}")
        if not 0 < self.conc_max <= 1:
            raise ConfigurationError("conc_max must be in (0, 1]")
        if not self.r_min > 0:
            raise ConfigurationError("r_min must be positive")
        self.spec()
        self.params()
        sched = self.schedule()
        self.resolved_workers()
        times = self.snapshot_times()
        if self.model == "msdem" or convergence:
            for t in times:
                sched.window_of(t)
            for g in (self.grids if convergence else [self.grid]):
                self.coarse_grid(g)
        else:
            self.coarse_grid()
            for t in times:
                if abs(round(t / self.dt) * self.dt - t) > 1e-9 * max(t, self.dt):
                    raise ConfigurationError(f"snapshot time {t} is not a multiple of dt")
        if convergence and len(self.grids) < 2:
            raise ConfigurationError("a convergence study needs at least two grids")
        return self

    def to_dict(self) -> dict:
        return asdict(self)
