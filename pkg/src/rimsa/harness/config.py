"""Experiment configuration: YAML files, presets and validation."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from ..manifold import RcgParams
from ..mimo import MimoConfig
from ..miso import MisoConfig

SCENARIOS = ("miso", "mimo")
SWEEPS = ("rf_chains", "users", "csi_error")
BASELINES = ("fd_opt", "random_phase")
PROPOSED = {"miso": "fp_pmo", "mimo": "wmmse_pmo"}

MISO_DIMS = ("n_rf", "n_per_rimsa", "n_users", "n_rx")
MIMO_DIMS = ("n_rf_tx", "n_per_rimsa_tx", "n_users", "n_rf_rx", "n_per_rimsa_rx", "n_streams")

FULL_SYSTEMS = {
    "miso": dict(n_rf=8, n_per_rimsa=8, n_users=4, n_rx=4, n_paths=4),
    "mimo": dict(
        n_rf_tx=16, n_per_rimsa_tx=2, n_users=4, n_rf_rx=4, n_per_rimsa_rx=4,
        n_streams=4, n_paths=5,
    ),
}
SMALL_SYSTEMS = {
    "miso": dict(n_rf=4, n_per_rimsa=4, n_users=2, n_rx=2, n_paths=4),
    "mimo": dict(
        n_rf_tx=4, n_per_rimsa_tx=2, n_users=2, n_rf_rx=2, n_per_rimsa_rx=2,
        n_streams=2, n_paths=5,
    ),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Sweep:
    name: str
    values: Tuple[float, ...]

    def __post_init__(self):
        if self.name not in SWEEPS:
            raise ConfigError(f"unknown sweep {self.name!r}; expected one of {SWEEPS}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        vals = tuple(float(v) for v in self.values)
        if self.name in ("rf_chains", "users") and any(v != int(v) or v < 1 for v in vals):
            raise ConfigError(f"{self.name} sweep values must be positive integers")
        if self.name == "csi_error" and min(vals) < 0:
            raise ConfigError("csi_error sweep values must be nonnegative")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "miso"
    system: Mapping[str, Any] = field(default_factory=lambda: dict(FULL_SYSTEMS["miso"]))
    snr_grid: Tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0)
    sweep: Optional[Sweep] = None
    trials: int = 100
    seed: int = 2024
    baselines: Tuple[str, ...] = BASELINES
    outer_iters: int = 60
    rcg: RcgParams = RcgParams()
    noise_var: float = 1.0
    workers: int = 1
    record_timing: bool = False
    out: str = "results.csv"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.snr_grid:
            raise ConfigError("snr_grid must be nonempty")
        object.__setattr__(self, "snr_grid", tuple(float(s) for s in self.snr_grid))
        bad = set(self.baselines) - set(BASELINES)
        if bad:
            raise ConfigError(f"unknown baselines {sorted(bad)}; expected a subset of {BASELINES}")
        object.__setattr__(self, "baselines", tuple(b for b in BASELINES if b in self.baselines))
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.outer_iters < 0:
            raise ConfigError("outer_iters must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.noise_var > 0:
            raise ConfigError("noise_var must be positive")
        dims = MISO_DIMS if self.scenario == "miso" else MIMO_DIMS
        system = dict(self.system)
        unknown = set(system) - set(dims) - {"n_paths"}
        missing = set(dims) - set(system)
        if unknown or missing:
            raise ConfigError(
                f"{self.scenario} system keys: unknown {sorted(unknown)}, missing {sorted(missing)}"
            )
        system.setdefault("n_paths", FULL_SYSTEMS[self.scenario]["n_paths"])
        if system["n_paths"] < 1:
            raise ConfigError("n_paths must be >= 1")
        object.__setattr__(self, "system", system)
        # build every system config once so dimension errors surface before any work
        for k in range(len(self.sweep_points())):
            for snr in self.snr_grid:
                self.system_config(k, snr)

    @property
    def proposed(self) -> str:
        return PROPOSED[self.scenario]

    @property
    def algorithms(self) -> Tuple[str, ...]:
        return (self.proposed,) + self.baselines

    @property
    def n_paths(self) -> int:
        return int(self.system["n_paths"])

    def sweep_points(self) -> Tuple[Tuple[str, float], ...]:
        if self.sweep is None:
            return (("none", 0.0),)
        return tuple((self.sweep.name, v) for v in self.sweep.values)

    def csi_sigma(self, sweep_idx: int) -> float:
        name, value = self.sweep_points()[sweep_idx]
        return value if name == "csi_error" else 0.0

    def dims_at(self, sweep_idx: int) -> Dict[str, int]:
        """System dimensions at one sweep point.

        The RF-chain sweep keeps the transmit aperture fixed, so the number
        of elements per metasurface shrinks as chains are added.
        """
        keys = MISO_DIMS if self.scenario == "miso" else MIMO_DIMS
        dims = {k: int(self.system[k]) for k in keys}
        name, value = self.sweep_points()[sweep_idx]
        rf, per = ("n_rf", "n_per_rimsa") if self.scenario == "miso" else ("n_rf_tx", "n_per_rimsa_tx")
        if name == "rf_chains":
            n_tx = dims[rf] * dims[per]
            if n_tx % int(value):
                raise ConfigError(f"N_t = {n_tx} is not divisible by {int(value)} RF chains")
            dims[rf], dims[per] = int(value), n_tx // int(value)
        elif name == "users":
            dims["n_users"] = int(value)
        return dims

    def system_config(self, sweep_idx: int, snr_db: float):
        dims = self.dims_at(sweep_idx)
        cls = MisoConfig if self.scenario == "miso" else MimoConfig
        try:
            return cls.from_snr(snr_db, self.noise_var, **dims)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def preset(scenario: str = "miso", small: bool = False) -> ExperimentConfig:
    """Full-scale defaults, or the reduced ``small`` dimensions used in CI."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    systems = SMALL_SYSTEMS if small else FULL_SYSTEMS
    snr = (-5.0, 0.0, 5.0, 10.0) if scenario == "miso" else (-15.0, -10.0, -5.0, 0.0)
    return ExperimentConfig(scenario=scenario, system=dict(systems[scenario]), snr_grid=snr)


_TOP_KEYS = {
    "scenario", "system", "snr_db", "sweep", "trials", "seed", "baselines",
    "solver", "noise_var", "workers", "record_timing", "out",
}


def from_mapping(raw: Mapping[str, Any], small: bool = False) -> ExperimentConfig:
    """Build a config from a parsed document; unspecified entries fall back to the preset."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config document must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    scenario = raw.get("scenario", "miso")
    base = preset(scenario, small)
    kw: Dict[str, Any] = {"scenario": scenario}
    system = dict(base.system)
    if "system" in raw and not small:
        system.update(raw["system"] or {})
    kw["system"] = system
    if "snr_db" in raw:
        snr = raw["snr_db"]
        kw["snr_grid"] = tuple(snr) if isinstance(snr, (list, tuple)) else (snr,)
    if raw.get("sweep"):
        sw = raw["sweep"]
        try:
            kw["sweep"] = Sweep(sw["name"], tuple(sw["values"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError("sweep needs 'name' and 'values'") from exc
    for key in ("trials", "seed", "workers"):
        if key in raw:
            kw[key] = int(raw[key])
    if "baselines" in raw:
        kw["baselines"] = tuple(raw["baselines"] or ())
    if "noise_var" in raw:
        kw["noise_var"] = float(raw["noise_var"])
    if "record_timing" in raw:
        kw["record_timing"] = bool(raw["record_timing"])
    if "out" in raw:
        kw["out"] = str(raw["out"])
    solver = dict(raw.get("solver") or {})
    if "outer_iters" in solver:
        kw["outer_iters"] = int(solver.pop("outer_iters"))
    rcg = dict(solver.pop("rcg", None) or {})
    if solver:
        raise ConfigError(f"unknown solver keys: {sorted(solver)}")
    allowed = {f.name for f in fields(RcgParams)}
    if set(rcg) - allowed:
        raise ConfigError(f"unknown rcg keys: {sorted(set(rcg) - allowed)}")
    try:
        kw["rcg"] = RcgParams(**rcg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(**kw)


def load_config(path, small: bool = False) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_mapping(raw, small)


def to_mapping(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Inverse of :func:`from_mapping`, for saving the exact config next to results."""
    return {
        "scenario": cfg.scenario,
        "system": dict(cfg.system),
        "snr_db": list(cfg.snr_grid),
        "sweep": None if cfg.sweep is None else {"name": cfg.sweep.name, "values": list(cfg.sweep.values)},
        "trials": cfg.trials,
        "seed": cfg.seed,
        "baselines": list(cfg.baselines),
        "solver": {
            "outer_iters": cfg.outer_iters,
            "rcg": {f.name: getattr(cfg.rcg, f.name) for f in fields(RcgParams)},
        },
        "noise_var": cfg.noise_var,
        "workers": cfg.workers,
        "record_timing": cfg.record_timing,
        "out": cfg.out,
    }


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    try:
        return replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
