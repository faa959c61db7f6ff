"""Experiment configuration files (JSON) and their validation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

from .gpu import MachineParams
from .kernels import KernelError, KernelSpec
from .search import DEFAULT_ORDER


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExploreOptions:
    budget: int = 2000
    prune: bool = True
    bucket: int = 20
    delta: float = 0.05
    max_iterations: Optional[int] = None


@dataclass(frozen=True)
class EstimateOptions:
    knuth_iterations: int = 100_000
    chen_iterations: int = 1000
    ci_scale: str = "log"  # or "normal"


@dataclass(frozen=True)
class DeadEndOptions:
    trials: int = 10_000


@dataclass(frozen=True)
class OrderCompareOptions:
    min_nodes: int = 1000
    max_nodes: int = 100_000
    threshold: Optional[float] = None  # None: best cost of an explore run
    threshold_budget: int = 200


@dataclass(frozen=True)
class EnumerateOptions:
    budget: int = 1_000_000
    optimum: bool = False  # also evaluate every implementation


_SECTIONS = {
    "explore": ExploreOptions,
    "estimate": EstimateOptions,
    "deadend": DeadEndOptions,
    "order_compare": OrderCompareOptions,
    "enumerate": EnumerateOptions,
}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kernel: KernelSpec
    machine: MachineParams = field(default_factory=MachineParams)
    order: tuple = DEFAULT_ORDER
    seed: int = 0
    out: Optional[str] = None
    explore: ExploreOptions = field(default_factory=ExploreOptions)
    estimate: EstimateOptions = field(default_factory=EstimateOptions)
    deadend: DeadEndOptions = field(default_factory=DeadEndOptions)
    order_compare: OrderCompareOptions = field(default_factory=OrderCompareOptions)
    enumerate: EnumerateOptions = field(default_factory=EnumerateOptions)

    @property
    def out_dir(self) -> Path:
        return Path(self.out or f"out/{self.name}")

    def to_dict(self) -> dict:
        d = {"name": self.name, "kernel": self.kernel.to_dict(), "machine": self.machine.to_dict(),
             "order": list(self.order), "seed": self.seed, "out": self.out}
        for key in _SECTIONS:
            d[key] = asdict(getattr(self, key))
        return d

    def with_overrides(self, seed=None, budget=None, order=None, out=None) -> "ExperimentConfig":
        d = self.to_dict()
        if seed is not None:
            d["seed"] = seed
        if budget is not None:
            d["explore"]["budget"] = budget
        if order is not None:
            d["order"] = list(order)
        if out is not None:
            d["out"] = out
        return from_dict(d)


def _check_types(cls, d: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    extra = set(d) - set(known)
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    for k, v in d.items():
        default = getattr(cls(), k)
        if v is None:
            if default is not None and k != "max_iterations":
                raise ConfigError(f"{where}.{k} cannot be null")
            continue
        want = type(default) if default is not None else (float if k == "threshold" else int)
        if want is float and isinstance(v, int) and not isinstance(v, bool):
            continue
        if isinstance(v, bool) != (want is bool) or not isinstance(v, want):
            raise ConfigError(f"{where}.{k} must be {want.__name__}, got {v!r}")
        if want in (int, float) and v < 0:
            raise ConfigError(f"{where}.{k} must be non-negative")


def from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    known = {"name", "kernel", "machine", "order", "seed", "out"} | set(_SECTIONS)
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    if not isinstance(d.get("name"), str) or not d["name"]:
        raise ConfigError("config needs a non-empty 'name'")
    if not isinstance(d.get("kernel"), dict):
        raise ConfigError("config needs a 'kernel' object")
    try:
        kernel = KernelSpec.from_dict(d["kernel"])
        machine = MachineParams.from_dict(d.get("machine") or {})
    except (KernelError, TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    order = d.get("order", list(DEFAULT_ORDER))
    if not isinstance(order, list) or not all(isinstance(x, str) for x in order) \
            or len(set(order)) != len(order):
        raise ConfigError("'order' must be a list of distinct choice names")
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("'seed' must be an integer")
    out = d.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("'out' must be a path string")
    sections = {}
    for key, cls in _SECTIONS.items():
        sd = d.get(key) or {}
        if not isinstance(sd, dict):
            raise ConfigError(f"'{key}' must be an object")
        _check_types(cls, sd, key)
        sections[key] = cls(**sd)
    if sections["estimate"].ci_scale not in ("log", "normal"):
        raise ConfigError("estimate.ci_scale is 'log' or 'normal'")
    if sections["explore"].bucket < 1:
        raise ConfigError("explore.bucket must be >= 1")
    if not 0 < sections["explore"].delta < 1:
        raise ConfigError("explore.delta must be in (0, 1)")
    return ExperimentConfig(d["name"], kernel, machine, tuple(order), seed, out, **sections)


def shipped_configs() -> list[str]:
    root = resources.files("implspace") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load(path_or_name: str) -> ExperimentConfig:
    """A config file path, or the name of a shipped config."""
    p = Path(path_or_name)
    if p.is_file():
        text = p.read_text(encoding="utf-8")
    elif path_or_name in shipped_configs():
        text = (resources.files("implspace") / "configs" / f"{path_or_name}.json").read_text(encoding="utf-8")
    else:
        raise ConfigError(f"no config file or shipped config named {path_or_name!r}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    return from_dict(data)
