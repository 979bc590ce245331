#!/usr/bin/python

"""Experiment documents: dataset, splits, model and attack matrix, budget grids"""

from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Union
import logging
import os

from gnnworkbench.utils.attacks import META_ALGORITHMS, POISON_SEED_OFFSET, TARGETS_PER_BUCKET
from gnnworkbench.utils.builtin_models import attack_config, model_config
from gnnworkbench.utils.common import ConfigError, load_document
from gnnworkbench.utils.evaluation import GLOBAL_GRID, LOCAL_GRID
from gnnworkbench.utils.graph import DEFAULT_RATIOS, Graph, dataset_checksum, load_dataset
from gnnworkbench.utils.synthetic import generate_sbm

logger = logging.getLogger("gnnworkbench")

MODES = ("evasion", "poisoning")
LOCAL_ALGORITHMS = ("fga", "pgd", "brute_force")
# algorithms whose Δ' < Δ result is a prefix of the Δ result
PREFIX_ALGORITHMS = ("fga", "greedy_meta", "brute_force")


@dataclass
class ModelEntry:
    name: str
    preset: str = ""
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.preset = self.preset or self.name

    def config(self):
        return model_config(self.preset, self.overrides)


@dataclass
class AttackEntry:
    name: str
    preset: str = ""
    scope: str = "global"
    modes: Optional[list] = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.preset = self.preset or self.name
        if self.scope not in ("global", "local"):
            raise ConfigError(f"Attack '{self.name}': unknown scope '{self.scope}'")
        cfg = self.config()
        if self.scope == "local" and cfg.algorithm not in LOCAL_ALGORITHMS:
            raise ConfigError(f"Attack '{self.name}': {cfg.algorithm} has no local variant")
        if self.scope == "global" and cfg.algorithm == "brute_force":
            raise ConfigError(f"Attack '{self.name}': greedy brute force is a local attack")
        if self.modes is not None:
            unknown = set(self.modes) - set(MODES)
            if unknown:
                raise ConfigError(f"Attack '{self.name}': unknown modes {sorted(unknown)}")

    def config(self, seed: int = 0, memory_gb: float = None):
        overrides = dict(self.overrides)
        overrides["seed"] = seed
        if memory_gb is not None:
            overrides["memory_gb"] = memory_gb
        return attack_config(self.preset, overrides)

    def attack_modes(self, modes: list) -> list:
        """Meta attacks are poisoning attacks unless their modes say otherwise"""
        if self.modes is not None:
            chosen = self.modes
        elif self.config().algorithm in META_ALGORITHMS:
            chosen = ["poisoning"]
        else:
            chosen = list(MODES)
        return [m for m in modes if m in chosen]


@dataclass
class ExperimentConfig:
    models: list
    attacks: list
    dataset: Union[str, dict] = None
    name: str = "experiment"
    split_seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    split_ratios: list = field(default_factory=lambda: list(DEFAULT_RATIOS))
    budgets: dict = field(
        default_factory=lambda: {"global": list(GLOBAL_GRID[1:]), "local": list(LOCAL_GRID[1:])}
    )
    modes: list = field(default_factory=lambda: list(MODES))
    local: dict = field(default_factory=lambda: {"per_bucket": TARGETS_PER_BUCKET})
    mlp_preset: str = "mlp"
    mlp_name: str = "MLP"
    transfer: bool = True
    out: str = "results"
    workers: int = 1
    prom_port: int = 0
    frequency: int = 10
    meta_memory_gb: float = 8.0
    poison_seed_offset: int = POISON_SEED_OFFSET

    def __post_init__(self):
        self.models = [m if isinstance(m, ModelEntry) else ModelEntry(**m) for m in self.models]
        self.attacks = [a if isinstance(a, AttackEntry) else AttackEntry(**a) for a in self.attacks]
        self.validate()

    def validate(self):
        if self.dataset is None:
            raise ConfigError("dataset: missing")
        if not self.models:
            raise ConfigError("models: at least one model is required")
        if not self.attacks:
            raise ConfigError("attacks: at least one attack is required")
        names = [m.name for m in self.models] + [self.mlp_name]
        if len(set(names)) != len(names):
            raise ConfigError(f"models: names must be unique and differ from '{self.mlp_name}'")
        if any(":" in n for n in names):
            raise ConfigError("models: names cannot contain ':'")
        attack_names = [a.name for a in self.attacks]
        if len(set(attack_names)) != len(attack_names):
            raise ConfigError("attacks: names must be unique")
        if not self.split_seeds or len(set(self.split_seeds)) != len(self.split_seeds):
            raise ConfigError(f"split_seeds: expected distinct seeds, got {self.split_seeds}")
        unknown = set(self.modes) - set(MODES)
        if not self.modes or unknown:
            raise ConfigError(f"modes: expected a subset of {MODES}, got {self.modes}")

        scopes = {a.scope for a in self.attacks}
        for scope in scopes:
            grid = self.budgets.get(scope) or []
            if not grid:
                raise ConfigError(f"budgets.{scope}: at least one budget is required")
            if min(grid) <= 0 or sorted(set(grid)) != list(grid):
                raise ConfigError(f"budgets.{scope}: expected strictly increasing positive fractions")

        for a in self.attacks:
            cfg = a.config()
            if max(cfg.aux_seeds) >= self.poison_seed_offset:
                raise ConfigError(
                    f"Attack '{a.name}': auxiliary seeds must stay below poison_seed_offset={self.poison_seed_offset}"
                )
        if self.workers < 0:
            raise ConfigError(f"workers: expected >= 0, got {self.workers}")
        for m in self.models:
            m.config()
        model_config(self.mlp_preset)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"Unknown experiment config keys: {sorted(unknown)}")
        if "models" not in d or "attacks" not in d:
            raise ConfigError("An experiment needs 'models' and 'attacks'")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"Invalid experiment config: {e}")


def load_experiment(source: str) -> ExperimentConfig:
    """Parse an experiment document from a filepath or an inline JSON/YAML string"""
    config = ExperimentConfig.from_dict(load_document(source))
    if isinstance(config.dataset, str) and not os.path.isabs(config.dataset) and os.path.exists(source):
        # dataset paths are relative to the experiment file
        candidate = os.path.join(os.path.dirname(os.path.abspath(source)), config.dataset)
        if os.path.exists(candidate):
            config.dataset = candidate
    return config


def load_graph(dataset: Union[str, dict]) -> Graph:
    """Dataset from a file path, {"path", "format", "checksum"} or {"sbm": {...}}"""
    if isinstance(dataset, str):
        fmt = "npz" if dataset.endswith(".npz") else "json"
        return load_dataset(dataset, fmt)
    if not isinstance(dataset, dict):
        raise ConfigError(f"dataset: expected a path or an object, got {type(dataset).__name__}")
    if "sbm" in dataset:
        params = dict(dataset["sbm"])
        try:
            graph = generate_sbm(**params)
        except TypeError as e:
            raise ConfigError(f"dataset.sbm: {e}")
        return Graph(
            adjacency=graph.adjacency,
            features=graph.features,
            labels=graph.labels,
            num_classes=graph.num_classes,
            name=graph.name,
            checksum=dataset_checksum(graph),
        )
    if "path" in dataset:
        return load_dataset(dataset["path"], dataset.get("format", "json"), dataset.get("checksum"))
    raise ConfigError("dataset: expected 'path' or 'sbm'")
