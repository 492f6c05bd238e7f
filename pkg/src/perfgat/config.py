"""One JSON file holding every tunable of a run.

::

    {"seed": 0,
     "cohort": {"n_subjects": 120, ...},
     "model": {"tau": 0.5, "k": 5, "alpha": 2, ...},
     "train": {"learning_rate": 1e-4, ...}}

Every section is optional and falls back to defaults. The top-level
``seed`` drives cohort generation, splitting, initialisation and shuffling,
so sections may not carry their own. Unknown keys are rejected.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import ConfigError
from .model import ModelConfig
from .synthdata import CohortConfig
from .trainer import TrainConfig

SECTIONS = ("cohort", "model", "train")


@dataclass(frozen=True)
class RunConfig:
    cohort: CohortConfig = field(default_factory=CohortConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed: must be a non-negative integer, got {self.seed!r}")
        # keep the section seeds in step with the top-level one
        object.__setattr__(self, "cohort", self.cohort.with_(seed=self.seed))
        object.__setattr__(self, "train", self.train.with_(seed=self.seed))

    def to_dict(self) -> dict:
        cohort = self.cohort.to_dict()
        train = self.train.to_dict()
        del cohort["seed"], train["seed"]
        return {"seed": self.seed, "cohort": cohort, "model": self.model.to_dict(),
                "train": train}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        if not isinstance(d, Mapping):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(d) - set(SECTIONS) - {"seed"})
        if unknown:
            raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
        parsers = {"cohort": CohortConfig, "model": ModelConfig, "train": TrainConfig}
        kw = {}
        for name in SECTIONS:
            section = d.get(name, {})
            if not isinstance(section, Mapping):
                raise ConfigError(f"{name}: must be an object")
            if "seed" in section:
                raise ConfigError(f"{name}.seed: set the top-level seed instead")
            try:
                kw[name] = parsers[name].from_dict(section)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        return cls(seed=d.get("seed", 0), **kw)

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return RunConfig(self.cohort, self.model, self.train, seed)


def load_config(path) -> RunConfig:
    """Parse and validate a config file; errors name the file and the offending key."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return RunConfig.from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
