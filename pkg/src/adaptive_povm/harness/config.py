"""Experiment configuration: JSON file values, overridden by command-line flags."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from ..adaptive import Schedule

METHODS = ("pauli", "grouped", "sic1", "sic2", "adaptive-1", "adaptive-2")
FIXED_METHODS = ("pauli", "grouped", "sic1", "sic2")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run.

    The state is either a saved ansatz (``ansatz``), explicit angles
    (``depth`` plus ``theta``) or, when neither is given, a VQE ground state
    trained with ``depth`` layers (``num_qubits + 1`` if unset).
    """

    observable: str | None = None
    method: str = "adaptive-1"
    ansatz: str | None = None
    depth: int | None = None
    theta: list[float] | None = None
    vqe_seed: int = 0
    vqe_threshold: float = 1e-4
    total_shots: int | None = None
    target_error: float | None = None
    max_iterations: int | None = None
    schedule: dict[str, Any] = field(default_factory=dict)
    x0: str | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    output: str = "runs/run"
    persist: bool = True
    discard_first: int = 0
    jobs: int = 1

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not self.observable:
            raise ConfigError("an observable file is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.method in FIXED_METHODS:
            if self.total_shots is None:
                raise ConfigError(f"method {self.method} needs total_shots")
        elif self.total_shots is None and self.target_error is None and self.max_iterations is None:
            raise ConfigError("adaptive runs need total_shots, target_error or max_iterations")
        for name in ("total_shots", "max_iterations", "depth"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.target_error is not None and self.target_error <= 0:
            raise ConfigError("target_error must be positive")
        if self.theta is not None and self.depth is None:
            raise ConfigError("explicit theta needs depth")
        if self.discard_first < 0 or self.jobs < 1:
            raise ConfigError("discard_first must be >= 0 and jobs >= 1")
        unknown = set(self.schedule) - {f.name for f in fields(Schedule)}
        if unknown:
            raise ConfigError(f"unknown schedule fields: {', '.join(sorted(unknown))}")
        try:
            Schedule(**self.schedule)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid schedule: {exc}") from None

    def schedule_obj(self) -> Schedule:
        return Schedule(**self.schedule)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def merged(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        """Copy with every non-``None`` override applied."""
        data = asdict(self)
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "schedule":
                data["schedule"] = {**data["schedule"], **value}
            else:
                data[key] = value
        return ExperimentConfig.from_dict(data)
