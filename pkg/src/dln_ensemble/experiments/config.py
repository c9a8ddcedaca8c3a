"""Experiment settings with per-command defaults, a ``key=value`` file format and flag overrides."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Optional

COMMANDS = ("converge", "efficiency", "adaptive")


def parse_real(text: str | float) -> float:
    """Accept ``0.5``, ``2/3`` or ``2/sqrt5`` (also ``2/sqrt(5)``)."""
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip().replace(" ", "")
    m = re.fullmatch(r"([0-9.]+)/sqrt\(?([0-9.]+)\)?", s)
    if m:
        return float(m.group(1)) / math.sqrt(float(m.group(2)))
    try:
        return float(s)
    except ValueError:
        return float(Fraction(s))


def parse_int_list(text: str | int | list) -> list[int]:
    if isinstance(text, int):
        return [text]
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


@dataclass
class ExperimentConfig:
    command: str = "converge"
    theta: float = 2.0 / 3.0
    re: float = 200.0
    omega: float = 10.0
    mesh: list[int] = field(default_factory=lambda: [8, 16, 32])
    j: list[int] = field(default_factory=lambda: [10])
    seed: int = 2024
    delta_bound: float = 1e-2
    tol: float = 1e-4
    kappa: float = 0.95
    kmin: float = 1e-6
    kmax: float = 1e-4
    t0: float = 0.0
    t_end: float = 1.0
    variant: str = "sin"
    refactorized: bool = True
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if not (0 < self.theta < 1):
            raise ValueError("NSE runs need theta strictly inside (0, 1)")
        if self.re <= 0 or any(m < 2 for m in self.mesh) or any(j < 1 for j in self.j):
            raise ValueError("need re > 0, mesh >= 2 and j >= 1")
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")

    @property
    def nu(self) -> float:
        return 1.0 / self.re


DEFAULTS: dict[str, dict[str, Any]] = {
    "converge": {},
    "efficiency": {"re": 1000.0, "mesh": [16], "j": [1, 10], "delta_bound": 0.1},
    "adaptive": {"theta": 2.0 / math.sqrt(5.0), "re": 1000.0, "omega": 3.1, "mesh": [50],
                 "delta_bound": 0.1, "t0": 1.58, "t_end": 1.602, "variant": "lindberg2"},
}

_CONVERTERS = {
    "theta": parse_real, "re": parse_real, "omega": parse_real, "delta_bound": parse_real,
    "tol": parse_real, "kappa": parse_real, "kmin": parse_real, "kmax": parse_real,
    "t0": parse_real, "t_end": parse_real, "mesh": parse_int_list, "j": parse_int_list,
    "seed": int, "variant": str, "out_dir": str, "command": str,
    "refactorized": lambda v: str(v).strip().lower() in ("1", "true", "yes", "on"),
}


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_").lower()
        if key not in _CONVERTERS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def build_config(command: str, file_values: Optional[Mapping[str, Any]] = None,
                 overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Defaults for ``command``, then file values, then non-``None`` overrides."""
    values: dict[str, Any] = {"command": command, **DEFAULTS[command]}
    for source in (file_values or {}, overrides or {}):
        for k, v in source.items():
            if v is None:
                continue
            values[k] = _CONVERTERS[k](v) if k in _CONVERTERS else v
    values["command"] = command
    known = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(**{k: v for k, v in values.items() if k in known})


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **kw)
