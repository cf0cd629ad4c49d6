"""Run configuration: a flat file of dotted ``key = value`` lines (TOML syntax).

Recognised keys::

    laser.q            = [0.9128, 0.9564, 1.0]   # or laser.visibility, not both
    laser.visibility   = [0.0019]
    laser.models       = ["delta-mix", "wrapped-normal"]
    protocol.signal_intensity = 0.5
    protocol.decoys    = [0.0, 0.5]
    protocol.priors    = [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]
    protocol.attenuation = 0.16
    protocol.t_x       = 0.1
    truncation.d       = 10
    truncation.N       = 2
    truncation.blocks  = 3
    truncation.D_oracle = 40
    solver.tol         = 1e-9
    solver.fw_max_iter = 150
    solver.fw_rel_tol  = 1e-7
    keyrate.f_ec       = 1.0
    sweep.distances    = [0.0, 25.0, 50.0, 75.0, 100.0]
    output.path        = "rates.csv"
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .laser import DELTA_MIX, WRAPPED_NORMAL, q_from_visibility
from .pipeline import Truncation
from .protocol import ProtocolParams


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class RunConfig:
    q: tuple = ()
    visibility: tuple = ()
    models: tuple = (DELTA_MIX, WRAPPED_NORMAL)
    signal_intensity: float = 0.5
    decoys: tuple = (0.0, 0.5)
    priors: tuple = (1 / 3, 1 / 3, 1 / 3)
    attenuation: float = 0.16
    t_x: float = 0.1
    d: int = 10
    N: int = 2
    blocks: int = 3
    D_oracle: int = 40
    tol: float = 1e-9
    fw_max_iter: int = 150
    fw_rel_tol: float = 1e-7
    f_ec: float = 1.0
    distances: tuple = (0.0, 25.0, 50.0, 75.0, 100.0)
    output_path: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if bool(self.q) == bool(self.visibility):
            raise ConfigError("give exactly one of laser.q and laser.visibility")
        for q in self.q:
            if not 0 <= q <= 1:
                raise ConfigError("laser.q values must lie in [0, 1]")
        for v in self.visibility:
            if not 0 <= v <= 1:
                raise ConfigError("laser.visibility values must lie in [0, 1]")
        for m in self.models:
            if m not in (DELTA_MIX, WRAPPED_NORMAL):
                raise ConfigError(f"unknown phase model {m!r}")
        if any(x < 0 for x in self.distances):
            raise ConfigError("distances must be non-negative")
        if not self.d >= self.N >= 1:
            raise ConfigError("need truncation.d >= truncation.N >= 1")
        if self.D_oracle <= self.d:
            raise ConfigError("truncation.D_oracle must exceed truncation.d")
        if not 1 <= self.blocks <= self.d + 1:
            raise ConfigError("truncation.blocks must lie in 1..d+1")
        if self.f_ec < 1:
            raise ConfigError("keyrate.f_ec must be at least 1")
        if self.tol <= 0 or self.fw_rel_tol <= 0 or self.fw_max_iter < 1:
            raise ConfigError("solver settings must be positive")
        try:
            self.protocol(0.0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def protocol(self, distance: float) -> ProtocolParams:
        return ProtocolParams(
            signal_intensity=self.signal_intensity,
            decoy_intensities=self.decoys,
            priors=self.priors,
            attenuation=self.attenuation,
            distance=float(distance),
            t_x=self.t_x,
        )

    @property
    def truncation(self) -> Truncation:
        return Truncation(self.d, self.N, self.blocks)

    def q_values(self) -> list[tuple[str, float]]:
        """``(label, q)`` pairs to evaluate, in config order, duplicates kept once."""
        out: list[tuple[str, float]] = []
        if self.q:
            out = [("explicit", float(q)) for q in self.q]
        else:
            out = [(m, q_from_visibility(v, m)) for v in self.visibility for m in self.models]
        seen, unique = set(), []
        for label, q in out:
            if q not in seen:
                seen.add(q)
                unique.append((label, q))
        return unique

    def digest(self) -> str:
        """sha256 of the canonical JSON form of the effective settings."""
        data = asdict(self)
        data.pop("output_path")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


_KEYS = {
    "laser.q": "q",
    "laser.visibility": "visibility",
    "laser.models": "models",
    "protocol.signal_intensity": "signal_intensity",
    "protocol.decoys": "decoys",
    "protocol.priors": "priors",
    "protocol.attenuation": "attenuation",
    "protocol.t_x": "t_x",
    "truncation.d": "d",
    "truncation.N": "N",
    "truncation.blocks": "blocks",
    "truncation.D_oracle": "D_oracle",
    "solver.tol": "tol",
    "solver.fw_max_iter": "fw_max_iter",
    "solver.fw_rel_tol": "fw_rel_tol",
    "keyrate.f_ec": "f_ec",
    "sweep.distances": "distances",
    "output.path": "output_path",
}
_TUPLES = {"q", "visibility", "models", "decoys", "priors", "distances"}
_INTS = {"d", "N", "blocks", "D_oracle", "fw_max_iter"}


def _flatten(tree: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def from_mapping(flat: Mapping[str, Any]) -> RunConfig:
    """Build a config from dotted keys; unknown keys are an error."""
    kwargs: dict[str, Any] = {}
    for key, value in flat.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        name = _KEYS[key]
        if name in _TUPLES:
            value = tuple(value) if isinstance(value, (list, tuple)) else (value,)
            if name != "models":
                value = tuple(float(x) for x in value)
        elif name in _INTS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer")
        elif name == "output_path":
            value = str(value)
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number")
            value = float(value)
        kwargs[name] = value
    if "q" not in kwargs and "visibility" not in kwargs:
        kwargs["q"] = (0.9128, 0.9564, 1.0)
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load(path: str | Path | None) -> RunConfig:
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return from_mapping({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_mapping(_flatten(tree))
