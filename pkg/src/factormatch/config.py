"""Run configuration and its flat ``key = value`` file format.

Example::

    # comments start with '#'
    dim = 3
    side = 64
    seeds = 0-9          # ranges and comma lists are accepted
    balanced = true
    schedule = 4:8:hash,16:window,64:window
    k = 16
    epsilon = 0.5
    matcher = 3d
    out = runs/d3
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .lattice import Torus, balanced_seeds
from .matcher3d import DEFAULT_C_SEP, ScheduleError, capacity_unit, default_k
from .partitions import LevelSpec, Schedule

__all__ = ["RunConfig", "ConfigError", "parse_seeds", "load_config"]


class ConfigError(ValueError):
    pass


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0-9"``, ``"1,4,7"`` or a mix such as ``"0-3,10"``."""
    out: list[int] = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    dim: int = 2
    side: int = 64
    seeds: list = field(default_factory=lambda: [0])
    balanced: bool = False
    schedule: str | None = None
    center_source: str = "hash"
    k: int | None = None
    epsilon: float = 0.5
    form: str = "power"
    c_sep: float = DEFAULT_C_SEP
    matcher: str = "2d"
    stage_budget: int | None = None
    initial: str = "single"
    lift_rule: str = "lex"
    level: int | None = None
    out: str = "."

    _INT = ("dim", "side", "k", "stage_budget", "level")
    _FLOAT = ("epsilon", "c_sep")

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, val in data.items():
            key = key.strip().replace("-", "_")
            if key == "seed":
                key = "seeds"
            if key not in known:
                raise ConfigError(f"unknown key {key!r}")
            if val is None:
                continue
            if key in cls._INT:
                val = None if str(val).lower() in ("", "none") else int(val)
            elif key in cls._FLOAT:
                val = float(val)
            elif key == "seeds":
                val = list(val) if isinstance(val, (list, tuple)) else parse_seeds(val)
            elif key == "balanced":
                val = _bool(val)
            elif key == "schedule":
                val = None if str(val).lower() in ("", "none", "default") else str(val)
            kw[key] = val
        return cls(**kw)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        data = {}
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key = value")
            key, val = line.split("=", 1)
            data[key.strip()] = val.strip()
        return cls.from_mapping(data)

    def to_text(self) -> str:
        lines = []
        for key, val in asdict(self).items():
            if val is None:
                continue
            if key == "seeds":
                val = ",".join(str(s) for s in val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"

    @property
    def torus(self) -> Torus:
        return Torus(self.dim, self.side)

    def schedule_obj(self) -> Schedule:
        s = Schedule.parse(self.schedule) if self.schedule else Schedule.default(self.dim, self.side)
        if self.center_source == "bulb":
            # exact bulbs of radius 1 instead of hash centers
            s = Schedule(tuple(LevelSpec(lv.b, 1, "bulb") if lv.source == "hash" else lv for lv in s.levels))
        elif self.center_source != "hash":
            raise ConfigError(f"unknown center source {self.center_source!r}")
        return s.closed(self.side)

    def k_value(self) -> int:
        return self.k if self.k is not None else default_k(self.dim)

    def resolved_seeds(self) -> list[int]:
        """The seeds to run; with ``balanced`` each requested seed ``s`` is
        replaced by the ``s``-th exactly balanced seed."""
        if not self.balanced:
            return list(self.seeds)
        if not self.seeds:
            return []
        pool = balanced_seeds(self.dim, self.side, max(self.seeds) + 1)
        return [pool[s] for s in self.seeds]

    def validate(self) -> "RunConfig":
        try:
            torus = self.torus
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        try:
            sched = self.schedule_obj()
            sched.validate(torus.d, torus.L)
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from None
        if self.matcher not in ("2d", "3d"):
            raise ConfigError(f"matcher must be 2d or 3d, got {self.matcher!r}")
        if self.matcher == "3d":
            try:
                capacity_unit(self.k_value(), self.dim)
            except ScheduleError as exc:
                raise ConfigError(str(exc)) from None
            if not sched.sides[0] <= self.k_value() <= self.side:
                raise ConfigError(f"k={self.k_value()} is not a chain size between {sched.sides[0]} and {self.side}")
        if not 0 < self.epsilon < 2 * self.dim:
            raise ConfigError("epsilon must lie in (0, 2d)")
        if self.initial not in ("single", "multiscale"):
            raise ConfigError(f"unknown initial matching {self.initial!r}")
        if self.lift_rule not in ("lex", "nearest"):
            raise ConfigError(f"unknown lifting rule {self.lift_rule!r}")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")
        return self


def load_config(path) -> RunConfig:
    return RunConfig.from_text(Path(path).read_text())
