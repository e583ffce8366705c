"""INI experiment configuration.

Grammar: ``configparser`` sections ``[experiment]``, ``[model]``, ``[sim]``,
``[rule]``, ``[dropout]`` and ``[oracle]`` holding ``key = value`` lines; ``#``
and ``;`` start comment lines. Every key is optional and falls back to the
defaults of :class:`ExperimentConfig`. Lists (``x0``, ``enabled``, ``t1``) are
comma separated. ``auto`` selects a value derived from the rest of the model
(certificate ``theta`` and ``level``, schedule exponent, twice the schedule scale).
Unknown sections and keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
from dataclasses import dataclass, fields

from .engine import EscapeProbe, SimConfig
from .experiments import EnsembleConfig, counterexample_config, escape_probe
from .monitors import CLAUSES, StoppingRule
from .potentials import potential_from_id
from .schedules import parse_schedule

KINDS = ("simulate", "rate", "counterexample", "oracle-check", "dropout-check")
AUTO = "auto"


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when there is one."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _names(text: str) -> tuple[str, ...]:
    items = tuple(v.strip() for v in text.split(",") if v.strip())
    return () if items == ("none",) else items


def _opt_float(text: str):
    return None if text.strip() == AUTO else float(text)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "rate"
    seed: int = 0
    n_paths: int = 2000
    tolerance: float = 0.25
    chunk_size: int = 1000
    out: str = "out"

    potential: str = "even_power:2:1"
    drift: str = "gradient_flow"
    schedule: str = "poly:1:1.2"
    spatial: str = "identity"
    level: float | None = None
    theta: float | None = None

    x0: tuple[float, ...] = (1.0,)
    t_max: float = 1e4
    dt0: float = 1e-3
    dt_growth: float = 1e-4
    dt_cap: float = 0.1
    eta_stab: float = 0.1
    h_bound: float = 1.0
    n_checkpoints: int = 64
    window: float = 0.5
    watch_from: float = 1.0

    enabled: tuple[str, ...] = ("exit", "alignment", "diffusivity", "lower_dropout")
    radius: float = 3.0
    rho: float = 0.5
    c_bound: float = 6.0
    c_beta: float | None = None
    sigma: float | None = None
    c_w: float = 0.0
    t0: float = 0.0

    t1: tuple[float, ...] = (100.0, 400.0)

    mc_paths: int = 100_000

    def __post_init__(self):
        self.validate()

    # derived quantities

    @property
    def schedule_obj(self):
        return parse_schedule(self.schedule)

    def resolved_theta(self) -> float:
        if self.theta is not None:
            return self.theta
        return potential_from_id(self.potential).lowest_level().certificate.theta

    def resolved_level(self) -> float:
        if self.level is not None:
            return self.level
        return potential_from_id(self.potential).lowest_level().level

    def resolved_sigma(self) -> float:
        if self.sigma is not None:
            return self.sigma
        s = self.schedule_obj
        return s.exponent if s.kind == "poly" else 0.0

    def resolved_c_beta(self) -> float:
        if self.c_beta is not None:
            return self.c_beta
        s = self.schedule_obj
        return 2.0 * s.scale if s.kind != "zero" and s.scale > 0 else 2.0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}", "experiment.kind")
        try:
            pot = potential_from_id(self.potential)
        except ValueError as e:
            raise ConfigError(str(e), "model.potential") from None
        try:
            parse_schedule(self.schedule)
        except ValueError as e:
            raise ConfigError(str(e), "model.schedule") from None
        if self.kind != "oracle-check" and len(self.x0) != pot.dimension:
            raise ConfigError(f"x0 has {len(self.x0)} entries, {self.potential} lives in dimension {pot.dimension}",
                              "sim.x0")
        bad = set(self.enabled) - set(CLAUSES)
        if bad:
            raise ConfigError(f"unknown clauses {sorted(bad)}", "rule.enabled")
        if self.n_paths < 2 and self.kind in ("rate", "counterexample", "dropout-check"):
            raise ConfigError("ensembles need at least 2 paths", "experiment.n_paths")
        if self.kind in ("rate", "dropout-check"):
            th = self.resolved_theta()
            if not 0.5 < th < 1.0:
                raise ConfigError(f"rate experiments need theta in (1/2, 1), got {th}", "model.theta")
        try:
            self.sim_config()
            self.rule()
            self.ensemble()
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from None

    # builders

    def sim_config(self, path_index: int = 0) -> SimConfig:
        extra = ()
        if self.kind == "counterexample":
            extra = counterexample_config(n_paths=2, t_max=self.t_max).sim.extra_checkpoints
        return SimConfig(
            x0=self.x0, t_max=self.t_max, dt0=self.dt0, dt_growth=self.dt_growth, dt_cap=self.dt_cap,
            eta_stab=self.eta_stab, h_bound=self.h_bound, seed=self.seed, path_index=path_index,
            n_checkpoints=self.n_checkpoints, window=self.window, watch_from=self.watch_from,
            extra_checkpoints=extra,
        )

    def rule(self) -> StoppingRule | None:
        if not self.enabled:
            return None
        return StoppingRule(
            radius=self.radius, rho=self.rho, c_bound=self.c_bound, c_beta=self.resolved_c_beta(),
            sigma=self.resolved_sigma(), level=self.resolved_level(),
            theta=self.resolved_theta(),
            c_w=self.c_w, t0=self.t0, enabled=frozenset(self.enabled),
        )

    def probe(self) -> EscapeProbe | None:
        if self.kind != "dropout-check":
            return None
        return escape_probe(self.resolved_theta(), self.t1, self.resolved_level())

    def ensemble(self) -> EnsembleConfig | None:
        if self.kind in ("simulate", "oracle-check"):
            return None
        rule = None if self.kind == "counterexample" else self.rule()
        return EnsembleConfig(
            n_paths=self.n_paths, sim=self.sim_config(), potential=self.potential, drift=self.drift,
            schedule=self.schedule, spatial=self.spatial, rule=rule, probe=self.probe(),
            chunk_size=self.chunk_size,
        )

    # serialization

    def to_dict(self) -> dict:
        return {f.name: _encode(getattr(self, f.name)) for f in fields(self)}

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section, keys in SECTIONS.items():
            cp[section] = {k: _encode(getattr(self, k)) for k in keys}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def with_overrides(self, pairs: dict[str, str]) -> "ExperimentConfig":
        values = {}
        for raw_key, text in pairs.items():
            key = _resolve_key(raw_key)
            values[key] = _decode(key, text)
        try:
            return dataclasses.replace(self, **values)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None


SECTIONS = {
    "experiment": ("kind", "seed", "n_paths", "tolerance", "chunk_size", "out"),
    "model": ("potential", "drift", "schedule", "spatial", "level", "theta"),
    "sim": ("x0", "t_max", "dt0", "dt_growth", "dt_cap", "eta_stab", "h_bound", "n_checkpoints", "window",
            "watch_from"),
    "rule": ("enabled", "radius", "rho", "c_bound", "c_beta", "sigma", "c_w", "t0"),
    "dropout": ("t1",),
    "oracle": ("mc_paths",),
}
_SECTION_OF = {k: s for s, keys in SECTIONS.items() for k in keys}
_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _encode(v) -> str:
    if v is None:
        return AUTO
    if isinstance(v, tuple):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v) or "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _decode(key: str, text: str):
    typ = _FIELD_TYPES[key]
    text = text.strip()
    try:
        if typ == "int":
            return int(text)
        if typ == "float":
            return float(text)
        if typ == "float | None":
            return _opt_float(text)
        if typ == "tuple[float, ...]":
            return _floats(text)
        if typ == "tuple[str, ...]":
            return _names(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {text!r}", f"{_SECTION_OF[key]}.{key}") from None


def _resolve_key(raw: str) -> str:
    raw = raw.strip()
    if "." in raw:
        section, key = raw.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError("unknown section", raw)
        if key not in SECTIONS[section]:
            raise ConfigError("unknown key", raw)
        return key
    if raw not in _SECTION_OF:
        raise ConfigError("unknown key", raw)
    return raw


def parse_ini(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed configuration: {e}") from None
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError("unknown section", section)
        for key, text_value in cp[section].items():
            if key not in SECTIONS[section]:
                raise ConfigError("unknown key", f"{section}.{key}")
            values[key] = _decode(key, text_value)
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    """Read an INI file, or the ``config`` block of a run's ``manifest.json``."""
    path = str(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read configuration: {e}") from None
    if path.endswith(".json"):
        try:
            block = json.loads(text)["config"]
        except (json.JSONDecodeError, KeyError, TypeError):
            raise ConfigError("manifest has no 'config' object", path) from None
        return ExperimentConfig().with_overrides({k: str(v) for k, v in block.items()})
    return parse_ini(text)
