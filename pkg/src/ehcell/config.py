"""Network parameters, unit conversions and config-file loading.

All physical quantities are stored linear (watts, m, per-m^2). dB/dBm values
only appear at the file boundary. Time is normalised to one broadcast slot.
"""
from __future__ import annotations

import enum
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

ZETA = 10.0 / math.log(10.0)


class InvalidParameter(ValueError):
    """Raised when a configuration violates one or more constraints.

    ``problems`` holds one ``(field, constraint)`` pair per violation.
    """

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = list(problems)
        msg = "; ".join(f"{name}: {why}" for name, why in self.problems)
        super().__init__(msg)


class SchemePolicy(str, enum.Enum):
    PROPOSED_A = "A"
    WITHOUT_A = "woA"
    REAL_TIME_A = "rtA"
    ON_GRID = "ongrid"

    @classmethod
    def parse(cls, name: str) -> "SchemePolicy":
        key = name.strip().lower().replace("-", "").replace("_", "").replace("/", "")
        aliases = {
            "a": cls.PROPOSED_A, "proposed": cls.PROPOSED_A, "proposeda": cls.PROPOSED_A,
            "woa": cls.WITHOUT_A, "without": cls.WITHOUT_A, "withouta": cls.WITHOUT_A,
            "rta": cls.REAL_TIME_A, "realtime": cls.REAL_TIME_A, "realtimea": cls.REAL_TIME_A,
            "ongrid": cls.ON_GRID, "og": cls.ON_GRID,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown scheme {name!r}") from None


def dbm_to_watts(x_dbm: float) -> float:
    return 10.0 ** (x_dbm / 10.0 - 3.0)


def watts_to_dbm(x_watts: float) -> float:
    return 10.0 * math.log10(x_watts) + 30.0


def db_to_linear(x_db):
    return 10.0 ** (x_db / 10.0)


def watts_to_units(x_watts, eps: float):
    """Round a power up to whole battery units of size ``eps`` watts."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return int(math.ceil(x_watts / eps))


@dataclass(frozen=True)
class ChannelParams:
    kappa: float = 1.0
    alpha: float = 4.0
    mu_db: float = 0.0
    sigma_db: float = 4.0
    nu: float = 1.0


@dataclass(frozen=True)
class BatteryParams:
    capacity_watts: float = 1.0
    levels: int = 1000
    broadcast_cost_units: int = 0
    slot_scale: float = 1.0

    @property
    def unit_watts(self) -> float:
        return self.capacity_watts / self.levels


@dataclass(frozen=True)
class HarvestParams:
    rate: float = 100.0  # arrivals per slot (10% of L at L=1000)
    burst_size: int = 1


@dataclass(frozen=True)
class DeploymentParams:
    lambda_bs: float = 1.0 / (math.pi * 60.0**2)
    lambda_mt: float = 15.0 / (math.pi * 60.0**2)
    p_rx_watts: float = dbm_to_watts(-65.0)
    n_rb: int = 50
    ongrid_pmax_watts: float = 0.05

    @property
    def bs_radius_m(self) -> float:
        return 1.0 / math.sqrt(math.pi * self.lambda_bs)


DEFAULT_WINDOW_RADIUS_M = 300.0


@dataclass(frozen=True)
class NetworkConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    battery: BatteryParams = field(default_factory=BatteryParams)
    harvest: HarvestParams = field(default_factory=HarvestParams)
    deployment: DeploymentParams = field(default_factory=DeploymentParams)
    # None: max(300 m, 5 mean cell radii)
    window_radius_m: float | None = None

    @classmethod
    def paper(cls) -> "NetworkConfig":
        return cls()

    @classmethod
    def desk(cls) -> "NetworkConfig":
        """Reduced battery resolution (L = 200) with the same physical rates."""
        return cls(battery=BatteryParams(levels=200), harvest=HarvestParams(rate=20.0))

    # -- derived quantities -------------------------------------------------
    @property
    def eps(self) -> float:
        return self.battery.unit_watts

    @property
    def delta(self) -> float:
        return 2.0 / self.channel.alpha

    @property
    def levels(self) -> int:
        return self.battery.levels

    @property
    def broadcast_levels(self) -> int:
        """Highest battery level that can be broadcast (L minus the broadcast cost)."""
        return self.battery.levels - self.battery.broadcast_cost_units

    @property
    def lambda_mt_eff(self) -> float:
        return self.deployment.lambda_mt * self.battery.slot_scale

    @property
    def harvest_rate_eff(self) -> float:
        return self.harvest.rate * self.battery.slot_scale

    @property
    def mean_harvest_units(self) -> float:
        return self.harvest_rate_eff * self.harvest.burst_size

    @property
    def window_radius(self) -> float:
        if self.window_radius_m is not None:
            return self.window_radius_m
        return max(DEFAULT_WINDOW_RADIUS_M, 5.0 * self.deployment.bs_radius_m)

    def default_warmup(self) -> int:
        return int(math.ceil(20 * self.levels / max(self.mean_harvest_units, 1.0)))

    # -- flat key/value view ------------------------------------------------
    def to_flat(self) -> dict[str, Any]:
        c, b, h, d = self.channel, self.battery, self.harvest, self.deployment
        return {
            "kappa": c.kappa,
            "alpha": c.alpha,
            "mu_db": c.mu_db,
            "sigma_db": c.sigma_db,
            "nu": c.nu,
            "capacity_watts": b.capacity_watts,
            "levels": b.levels,
            "broadcast_cost_units": b.broadcast_cost_units,
            "slot_scale": b.slot_scale,
            "harvest_rate": h.rate,
            "burst_size": h.burst_size,
            "lambda_bs_per_m2": d.lambda_bs,
            "lambda_mt_per_m2": d.lambda_mt,
            "p_rx_dbm": watts_to_dbm(d.p_rx_watts),
            "n_rb": d.n_rb,
            "ongrid_pmax_watts": d.ongrid_pmax_watts,
            "window_radius_m": self.window_radius,
        }

    def with_values(self, **kv: Any) -> "NetworkConfig":
        """Return a copy with flat keys (see ``CONFIG_KEYS``) overridden."""
        return from_flat(kv, base=self)


_SECTION_OF = {
    "kappa": ("channel", "kappa", float),
    "alpha": ("channel", "alpha", float),
    "mu_db": ("channel", "mu_db", float),
    "sigma_db": ("channel", "sigma_db", float),
    "nu": ("channel", "nu", float),
    "capacity_watts": ("battery", "capacity_watts", float),
    "levels": ("battery", "levels", int),
    "broadcast_cost_units": ("battery", "broadcast_cost_units", int),
    "slot_scale": ("battery", "slot_scale", float),
    "harvest_rate": ("harvest", "rate", float),
    "burst_size": ("harvest", "burst_size", int),
    "lambda_bs_per_m2": ("deployment", "lambda_bs", float),
    "lambda_mt_per_m2": ("deployment", "lambda_mt", float),
    "p_rx_dbm": ("deployment", "p_rx_watts", dbm_to_watts),
    "n_rb": ("deployment", "n_rb", int),
    "ongrid_pmax_watts": ("deployment", "ongrid_pmax_watts", float),
    "window_radius_m": (None, "window_radius_m", float),
}

# keys that are convenient to sweep but map onto other fields
_DERIVED_KEYS = {
    "bs_radius_m": lambda v: {"lambda_bs_per_m2": 1.0 / (math.pi * float(v) ** 2)},
    "ongrid_pmax_mw": lambda v: {"ongrid_pmax_watts": float(v) * 1e-3},
}

CONFIG_KEYS = tuple(_SECTION_OF) + tuple(_DERIVED_KEYS)


def _coerce_int(name: str, value: Any) -> int:
    if isinstance(value, bool):
        raise InvalidParameter([(name, "must be an integer")])
    if isinstance(value, float):
        if not value.is_integer():
            raise InvalidParameter([(name, "must be an integer")])
        return int(value)
    return int(value)


def from_flat(values: Mapping[str, Any], base: NetworkConfig | None = None) -> NetworkConfig:
    """Build a config from flat ``key -> value`` pairs on top of ``base``.

    Unknown keys raise :class:`InvalidParameter`.
    """
    cfg = base if base is not None else NetworkConfig()
    expanded: dict[str, Any] = {}
    unknown = []
    for key, value in values.items():
        if key in _DERIVED_KEYS:
            expanded.update(_DERIVED_KEYS[key](value))
        elif key in _SECTION_OF:
            expanded[key] = value
        else:
            unknown.append((key, "unknown key"))
    if unknown:
        raise InvalidParameter(unknown)

    sections: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    problems = []
    for key, value in expanded.items():
        section, attr, conv = _SECTION_OF[key]
        try:
            if conv is int:
                converted = _coerce_int(key, value)
            elif value is None and section is None:
                converted = None
            else:
                converted = conv(value)
        except InvalidParameter as exc:
            problems.extend(exc.problems)
            continue
        except (TypeError, ValueError):
            problems.append((key, f"cannot interpret {value!r}"))
            continue
        if section is None:
            top[attr] = converted
        else:
            sections.setdefault(section, {})[attr] = converted
    if problems:
        raise InvalidParameter(problems)

    updates = {name: replace(getattr(cfg, name), **kv) for name, kv in sections.items()}
    return replace(cfg, **updates, **top)


def validate(cfg: NetworkConfig) -> NetworkConfig:
    """Check every parameter constraint and return the config unchanged.

    The dataclasses are frozen and all derived quantities are computed from
    the stored fields, so a config that passes is already normalised and
    ``validate`` is idempotent.
    """
    p: list[tuple[str, str]] = []
    c, b, h, d = cfg.channel, cfg.battery, cfg.harvest, cfg.deployment

    def finite(x):
        return isinstance(x, (int, float)) and math.isfinite(x)

    if not (finite(c.kappa) and c.kappa > 0):
        p.append(("kappa", "must be > 0"))
    if not (finite(c.alpha) and c.alpha > 2):
        p.append(("alpha", "must be > 2"))
    if not finite(c.mu_db):
        p.append(("mu_db", "must be finite"))
    if not (finite(c.sigma_db) and c.sigma_db >= 0):
        p.append(("sigma_db", "must be >= 0"))
    if not (finite(c.nu) and c.nu > 0):
        p.append(("nu", "must be > 0"))

    if not (finite(b.capacity_watts) and b.capacity_watts > 0):
        p.append(("capacity_watts", "must be > 0"))
    if not (isinstance(b.levels, int) and b.levels >= 1):
        p.append(("levels", "must be a positive integer"))
    if not (isinstance(b.broadcast_cost_units, int) and b.broadcast_cost_units >= 0):
        p.append(("broadcast_cost_units", "must be a nonnegative integer"))
    elif isinstance(b.levels, int) and b.levels >= 1 and b.broadcast_cost_units >= b.levels:
        p.append(("broadcast_cost_units", "must be < levels"))
    if not (finite(b.slot_scale) and b.slot_scale > 0):
        p.append(("slot_scale", "must be > 0"))

    if not (finite(h.rate) and h.rate >= 0):
        p.append(("harvest_rate", "must be >= 0"))
    if not (isinstance(h.burst_size, int) and h.burst_size >= 1):
        p.append(("burst_size", "must be an integer >= 1"))

    if not (finite(d.lambda_bs) and d.lambda_bs > 0):
        p.append(("lambda_bs_per_m2", "must be > 0"))
    if not (finite(d.lambda_mt) and d.lambda_mt >= 0):
        p.append(("lambda_mt_per_m2", "must be >= 0"))
    if not (finite(d.p_rx_watts) and d.p_rx_watts > 0):
        p.append(("p_rx_dbm", "must be a finite power"))
    if not (isinstance(d.n_rb, int) and d.n_rb >= 1):
        p.append(("n_rb", "must be a positive integer"))
    if not (finite(d.ongrid_pmax_watts) and d.ongrid_pmax_watts > 0):
        p.append(("ongrid_pmax_watts", "must be > 0"))

    if cfg.window_radius_m is not None:
        if not (finite(cfg.window_radius_m) and cfg.window_radius_m > 0):
            p.append(("window_radius_m", "must be > 0"))
        elif finite(d.lambda_bs) and d.lambda_bs > 0:
            if cfg.window_radius_m < 5.0 * d.bs_radius_m * (1 - 1e-12):
                p.append(("window_radius_m", "must be >= 5 mean cell radii"))

    if p:
        raise InvalidParameter(p)
    return cfg


def load_config(path: str | Path, base: NetworkConfig | None = None) -> NetworkConfig:
    """Read a flat ``key = value`` file (TOML syntax, no tables) and validate it."""
    text = Path(path).read_text()
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InvalidParameter([("<file>", f"parse error: {exc}")]) from None
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise InvalidParameter([(k, "tables are not allowed; use flat keys") for k in nested])
    return validate(from_flat(raw, base=base))


def dump_config(cfg: NetworkConfig) -> str:
    lines = []
    for key, value in cfg.to_flat().items():
        if isinstance(value, float):
            lines.append(f"{key} = {value!r}")
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


__all__ = [
    "ZETA", "InvalidParameter", "SchemePolicy", "ChannelParams", "BatteryParams",
    "HarvestParams", "DeploymentParams", "NetworkConfig", "CONFIG_KEYS",
    "dbm_to_watts", "watts_to_dbm", "db_to_linear", "watts_to_units",
    "from_flat", "validate", "load_config", "dump_config",
]
