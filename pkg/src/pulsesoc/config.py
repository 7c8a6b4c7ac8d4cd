"""TOML run configuration.

Recognised tables and keys (all optional; defaults in parentheses)::

    [cell]
    capacity_ah (3.0)      r0 (0.03)            r0_soc_coeff (2.0)
    rc_pairs ([[0.015, 2000.0], [0.02, 30000.0]])
    eta_charge (0.99)      eta_discharge (1.0)
    v_min (2.5)            v_max (4.2)          i_cutoff_a (0.15)
    i_max_charge_a (4.0)   i_max_discharge_a (15.0)
    ocv_table              list of [soc, volts] rows, strictly sorted, 0 to 1

    [aging]
    fade_per_fce (0.005)   r0_growth_per_fce (0.005)

    [protocol]
    breakpoints ([0.9, ..., 0.2])  pulse_c_rate (1.0)  pulse_s (60)
    inter_rest_s (60)  relax_s (3600)  full_rest_s (5400)
    charge_c_rate (1.0)  discharge_c_rate (1.0)

    [procedure]
    until (0.8)  cycles_per_check (5)

Schema errors name the file and line of the offending key.
"""

from __future__ import annotations

import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .cell import AgingParams, CellParams
from .protocol import PulseTrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    cell: CellParams = field(default_factory=CellParams)
    aging: AgingParams = field(default_factory=AgingParams)
    pulse: PulseTrainConfig = field(default_factory=PulseTrainConfig)
    until: float = 0.8
    cycles_per_check: int = 5

    def to_dict(self) -> dict:
        return {
            "cell": asdict(self.cell),
            "aging": asdict(self.aging),
            "protocol": asdict(self.pulse),
            "procedure": {"until": self.until, "cycles_per_check": self.cycles_per_check},
        }


_SECTIONS = {"cell": CellParams, "aging": AgingParams, "protocol": PulseTrainConfig}
_PROCEDURE = {"until": float, "cycles_per_check": int}
_TUPLE_KEYS = {"rc_pairs", "ocv_table", "breakpoints"}


def _line_of(text: str, section: str, key: str | None) -> int:
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return n
            continue
        if current == section and key and re.match(rf"{re.escape(key)}\s*=", stripped):
            return n
        if current is None and key is None and re.match(rf"{re.escape(section)}\s*=", stripped):
            return n
    return 0


def _freeze(key, value):
    if key in _TUPLE_KEYS:
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    def fail(section, key, msg):
        raise ConfigError(f"{source}:{_line_of(text, section, key)}: {msg}")

    built = {}
    for section, values in doc.items():
        if not isinstance(values, dict):
            fail(section, None, f"top-level key {section!r} must be a table")
        if section == "procedure":
            for k, v in values.items():
                if k not in _PROCEDURE:
                    fail(section, k, f"unknown key {k!r} in [procedure]")
                if not isinstance(v, (int, float)) or isinstance(v, bool):
                    fail(section, k, f"{k} must be a number")
            continue
        cls = _SECTIONS.get(section)
        if cls is None:
            fail(section, None, f"unknown table [{section}]")
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in known:
                fail(section, k, f"unknown key {k!r} in [{section}]")
            kwargs[k] = _freeze(k, v)
        try:
            built[section] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            fail(section, next(iter(values), None), f"[{section}] {exc}")
    proc = doc.get("procedure", {})
    until = float(proc.get("until", 0.8))
    if not 0.0 < until <= 1.0:
        fail("procedure", "until", "until must lie in (0, 1]")
    k = proc.get("cycles_per_check", 5)
    if int(k) != k or k < 1:
        fail("procedure", "cycles_per_check", "cycles_per_check must be a positive integer")
    return RunConfig(built.get("cell", CellParams()), built.get("aging", AgingParams()),
                     built.get("protocol", PulseTrainConfig()), until, int(k))


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text(), str(p))
