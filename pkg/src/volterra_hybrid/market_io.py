"""Market data files and run configuration.

Three strict CSV schemas (comma separated, dot decimals, mandatory header):

    curve          maturity_years,discount_factor
    cap quotes     maturity_years,atm_lognormal_vol
    option quotes  maturity_years,strike,implied_vol

and one YAML configuration holding the model legs, engine and simulation
settings and the data file paths.  Unknown configuration keys are rejected.
Every error names the file, line, column and reason.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .calibration import CalibOptions, CapQuote, OptionQuote
from .charfn import EquityLegParams, ModelParams
from .kernels import KernelSpec
from .montecarlo import SimConfig
from .rates import RateLegParams

__all__ = [
    "Config",
    "CurveData",
    "EngineSettings",
    "MarketDataError",
    "MarketSettings",
    "config_to_dict",
    "dump_config",
    "load_cap_quotes",
    "load_config",
    "load_curve",
    "load_option_quotes",
    "parse_config",
    "write_cap_quotes",
    "write_curve",
    "write_option_quotes",
]

CURVE_HEADER = ("maturity_years", "discount_factor")
CAP_HEADER = ("maturity_years", "atm_lognormal_vol")
OPTION_HEADER = ("maturity_years", "strike", "implied_vol")


class MarketDataError(ValueError):
    """Malformed or out-of-range input, located by file, line and column (1-based)."""

    def __init__(self, path: str | Path, line: int, column: int, reason: str):
        self.path, self.line, self.column, self.reason = str(path), line, column, reason
        super().__init__(f"{self.path}:{line}:{column}: {reason}")


@dataclass(frozen=True)
class CurveData:
    pillars: np.ndarray
    discounts: np.ndarray


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _read_rows(path: str | Path, header: tuple[str, ...]) -> list[tuple[int, list[tuple[int, str]]]]:
    """Data rows as (line number, [(column, text), ...]) after checking the header."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MarketDataError(path, 0, 0, f"cannot read file ({exc.strerror})") from None
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise MarketDataError(path, 1, 1, "no data rows")
    got = tuple(h.strip() for h in lines[0].lstrip("﻿").split(","))
    if got != header:
        raise MarketDataError(path, 1, 1, f"expected header {','.join(header)!r}, got {lines[0]!r}")
    rows = []
    for number, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cells, col = [], 1
        for part in raw.split(","):
            cells.append((col, part))
            col += len(part) + 1
        if len(cells) != len(header):
            raise MarketDataError(path, number, 1, f"expected {len(header)} fields, found {len(cells)}")
        rows.append((number, cells))
    if not rows:
        raise MarketDataError(path, 2, 1, "no data rows")
    return rows


def _number(path, line: int, cell: tuple[int, str], name: str) -> float:
    col, text = cell
    try:
        value = float(text.strip())
    except ValueError:
        raise MarketDataError(path, line, col, f"{name}: {text.strip()!r} is not a number") from None
    if not math.isfinite(value):
        raise MarketDataError(path, line, col, f"{name} must be finite")
    return value


def load_curve(path: str | Path) -> CurveData:
    """Pillars (sorted ascending) and discount factors in (0, 1.5]."""
    rows = _read_rows(path, CURVE_HEADER)
    items = []
    for line, cells in rows:
        t = _number(path, line, cells[0], "maturity_years")
        p = _number(path, line, cells[1], "discount_factor")
        if t <= 0:
            raise MarketDataError(path, line, cells[0][0], "maturity_years must be positive")
        if not 0 < p <= 1.5:
            raise MarketDataError(path, line, cells[1][0], "discount_factor must lie in (0, 1.5]")
        items.append((t, p, line, cells[0][0]))
    items.sort(key=lambda r: r[0])
    for prev, cur in zip(items, items[1:]):
        if cur[0] == prev[0]:
            raise MarketDataError(path, cur[2], cur[3], f"duplicate pillar {cur[0]} (also on line {prev[2]})")
    return CurveData(np.array([r[0] for r in items]), np.array([r[1] for r in items]))


def _vol(path, line: int, cell, name: str) -> float:
    v = _number(path, line, cell, name)
    if not 0 < v < 5:
        raise MarketDataError(path, line, cell[0], f"{name} must lie in (0, 5), got {v}")
    return v


def load_cap_quotes(path: str | Path) -> list[CapQuote]:
    """ATM cap vols in file order."""
    out = []
    for line, cells in _read_rows(path, CAP_HEADER):
        t = _number(path, line, cells[0], "maturity_years")
        if t <= 0:
            raise MarketDataError(path, line, cells[0][0], "maturity_years must be positive")
        out.append(CapQuote(t, _vol(path, line, cells[1], "atm_lognormal_vol")))
    return out


def load_option_quotes(path: str | Path) -> list[OptionQuote]:
    """Equity implied vols in file order."""
    out = []
    for line, cells in _read_rows(path, OPTION_HEADER):
        t = _number(path, line, cells[0], "maturity_years")
        k = _number(path, line, cells[1], "strike")
        if t <= 0:
            raise MarketDataError(path, line, cells[0][0], "maturity_years must be positive")
        if k <= 0:
            raise MarketDataError(path, line, cells[1][0], "strike must be positive")
        out.append(OptionQuote(t, k, _vol(path, line, cells[2], "implied_vol")))
    return out


def _write(path: str | Path, header: tuple[str, ...], rows) -> None:
    lines = [",".join(header)] + [",".join(repr(float(v)) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_curve(path: str | Path, curve: CurveData) -> None:
    _write(path, CURVE_HEADER, zip(curve.pillars, curve.discounts))


def write_cap_quotes(path: str | Path, quotes) -> None:
    _write(path, CAP_HEADER, ((q.maturity, q.vol) for q in quotes))


def write_option_quotes(path: str | Path, quotes) -> None:
    _write(path, OPTION_HEADER, ((q.maturity, q.strike, q.vol) for q in quotes))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EngineSettings:
    """Operator grid size, Laguerre level override and discretization choices."""

    N: int = 40
    L: int | None = None
    scheme: str = "midpoint"
    sigma_method: str = "closed"
    riccati_steps: int = 2000


@dataclass(frozen=True)
class MarketSettings:
    """Index spot and optional data file paths (relative to the config file)."""

    spot: float = 100.0
    curve: str | None = None
    cap_quotes: str | None = None
    option_quotes: str | None = None


@dataclass(frozen=True)
class Config:
    model: ModelParams
    engine: EngineSettings = field(default_factory=EngineSettings)
    simulation: SimConfig = field(default_factory=SimConfig)
    market: MarketSettings = field(default_factory=MarketSettings)
    calibration: CalibOptions = field(default_factory=CalibOptions)
    source: str = field(default="<config>", compare=False)

    def resolve(self, relative: str | None) -> Path | None:
        """A data path from the config, taken relative to the config file."""
        if relative is None:
            return None
        p = Path(relative)
        if p.is_absolute() or self.source.startswith("<"):
            return p
        return Path(self.source).parent / p


class _Marks:
    """Line/column lookup for YAML keys, by dotted path."""

    def __init__(self, source: str):
        self.source = source
        self.where: dict[str, tuple[int, int]] = {}

    def at(self, key: str) -> tuple[int, int]:
        while key and key not in self.where:
            key = key.rpartition(".")[0]
        return self.where.get(key, (1, 1))

    def error(self, key: str, reason: str) -> MarketDataError:
        line, col = self.at(key)
        return MarketDataError(self.source, line, col, reason)


def _compose(text: str, source: str, marks: _Marks) -> Any:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line, col = (mark.line + 1, mark.column + 1) if mark else (1, 1)
        raise MarketDataError(source, line, col, f"invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if root is None:
        raise MarketDataError(source, 1, 1, "empty configuration")

    def walk(node, path: str):
        marks.where.setdefault(path, (node.start_mark.line + 1, node.start_mark.column + 1))
        if isinstance(node, yaml.MappingNode):
            out = {}
            for key_node, value_node in node.value:
                key = key_node.value
                sub = f"{path}.{key}" if path else key
                if key in out:
                    raise MarketDataError(source, key_node.start_mark.line + 1, key_node.start_mark.column + 1, f"duplicate key {sub!r}")
                marks.where[sub] = (key_node.start_mark.line + 1, key_node.start_mark.column + 1)
                out[key] = walk(value_node, sub)
            return out
        if isinstance(node, yaml.SequenceNode):
            return [walk(v, f"{path}[{i}]") for i, v in enumerate(node.value)]
        return _scalar(node)

    return walk(root, "")


def _scalar(node: yaml.ScalarNode):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def _section(data: dict, name: str, allowed: set[str], marks: _Marks, required: set[str] = frozenset()) -> dict:
    if not isinstance(data, dict):
        raise marks.error(name, f"section {name!r} must be a mapping")
    unknown = set(data) - allowed
    if unknown:
        key = sorted(unknown)[0]
        raise marks.error(f"{name}.{key}" if name else key, f"unknown key {key!r} in {name or 'top level'}")
    missing = set(required) - set(data)
    if missing:
        raise marks.error(name, f"missing key {sorted(missing)[0]!r} in {name or 'top level'}")
    return data


def _kernel(data: Any, where: str, marks: _Marks) -> KernelSpec:
    if data is None:
        return KernelSpec.constant()
    if not isinstance(data, dict):
        raise marks.error(where, "kernel must be a mapping with a 'family' key")
    try:
        return KernelSpec.from_dict(data)
    except (ValueError, TypeError) as exc:
        raise marks.error(where, str(exc)) from None


def _build(cls, data: dict, name: str, marks: _Marks, **extra):
    try:
        return cls(**data, **extra)
    except (ValueError, TypeError) as exc:
        raise marks.error(name, f"{name}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> Config:
    """Config from YAML text; unknown keys and invalid values raise MarketDataError."""
    marks = _Marks(source)
    data = _compose(text, source, marks)
    top = _section(data, "", {"rates", "equity", "engine", "simulation", "market", "calibration"}, marks, {"rates", "equity"})
    rate_keys = {f.name for f in fields(RateLegParams)}
    eq_keys = {f.name for f in fields(EquityLegParams)}
    rates = dict(_section(top["rates"], "rates", rate_keys, marks, {"kappa_r", "eta_r"}))
    rates["kernel"] = _kernel(rates.get("kernel"), "rates.kernel", marks)
    equity = dict(_section(top["equity"], "equity", eq_keys, marks, {"nu0", "theta_nu", "kappa_nu", "eta_nu"}))
    equity["kernel"] = _kernel(equity.get("kernel"), "equity.kernel", marks)
    model = ModelParams(_build(RateLegParams, rates, "rates", marks), _build(EquityLegParams, equity, "equity", marks))
    parts = {}
    for name, cls in (("engine", EngineSettings), ("simulation", SimConfig), ("market", MarketSettings), ("calibration", CalibOptions)):
        section = top.get(name) or {}
        _section(section, name, {f.name for f in fields(cls)}, marks)
        parts[name] = _build(cls, section, name, marks)
    engine = parts["engine"]
    if engine.scheme not in ("left", "midpoint"):
        raise marks.error("engine.scheme", "engine.scheme must be 'left' or 'midpoint'")
    if engine.sigma_method not in ("closed", "quadrature"):
        raise marks.error("engine.sigma_method", "engine.sigma_method must be 'closed' or 'quadrature'")
    return Config(model, engine, parts["simulation"], parts["market"], parts["calibration"], source)


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MarketDataError(path, 0, 0, f"cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_to_dict(config: Config) -> dict:
    rates = config.model.rates
    eq = config.model.equity
    return _plain(
        {
            "rates": {"kappa_r": rates.kappa_r, "eta_r": rates.eta_r, "kernel": rates.kernel.to_dict()},
            "equity": {**{f.name: getattr(eq, f.name) for f in fields(eq) if f.name != "kernel"}, "kernel": eq.kernel.to_dict()},
            "engine": asdict(config.engine),
            "simulation": asdict(config.simulation),
            "market": asdict(config.market),
            "calibration": asdict(config.calibration),
        }
    )


def dump_config(config: Config) -> str:
    """YAML text that parses back to an equal Config."""
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)
