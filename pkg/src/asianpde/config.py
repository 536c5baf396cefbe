"""Plain-text run configuration (INI: ``key = value`` lines under ``[section]`` headers).

Grammar::

    [market]                 # required by price / verify-key-lemma
    rate = 0.0               # >= 0
    maturity = 1.0           # > 0
    volatility = 1.0         # > 0
    strike = 0.0             # must be 0
    dividend_density = (0, 0.0)              # (t_start, value) pairs
    weighting_density = (0, 1.0), (0.5, 2.0)

    [grid]
    nx = 1025
    nt = 1025

    [monte_carlo]
    paths = 100000
    steps = 1000
    seed = 12345
    scheme = exact-y         # or euler-x

    [price]
    t = 0.0
    x = 1.0

    [frame]
    t0 = 0.5
    r_list = 0.1, 0.15, 0.2, 0.3, 0.4
    mu = 2.0
    Lambda = 1.0
    lambda = 1.0
    M0 = 1.0

    [barrier]
    R = 6.0
    t_list = 0.5, 1.0, 2.0
    points = 101

    [convergence]
    levels = 17, 33, 65, 129

Keys are case-sensitive; unknown sections or keys are errors.
"""

from __future__ import annotations

import ast
import configparser
from pathlib import Path

from .strategy import MarketSpec, PiecewiseConstant


class ConfigError(ValueError):
    pass


def _float(v):
    return float(v)


def _int(v):
    return int(v, 0) if isinstance(v, str) else int(v)


def _floats(v):
    return tuple(float(p) for p in str(v).replace(";", ",").split(",") if p.strip())


def _ints(v):
    return tuple(int(p) for p in str(v).replace(";", ",").split(",") if p.strip())


def _pairs(v):
    parsed = ast.literal_eval("[" + v + "]")
    pairs = []
    for item in parsed:
        if not (isinstance(item, tuple) and len(item) == 2):
            raise ValueError(f"expected (t_start, value) pairs, got {item!r}")
        pairs.append((float(item[0]), float(item[1])))
    return pairs


SCHEMA = {
    "market": {
        "rate": _float, "maturity": _float, "volatility": _float, "strike": _float,
        "dividend_density": _pairs, "weighting_density": _pairs,
    },
    "grid": {"nx": _int, "nt": _int},
    "monte_carlo": {"paths": _int, "steps": _int, "seed": _int, "scheme": str},
    "price": {"t": _float, "x": _float},
    "frame": {"t0": _float, "r_list": _floats, "mu": _float, "Lambda": _float,
              "lambda": _float, "M0": _float},
    "barrier": {"R": _float, "t_list": _floats, "points": _int},
    "convergence": {"levels": _ints},
}


def read_config(path: str | Path) -> dict[str, dict]:
    """Parse and type-convert a configuration file; values are not range-checked here."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        out[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                out[section][key] = SCHEMA[section][key](raw.strip())
            except (ValueError, SyntaxError) as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from exc
    return out


def market_from_config(cfg: dict[str, dict]) -> MarketSpec:
    sec = cfg.get("market")
    if sec is None:
        raise ConfigError("missing [market] section")
    for key in ("rate", "maturity"):
        if key not in sec:
            raise ConfigError(f"[market] needs {key!r}")
    try:
        return MarketSpec(
            rate=sec["rate"],
            maturity=sec["maturity"],
            volatility=sec.get("volatility", 1.0),
            dividend_density=PiecewiseConstant.from_pairs(sec.get("dividend_density", [(0.0, 0.0)])),
            weighting_density=PiecewiseConstant.from_pairs(sec.get("weighting_density", [(0.0, 1.0)])),
            strike=sec.get("strike", 0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid market: {exc}") from exc


def load_market(path: str | Path) -> MarketSpec:
    return market_from_config(read_config(path))
