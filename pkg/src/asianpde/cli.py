"""Batch command line: pricing, bound verification, barrier tables, convergence studies.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 bound violation. Every CSV starts with ``#`` provenance lines carrying the
config hash, grid and seed. Files are written only after all computation for
the command has succeeded.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (check_derivative_decay, check_general_bound, check_key_lemma, fit_decay_rate,
                     frame_on_curve, general_frame, model_problem)
from .config import ConfigError, market_from_config, read_config
from .heatbarrier import BarrierSpec, barrier_1d, barrier_bound
from .pde import (MaximumPrincipleError, convergence_order, default_grid, heat_manufactured,
                  parabolic_levels, solve_general, solve_u2)
from .sde import SCHEMES, Payoff, estimate_u, simulate_endpoints
from .strategy import build_drift

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VIOLATION = 0, 2, 3, 4
COMMANDS = ("price", "verify-key-lemma", "verify-general", "barrier-table", "convergence", "sweep")
DEFAULT_SEED = 20081016


@dataclasses.dataclass
class RunConfig:
    command: str
    market_path: str | None = None
    out: str | None = None
    nx: int = 1025
    nt: int = 1025
    paths: int = 100_000
    steps: int = 1000
    seed: int | None = None
    scheme: str = "exact-y"
    t: float = 0.0
    x: float = 1.0
    t0: float = 0.5
    r_list: tuple[float, ...] = (0.1, 0.15, 0.2, 0.3, 0.4)
    mu: float = 2.0
    mu_list: tuple[float, ...] = (1.5, 2.0, 3.0)
    Lambda: float = 1.0
    lam: float = 1.0
    M0: float = 1.0
    R: float = 6.0
    t_list: tuple[float, ...] = (0.5, 1.0, 2.0)
    points: int = 101
    levels: tuple[int, ...] = (17, 33, 65, 129)
    workers: int = 1
    market: dict | None = None

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.command in COMMANDS, f"unknown command {self.command!r}")
        need(self.nx >= 3 and self.nt >= 3, "grid-nx and grid-nt must be >= 3")
        need(self.paths >= 1 and self.steps >= 1, "paths and steps must be positive")
        need(self.seed is None or 0 <= self.seed < 2 ** 64, "seed must be an unsigned 64-bit integer")
        need(self.scheme in SCHEMES, f"scheme must be one of {SCHEMES}")
        need(all(0 < r < 1 for r in self.r_list) and len(self.r_list) > 0, "r-list entries must lie in (0, 1)")
        need(all(m > 1 for m in self.mu_list) and self.mu > 1, "mu must exceed 1")
        need(0 < self.lam <= self.Lambda, "need 0 < lambda <= Lambda")
        need(self.M0 > 0, "M0 must be positive")
        need(self.R > 0, "R must be positive")
        need(all(t > 0 for t in self.t_list) and len(self.t_list) > 0, "barrier times must be positive")
        need(self.points >= 2, "points must be >= 2")
        need(len(self.levels) >= 3 and all(n >= 5 for n in self.levels), "need >= 3 levels of >= 5 nodes")
        need(len(set(self.levels)) == len(self.levels), "convergence levels must be distinct")
        need(self.workers >= 1, "workers must be positive")
        need(0 < self.t0 < 1, "t0 must lie in (0, 1)")
        for v in (self.t, self.x, self.t0, self.mu, self.Lambda, self.lam, self.M0, self.R):
            need(math.isfinite(v), "numeric fields must be finite")
        if self.command in ("price", "verify-key-lemma"):
            need(self.market is not None, f"{self.command} needs a [market] section (--config)")

    def digest(self) -> str:
        payload = dataclasses.asdict(self)
        payload.pop("out")
        payload.pop("workers")
        blob = json.dumps(payload, sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_FLAG_FIELDS = {
    "grid_nx": "nx", "grid_nt": "nt", "paths": "paths", "steps": "steps", "seed": "seed",
    "scheme": "scheme", "r_list": "r_list", "mu": "mu", "mu_list": "mu_list", "t": "t", "x": "x",
    "t0": "t0", "R": "R", "workers": "workers", "levels": "levels",
}

_SECTION_FIELDS = {
    ("grid", "nx"): "nx", ("grid", "nt"): "nt",
    ("monte_carlo", "paths"): "paths", ("monte_carlo", "steps"): "steps",
    ("monte_carlo", "seed"): "seed", ("monte_carlo", "scheme"): "scheme",
    ("price", "t"): "t", ("price", "x"): "x",
    ("frame", "t0"): "t0", ("frame", "r_list"): "r_list", ("frame", "mu"): "mu",
    ("frame", "Lambda"): "Lambda", ("frame", "lambda"): "lam", ("frame", "M0"): "M0",
    ("barrier", "R"): "R", ("barrier", "t_list"): "t_list", ("barrier", "points"): "points",
    ("convergence", "levels"): "levels",
}


def _float_list(text):
    try:
        return tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _int_list(text):
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asianpde", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="configuration file (INI grammar, see README)")
    p.add_argument("--out", help="output directory for CSV artifacts")
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--grid-nx", type=int)
    p.add_argument("--grid-nt", type=int)
    p.add_argument("--r-list", type=_float_list)
    p.add_argument("--mu", type=float)
    p.add_argument("--mu-list", type=_float_list)
    p.add_argument("--t", type=float, help="pricing time (original time)")
    p.add_argument("--x", type=float, help="pricing state")
    p.add_argument("--t0", type=float, help="anchor time of the frames")
    p.add_argument("--R", type=float, help="barrier half-width")
    p.add_argument("--levels", type=_int_list, help="convergence levels (spatial node counts)")
    p.add_argument("--workers", type=int)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command, out=args.out)
    if args.config:
        sections = read_config(args.config)
        if "market" in sections:
            market_from_config(sections)  # validate early
            cfg.market = sections["market"]
            cfg.market_path = str(args.config)
        for (sec, key), name in _SECTION_FIELDS.items():
            if key in sections.get(sec, {}):
                setattr(cfg, name, sections[sec][key])
    for flag, name in _FLAG_FIELDS.items():
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, name, val)
    cfg.validate()
    return cfg


class Artifact:
    """A CSV table buffered in memory until the command succeeds."""

    def __init__(self, name: str, cfg: RunConfig, extra: str = ""):
        self.name = name
        self.buf = io.StringIO()
        seed = cfg.seed if cfg.seed is not None else DEFAULT_SEED
        self.buf.write(f"# asianpde {__version__} command={cfg.command} config_hash={cfg.digest()}\n")
        self.buf.write(f"# grid={cfg.nx}x{cfg.nt} seed={seed}{extra}\n")
        self.writer = csv.writer(self.buf, lineterminator="\n")

    def row(self, *values):
        self.writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in values])


def _flush(artifacts, out_dir):
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for art in artifacts:
        fd, tmp = tempfile.mkstemp(dir=out, suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            fh.write(art.buf.getvalue())
        os.replace(tmp, out / art.name)


def _seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        print(f"*** no --seed given; using default seed {DEFAULT_SEED} ***", file=sys.stderr)
        return DEFAULT_SEED
    return cfg.seed


def cmd_price(cfg: RunConfig):
    market = market_from_config({"market": cfg.market})
    drift = build_drift(market)
    if not 0 <= cfg.t < market.maturity:
        raise ConfigError("pricing time must satisfy 0 <= t < T")
    seed = _seed(cfg)
    grid = default_grid(drift, cfg.nx, cfg.nt)
    if not grid.x_min <= cfg.x <= grid.x_max:
        raise ConfigError(f"x must lie in [{grid.x_min}, {grid.x_max}]")
    sol = solve_u2(drift, grid, market.volatility)
    u2_pde = sol.value_at(market.maturity - cfg.t, cfg.x)
    ens = simulate_endpoints(drift, cfg.t, cfg.x, cfg.paths, cfg.steps, cfg.scheme, seed,
                             market.volatility, cfg.workers)
    u2_mc, se = estimate_u(ens, Payoff("neg_part"))
    gap = abs(u2_pde - u2_mc)
    print(f"grid {cfg.nx}x{cfg.nt} on x in [{grid.x_min}, {grid.x_max}], T = {market.maturity}")
    print(f"u(t={cfg.t}, x={cfg.x}): PDE {cfg.x + u2_pde:.8f}  MC {cfg.x + u2_mc:.8f} +/- {se:.2e}")
    print(f"u2: PDE {u2_pde:.8f}  MC {u2_mc:.8f}  discrepancy {gap:.2e} ({gap / se if se else 0.0:.2f} stderr)")
    art = Artifact("price.csv", cfg, f" paths={cfg.paths} steps={cfg.steps} scheme={cfg.scheme}")
    art.row("t", "x", "u_pde", "u2_pde", "u_mc", "u2_mc", "stderr", "discrepancy")
    art.row(cfg.t, cfg.x, cfg.x + u2_pde, u2_pde, cfg.x + u2_mc, u2_mc, se, gap)
    return [art], True


def _report_rows(art, reports, k_fit):
    art.row("r", "lhs", "rhs", "ratio", "noise_floor", "k_fit")
    for rep in reports:
        art.row(rep.r, rep.lhs, rep.rhs, rep.ratio, rep.noise_floor, k_fit)


def _k_fit(reports, mu):
    samples = [(rep.r, rep.lhs) for rep in reports if rep.lhs > 10 * rep.noise_floor]
    try:
        return fit_decay_rate(samples, mu=mu)[0]
    except ValueError:
        return float("nan")


def cmd_verify_key_lemma(cfg: RunConfig):
    market = market_from_config({"market": cfg.market})
    if market.volatility != 1.0:
        raise ConfigError("verify-key-lemma uses the unit-volatility equation; set volatility = 1")
    drift = build_drift(market)
    grid = default_grid(drift, cfg.nx, cfg.nt)
    sol = solve_u2(drift, grid)
    ref = solve_u2(drift, grid.refined())
    t0 = cfg.t0 * market.maturity
    frames = [frame_on_curve(drift, t0, r) for r in cfg.r_list]
    reports = [check_key_lemma(sol, fr, drift.ell, reference=ref) for fr in frames]
    k_fit = _k_fit(reports, 2.0)
    art = Artifact("key_lemma.csv", cfg, f" m1={drift.m1!r} m2={drift.m2!r} t0={t0!r}")
    _report_rows(art, reports, k_fit)
    deriv = Artifact("derivative_decay.csv", cfg)
    deriv.row("r", "q", "envelope")
    for r, q, env in check_derivative_decay(sol, frames):
        deriv.row(r, q, env)
    for rep in reports:
        print(f"r={rep.r:<6g} lhs={rep.lhs:.3e} rhs={rep.rhs:.3e} ratio={rep.ratio:.3e} "
              f"noise={rep.noise_floor:.1e} {'ok' if rep.holds else 'VIOLATION'}")
    print(f"k_fit={k_fit:.4g} (k0={frames[0].k0:.4g})")
    return [art, deriv], all(rep.holds for rep in reports)


def general_reports(mu, Lambda, lam, M0, nx, nt, r_list, t0):
    """Bound reports for one model problem (module level so that it pickles)."""
    coef, data, grid = model_problem(mu, Lambda, lam, M0, nx, nt)
    sol = solve_general(coef, data, grid)
    coef_f, data_f, grid_f = model_problem(mu, Lambda, lam, M0, 2 * (nx - 1) + 1, 2 * (nt - 1) + 1)
    ref = solve_general(coef_f, data_f, grid_f)
    gf = general_frame(1, mu, lam, Lambda, M0)
    z0 = (t0, t0 / M0)
    reports = [check_general_bound(sol, gf, z0, r, reference=ref, coef=coef) for r in r_list]
    return reports, _k_fit(reports, mu)


def cmd_verify_general(cfg: RunConfig):
    reports, k_fit = general_reports(cfg.mu, cfg.Lambda, cfg.lam, cfg.M0, cfg.nx, cfg.nt, cfg.r_list, cfg.t0)
    art = Artifact("general_bound.csv", cfg, f" mu={cfg.mu!r} Lambda={cfg.Lambda!r} lambda={cfg.lam!r} M0={cfg.M0!r}")
    _report_rows(art, reports, k_fit)
    for rep in reports:
        print(f"mu={cfg.mu} r={rep.r:<6g} ratio={rep.ratio:.3e} {'ok' if rep.holds else 'VIOLATION'}")
    return [art], all(rep.holds for rep in reports)


def cmd_sweep(cfg: RunConfig):
    jobs = [(mu, cfg.Lambda, cfg.lam, cfg.M0, cfg.nx, cfg.nt, cfg.r_list, cfg.t0) for mu in cfg.mu_list]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(general_reports, *zip(*jobs)))
    else:
        results = [general_reports(*job) for job in jobs]
    art = Artifact("sweep.csv", cfg)
    art.row("mu", "r", "lhs", "rhs", "ratio", "noise_floor", "k_fit")
    ok = True
    for mu, (reports, k_fit) in zip(cfg.mu_list, results):
        for rep in reports:
            art.row(mu, rep.r, rep.lhs, rep.rhs, rep.ratio, rep.noise_floor, k_fit)
            ok &= rep.holds
        print(f"mu={mu}: max ratio {max(rep.ratio for rep in reports):.3e}, k_fit={k_fit:.4g}")
    return [art], ok


def cmd_barrier_table(cfg: RunConfig):
    spec = BarrierSpec(cfg.R)
    bound = barrier_bound(cfg.R)
    xs = np.linspace(-cfg.R, cfg.R, cfg.points)
    art = Artifact("barrier_table.csv", cfg, f" R={cfg.R!r}")
    art.row("t", "x", "v", "bound")
    for t in cfg.t_list:
        for x, v in zip(xs, barrier_1d(spec, t, xs)):
            art.row(float(t), float(x), float(v), bound)
    print(f"R={cfg.R}: bound on |x| <= R/2 at t=2 is {bound:.6e}")
    return [art], True


def cmd_convergence(cfg: RunConfig):
    problem = heat_manufactured()
    base = cfg.levels[0]
    # dt = h^2 / 4 on the base level, quartered with every halving of h.
    h0 = (problem.x_max - problem.x_min) / (base - 1)
    base_nt = math.ceil((problem.t_end - problem.t_start) / (h0 * h0 / 4)) + 1
    levels = parabolic_levels(base, len(cfg.levels), base_nt)
    if [nx for nx, _ in levels] != list(cfg.levels):
        raise ConfigError(f"levels must double the mesh: expected {[nx for nx, _ in levels]}")
    res = convergence_order(problem, levels)
    art = Artifact("convergence.csv", cfg, f" order={res.order!r}")
    art.row("n_x", "n_t", "h", "error")
    for (nx, nt), h, e in zip(levels, res.hs, res.errors):
        art.row(nx, nt, h, e)
    print(f"estimated order {res.order:.3f} over h = {', '.join(f'{h:.3g}' for h in res.hs)}")
    return [art], True


HANDLERS = {
    "price": cmd_price,
    "verify-key-lemma": cmd_verify_key_lemma,
    "verify-general": cmd_verify_general,
    "barrier-table": cmd_barrier_table,
    "convergence": cmd_convergence,
    "sweep": cmd_sweep,
}


def run(cfg: RunConfig) -> int:
    try:
        artifacts, ok = HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MaximumPrincipleError, FloatingPointError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _flush(artifacts, cfg.out)
    return EXIT_OK if ok else EXIT_VIOLATION


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
