"""Command-line entry point.

Every subcommand reads a YAML configuration (``--config``) and writes
plot-ready long-format CSV or JSON files into ``--out``.  Exit status is 0 on
success, 1 for invalid input and 2 when a numerical routine fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

COMMANDS = (
    "strip-curve",
    "price-bond",
    "price-cap",
    "price-option",
    "charfn",
    "smile",
    "atm-skew",
    "calibrate-rates",
    "calibrate-equity",
    "simulate",
    "compare-methods",
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML configuration file")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    common.add_argument("--seed", type=int, default=None, help="override the simulation/optimizer seed")
    common.add_argument("--grid-n", type=int, default=None, help="override the operator grid size N")
    common.add_argument("--quad-l", type=int, default=None, help="override the Gauss-Laguerre level L")
    common.add_argument("--curve", default=None, help="discount curve CSV (overrides the config)")

    parser = argparse.ArgumentParser(prog="volterra-hybrid", description="Volterra hybrid equity/rates model toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text)

    add("strip-curve", "strip the piecewise-constant r0 from the discount curve")
    p = add("price-bond", "model zero-coupon bond prices")
    p.add_argument("--maturities", type=_floats, required=True)
    p = add("price-cap", "cap prices and Black implied vols")
    p.add_argument("--maturities", type=_floats, required=True)
    p.add_argument("--strike", type=float, default=None, help="cap strike (ATM swap rate when omitted)")
    p.add_argument("--side", choices=("cap", "floor"), default="cap")
    for name, text in (("price-option", "European call/put prices and implied vols"), ("smile", "implied-vol smile per maturity")):
        p = add(name, text)
        p.add_argument("--maturities", type=_floats, required=True)
        p.add_argument("--strikes", type=_floats, required=True)
    p = add("charfn", "dump the characteristic function along Re z = 1/2")
    p.add_argument("--maturity", type=float, required=True)
    p.add_argument("--u-max", type=float, default=50.0)
    p.add_argument("--u-count", type=int, default=201)
    p.add_argument("--method", choices=("operator", "riccati", "stein-stein"), default="operator")
    p = add("atm-skew", "ATM implied vol and skew term structure")
    p.add_argument("--maturities", type=_floats, required=True)
    p.add_argument("--bump", type=float, default=0.01)
    p = add("calibrate-rates", "fit the rate leg to ATM cap vols")
    p.add_argument("--cap-quotes", default=None)
    p.add_argument("--max-evals", type=int, default=None)
    p = add("calibrate-equity", "fit the volatility leg to an implied-vol surface")
    p.add_argument("--option-quotes", default=None)
    p.add_argument("--max-evals", type=int, default=None)
    p = add("simulate", "Monte Carlo prices with 95%% intervals next to Fourier prices")
    p.add_argument("--maturity", type=float, required=True)
    p.add_argument("--strikes", type=_floats, required=True)
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--dump-paths", type=int, default=0, help="write this many sample paths to paths.csv")
    p = add("compare-methods", "operator discretization vs multi-factor Riccati ATM vols")
    p.add_argument("--maturity", type=float, default=1.0)
    p.add_argument("--grid-list", type=_ints, default=[10, 20, 40, 80])
    p.add_argument("--factors-list", type=_ints, default=[2, 5, 10, 20])
    p.add_argument("--steps", type=int, default=None, help="Riccati time steps")
    return parser


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    return repr(float(v))


class _Context:
    """Configuration, overrides and lazily stripped curve shared by the commands."""

    def __init__(self, args):
        from .market_io import load_config, load_curve

        self.args = args
        self.config = load_config(args.config)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        eng = self.config.engine
        self.N = args.grid_n if args.grid_n is not None else eng.N
        self.L = args.quad_l if args.quad_l is not None else eng.L
        curve_path = args.curve or self.config.resolve(self.config.market.curve)
        self._curve_data = load_curve(curve_path) if curve_path else None
        self._curve = None

    @property
    def model(self):
        return self.config.model

    def curve_data(self):
        if self._curve_data is None:
            raise ValueError("this command needs a discount curve (--curve or market.curve)")
        return self._curve_data

    def curve(self):
        from .rates import strip_r0

        if self._curve is None:
            data = self.curve_data()
            self._curve = strip_r0(data.pillars, data.discounts, self.model.rates)
        return self._curve

    def discount(self, T: float) -> float:
        """P(0,T) from the stripped curve, or 1 without a curve."""
        from .rates import bond_price

        if self._curve_data is None:
            return 1.0
        return float(bond_price(self.curve(), None, T))

    def engine(self, T: float):
        from .charfn import build_engine

        eng = self.config.engine
        return build_engine(self.model, T, self.N, scheme=eng.scheme, sigma_method=eng.sigma_method)

    def request(self, T: float, strikes):
        from .fourier import OptionRequest

        return OptionRequest(T, tuple(strikes), self.config.market.spot, self.discount(T))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_strip_curve(ctx: _Context) -> list[Path]:
    curve = ctx.curve()
    starts = [0.0] + list(curve.pillars[:-1])
    path = ctx.out / "r0.csv"
    _write_csv(path, ["segment_start", "segment_end", "r0"], zip(starts, curve.pillars, curve.r0))
    return [path]


def cmd_price_bond(ctx: _Context) -> list[Path]:
    from .rates import bond_price

    mats = ctx.args.maturities
    prices = bond_price(ctx.curve(), None, mats)
    path = ctx.out / "bond.csv"
    _write_csv(path, ["maturity_years", "discount_factor"], zip(mats, prices))
    return [path]


def cmd_price_cap(ctx: _Context) -> list[Path]:
    from .rates import CapSpec, atm_cap_strike, cap_implied_vol, cap_price, quarterly_schedule

    rows = []
    for m in ctx.args.maturities:
        dates = quarterly_schedule(m)
        strike = ctx.args.strike if ctx.args.strike is not None else atm_cap_strike(ctx.curve(), dates)
        spec = CapSpec(dates, strike, ctx.args.side)
        price = cap_price(ctx.curve(), None, spec)
        rows.append((m, strike, price, cap_implied_vol(ctx.curve(), spec, price)))
    path = ctx.out / "caps.csv"
    _write_csv(path, ["maturity_years", "strike", "price", "implied_vol"], rows)
    return [path]


def cmd_price_option(ctx: _Context) -> list[Path]:
    from .fourier import implied_vols_from_calls, lewis_call, lewis_put

    rows = []
    for T in ctx.args.maturities:
        engine = ctx.engine(T)
        req = ctx.request(T, ctx.args.strikes)
        calls = lewis_call(engine, req, ctx.L)
        puts = lewis_put(engine, req, ctx.L)
        vols = implied_vols_from_calls(calls, req)
        rows += [(T, K, c, p, v) for K, c, p, v in zip(req.strikes, calls, puts, vols)]
    path = ctx.out / "options.csv"
    _write_csv(path, ["maturity_years", "strike", "call_price", "put_price", "implied_vol"], rows)
    return [path]


def cmd_smile(ctx: _Context) -> list[Path]:
    from .fourier import smile

    rows = []
    for T in ctx.args.maturities:
        req = ctx.request(T, ctx.args.strikes)
        rows += [(T, K, v) for K, v in zip(req.strikes, smile(ctx.engine(T), req, ctx.L))]
    path = ctx.out / "smile.csv"
    _write_csv(path, ["maturity_years", "strike", "implied_vol"], rows)
    return [path]


def cmd_charfn(ctx: _Context) -> list[Path]:
    import numpy as np

    from .charfn import charfn
    from .riccati import riccati_charfn, stein_stein_charfn

    a = ctx.args
    if a.u_count < 2:
        raise ValueError("--u-count must be at least 2")
    u = np.linspace(0.0, a.u_max, a.u_count)
    z = 0.5 + 1j * u
    if a.method == "operator":
        phi = charfn(ctx.engine(a.maturity), z)
    elif a.method == "riccati":
        phi = riccati_charfn(ctx.model, a.maturity, z, ctx.config.engine.riccati_steps)
    else:
        phi = stein_stein_charfn(ctx.model, a.maturity, z)
    path = ctx.out / "charfn.csv"
    _write_csv(path, ["u", "re_phi", "im_phi"], zip(u, np.real(phi), np.imag(phi)))
    return [path]


def cmd_atm_skew(ctx: _Context) -> list[Path]:
    from .fourier import OptionRequest, atm_skew, smile

    rows = []
    for T in ctx.args.maturities:
        engine = ctx.engine(T)
        atm = smile(engine, OptionRequest.from_forward(T, [1.0], 1.0), ctx.L)[0]
        rows.append((T, atm, atm_skew(engine, T, ctx.args.bump, ctx.L)))
    path = ctx.out / "atm_skew.csv"
    _write_csv(path, ["maturity_years", "atm_vol", "atm_skew"], rows)
    return [path]


def _calib_options(ctx: _Context):
    from dataclasses import replace

    opts = ctx.config.calibration
    changes = {}
    if getattr(ctx.args, "max_evals", None) is not None:
        changes["max_evals"] = ctx.args.max_evals
    if ctx.args.seed is not None:
        changes["seed"] = ctx.args.seed
    if ctx.args.grid_n is not None:
        changes["N"] = ctx.args.grid_n
    if ctx.args.quad_l is not None:
        changes["L"] = ctx.args.quad_l
    return replace(opts, **changes)


def _write_report(ctx: _Context, report, stem: str, config) -> list[Path]:
    from .market_io import dump_config

    data = report.to_dict()
    print(f"{stem}: rmse {report.rmse:.6e} after {report.evaluations} evaluations in {report.wall_time:.1f}s", file=sys.stderr)
    data.pop("wall_time")
    json_path = ctx.out / f"{stem}.json"
    json_path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    keys = [k for k in report.quotes[0] if k not in ("market_vol", "model_vol")]
    csv_path = ctx.out / f"{stem}_residuals.csv"
    _write_csv(csv_path, keys + ["market_vol", "model_vol", "residual"], report.residual_rows())
    cfg_path = ctx.out / f"{stem}_config.yaml"
    cfg_path.write_text(dump_config(config), encoding="utf-8")
    return [json_path, csv_path, cfg_path]


def cmd_calibrate_rates(ctx: _Context) -> list[Path]:
    from dataclasses import replace

    from .calibration import calibrate_rates
    from .market_io import load_cap_quotes

    path = ctx.args.cap_quotes or ctx.config.resolve(ctx.config.market.cap_quotes)
    if not path:
        raise ValueError("calibrate-rates needs cap quotes (--cap-quotes or market.cap_quotes)")
    report = calibrate_rates(ctx.curve_data(), load_cap_quotes(path), ctx.model.rates, _calib_options(ctx))
    config = replace(ctx.config, model=replace(ctx.model, rates=report.fitted))
    return _write_report(ctx, report, "calibration_rates", config)


def cmd_calibrate_equity(ctx: _Context) -> list[Path]:
    from dataclasses import replace

    from .calibration import calibrate_equity
    from .market_io import load_option_quotes

    path = ctx.args.option_quotes or ctx.config.resolve(ctx.config.market.option_quotes)
    if not path:
        raise ValueError("calibrate-equity needs option quotes (--option-quotes or market.option_quotes)")
    quotes = load_option_quotes(path)
    spot = ctx.config.market.spot
    forwards = {q.maturity: spot / ctx.discount(q.maturity) for q in quotes}
    report = calibrate_equity(ctx.model.rates, quotes, ctx.model.equity, _calib_options(ctx), forwards=forwards)
    config = replace(ctx.config, model=replace(ctx.model, equity=report.fitted))
    return _write_report(ctx, report, "calibration_equity", config)


def cmd_simulate(ctx: _Context) -> list[Path]:
    from dataclasses import replace

    from .fourier import lewis_call
    from .montecarlo import simulate_equity

    a = ctx.args
    sim = ctx.config.simulation
    changes = {k: v for k, v in (("paths", a.paths), ("steps", a.steps), ("seed", a.seed)) if v is not None}
    sim = replace(sim, **changes)
    req = ctx.request(a.maturity, a.strikes)
    r0 = ctx.curve() if ctx._curve_data is not None else None
    res = simulate_equity(ctx.model, a.maturity, sim, a.strikes, forward=req.forward, discount=req.discount, record_paths=a.dump_paths, r0_curve=r0)
    fourier = lewis_call(ctx.engine(a.maturity), req, ctx.L)
    path = ctx.out / "mc.csv"
    rows = zip(res.strikes, res.prices, res.stderr, res.ci_low, res.ci_high, fourier)
    _write_csv(path, ["strike", "mc_price", "stderr", "ci_low", "ci_high", "fourier_price"], rows)
    written = [path]
    print(f"simulate: terminal forward mean {res.forward_mean:.6f} +- {res.forward_stderr:.6f} (forward {req.forward:.6f})", file=sys.stderr)
    if a.dump_paths and res.paths:
        import numpy as np

        p = res.paths
        n = len(p["nu"])
        r = p.get("r", np.full_like(p["nu"], np.nan))
        rows = ((i, t, r[i, k], p["nu"][i, k], p["logI"][i, k]) for i in range(n) for k, t in enumerate(p["t"]))
        dump = ctx.out / "paths.csv"
        _write_csv(dump, ["path_id", "t", "r", "nu", "logI"], rows)
        written.append(dump)
    return written


def cmd_compare_methods(ctx: _Context) -> list[Path]:
    from .charfn import build_engine
    from .fourier import OptionRequest, implied_vols_from_calls, lewis_call, lewis_call_mgf
    from .riccati import multifactor_reduce, riccati_charfn

    a = ctx.args
    T = a.maturity
    kernel = ctx.model.equity.kernel
    req = OptionRequest.from_forward(T, [1.0], 1.0)
    steps = a.steps or ctx.config.engine.riccati_steps
    rows = []
    for n in a.grid_list:
        start = time.perf_counter()
        engine = build_engine(ctx.model, T, n, scheme=ctx.config.engine.scheme, sigma_method=ctx.config.engine.sigma_method)
        vol = implied_vols_from_calls(lewis_call(engine, req, ctx.L), req)[0]
        rows.append(("operator", n, vol, time.perf_counter() - start))
    for nf in a.factors_list:
        start = time.perf_counter()
        factors = multifactor_reduce(kernel, nf, T)
        model = ctx.model.with_equity(kernel=factors.to_kernel())
        calls = lewis_call_mgf(lambda z: riccati_charfn(model, T, z, steps), req, ctx.L)  # noqa: B023
        vol = implied_vols_from_calls(calls, req)[0]
        rows.append(("riccati", nf, vol, time.perf_counter() - start))
    path = ctx.out / "compare_methods.csv"
    _write_csv(path, ["method", "size", "atm_vol", "wall_time"], rows)
    return [path]


HANDLERS = {
    "strip-curve": cmd_strip_curve,
    "price-bond": cmd_price_bond,
    "price-cap": cmd_price_cap,
    "price-option": cmd_price_option,
    "charfn": cmd_charfn,
    "smile": cmd_smile,
    "atm-skew": cmd_atm_skew,
    "calibrate-rates": cmd_calibrate_rates,
    "calibrate-equity": cmd_calibrate_equity,
    "simulate": cmd_simulate,
    "compare-methods": cmd_compare_methods,
}


def _limit_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def run(argv: list[str] | None = None) -> int:
    """Execute one command; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        _limit_threads(args.threads)
        if not Path(args.config).is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        ctx = _Context(args)
        for path in HANDLERS[args.command](ctx):
            print(path)
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, KeyError, OSError) as exc:
        # numpy.linalg.LinAlgError derives from ValueError but is a numerical failure
        if type(exc).__name__ == "LinAlgError":
            print(f"error: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
