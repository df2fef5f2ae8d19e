"""Command-line front end.

Every subcommand reads a JSON config (``--config``); command-line flags
override config values.  Relative file paths inside a config resolve against
the config file's directory.  Exit codes: 0 success, 1 numeric or validation
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import backtest as bt
from .calibration import CalibrationInstrument, calibrate_connection
from .errors import CurvedGreeksError
from .geometry import (
    FORWARD_VOL,
    SPOT_VOL,
    Chart,
    ChartMapAtPoint,
    Connection,
    Gradient,
    QuadraticForm,
    covariant_hessian,
    forward_to_log_forward,
    spot_to_forward,
    transform_connection,
    transform_gradient,
    transform_ordinary_hessian,
    transform_quadratic_form,
)
from .liquidity import (
    HedgeInstrumentSpec,
    ImpactMatrix,
    build_hedge_response,
    levi_civita,
    load_liquidity_file,
    pullback_penalty,
    regularize_penalty,
)
from .metric import load_grid_field, reconstruct_metric, save_grid_field
from .pricing import (
    VOL_POINTS,
    BarrierSpec,
    MarketSnapshot,
    SmilePillars,
    StraddleSpec,
    VanillaSpec,
    instrument_greeks,
    vanna_volga_price,
)

OUT_ENV = "CURVEDGREEKS_OUT"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config helpers

def _load_config(args) -> tuple[dict, Path]:
    if args.config is None:
        return {}, Path.cwd()
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return cfg, path.parent


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.eta is not None:
        cfg["eta"] = args.eta
    if args.bumps is not None:
        try:
            h_s, h_v = (float(v) for v in args.bumps.split(","))
        except ValueError:
            raise UsageError("--bumps expects two comma-separated numbers hS,hSigma") from None
        cfg["bumps"] = [h_s, h_v]
    if args.vol_units is not None:
        cfg["vol_units"] = args.vol_units
    return cfg


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _out_dir(args, cfg: dict) -> Path | None:
    out = args.out or cfg.get("out") or os.environ.get(OUT_ENV)
    return Path(out) if out else None


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise KeyError(f"config is missing required key {key!r}")
    return cfg[key]


def _chart(cfg: dict) -> Chart:
    coords = cfg.get("coords")
    if coords is None:
        return SPOT_VOL
    return Chart(cfg.get("chart_id", "user"), tuple(coords), tuple(cfg.get("units", ())),
                 tradable=tuple(cfg.get("tradable", ())))


def _market(cfg: dict) -> MarketSnapshot:
    m = _require(cfg, "market")
    return MarketSnapshot(float(m["spot"]), float(m["sigma"]), float(m.get("r_d", 0.0)), float(m.get("r_f", 0.0)))


def _instrument(d: dict):
    kind = d.get("type", "call")
    if kind in ("call", "put"):
        return VanillaSpec(float(d["strike"]), float(d["expiry"]), kind == "call")
    if kind == "straddle":
        return StraddleSpec(float(d["expiry"]))
    if kind in ("uic", "up_and_in_call"):
        return BarrierSpec(float(d["strike"]), float(d["barrier"]), float(d["expiry"]))
    raise KeyError(f"unknown instrument type {kind!r}")


def _bumps(cfg: dict):
    b = cfg.get("bumps")
    return None if b is None else (float(b[0]), float(b[1]))


def _emit_json(obj, out: Path | None, name: str) -> None:
    text = json.dumps(bt._jsonable(obj), indent=2, sort_keys=True)
    print(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")


def _matrix_dict(chart: Chart, mat) -> dict:
    return {"chart": chart.id, "coords": list(chart.coords), "units": list(chart.units), "matrix": np.asarray(mat).tolist()}


def _liquidity_specs(cfg: dict, base: Path) -> list[HedgeInstrumentSpec]:
    liq = _require(cfg, "liquidity")
    if isinstance(liq, str):
        return load_liquidity_file(_resolve(base, liq))
    return [HedgeInstrumentSpec(d["name"], d.get("unit", ""), float(d["clip"]), d.get("half_spread"),
                                d.get("vol_half_width"), d.get("quote_vega")) for d in liq]


# ---------------------------------------------------------------- subcommands

def cmd_greeks(cfg: dict, base: Path, out: Path | None) -> int:
    mkt = _market(cfg)
    spec = _instrument(_require(cfg, "instrument"))
    units = cfg.get("vol_units", VOL_POINTS)
    g = instrument_greeks(spec, mkt, units, _bumps(cfg))
    vol_label = "vol point" if units == VOL_POINTS else "unit decimal vol"
    rows = [
        ("price", g.price, "premium per unit notional"),
        ("delta", g.delta, "premium per unit S"),
        ("vega", g.vega, f"premium per {vol_label}"),
        ("gamma", g.gamma, "premium per unit S^2"),
        ("vanna", g.vanna, f"premium per unit S per {vol_label}"),
        ("volga", g.volga, f"premium per ({vol_label})^2"),
    ]
    if "smile" in cfg:
        s = cfg["smile"]
        expiry = spec.expiry
        pillars = SmilePillars.from_quotes(mkt, expiry, mkt.sigma, float(s.get("rr25", 0.0)), float(s.get("bf25", 0.0)))
        rows.append(("vv_price", vanna_volga_price(spec, mkt, pillars), "premium per unit notional"))
    print(f"chart {SPOT_VOL.id}: S [price], sigma [{'vol-point' if units == VOL_POINTS else 'decimal'}]")
    for name, val, unit in rows:
        print(f"{name:<10} {val: .12e}  [{unit}]")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        payload = {name: val for name, val, _ in rows}
        payload["vol_units"] = units
        (out / "greeks.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_calibrate(cfg: dict, base: Path, out: Path | None) -> int:
    eta = float(cfg.get("eta", 0.0))
    if "instruments" in cfg:
        chart = _chart(cfg)
        ins = [
            CalibrationInstrument(Gradient(chart, d["gradient"]), QuadraticForm(chart, d["baseline"]),
                                  QuadraticForm(chart, d["target"]), float(d.get("weight", 1.0)), d.get("name", ""))
            for d in cfg["instruments"]
        ]
        res = calibrate_connection(ins, eta=eta)
        payload = {"connection": res.connection.coeffs.tolist(), **res.summary()}
    else:
        mkt = _market(cfg)
        expiry = float(_require(cfg, "expiry"))
        s = cfg.get("smile", {})
        pillars = SmilePillars.from_quotes(mkt, expiry, mkt.sigma, float(s.get("rr25", 0.0)), float(s.get("bf25", 0.0)))
        pcfg = bt.PnlConfig(cfg.get("vol_units", VOL_POINTS), _bumps(cfg), 1, eta)
        conn = bt.calibrate_step(mkt, expiry, pillars, pcfg)
        chart = conn.chart
        payload = {"connection": conn.coeffs.tolist(), "eta": eta}
    payload["chart"] = chart.id
    payload["coords"] = list(chart.coords)
    payload["index_order"] = "coeffs[k][i][j] = C^k_ij"
    _emit_json(payload, out, "calibration.json")
    return 0


def _penalty_derivatives(cfg: dict, lam, chart: Chart) -> np.ndarray | None:
    """Directional central differences of g along user-supplied dB/dx^l and dJ_E/dx^l."""
    if "exposure_derivatives" not in cfg and "drift_derivatives" not in cfg:
        return None
    b = np.atleast_2d(np.asarray(cfg["exposure"], dtype=float))
    j = np.atleast_2d(np.asarray(cfg["drift"], dtype=float))
    db = np.asarray(cfg.get("exposure_derivatives", np.zeros((chart.dim,) + b.shape)), dtype=float)
    dj = np.asarray(cfg.get("drift_derivatives", np.zeros((chart.dim,) + j.shape)), dtype=float)
    h = float(cfg.get("fd_step", 1e-6))
    out = np.empty((chart.dim, chart.dim, chart.dim))
    for l in range(chart.dim):
        up = pullback_penalty(build_hedge_response(lam, b + h * db[l], j + h * dj[l], chart), lam).matrix
        dn = pullback_penalty(build_hedge_response(lam, b - h * db[l], j - h * dj[l], chart), lam).matrix
        out[l] = (up - dn) / (2 * h)
    return out


def cmd_adjusted_greeks(cfg: dict, base: Path, out: Path | None) -> int:
    chart = _chart(cfg)
    grad = Gradient(chart, _require(cfg, "gradient"))
    hess = QuadraticForm(chart, _require(cfg, "hessian"))
    if "connection" in cfg:
        conn = Connection(chart, cfg["connection"])
    elif "penalty" in cfg:
        g = QuadraticForm(chart, cfg["penalty"], "penalty")
        conn = levi_civita(g, _require(cfg, "penalty_derivatives"))
    else:
        lam = ImpactMatrix(_impact(cfg, base))
        g = pullback_penalty(build_hedge_response(lam, _require(cfg, "exposure"), _require(cfg, "drift"), chart), lam)
        if "regularize" in cfg:
            g = regularize_penalty(g, float(cfg["regularize"]))
        dg = _penalty_derivatives(cfg, lam, chart)
        if dg is None:
            raise KeyError("liquidity mode needs exposure_derivatives and/or drift_derivatives")
        conn = levi_civita(g, dg)
    adj = covariant_hessian(hess, conn, grad)
    _emit_json({"adjusted_hessian": _matrix_dict(chart, adj.matrix), "connection": conn.coeffs.tolist()}, out,
               "adjusted_greeks.json")
    return 0


def _impact(cfg: dict, base: Path) -> np.ndarray:
    if "impact" in cfg:
        lam = np.asarray(cfg["impact"], dtype=float)
        return np.diag(lam) if lam.ndim == 1 else lam
    specs = _liquidity_specs(cfg, base)
    return ImpactMatrix.from_instruments(specs).matrix


def cmd_liquidity(cfg: dict, base: Path, out: Path | None) -> int:
    chart = _chart(cfg)
    lam = ImpactMatrix(_impact(cfg, base))
    resp = build_hedge_response(lam, _require(cfg, "exposure"), _require(cfg, "drift"), chart)
    g = pullback_penalty(resp, lam)
    payload = {
        "impact": lam.matrix.tolist(),
        "hedge_response": resp.matrix.tolist(),
        "penalty": _matrix_dict(chart, g.matrix),
    }
    dg = _penalty_derivatives(cfg, lam, chart)
    if dg is not None:
        g_lc = regularize_penalty(g, float(cfg["regularize"])) if "regularize" in cfg else g
        payload["levi_civita"] = levi_civita(g_lc, dg).coeffs.tolist()
    _emit_json(payload, out, "liquidity.json")
    return 0


def _chart_map(cfg: dict, source: Chart) -> ChartMapAtPoint:
    spec = _require(cfg, "chart_map")
    kind = spec.get("type", "explicit")
    if kind == "log_forward":
        return forward_to_log_forward(float(spec["forward"]))
    if kind == "spot_to_forward":
        return spot_to_forward(float(spec["carry_factor"]))
    target = Chart(spec.get("target_id", source.id + "_y"), tuple(spec.get("target_coords", [c + "_y" for c in source.coords])))
    return ChartMapAtPoint(source, target, spec["jacobian"], spec.get("second"))


def cmd_transform(cfg: dict, base: Path, out: Path | None) -> int:
    spec = _require(cfg, "chart_map")
    kind = spec.get("type", "explicit")
    if kind == "log_forward":
        source = FORWARD_VOL
    elif kind == "spot_to_forward":
        source = SPOT_VOL
    else:
        source = _chart(cfg)
    cmap = _chart_map(cfg, source)
    if spec.get("inverse"):
        cmap = cmap.inverse()
        source = cmap.source
    payload = {"source": source.id, "target": cmap.target.id, "target_coords": list(cmap.target.coords)}
    grad = Gradient(source, cfg["gradient"]) if "gradient" in cfg else None
    if grad is not None:
        payload["gradient"] = transform_gradient(grad, cmap).values.tolist()
    if "target_hessian" in cfg:
        payload["target_hessian"] = transform_quadratic_form(QuadraticForm(source, cfg["target_hessian"]), cmap).matrix.tolist()
    if "ordinary_hessian" in cfg:
        if grad is None:
            raise KeyError("transforming an ordinary Hessian needs the gradient")
        payload["ordinary_hessian"] = transform_ordinary_hessian(QuadraticForm(source, cfg["ordinary_hessian"]), grad, cmap).matrix.tolist()
    if "connection" in cfg:
        payload["connection"] = transform_connection(Connection(source, cfg["connection"]), cmap).coeffs.tolist()
    _emit_json(payload, out, "transform.json")
    return 0


def _series(cfg: dict, base: Path) -> bt.MarketSeries:
    if "series" in cfg:
        return bt.load_market_series(_resolve(base, cfg["series"]), float(cfg.get("day_count", 365.0)))
    syn = dict(_require(cfg, "synthetic"))
    n_steps = int(syn.pop("n_steps", 250))
    return bt.synthesize_series(int(cfg.get("seed", 0)), n_steps, bt.SyntheticModel(**syn))


def _barrier(cfg: dict) -> BarrierSpec:
    b = _require(cfg, "barrier")
    return BarrierSpec(float(b["strike"]), float(b["barrier"]), float(b["expiry"]))


def cmd_backtest_pnl(cfg: dict, base: Path, out: Path | None) -> int:
    if out is None:
        raise UsageError("backtest-pnl needs an output directory (--out or $" + OUT_ENV + ")")
    series = _series(cfg, base)
    pcfg = bt.PnlConfig(cfg.get("vol_units", VOL_POINTS), _bumps(cfg), int(cfg.get("stride", 1)), float(cfg.get("eta", 0.0)))
    report = bt.run_pnl_backtest(series, _barrier(cfg), pcfg)
    bt.emit_report(report, out, config=cfg, seed=cfg.get("seed"))
    for name, st in report.stats.items():
        print(f"{name:<22} MAE {st.mae:.6e}  RMSE {st.rmse:.6e}  Pearson {st.pearson}")
    return 0


def cmd_backtest_cost(cfg: dict, base: Path, out: Path | None) -> int:
    if out is None:
        raise UsageError("backtest-cost needs an output directory (--out or $" + OUT_ENV + ")")
    series = _series(cfg, base)
    hedges = _liquidity_specs(cfg, base)
    keys = {f for f in bt.CostConfig.__dataclass_fields__}
    ccfg = bt.CostConfig(**{k: v for k, v in cfg.items() if k in keys})
    report = bt.run_cost_backtest(series, _barrier(cfg), hedges, ccfg)
    bt.emit_report(report, out, config=cfg, seed=cfg.get("seed"))
    total = float(report.cumulative[-1]) if len(report.cumulative) else 0.0
    print(f"total cost {total:.6e} [premium currency]; initial premium {report.initial_premium:.6e}")
    return 0


def cmd_reconstruct_metric(cfg: dict, base: Path, out: Path | None) -> int:
    chart = _chart(cfg)
    conn = load_grid_field(_resolve(base, _require(cfg, "connection_file")), chart)
    anchor = QuadraticForm(chart, _require(cfg, "anchor"))
    idx = cfg.get("anchor_index")
    rec = reconstruct_metric(conn, anchor, None if idx is None else tuple(idx))
    payload = {"residual_rms": rec.residual_rms, "max_node_residual": float(np.max(rec.node_residuals))}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_grid_field(rec.metric, out / "metric.csv")
    _emit_json(payload, out, "reconstruction.json")
    return 0


COMMANDS = {
    "greeks": cmd_greeks,
    "calibrate": cmd_calibrate,
    "adjusted-greeks": cmd_adjusted_greeks,
    "liquidity": cmd_liquidity,
    "transform": cmd_transform,
    "backtest-pnl": cmd_backtest_pnl,
    "backtest-cost": cmd_backtest_cost,
    "reconstruct-metric": cmd_reconstruct_metric,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvedgreeks", description="Covariant Greeks, liquidity penalties and backtests")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV})")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--eta", type=float, metavar="X", help="ridge parameter")
        p.add_argument("--bumps", metavar="hS,hSigma", help="finite-difference bumps in chart units")
        p.add_argument("--vol-units", choices=("points", "decimal"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg, base = _load_config(args)
        cfg = _apply_overrides(cfg, args)
        return COMMANDS[args.command](cfg, base, _out_dir(args, cfg))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (CurvedGreeksError, ValueError, KeyError, TypeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
