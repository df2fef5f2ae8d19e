"""Replay harness: market series, one-step P&L predictors, hedge-cost
accumulation, error statistics and report files."""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .book import quadratic_cost
from .calibration import CalibrationInstrument, calibrate_connection, solve_two_instrument
from .errors import CurvedGreeksError, SingularDesignError, ValidationError
from .geometry import SPOT_VOL, Connection, TangentMove, covariant_hessian, quadratic_predictor
from .liquidity import (
    HedgeInstrumentSpec,
    build_hedge_response,
    least_cost_trade,
    pullback_penalty,
    tiered_cost,
    tiered_lambda,
)
from .pricing import (
    VOL_POINTS,
    BarrierSpec,
    MarketSnapshot,
    SmilePillars,
    VanillaSpec,
    VanillaStrip,
    barrier_greeks,
    bs_fd_bundle,
    bs_greeks,
    instrument_greeks,
    reiner_rubinstein_uic,
    strike_from_spot_delta,
    vanna_volga_price,
    vol_scale,
    vv_fd_bundle,
)

REQUIRED_COLUMNS = ("date", "S", "sigma_atm", "r_d", "r_f")
SMILE_COLUMNS = ("rr25", "bf25")


# ---------------------------------------------------------------- market series

@dataclass(frozen=True)
class MarketSeries:
    """Daily (or coarser) market rows; vols, rates and smile quotes are decimals."""

    dates: tuple
    spot: np.ndarray
    sigma: np.ndarray
    r_d: np.ndarray
    r_f: np.ndarray
    rr25: np.ndarray | None = None
    bf25: np.ndarray | None = None
    day_count: float = 365.0

    def __post_init__(self):
        dates = tuple(d if isinstance(d, dt.date) else dt.date.fromisoformat(str(d)) for d in self.dates)
        n = len(dates)
        arrays = {}
        for name in ("spot", "sigma", "r_d", "r_f", "rr25", "bf25"):
            v = getattr(self, name)
            if v is None:
                continue
            arr = np.asarray(v, dtype=float).reshape(-1)
            if arr.shape != (n,):
                raise ValidationError(f"series column {name} has {arr.size} values for {n} dates")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"series column {name} has non-finite values")
            arr.setflags(write=False)
            arrays[name] = arr
        if (self.rr25 is None) != (self.bf25 is None):
            raise ValidationError("rr25 and bf25 must be given together")
        for a, b in zip(dates, dates[1:]):
            if b <= a:
                raise ValidationError(f"dates must be strictly increasing ({a} then {b})")
        if n and (np.any(arrays["spot"] <= 0) or np.any(arrays["sigma"] <= 0)):
            raise ValidationError("spot and volatility must be positive")
        object.__setattr__(self, "dates", dates)
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def times(self) -> np.ndarray:
        """Year fractions from the first date."""
        if not self.dates:
            return np.zeros(0)
        d0 = self.dates[0]
        return np.array([(d - d0).days / self.day_count for d in self.dates])

    @property
    def has_smile(self) -> bool:
        return self.rr25 is not None

    def snapshot(self, n: int) -> MarketSnapshot:
        return MarketSnapshot(float(self.spot[n]), float(self.sigma[n]), float(self.r_d[n]), float(self.r_f[n]),
                              self.dates[n].isoformat())

    def pillars(self, n: int, expiry: float) -> SmilePillars:
        mkt = self.snapshot(n)
        if not self.has_smile:
            return SmilePillars.flat(mkt, expiry)
        return SmilePillars.from_quotes(mkt, expiry, mkt.sigma, float(self.rr25[n]), float(self.bf25[n]))

    def with_flat_smile(self) -> "MarketSeries":
        return MarketSeries(self.dates, self.spot, self.sigma, self.r_d, self.r_f, None, None, self.day_count)


def load_market_series(path, day_count: float = 365.0) -> MarketSeries:
    """Read ``date,S,sigma_atm,r_d,r_f[,rr25,bf25]`` rows (ISO dates, decimal vols)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ValidationError(f"{path}: empty file")
    reader = csv.DictReader(lines)
    header = [h.strip() for h in (reader.fieldnames or [])]
    reader.fieldnames = header
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise ValidationError(f"{path}:1: missing columns {missing}")
    smile = all(c in header for c in SMILE_COLUMNS)
    cols = {k: [] for k in ("date", "S", "sigma_atm", "r_d", "r_f", "rr25", "bf25")}
    last = None
    for lineno, row in enumerate(reader, start=2):
        if not any((v or "").strip() for v in row.values()):
            continue
        try:
            date = dt.date.fromisoformat(row["date"].strip())
            vals = {c: float(row[c]) for c in REQUIRED_COLUMNS[1:]}
            if smile:
                vals.update({c: float(row[c]) for c in SMILE_COLUMNS})
        except (ValueError, AttributeError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals.values()):
            raise ValidationError(f"{path}:{lineno}: non-finite value")
        if vals["S"] <= 0:
            raise ValidationError(f"{path}:{lineno}: spot must be positive, got {vals['S']}")
        if vals["sigma_atm"] <= 0:
            raise ValidationError(f"{path}:{lineno}: volatility must be positive, got {vals['sigma_atm']}")
        if last is not None and date <= last:
            raise ValidationError(f"{path}:{lineno}: date {date} does not follow {last}")
        last = date
        cols["date"].append(date)
        for c, v in vals.items():
            cols[c].append(v)
    if not cols["date"]:
        raise ValidationError(f"{path}: no data rows")
    return MarketSeries(
        tuple(cols["date"]), cols["S"], cols["sigma_atm"], cols["r_d"], cols["r_f"],
        cols["rr25"] if smile else None, cols["bf25"] if smile else None, day_count,
    )


def save_market_series(series: MarketSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(REQUIRED_COLUMNS) + (list(SMILE_COLUMNS) if series.has_smile else []))
        for n, d in enumerate(series.dates):
            row = [d.isoformat()] + [repr(float(a[n])) for a in (series.spot, series.sigma, series.r_d, series.r_f)]
            if series.has_smile:
                row += [repr(float(series.rr25[n])), repr(float(series.bf25[n]))]
            w.writerow(row)


@dataclass(frozen=True)
class SyntheticModel:
    """GBM spot with an Ornstein-Uhlenbeck log-volatility."""

    spot0: float = 1.05
    sigma0: float = 0.09
    r_d: float = 0.0
    r_f: float = 0.0
    vol_of_vol: float = 0.0
    vol_mean_reversion: float = 2.0
    rr25: float | None = None
    bf25: float | None = None
    step_days: int = 1
    start: str = "2022-05-16"


def synthesize_series(seed: int, n_steps: int, model: SyntheticModel = SyntheticModel(), day_count: float = 365.0) -> MarketSeries:
    """Reproducible path of ``n_steps`` increments (``n_steps + 1`` dates)."""
    if n_steps < 0:
        raise ValidationError("number of steps must be nonnegative")
    if not (model.spot0 > 0 and model.sigma0 > 0 and model.vol_of_vol >= 0 and model.step_days >= 1):
        raise ValidationError("invalid synthetic model parameters")
    rng = np.random.default_rng(seed)
    step = model.step_days / day_count
    z = rng.standard_normal((n_steps, 2))
    log_s = np.empty(n_steps + 1)
    log_v = np.empty(n_steps + 1)
    log_s[0] = math.log(model.spot0)
    log_v[0] = theta = math.log(model.sigma0)
    drift = model.r_d - model.r_f
    for n in range(n_steps):
        sig = math.exp(log_v[n])
        log_s[n + 1] = log_s[n] + (drift - 0.5 * sig * sig) * step + sig * math.sqrt(step) * z[n, 0]
        log_v[n + 1] = (log_v[n] + model.vol_mean_reversion * (theta - log_v[n]) * step
                        + model.vol_of_vol * math.sqrt(step) * z[n, 1])
    start = dt.date.fromisoformat(model.start)
    dates = tuple(start + dt.timedelta(days=model.step_days * n) for n in range(n_steps + 1))
    ones = np.ones(n_steps + 1)
    rr = None if model.rr25 is None else model.rr25 * ones
    bf = None if model.rr25 is None else (model.bf25 or 0.0) * ones
    return MarketSeries(dates, np.exp(log_s), np.exp(log_v), model.r_d * ones, model.r_f * ones, rr, bf, day_count)


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class ErrorStats:
    mae: float
    rmse: float
    pearson: float | None


def error_stats(pred, actual) -> ErrorStats:
    """Mean absolute error, root-mean-square error and Pearson correlation."""
    p = np.asarray(pred, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or p.ndim != 1 or p.size < 2:
        raise ValidationError("error statistics need two equal-length series of at least two points")
    err = p - a
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    if np.ptp(a) == 0 or np.ptp(p) == 0:
        raise ValidationError("Pearson correlation is undefined for a constant series")
    return ErrorStats(mae, rmse, float(np.corrcoef(p, a)[0, 1]))


def _stats_or_none(pred, actual) -> ErrorStats:
    try:
        return error_stats(pred, actual)
    except ValidationError:
        err = np.asarray(pred) - np.asarray(actual)
        if err.size == 0:
            return ErrorStats(float("nan"), float("nan"), None)
        return ErrorStats(float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err))), None)


# ---------------------------------------------------------------- P&L replay

BS_TAYLOR = "bs_taylor"
VV_REVALUATION = "vv_revaluation"
CONNECTION_CORRECTED = "connection_corrected"
PREDICTORS = (BS_TAYLOR, VV_REVALUATION, CONNECTION_CORRECTED)


@dataclass(frozen=True)
class PnlConfig:
    vol_units: str = VOL_POINTS
    bumps: tuple | None = None
    stride: int = 1
    eta: float = 0.0
    wing_delta: float = 0.25


@dataclass
class PredictorReport:
    dates: list
    benchmark: np.ndarray
    predictions: dict
    stats: dict
    connections: list = field(default_factory=list)

    @property
    def residuals(self) -> dict:
        """Benchmark minus each predictor (theta, rates and higher-order terms)."""
        return {k: self.benchmark - v for k, v in self.predictions.items()}


def _calibration_instruments(mkt: MarketSnapshot, expiry: float, pillars: SmilePillars, cfg: PnlConfig):
    k_atm = mkt.forward(expiry)
    straddle = VanillaStrip(((1.0, VanillaSpec(k_atm, expiry, True)), (1.0, VanillaSpec(k_atm, expiry, False))))
    wing = VanillaSpec(pillars.strikes[2], expiry, True)
    out = []
    for name, spec in (("atm_straddle", straddle), ("call_25d", wing)):
        base = bs_fd_bundle(spec, mkt, cfg.bumps, cfg.vol_units)
        target = vv_fd_bundle(spec, mkt, pillars, cfg.bumps, cfg.vol_units)
        grad = instrument_greeks(spec, mkt, cfg.vol_units).gradient()
        out.append(CalibrationInstrument(grad, base.hessian(), target.hessian(), 1.0, name))
    return out


def calibrate_step(mkt: MarketSnapshot, expiry: float, pillars: SmilePillars, cfg: PnlConfig = PnlConfig()) -> Connection:
    """Connection matching the straddle and 25-delta call VV targets at one date."""
    instruments = _calibration_instruments(mkt, expiry, pillars, cfg)
    if cfg.eta == 0:
        design = np.array([ins.gradient.values for ins in instruments])
        coeffs = np.zeros((2, 2, 2))
        try:
            for i, j in ((0, 0), (0, 1), (1, 1)):
                rhs = [ins.baseline_hessian.matrix[i, j] - ins.target_hessian.matrix[i, j] for ins in instruments]
                coeffs[:, i, j] = coeffs[:, j, i] = solve_two_instrument(design, rhs)
            return Connection(SPOT_VOL, coeffs)
        except SingularDesignError:
            pass
    return calibrate_connection(instruments, eta=cfg.eta).connection


def _node_expiries(series: MarketSeries, expiry: float, idx) -> np.ndarray:
    taus = expiry - series.times[idx]
    bad = np.nonzero(taus <= 0)[0]
    if bad.size:
        raise ValidationError(f"option expired by {series.dates[idx[bad[0]]]}")
    return taus


def run_pnl_backtest(series: MarketSeries, barrier: BarrierSpec, cfg: PnlConfig = PnlConfig()) -> PredictorReport:
    """One-step predictors against closed-form barrier increments.

    ``barrier.expiry`` is measured from the first date.  Predictors use only
    the spot and ATM-vol moves; theta and rate effects stay in the residual.
    """
    if len(series) < 2:
        raise ValidationError("P&L backtest needs at least two dates")
    if cfg.stride < 1:
        raise ValidationError("stride must be a positive integer")
    idx = np.arange(0, len(series), cfg.stride)
    taus = _node_expiries(series, barrier.expiry, idx)
    scale = vol_scale(cfg.vol_units)
    values, vv_values, bundles, conns = [], [], [], []
    for pos, (n, tau) in enumerate(zip(idx, taus)):
        mkt = series.snapshot(n)
        spec = BarrierSpec(barrier.strike, barrier.barrier, float(tau))
        try:
            pillars = series.pillars(n, float(tau))
            values.append(reiner_rubinstein_uic(spec, mkt))
            vv_values.append(vanna_volga_price(spec, mkt, pillars))
            if pos < len(idx) - 1:
                bundles.append(barrier_greeks(spec, mkt, cfg.bumps, cfg.vol_units) if barrier.barrier > mkt.spot
                               else bs_greeks(VanillaSpec(spec.strike, spec.expiry), mkt, cfg.vol_units))
                conns.append(calibrate_step(mkt, float(tau), pillars, cfg))
        except CurvedGreeksError as exc:
            raise type(exc)(f"{series.dates[n]}: {exc}") from None
    values = np.array(values)
    benchmark = np.diff(values)
    preds = {k: np.empty(len(idx) - 1) for k in PREDICTORS}
    for step in range(len(idx) - 1):
        a, b = idx[step], idx[step + 1]
        move = TangentMove(SPOT_VOL, [series.spot[b] - series.spot[a], (series.sigma[b] - series.sigma[a]) / scale])
        grad, hess = bundles[step].gradient(), bundles[step].hessian()
        preds[BS_TAYLOR][step] = quadratic_predictor(grad, hess, move)
        preds[CONNECTION_CORRECTED][step] = quadratic_predictor(grad, covariant_hessian(hess, conns[step], grad), move)
        preds[VV_REVALUATION][step] = vv_values[step + 1] - vv_values[step]
    stats = {k: _stats_or_none(v, benchmark) for k, v in preds.items()}
    dates = [series.dates[n].isoformat() for n in idx[:-1]]
    return PredictorReport(dates, benchmark, preds, stats, conns)


# ---------------------------------------------------------------- hedge-cost replay

@dataclass(frozen=True)
class CostConfig:
    notional: float = 1.0
    stride: int = 1
    hedge_expiry: float | None = None
    tiered: bool = False
    width_vol_units: str = VOL_POINTS
    model_quote_vega: bool = True
    delta_floor: float = 0.0
    vega_floor: float = 0.0
    trigger: float | None = None
    charge_initial: bool = False
    reference_size: float | None = None


@dataclass
class CostReport:
    dates: list
    trades: np.ndarray
    costs: np.ndarray
    cumulative: np.ndarray
    positions: np.ndarray
    exposures: np.ndarray
    initial_premium: float
    instrument_names: tuple = ()

    @property
    def cost_fraction(self) -> np.ndarray:
        if self.initial_premium == 0:
            return np.full_like(self.cumulative, np.nan)
        return self.cumulative / self.initial_premium


def _hedge_legs(mkt0: MarketSnapshot, expiry: float, wing_vol: float):
    k_atm = mkt0.forward(expiry)
    k_wing = strike_from_spot_delta(0.25, expiry, mkt0, wing_vol, True)
    return k_atm, k_wing


def run_cost_backtest(
    series: MarketSeries,
    barrier: BarrierSpec,
    hedges: Sequence[HedgeInstrumentSpec],
    cfg: CostConfig = CostConfig(),
) -> CostReport:
    """Replay least-cost hedging of (Delta, Vega) with spot, an ATM-forward
    straddle and a 25-delta call whose strikes are fixed at inception.

    Trades are per unit of each hedge's notional; the book is ``cfg.notional``
    units of the barrier.  The initial hedge is established without cost
    unless ``cfg.charge_initial``.
    """
    hedges = list(hedges)
    if len(hedges) != 3:
        raise ValidationError("hedge universe must list spot, ATM straddle and 25-delta call liquidity")
    if len(series) < 1 or cfg.stride < 1:
        raise ValidationError("need at least one date and a positive stride")
    idx = np.arange(0, len(series), cfg.stride)
    taus = _node_expiries(series, barrier.expiry, idx)
    hedge_expiry = barrier.expiry if cfg.hedge_expiry is None else cfg.hedge_expiry
    mkt0 = series.snapshot(0)
    pill0 = series.pillars(0, hedge_expiry)
    k_atm, k_wing = _hedge_legs(mkt0, hedge_expiry, pill0.vols[2])
    qv_scale = vol_scale(cfg.width_vol_units)

    m = 3
    positions = np.zeros((len(idx), m))
    trades = np.zeros((len(idx), m))
    costs = np.zeros(len(idx))
    exposures = np.zeros((len(idx), 2))
    q = np.zeros(m)
    stopped = False
    last_state = None
    last_penalty = None
    premium = 0.0
    for pos, (n, tau) in enumerate(zip(idx, taus)):
        mkt = series.snapshot(n)
        date = series.dates[n]
        h_tau = hedge_expiry - series.times[n]
        if h_tau <= 0:
            raise ValidationError(f"{date}: hedge options expired before the backtest end")
        spec = BarrierSpec(barrier.strike, barrier.barrier, float(tau))
        try:
            book = (barrier_greeks(spec, mkt, vol_units=VOL_POINTS) if barrier.barrier > mkt.spot
                    else bs_greeks(VanillaSpec(spec.strike, spec.expiry), mkt, VOL_POINTS))
            strad = instrument_greeks(
                VanillaStrip(((1.0, VanillaSpec(k_atm, h_tau, True)), (1.0, VanillaSpec(k_atm, h_tau, False)))), mkt)
            wing = bs_greeks(VanillaSpec(k_wing, h_tau, True), mkt)
        except CurvedGreeksError as exc:
            raise type(exc)(f"{date}: {exc}") from None
        if pos == 0:
            premium = cfg.notional * book.price
        exposure = cfg.notional * np.array([book.delta, book.vega])
        exposures[pos] = exposure
        b = np.array([[1.0, strad.delta, wing.delta], [0.0, strad.vega, wing.vega]])
        # quote-vega per unit notional in the width's vol units
        qvs = [None, strad.vega / 0.01 * qv_scale, wing.vega / 0.01 * qv_scale]
        if not cfg.model_quote_vega:
            qvs = [None, None, None]
        lam_diag = np.array([h.impact(qv) for h, qv in zip(hedges, qvs)])
        tiers = [h.tier_spec(qv) for h, qv in zip(hedges, qvs)] if cfg.tiered else [None] * m
        if cfg.tiered:
            ref = [cfg.reference_size if cfg.reference_size is not None else h.clip for h in hedges]
            rule_diag = np.array([tiered_lambda(r, t) if t is not None else lam for r, t, lam in zip(ref, tiers, lam_diag)])
        else:
            rule_diag = lam_diag
        rule_lam = np.diag(rule_diag) if np.all(rule_diag > 0) else np.eye(m)

        if stopped or (pos > 0 and abs(exposure[0]) < cfg.delta_floor and abs(exposure[1]) < cfg.vega_floor):
            stopped = True
            positions[pos] = q
            continue
        state = np.array([mkt.spot, mkt.sigma / 0.01])
        if pos > 0 and cfg.trigger is not None and last_penalty is not None:
            dx = state - last_state
            if 0.5 * float(dx @ last_penalty @ dx) < cfg.trigger:
                positions[pos] = q
                continue
        target = -(exposure + b @ q)
        try:
            dq = least_cost_trade(rule_lam, b, target)
        except CurvedGreeksError as exc:
            raise type(exc)(f"{date}: {exc}") from None
        if pos > 0 or cfg.charge_initial:
            if cfg.tiered:
                costs[pos] = sum(
                    tiered_cost(dq[r], tiers[r]) if tiers[r] is not None else 0.5 * lam_diag[r] * dq[r] ** 2
                    for r in range(m)
                )
            else:
                costs[pos] = quadratic_cost(dq, np.diag(lam_diag))
        trades[pos] = dq
        q = q + dq
        positions[pos] = q
        last_state = state
        if cfg.trigger is not None:
            drift = _exposure_drift(spec, mkt, cfg.notional)
            try:
                resp = build_hedge_response(rule_lam, b, drift, SPOT_VOL)
                last_penalty = pullback_penalty(resp, np.diag(lam_diag)).matrix
            except CurvedGreeksError:
                last_penalty = None
    dates = [series.dates[n].isoformat() for n in idx]
    return CostReport(dates, trades, costs, np.cumsum(costs), positions, exposures, premium,
                      tuple(h.name for h in hedges))


def _exposure_drift(spec: BarrierSpec, mkt: MarketSnapshot, notional: float) -> np.ndarray:
    """J_E = d(Delta, Vega)/d(S, sigma) of the book, from the barrier Hessian."""
    g = (barrier_greeks(spec, mkt) if spec.barrier > mkt.spot
         else bs_greeks(VanillaSpec(spec.strike, spec.expiry), mkt))
    return notional * np.array([[g.gamma, g.vanna], [g.vanna, g.volga]])


# ---------------------------------------------------------------- reports

def _fmt(x) -> str:
    return repr(float(x))


def _histogram_rows(series: dict, bins: int):
    data = [np.asarray(v, dtype=float) for v in series.values()]
    allv = np.concatenate(data) if data else np.zeros(0)
    if allv.size == 0:
        return [], []
    lo, hi = float(np.min(allv)), float(np.max(allv))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts = [np.histogram(v, bins=edges)[0] for v in data]
    return edges, counts


def emit_report(report, out_dir, config: dict | None = None, seed: int | None = None, bins: int = 40) -> list[Path]:
    """Write tables (CSV), a JSON summary and histogram bin counts; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary = {"config": config or {}, "seed": seed}
    if isinstance(report, PredictorReport):
        names = list(report.predictions)
        path = out / "increments.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "benchmark"] + names)
            for i, d in enumerate(report.dates):
                w.writerow([d, _fmt(report.benchmark[i])] + [_fmt(report.predictions[k][i]) for k in names])
        written.append(path)
        summary["kind"] = "pnl"
        summary["steps"] = len(report.dates)
        summary["statistics"] = {k: asdict(v) for k, v in report.stats.items()}
        edges, counts = _histogram_rows({"benchmark": report.benchmark, **report.predictions}, bins)
        path = out / "histogram.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "benchmark"] + names)
            for b in range(len(edges) - 1 if len(edges) else 0):
                w.writerow([_fmt(edges[b]), _fmt(edges[b + 1])] + [str(int(c[b])) for c in counts])
        written.append(path)
    elif isinstance(report, CostReport):
        names = list(report.instrument_names) or [f"h{r}" for r in range(report.trades.shape[1] if report.trades.ndim == 2 else 0)]
        path = out / "costs.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date"] + [f"trade_{k}" for k in names] + [f"position_{k}" for k in names]
                       + ["exposure_delta", "exposure_vega", "cost", "cumulative", "cost_fraction"])
            frac = report.cost_fraction
            for i, d in enumerate(report.dates):
                w.writerow([d] + [_fmt(v) for v in report.trades[i]] + [_fmt(v) for v in report.positions[i]]
                           + [_fmt(v) for v in report.exposures[i]]
                           + [_fmt(report.costs[i]), _fmt(report.cumulative[i]), _fmt(frac[i])])
        written.append(path)
        summary["kind"] = "cost"
        summary["steps"] = len(report.dates)
        summary["initial_premium"] = report.initial_premium
        summary["total_cost"] = float(report.cumulative[-1]) if len(report.cumulative) else 0.0
        summary["cost_fraction"] = (summary["total_cost"] / report.initial_premium) if report.initial_premium else None
        edges, counts = _histogram_rows({"cost": report.costs}, bins)
        path = out / "histogram.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "cost"])
            for b in range(len(edges) - 1 if len(edges) else 0):
                w.writerow([_fmt(edges[b]), _fmt(edges[b + 1])] + [str(int(c[b])) for c in counts])
        written.append(path)
    else:
        raise ValidationError(f"cannot emit a {type(report).__name__}")
    path = out / "summary.json"
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(float(obj)) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def load_report_table(path) -> dict:
    """Read an emitted CSV back into {column: list}; numeric columns become float arrays."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    out = {}
    for c, name in enumerate(header):
        col = [r[c] for r in rows]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = col
    return out
