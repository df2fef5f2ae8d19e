import datetime as dt

import numpy as np
import pytest

from curvedgreeks.backtest import (
    CostConfig,
    CostReport,
    MarketSeries,
    PnlConfig,
    PredictorReport,
    SyntheticModel,
    emit_report,
    error_stats,
    load_market_series,
    load_report_table,
    run_cost_backtest,
    run_pnl_backtest,
    save_market_series,
    synthesize_series,
)
from curvedgreeks.errors import ValidationError
from curvedgreeks.liquidity import HedgeInstrumentSpec
from curvedgreeks.pricing import BarrierSpec

BARRIER = BarrierSpec(1.05, 1.5 * 1.05, 1.5)
NEAR = BarrierSpec(1.03, 1.10, 1.0)
HEDGES = [
    HedgeInstrumentSpec("spot", "EUR", 10e6, half_spread=5e-6),
    HedgeInstrumentSpec("straddle", "EUR", 10e6, vol_half_width=0.05, quote_vega=0.005),
    HedgeInstrumentSpec("call25", "EUR", 10e6, vol_half_width=0.1, quote_vega=0.012),
]


def _flat_series(n):
    dates = [dt.date(2022, 1, 3) + dt.timedelta(days=k) for k in range(n)]
    ones = np.ones(n)
    return MarketSeries(tuple(dates), 1.05 * ones, 0.09 * ones, 0.0 * ones, 0.0 * ones)


# ---------------------------------------------------------------- loading and synthesis

def test_load_market_series(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ValidationError, match="empty"):
        load_market_series(empty)
    good = tmp_path / "good.csv"
    good.write_text("date,S,sigma_atm,r_d,r_f\n2022-05-16,1.05,0.09,0.01,0.0\n2022-05-17,1.06,0.091,0.01,0.0\n")
    series = load_market_series(good)
    assert len(series) == 2
    assert series.times.tolist() == [0.0, 1 / 365]
    bad = tmp_path / "bad.csv"
    bad.write_text("date,S,sigma_atm,r_d,r_f\n2022-05-16,1.05,0.09,0.01,0.0\n2022-05-17,-1.0,0.09,0.01,0.0\n")
    with pytest.raises(ValidationError, match=":3:"):
        load_market_series(bad)


def test_series_round_trip(tmp_path):
    series = synthesize_series(3, 10, SyntheticModel(vol_of_vol=0.5, rr25=-0.005, bf25=0.002))
    save_market_series(series, tmp_path / "s.csv")
    back = load_market_series(tmp_path / "s.csv")
    assert back.dates == series.dates
    for name in ("spot", "sigma", "r_d", "r_f", "rr25", "bf25"):
        assert np.array_equal(getattr(back, name), getattr(series, name))


def test_synthetic_series():
    flat_vol = synthesize_series(1, 50, SyntheticModel(vol_of_vol=0.0))
    assert np.ptp(flat_vol.sigma) == 0
    assert flat_vol.sigma[0] == pytest.approx(0.09, rel=1e-15)
    a = synthesize_series(5, 50, SyntheticModel(vol_of_vol=0.8))
    b = synthesize_series(5, 50, SyntheticModel(vol_of_vol=0.8))
    assert np.array_equal(a.spot, b.spot) and np.array_equal(a.sigma, b.sigma)


def test_synthetic_drift_matches_rates():
    model = SyntheticModel(r_d=0.05, r_f=0.01)
    n = 10_000
    s = synthesize_series(9, n, model)
    step = 1 / 365
    log_ret = np.diff(np.log(s.spot))
    expected = (0.04 - 0.5 * 0.09**2) * step
    se = 0.09 * np.sqrt(step) / np.sqrt(n)
    assert abs(np.mean(log_ret) - expected) < 4 * se


# ---------------------------------------------------------------- statistics

def test_error_stats():
    st = error_stats([1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
    assert st.mae == pytest.approx(1 / 3)
    assert st.rmse == pytest.approx(np.sqrt(1 / 3))
    assert st.pearson == pytest.approx(np.corrcoef([1, 2, 3], [1, 2, 4])[0, 1])
    with pytest.raises(ValidationError):
        error_stats([1.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValidationError):
        error_stats([1.0], [1.0])


# ---------------------------------------------------------------- P&L replay

def test_flat_series_has_zero_predicted_increments():
    rep = run_pnl_backtest(_flat_series(6), BARRIER)
    for name in ("bs_taylor", "connection_corrected"):
        assert np.all(rep.predictions[name] == 0)
    assert rep.stats["bs_taylor"].pearson is None


def test_weekly_benchmark_is_sum_of_daily():
    series = synthesize_series(2, 20, SyntheticModel(vol_of_vol=0.5))
    daily = run_pnl_backtest(series, BARRIER)
    weekly = run_pnl_backtest(series, BARRIER, PnlConfig(stride=5))
    summed = daily.benchmark.reshape(-1, 5).sum(axis=1)
    np.testing.assert_allclose(weekly.benchmark, summed, rtol=1e-12, atol=1e-15)
    assert weekly.dates == daily.dates[::5]


def test_smile_makes_correction_nonzero():
    series = synthesize_series(4, 10, SyntheticModel(vol_of_vol=0.5, rr25=-0.01, bf25=0.003))
    rep = run_pnl_backtest(series, BARRIER)
    gap = np.abs(rep.predictions["connection_corrected"] - rep.predictions["bs_taylor"])
    assert np.max(gap) > 1e-8
    assert set(rep.residuals) == {"bs_taylor", "vv_revaluation", "connection_corrected"}


def test_expired_barrier_is_rejected():
    with pytest.raises(ValidationError, match="expired"):
        run_pnl_backtest(synthesize_series(1, 10), BarrierSpec(1.05, 1.2, 5 / 365))


# ---------------------------------------------------------------- hedge-cost replay

def test_zero_widths_cost_nothing():
    series = synthesize_series(7, 20, SyntheticModel())
    free = [h.scaled_widths(0.0) for h in HEDGES]
    rep = run_cost_backtest(series, NEAR, free, CostConfig(notional=10e6))
    assert np.all(rep.costs == 0)


def test_initial_hedge_is_uncharged_and_cost_accumulates():
    series = synthesize_series(7, 20, SyntheticModel())
    rep = run_cost_backtest(series, NEAR, HEDGES, CostConfig(notional=10e6))
    assert rep.costs[0] == 0 and np.any(rep.trades[0] != 0)
    assert np.array_equal(rep.cumulative, np.cumsum(rep.costs))
    assert np.all(rep.costs >= 0)
    np.testing.assert_allclose(np.cumsum(rep.trades, axis=0), rep.positions, rtol=1e-12, atol=1e-6)
    charged = run_cost_backtest(series, NEAR, HEDGES, CostConfig(notional=10e6, charge_initial=True))
    assert charged.costs[0] > 0
    assert np.array_equal(charged.costs[1:], rep.costs[1:])


def test_width_doubling_doubles_cost():
    series = synthesize_series(8, 30, SyntheticModel(vol_of_vol=0.5))
    base = run_cost_backtest(series, NEAR, HEDGES, CostConfig(notional=10e6))
    wide = run_cost_backtest(series, NEAR, [h.scaled_widths(2.0) for h in HEDGES], CostConfig(notional=10e6))
    assert np.array_equal(wide.cumulative, 2.0 * base.cumulative)


def test_hedge_universe_must_have_three_instruments():
    with pytest.raises(ValidationError):
        run_cost_backtest(synthesize_series(1, 5), NEAR, HEDGES[:2])


# ---------------------------------------------------------------- reports

def test_emit_empty_report_writes_headers(tmp_path):
    rep = CostReport([], np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 2)), 0.0,
                     ("spot", "straddle", "call25"))
    emit_report(rep, tmp_path)
    lines = (tmp_path / "costs.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("date,trade_spot")


def test_emit_report_round_trip_and_determinism(tmp_path):
    series = synthesize_series(2, 10, SyntheticModel(vol_of_vol=0.5))
    rep = run_pnl_backtest(series, BARRIER)
    paths_a = emit_report(rep, tmp_path / "a", {"n": 10}, seed=2)
    paths_b = emit_report(run_pnl_backtest(series, BARRIER), tmp_path / "b", {"n": 10}, seed=2)
    for pa, pb in zip(paths_a, paths_b):
        assert pa.read_bytes() == pb.read_bytes()
    table = load_report_table(tmp_path / "a" / "increments.csv")
    assert table["date"] == rep.dates
    assert np.array_equal(table["benchmark"], rep.benchmark)
    assert np.array_equal(table["bs_taylor"], rep.predictions["bs_taylor"])
    with pytest.raises(ValidationError):
        emit_report(object(), tmp_path / "c")
    assert isinstance(rep, PredictorReport)
