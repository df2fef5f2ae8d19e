import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvedgreeks.book import (
    DealHedge,
    aggregate_then_adjust,
    incremental_liquidity_charge,
    load_book_file,
    portfolio_cost,
    portfolio_covariant_hessian,
    quadratic_cost,
    wealth_step,
)
from curvedgreeks.errors import ValidationError
from curvedgreeks.geometry import SPOT_VOL, Connection, Gradient, QuadraticForm, covariant_hessian


def test_perfect_netting():
    lam = np.diag([1.0, 2.0])
    t = np.array([0.3, -0.7])
    rep = portfolio_cost([DealHedge("a", 1.0, t), DealHedge("b", 1.0, -t)], lam)
    assert rep.total == 0.0
    (_, own_a), (_, own_b) = rep.own
    assert rep.cross[0][1] == pytest.approx(-2 * own_a, rel=1e-15)
    assert own_a == own_b


def test_single_deal_and_hand_example():
    lam = np.array([[2.0, 0.5], [0.5, 1.0]])
    t = np.array([0.4, 0.1])
    rep = portfolio_cost([DealHedge("a", 3.0, t)], lam)
    assert rep.total == pytest.approx(0.5 * 9.0 * t @ lam @ t, rel=1e-15)
    assert rep.cross == ()
    rep = portfolio_cost([DealHedge("a", 1.0, [1.0, 0.0]), DealHedge("b", 1.0, [1.0, 0.0])], np.eye(2))
    assert rep.total == 2.0
    assert [c for _, c in rep.own] == [0.5, 0.5]
    assert rep.cross[0][1] == 1.0
    assert rep.as_dict()["cross"][0]["deals"] == ["a", "b"]


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_decomposition_identity(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    a = rng.normal(size=(m, m))
    lam = a @ a.T
    deals = [DealHedge(str(k), rng.uniform(-2, 2), rng.normal(size=m)) for k in range(int(rng.integers(1, 21)))]
    rep = portfolio_cost(deals, lam)
    parts = sum(c for _, c in rep.own) + sum(c for _, c in rep.cross)
    scale = sum(abs(c) for _, c in rep.own) + sum(abs(c) for _, c in rep.cross) + 1e-300
    assert abs(rep.total - parts) <= 1e-12 * scale


def test_quadratic_non_additivity():
    lam = np.eye(2)
    t = np.array([1.0, 0.5])
    same = portfolio_cost([DealHedge("a", 1.0, t), DealHedge("b", 1.0, 0.5 * t)], lam)
    assert same.total > sum(c for _, c in same.own) and same.cross[0][1] > 0
    opposite = portfolio_cost([DealHedge("a", 1.0, t), DealHedge("b", -1.0, 0.5 * t)], lam)
    assert opposite.total < sum(c for _, c in opposite.own) and opposite.cross[0][1] < 0


def test_dimension_mismatch():
    with pytest.raises(ValidationError):
        portfolio_cost([DealHedge("a", 1.0, [1.0, 2.0, 3.0])], np.eye(2))


def _deal(rng, w=None):
    h = rng.normal(size=(2, 2))
    return (rng.uniform(-1, 1) if w is None else w, Gradient(SPOT_VOL, rng.normal(size=2)),
            QuadraticForm(SPOT_VOL, 0.5 * (h + h.T)))


def test_portfolio_covariant_hessian():
    rng = np.random.default_rng(0)
    c = rng.normal(size=(2, 2, 2))
    conn = Connection(SPOT_VOL, 0.5 * (c + c.transpose(0, 2, 1)))
    w, g, h = _deal(rng, 1.0)
    assert np.array_equal(portfolio_covariant_hessian([(w, g, h)], conn).matrix, covariant_hessian(h, conn, g).matrix)
    neg = (1.0, Gradient(SPOT_VOL, -g.values), QuadraticForm(SPOT_VOL, -h.matrix))
    assert np.all(portfolio_covariant_hessian([(w, g, h), neg], conn).matrix == 0)
    deals = [_deal(rng) for _ in range(3)]
    np.testing.assert_allclose(portfolio_covariant_hessian(deals, conn).matrix, aggregate_then_adjust(deals, conn).matrix,
                               rtol=1e-12, atol=1e-12)


def test_incremental_charge_examples():
    lam = np.eye(2)
    pi = np.array([1.0, 0.0])
    assert incremental_liquidity_charge(pi, pi, lam) == 1.5
    d0 = np.array([0.3, 0.4])
    assert incremental_liquidity_charge(np.zeros(2), d0, lam) == pytest.approx(quadratic_cost(d0, lam), rel=1e-15)
    assert incremental_liquidity_charge(pi, -pi, lam) == -0.5


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_incremental_charge_consistency(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    a = rng.normal(size=(m, m))
    lam = a @ a.T
    pi, d0 = rng.normal(size=m), rng.normal(size=m)
    direct = quadratic_cost(pi + d0, lam) - quadratic_cost(pi, lam)
    assert incremental_liquidity_charge(pi, d0, lam) == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_wealth_step_examples():
    p = np.array([1.0, 2.0])
    q = np.array([3.0, -1.0])
    lam = np.diag([0.1, 0.2])
    assert wealth_step(5.0, q, p, p, q, lam) == 5.0
    dq = np.array([1.0, 1.0])
    y1 = wealth_step(5.0, q, p, p, q + dq, lam)
    y2 = wealth_step(y1, q + dq, p, p, q, lam)
    assert y2 < y1 < 5.0
    p_next = np.array([1.1, 1.9])
    assert wealth_step(0.0, q, p, p_next, q + dq, np.zeros((2, 2))) == pytest.approx(q @ (p_next - p), rel=1e-15)


def test_wealth_telescopes():
    rng = np.random.default_rng(1)
    n, m = 30, 3
    prices = np.cumsum(rng.normal(size=(n + 1, m)), axis=0) + 10
    holdings = rng.normal(size=(n + 1, m))
    lam = np.diag([0.01, 0.02, 0.03])
    y = 0.0
    kappa = 0.0
    gain = 0.0
    for k in range(n):
        y = wealth_step(y, holdings[k], prices[k], prices[k + 1], holdings[k + 1], lam)
        kappa += quadratic_cost(holdings[k + 1] - holdings[k], lam)
        gain += holdings[k] @ (prices[k + 1] - prices[k])
    assert y == pytest.approx(gain - kappa, rel=1e-10)


def test_load_book_file(tmp_path):
    path = tmp_path / "book.csv"
    path.write_text("deal_id,weight,spot,straddle\nd1,1.0,1e6,-2e5\nd2,-0.5,3e5,1e5\n")
    deals = load_book_file(path)
    assert [d.deal_id for d in deals] == ["d1", "d2"]
    assert deals[1].trade.tolist() == [3e5, 1e5]
    bad = tmp_path / "bad.csv"
    bad.write_text("deal_id,weight,spot\nd1,x,1\n")
    with pytest.raises(ValidationError, match=":2:"):
        load_book_file(bad)
