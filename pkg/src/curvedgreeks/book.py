"""Book-level netting of hedge trades and quadratic costs."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .geometry import Connection, Gradient, QuadraticForm, _require_same_chart, covariant_hessian
from .liquidity import _lam


@dataclass(frozen=True)
class DealHedge:
    deal_id: str
    weight: float
    trade: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.trade, dtype=float).reshape(-1)
        if not (np.isfinite(self.weight) and np.all(np.isfinite(t))):
            raise ValidationError(f"deal {self.deal_id!r}: weight and trade must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "trade", t)


@dataclass(frozen=True)
class PortfolioCostReport:
    net_trade: np.ndarray
    total: float
    own: tuple
    cross: tuple

    def as_dict(self) -> dict:
        return {
            "net_trade": self.net_trade.tolist(),
            "total": self.total,
            "own": [{"deal": d, "cost": c} for d, c in self.own],
            "cross": [{"deals": [a, b], "cost": c} for (a, b), c in self.cross],
        }


def quadratic_cost(trade, lam) -> float:
    """kappa(dq) = 1/2 dq^T Lambda dq."""
    dq = np.asarray(trade, dtype=float)
    return 0.5 * float(dq @ _lam(lam) @ dq)


def portfolio_cost(deals: Sequence[DealHedge], lam) -> PortfolioCostReport:
    """Cost of the netted trade with its own-term / cross-term decomposition."""
    deals = list(deals)
    lam_arr = _lam(lam)
    m = lam_arr.shape[0]
    if not deals:
        return PortfolioCostReport(np.zeros(m), 0.0, (), ())
    for d in deals:
        if d.trade.shape != (m,):
            raise ValidationError(f"deal {d.deal_id!r} has {d.trade.size} trade entries, impact matrix is {m} x {m}")
    weighted = np.array([d.weight * d.trade for d in deals])
    net = weighted.sum(axis=0)
    gram = weighted @ lam_arr @ weighted.T
    own = tuple((d.deal_id, 0.5 * float(gram[n, n])) for n, d in enumerate(deals))
    cross = tuple(
        ((deals[a].deal_id, deals[b].deal_id), float(gram[a, b]))
        for a in range(len(deals)) for b in range(a + 1, len(deals))
    )
    return PortfolioCostReport(net, quadratic_cost(net, lam_arr), own, cross)


def portfolio_covariant_hessian(deals: Sequence[tuple[float, Gradient, QuadraticForm]], conn: Connection) -> QuadraticForm:
    """sum_nu w_nu times the covariant Hessian of deal nu under one book connection."""
    deals = list(deals)
    if not deals:
        raise ValidationError("need at least one deal")
    chart = _require_same_chart(conn, *(g for _, g, _ in deals), *(h for _, _, h in deals))
    total = np.zeros((chart.dim, chart.dim))
    for w, grad, hess in deals:
        total = total + w * covariant_hessian(hess, conn, grad).matrix
    return QuadraticForm(chart, total)


def aggregate_then_adjust(deals: Sequence[tuple[float, Gradient, QuadraticForm]], conn: Connection) -> QuadraticForm:
    """Covariant Hessian of the aggregated book (sum w H, sum w V)."""
    deals = list(deals)
    chart = _require_same_chart(conn, *(g for _, g, _ in deals))
    grad = Gradient(chart, sum(w * g.values for w, g, _ in deals))
    hess = QuadraticForm(chart, sum(w * h.matrix for w, _, h in deals))
    return covariant_hessian(hess, conn, grad)


def incremental_liquidity_charge(book_trade, deal_trade, lam) -> float:
    """Extra cost of adding a deal's trade to the book: dq_d^T Lambda dq_pi + 1/2 dq_d^T Lambda dq_d."""
    lam_arr = _lam(lam)
    pi = np.asarray(book_trade, dtype=float)
    d0 = np.asarray(deal_trade, dtype=float)
    if pi.shape != d0.shape or pi.shape != (lam_arr.shape[0],):
        raise ValidationError("book trade, deal trade and impact matrix dimensions differ")
    return float(d0 @ lam_arr @ pi) + 0.5 * float(d0 @ lam_arr @ d0)


def wealth_step(wealth: float, holdings, prices, next_prices, next_holdings, next_lam) -> float:
    """Self-financing update with the excess execution cost of the rebalance.

    Y_{n+1} = Y_n + q_n . (P_{n+1} - P_n) - 1/2 dq^T Lambda_{n+1} dq with
    dq = q_{n+1} - q_n.  Cash accrual is not modelled.
    """
    q = np.asarray(holdings, dtype=float)
    q_next = np.asarray(next_holdings, dtype=float)
    p = np.asarray(prices, dtype=float)
    p_next = np.asarray(next_prices, dtype=float)
    if not (q.shape == q_next.shape == p.shape == p_next.shape):
        raise ValidationError("holdings and prices must have the same length")
    return float(wealth + q @ (p_next - p) - quadratic_cost(q_next - q, next_lam))


def load_book_file(path) -> list[DealHedge]:
    """Book file: CSV with columns deal_id, weight, then one column per hedge instrument."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["deal_id", "weight"] or len(header) < 3:
            raise ValidationError(f"{path}: header must start with deal_id,weight and list trade columns")
        deals = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                deals.append(DealHedge(row[0], float(row[1]), [float(v) for v in row[2:]]))
            except (ValueError, ValidationError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return deals
