"""Identify connection coefficients from instrument Greeks and quadratic targets.

For a fixed lower index pair (i, j) the matching condition across
instruments r is linear in the unknowns u_k = C^k_ij:

    sum_k V_{k,r} u_k = V_{ij,r} - Hstar_{ij,r}

so every pair shares the design matrix G (rows are instrument gradients)
and only the right-hand side changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

from .errors import SingularDesignError, ValidationError
from .geometry import (
    Connection,
    Gradient,
    QuadraticForm,
    TangentMove,
    _require_same_chart,
    covariant_hessian,
)

SVD_RTOL = 1e-12


@dataclass(frozen=True)
class CalibrationInstrument:
    gradient: Gradient
    baseline_hessian: QuadraticForm
    target_hessian: QuadraticForm
    weight: float = 1.0
    name: str = ""

    def __post_init__(self):
        _require_same_chart(self.gradient, self.baseline_hessian, self.target_hessian)
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise ValidationError(f"instrument weight must be finite and nonnegative, got {self.weight}")

    @property
    def chart(self):
        return self.gradient.chart


@dataclass(frozen=True)
class RidgeSolution:
    u: np.ndarray
    residual: np.ndarray
    min_residual: np.ndarray
    condition: float
    rank: int


@dataclass
class CalibrationResult:
    connection: Connection
    residuals: dict = field(default_factory=dict)
    min_residuals: dict = field(default_factory=dict)
    condition: float = float("nan")
    rank: int = 0
    eta: float = 0.0

    def summary(self) -> dict:
        labels = self.connection.chart.coords
        return {
            "condition": self.condition,
            "rank": self.rank,
            "eta": self.eta,
            "residuals": {f"{labels[i]}{labels[j]}": v for (i, j), v in self.residuals.items()},
            "min_residuals": {f"{labels[i]}{labels[j]}": v for (i, j), v in self.min_residuals.items()},
        }


def _index(chart, t):
    return chart.index(t) if isinstance(t, str) else int(t)


def build_calibration_system(instruments: Sequence[CalibrationInstrument], ij) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix G (m x d, rows are gradients) and rhs b_r = V_ij,r - Hstar_ij,r."""
    if not instruments:
        raise ValidationError("need at least one calibration instrument")
    _require_same_chart(*(ins.gradient for ins in instruments))
    chart = instruments[0].chart
    i, j = (_index(chart, t) for t in ij)
    design = np.array([ins.gradient.values for ins in instruments])
    rhs = np.array([ins.baseline_hessian.matrix[i, j] - ins.target_hessian.matrix[i, j] for ins in instruments])
    return design, rhs


def solve_two_instrument(design, rhs, tol: float = 1e-12) -> tuple[float, float]:
    """Closed-form solve of the 2x2 system with rows (Delta_r, Vega_r)."""
    g = np.asarray(design, dtype=float)
    b = np.asarray(rhs, dtype=float)
    if g.shape != (2, 2) or b.shape != (2,):
        raise ValidationError("two-instrument solve needs a 2x2 design and a 2-vector")
    (d1, v1), (d2, v2) = g
    det = d1 * v2 - d2 * v1
    if abs(det) <= tol * max(np.linalg.norm(g) ** 2, np.finfo(float).tiny):
        raise SingularDesignError(f"two-instrument design is singular: D = {det:.3e}")
    c_s = (b[0] * v2 - b[1] * v1) / det
    c_sigma = (d1 * b[1] - d2 * b[0]) / det
    return float(c_s), float(c_sigma)


def _weighted_norm(res: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("r,r...->...", w, res * res))


def solve_ridge(design, rhs, weights=None, eta: float = 0.0, svd_rtol: float = SVD_RTOL) -> RidgeSolution:
    """Weighted ridge least squares, several right-hand sides at once.

    ``rhs`` may be an m-vector or an (m, n) array; every column is solved with
    a single factorization.  For ``eta > 0`` the solution is
    (G^T W G + eta I)^{-1} G^T W b; for ``eta == 0`` it is the minimum-norm
    weighted least-squares solution (SVD of W^{1/2} G, cutoff
    ``svd_rtol * s_max``).  Residuals are measured as sqrt(a^T W a).
    """
    g = np.asarray(design, dtype=float)
    if g.ndim != 2:
        raise ValidationError("design matrix must be 2-D")
    m, d = g.shape
    b = np.asarray(rhs, dtype=float)
    vector_rhs = b.ndim == 1
    b2 = b.reshape(m, -1)
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (m,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be m finite nonnegative values")
    if not np.any(w > 0):
        raise ValidationError("all calibration weights are zero")
    if eta < 0:
        raise ValidationError("ridge parameter must be nonnegative")
    sw = np.sqrt(w)
    gw = sw[:, None] * g
    bw = sw[:, None] * b2
    s_all = np.linalg.svd(gw, compute_uv=False)
    s_max = s_all[0] if s_all.size else 0.0
    rank = int(np.sum(s_all > svd_rtol * s_max)) if s_max > 0 else 0
    normal = gw.T @ gw + eta * np.eye(d)
    if eta > 0:
        u = np.linalg.solve(normal, gw.T @ bw)
        eig = np.linalg.eigvalsh(normal)
        cond = float(eig[-1] / eig[0])
    else:
        u_svd, s, vt = np.linalg.svd(gw, full_matrices=False)
        keep = s > svd_rtol * s_max if s_max > 0 else np.zeros_like(s, dtype=bool)
        inv = np.zeros_like(s)
        inv[keep] = 1.0 / s[keep]
        u = vt.T @ (inv[:, None] * (u_svd.T @ bw))
        cond = float(s_max**2 / s[-1] ** 2) if (s.size == d and s[-1] > 0) else float("inf")
    res = _weighted_norm(g @ u - b2, w)
    u_min = np.linalg.lstsq(gw, bw, rcond=None)[0]
    res_min = np.minimum(_weighted_norm(g @ u_min - b2, w), res)
    if vector_rhs:
        return RidgeSolution(u[:, 0], res[0], res_min[0], cond, rank)
    return RidgeSolution(u, res, res_min, cond, rank)


def calibrate_connection(
    instruments: Sequence[CalibrationInstrument],
    eta: float = 0.0,
    weights=None,
    pairs=None,
    svd_rtol: float = SVD_RTOL,
) -> CalibrationResult:
    """Fit one connection so covariant Hessians match instrument targets.

    All unordered pairs (i <= j) are solved together against the shared
    design; pairs not requested are left at zero.  ``weights`` overrides the
    per-instrument weights.
    """
    if not instruments:
        raise ValidationError("need at least one calibration instrument")
    _require_same_chart(*(ins.gradient for ins in instruments))
    chart = instruments[0].chart
    d = chart.dim
    if pairs is None:
        pairs = list(combinations_with_replacement(range(d), 2))
    else:
        pairs = [tuple(sorted(_index(chart, t) for t in p)) for p in pairs]
    w = np.array([ins.weight for ins in instruments]) if weights is None else np.asarray(weights, dtype=float)
    design = np.array([ins.gradient.values for ins in instruments])
    rhs = np.column_stack([build_calibration_system(instruments, p)[1] for p in pairs])
    sol = solve_ridge(design, rhs, w, eta, svd_rtol)
    coeffs = np.zeros((d, d, d))
    residuals, min_residuals = {}, {}
    for col, (i, j) in enumerate(pairs):
        coeffs[:, i, j] = sol.u[:, col]
        coeffs[:, j, i] = sol.u[:, col]
        residuals[(i, j)] = float(sol.residual[col])
        min_residuals[(i, j)] = float(sol.min_residual[col])
    return CalibrationResult(Connection(chart, coeffs), residuals, min_residuals, sol.condition, sol.rank, eta)


def matched_hessians(instruments: Sequence[CalibrationInstrument], conn: Connection) -> list[QuadraticForm]:
    """Covariant Hessian of each instrument under ``conn`` (round-trip check)."""
    return [covariant_hessian(ins.baseline_hessian, conn, ins.gradient) for ins in instruments]


@dataclass(frozen=True)
class EmpiricalFit:
    target: QuadraticForm
    intercept: float
    condition: float
    residual_rms: float


def fit_empirical_target(moves: Sequence[TangentMove], residuals, cond_max: float = 1e12) -> EmpiricalFit:
    """Least-squares fit of residual P&L to 1/2 dx^T H dx plus an intercept.

    Features are 1/2 dx_i^2 for diagonal entries and dx_i dx_j for i < j, so
    the fitted coefficients are the Hessian entries directly.
    """
    moves = list(moves)
    if not moves:
        raise ValidationError("need at least one move")
    _require_same_chart(*moves)
    chart = moves[0].chart
    d = chart.dim
    y = np.asarray(residuals, dtype=float)
    n_feat = d * (d + 1) // 2
    if y.shape != (len(moves),):
        raise ValidationError("one residual per move required")
    if len(moves) < n_feat + 1:
        raise SingularDesignError(f"need at least {n_feat + 1} samples for a {d}-dimensional fit, got {len(moves)}")
    dx = np.array([mv.delta for mv in moves])
    pairs = list(combinations_with_replacement(range(d), 2))
    cols = [0.5 * dx[:, i] ** 2 if i == j else dx[:, i] * dx[:, j] for i, j in pairs]
    design = np.column_stack(cols + [np.ones(len(moves))])
    col_norm = np.linalg.norm(design, axis=0)
    if np.any(col_norm == 0):
        raise SingularDesignError("quadratic design has an all-zero column (a coordinate never moves)")
    scaled = design / col_norm
    cond = float(np.linalg.cond(scaled))
    if not np.isfinite(cond) or cond > cond_max:
        raise SingularDesignError(f"quadratic design is rank deficient: condition number {cond:.3e}")
    coef_scaled, *_ = np.linalg.lstsq(scaled, y, rcond=None)
    coef = coef_scaled / col_norm
    h = np.zeros((d, d))
    for c, (i, j) in zip(coef[:-1], pairs):
        h[i, j] = h[j, i] = c
    rms = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return EmpiricalFit(QuadraticForm(chart, h), float(coef[-1]), cond, rms)
