"""Non-execution penalties on factor moves and their combination.

Every builder returns a ``kind="penalty"`` QuadraticForm so the result can be
fed directly to the predictor, the Levi-Civita machinery or
``combine_penalties``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NotPositiveDefiniteError, ValidationError
from .geometry import PENALTY, Chart, QuadraticForm, TangentMove, _require_same_chart

NEG_EIG_RTOL = 1e-10


@dataclass(frozen=True)
class StressMove:
    direction: TangentMove
    weight: float = 1.0
    normalize: bool = False
    label: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise ValidationError(f"stress weight must be finite and nonnegative, got {self.weight}")


@dataclass(frozen=True)
class SensitivityBlock:
    """Jacobian J_Y (p x d) of controlled quantities and PSD weights W_Y (p x p)."""

    jacobian: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        j = np.atleast_2d(np.asarray(self.jacobian, dtype=float))
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        p = j.shape[0]
        if w.shape != (p, p):
            raise ValidationError(f"weights must be {p} x {p}, got {w.shape}")
        w = 0.5 * (w + w.T)
        eig = np.linalg.eigvalsh(w)
        if eig[0] < -NEG_EIG_RTOL * max(np.max(np.abs(eig)), 0.0):
            raise NotPositiveDefiniteError("sensitivity weights must be positive semidefinite")
        object.__setattr__(self, "jacobian", j)
        object.__setattr__(self, "weights", w)


def covariance_penalty(cov: QuadraticForm, shrinkage: float = 0.0, floor: float = 0.0) -> QuadraticForm:
    """Inverse of the shrunk, eigenvalue-floored factor covariance.

    The shrinkage target is trace(cov)/d times the identity; eigenvalues are
    floored at ``floor`` times the largest eigenvalue.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise ValidationError("shrinkage must lie in [0, 1]")
    if floor < 0:
        raise ValidationError("eigenvalue floor must be nonnegative")
    xi = cov.matrix
    d = cov.chart.dim
    shrunk = (1.0 - shrinkage) * xi + shrinkage * np.trace(xi) / d * np.eye(d)
    eig, vec = np.linalg.eigh(shrunk)
    top = eig[-1]
    if not top > 0:
        raise NotPositiveDefiniteError("covariance has no positive eigenvalue")
    cutoff = floor * top
    if eig[0] <= max(cutoff, NEG_EIG_RTOL * top) and floor == 0:
        raise NotPositiveDefiniteError(
            f"covariance is singular or indefinite (min eigenvalue {eig[0]:.3e}); use shrinkage or an eigenvalue floor"
        )
    eig = np.maximum(eig, cutoff)
    g = (vec / eig) @ vec.T
    return QuadraticForm(cov.chart, 0.5 * (g + g.T), PENALTY)


def stress_loadings(stresses: Sequence[StressMove], baseline: QuadraticForm) -> np.ndarray:
    """Rows l_s = g0 dx_s, each scaled by 1/||dx_s||_{g0} when its flag is set."""
    g0 = baseline.matrix
    rows = []
    for st in stresses:
        _require_same_chart(baseline, st.direction)
        dx = st.direction.delta
        ell = g0 @ dx
        if st.normalize:
            norm = np.sqrt(float(dx @ g0 @ dx))
            if norm == 0:
                raise ValidationError(f"stress {st.label!r} has zero length and cannot be normalized")
            ell = ell / norm
        rows.append(ell)
    return np.array(rows).reshape(len(rows), baseline.chart.dim)


def gap_penalty(stresses: Sequence[StressMove], baseline: QuadraticForm) -> QuadraticForm:
    """sum_s w_s l_s l_s^T; charges moves aligned with the stress directions."""
    eig = np.linalg.eigvalsh(baseline.matrix)
    if not eig[0] > 0:
        raise NotPositiveDefiniteError("gap-penalty reference metric must be positive definite")
    loads = stress_loadings(stresses, baseline)
    w = np.array([s.weight for s in stresses])
    g = (loads.T * w) @ loads
    return QuadraticForm(baseline.chart, g, PENALTY)


def gap_penalty_value(stresses: Sequence[StressMove], baseline: QuadraticForm, move: TangentMove) -> float:
    """sum_s w_s (l_s . dx)^2 evaluated term by term."""
    loads = stress_loadings(stresses, baseline)
    w = np.array([s.weight for s in stresses])
    return float(np.sum(w * (loads @ move.delta) ** 2))


def sensitivity_penalty(block: SensitivityBlock, chart: Chart) -> QuadraticForm:
    """J_Y^T W_Y J_Y."""
    j = block.jacobian
    if j.shape[1] != chart.dim:
        raise ValidationError(f"jacobian has {j.shape[1]} columns for a {chart.dim}-d chart")
    g = j.T @ block.weights @ j
    return QuadraticForm(chart, 0.5 * (g + g.T), PENALTY)


def combine_penalties(terms: Sequence[tuple[float, QuadraticForm]]) -> QuadraticForm:
    """sum_a eta_a g_a with eta_a >= 0."""
    terms = list(terms)
    if not terms:
        raise ValidationError("need at least one penalty term")
    chart = _require_same_chart(*(g for _, g in terms))
    total = np.zeros((chart.dim, chart.dim))
    for eta, g in terms:
        if not (np.isfinite(eta) and eta >= 0):
            raise ValidationError(f"penalty weights must be nonnegative, got {eta}")
        total = total + eta * g.matrix
    return QuadraticForm(chart, total, PENALTY)


def time_bucket_weights(times, bucket_edges, bucket_weights) -> np.ndarray:
    """Penalty weight in force at each time for piecewise-constant buckets.

    Bucket k covers [edges[k], edges[k+1]); times past the last edge use the
    last bucket.
    """
    edges = np.asarray(bucket_edges, dtype=float)
    weights = np.asarray(bucket_weights, dtype=float)
    if edges.size != weights.size or np.any(np.diff(edges) <= 0):
        raise ValidationError("need one weight per bucket and increasing bucket edges")
    if np.any(weights < 0):
        raise ValidationError("bucket weights must be nonnegative")
    idx = np.searchsorted(edges, np.asarray(times, dtype=float), side="right") - 1
    if np.any(idx < 0):
        raise ValidationError("time precedes the first bucket")
    return weights[idx]


def matching_ratio(reference: QuadraticForm, other: QuadraticForm, move: TangentMove) -> float:
    """Scale that equates ``other``'s charge with ``reference``'s on ``move``.

    Reported only; callers decide whether to apply it.
    """
    _require_same_chart(reference, other, move)
    denom = other.value(move)
    if denom <= 0:
        raise ValidationError("reference move carries no charge under the second penalty")
    return reference.value(move) / denom


def load_stress_file(path, chart: Chart) -> list[StressMove]:
    """Stress scenarios from CSV: label, one column per chart coordinate, weight, normalize."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"label", "weight"} | set(chart.coords)
        missing = need - set(reader.fieldnames or [])
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                dx = [float(row[c]) for c in chart.coords]
                weight = float(row["weight"])
                flag = (row.get("normalize") or "0").strip().lower() in ("1", "true", "yes")
                out.append(StressMove(TangentMove(chart, dx), weight, flag, row["label"].strip()))
            except (ValueError, ValidationError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return out
