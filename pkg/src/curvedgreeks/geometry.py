"""Charts, tangent objects, quadratic forms and affine connections.

Everything here is point-local: a state, the first and second derivatives of
a value function at that state, and the coefficients of a torsion-free
connection.  The covariant Hessian

    Ht_ij = V_ij - C^k_ij V_k

is the adjusted quadratic object; it transforms as a (0,2) tensor while the
ordinary Hessian does not.  Coordinate changes are represented by their
jacobian and second derivatives at the point (``ChartMapAtPoint``).

Index conventions: a connection is stored as an array ``coeffs[k, i, j]`` for
C^k_ij; a chart map stores ``jacobian[i, a] = dx^i/dy^a`` and
``second[m, a, b] = d2 x^m / dy^a dy^b`` where ``x`` are source coordinates
and ``y`` target coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ChartMismatchError,
    NotPositiveDefiniteError,
    SingularJacobianError,
    ValidationError,
)

HESSIAN_TARGET = "hessian_target"
PENALTY = "penalty"
_KINDS = (HESSIAN_TARGET, PENALTY)

# asymmetry above this (relative) is an error, below it is silently repaired
SYMMETRY_RTOL = 1e-8
PSD_RTOL = 1e-10
JACOBIAN_MAX_COND = 1e14


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Chart:
    """A coordinate convention on the local state space.

    ``positive`` lists coordinates that must be strictly positive (spot,
    forward); ``tradable`` lists coordinates that are themselves traded
    prices, used by the generator drift diagnostic.
    """

    id: str
    coords: tuple[str, ...]
    units: tuple[str, ...] = ()
    positive: tuple[str, ...] = ()
    tradable: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        units = tuple(self.units) if self.units else ("",) * len(self.coords)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "positive", tuple(self.positive))
        object.__setattr__(self, "tradable", tuple(self.tradable))
        if len(self.coords) < 1:
            raise ValidationError("chart needs at least one coordinate")
        if len(set(self.coords)) != len(self.coords):
            raise ValidationError(f"chart {self.id!r}: duplicate coordinate labels {self.coords}")
        if len(self.units) != len(self.coords):
            raise ValidationError(f"chart {self.id!r}: {len(self.units)} units for {len(self.coords)} coords")
        for name in self.positive + self.tradable:
            if name not in self.coords:
                raise ValidationError(f"chart {self.id!r}: unknown coordinate {name!r}")

    @property
    def dim(self) -> int:
        return len(self.coords)

    def index(self, coord: str) -> int:
        return self.coords.index(coord)


SPOT_VOL = Chart("spot_vol", ("S", "sigma"), ("price", "vol-point"), positive=("S",), tradable=("S",))
FORWARD_VOL = Chart("forward_vol", ("F", "sigma"), ("price", "vol-point"), positive=("F",), tradable=("F",))
LOG_FORWARD_VOL = Chart("log_forward_vol", ("z", "sigma"), ("dimensionless", "vol-point"))
FORWARD_1D = Chart("forward", ("F",), ("price",), positive=("F",), tradable=("F",))
LOG_FORWARD_1D = Chart("log_forward", ("z",), ("dimensionless",))


def _check_vector(values, chart: Chart, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (chart.dim,):
        raise ValidationError(f"{what}: expected {chart.dim} values for chart {chart.id!r}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class StatePoint:
    chart: Chart
    values: np.ndarray

    def __post_init__(self):
        arr = _check_vector(self.values, self.chart, "StatePoint")
        for name in self.chart.positive:
            if not arr[self.chart.index(name)] > 0:
                raise ValidationError(f"StatePoint: coordinate {name!r} must be positive, got {arr[self.chart.index(name)]}")
        object.__setattr__(self, "values", _frozen(arr))


@dataclass(frozen=True)
class TangentMove:
    chart: Chart
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", _frozen(_check_vector(self.delta, self.chart, "TangentMove")))


@dataclass(frozen=True)
class Gradient:
    chart: Chart
    values: np.ndarray

    def __post_init__(self):
        arr = _check_vector(self.values, self.chart, "Gradient")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("Gradient entries must be finite")
        object.__setattr__(self, "values", _frozen(arr))


@dataclass(frozen=True)
class QuadraticForm:
    """Symmetric d x d coefficient matrix bound to a chart.

    Slightly asymmetric input (finite-difference Hessians) is symmetrized;
    asymmetry beyond ``SYMMETRY_RTOL`` relative is rejected.  ``kind="penalty"``
    additionally requires positive semidefiniteness.
    """

    chart: Chart
    matrix: np.ndarray
    kind: str = HESSIAN_TARGET

    def __post_init__(self):
        d = self.chart.dim
        a = np.asarray(self.matrix, dtype=float)
        if a.shape != (d, d):
            raise ValidationError(f"QuadraticForm: expected ({d}, {d}) for chart {self.chart.id!r}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("QuadraticForm entries must be finite")
        if self.kind not in _KINDS:
            raise ValidationError(f"QuadraticForm kind must be one of {_KINDS}, got {self.kind!r}")
        scale = np.max(np.abs(a)) if a.size else 0.0
        asym = np.max(np.abs(a - a.T)) if a.size else 0.0
        if asym > SYMMETRY_RTOL * scale:
            raise ValidationError(f"QuadraticForm not symmetric: max |A - A^T| = {asym:.3e} (scale {scale:.3e})")
        a = 0.5 * (a + a.T)
        if self.kind == PENALTY:
            lam_min = np.linalg.eigvalsh(a)[0] if d else 0.0
            if lam_min < -PSD_RTOL * np.linalg.norm(a, 2):
                raise NotPositiveDefiniteError(f"penalty form is not PSD: min eigenvalue {lam_min:.3e}")
        object.__setattr__(self, "matrix", _frozen(a))

    def value(self, move) -> float:
        """Return ``dx^T A dx`` (no factor 1/2)."""
        dx = move.delta if isinstance(move, TangentMove) else np.asarray(move, dtype=float)
        if isinstance(move, TangentMove):
            _require_same_chart(self, move)
        return float(dx @ self.matrix @ dx)

    def scaled(self, alpha: float) -> "QuadraticForm":
        return QuadraticForm(self.chart, alpha * self.matrix, self.kind)


def penalty_form(chart: Chart, matrix) -> QuadraticForm:
    return QuadraticForm(chart, matrix, PENALTY)


@dataclass(frozen=True)
class Connection:
    """Torsion-free affine connection coefficients ``coeffs[k, i, j] = C^k_ij``.

    Storage is exactly symmetric in the lower pair: near-symmetric input is
    repaired, asymmetric input rejected.
    """

    chart: Chart
    coeffs: np.ndarray

    def __post_init__(self):
        d = self.chart.dim
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (d, d, d):
            raise ValidationError(f"Connection: expected shape ({d}, {d}, {d}), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("Connection coefficients must be finite")
        ct = c.transpose(0, 2, 1)
        scale = np.max(np.abs(c)) if c.size else 0.0
        if np.max(np.abs(c - ct)) > SYMMETRY_RTOL * scale:
            raise ValidationError("Connection has torsion: C^k_ij != C^k_ji")
        # (a + b) / 2 is commutative in IEEE arithmetic, so this is exact
        object.__setattr__(self, "coeffs", _frozen(0.5 * (c + ct)))

    @classmethod
    def zero(cls, chart: Chart) -> "Connection":
        d = chart.dim
        return cls(chart, np.zeros((d, d, d)))

    @classmethod
    def from_components(cls, chart: Chart, components: dict) -> "Connection":
        """Build from ``{(k, i, j): value}`` with coordinate labels or indices."""
        d = chart.dim
        c = np.zeros((d, d, d))
        for (k, i, j), v in components.items():
            k, i, j = (chart.index(t) if isinstance(t, str) else int(t) for t in (k, i, j))
            c[k, i, j] = v
            c[k, j, i] = v
        return cls(chart, c)

    def component(self, k, i, j) -> float:
        k, i, j = (self.chart.index(t) if isinstance(t, str) else int(t) for t in (k, i, j))
        return float(self.coeffs[k, i, j])


def _require_same_chart(*objects) -> Chart:
    first = objects[0]
    for obj in objects[1:]:
        if obj.chart != first.chart:
            raise ChartMismatchError(
                f"{type(obj).__name__} is on chart {obj.chart.id!r}, "
                f"expected {first.chart.id!r} (from {type(first).__name__})"
            )
    return first.chart


def covariant_hessian(hess: QuadraticForm, conn: Connection, grad: Gradient) -> QuadraticForm:
    """Return the adjusted Hessian ``V_ij - C^k_ij V_k`` as a target-kind form."""
    chart = _require_same_chart(hess, conn, grad)
    correction = np.einsum("kij,k->ij", conn.coeffs, grad.values)
    return QuadraticForm(chart, hess.matrix - correction, HESSIAN_TARGET)


def quadratic_predictor(
    grad: Gradient,
    quad: QuadraticForm,
    move: TangentMove,
    penalty: QuadraticForm | None = None,
) -> float:
    """Local P&L ``V_i dx^i + 1/2 H_ij dx^i dx^j``, net of ``1/2 dx^T g dx`` if a penalty is given."""
    if penalty is None:
        _require_same_chart(grad, quad, move)
    else:
        _require_same_chart(grad, quad, move, penalty)
        if penalty.kind != PENALTY:
            raise ValidationError("penalty argument must be a kind='penalty' QuadraticForm")
    dx = move.delta
    out = float(grad.values @ dx) + 0.5 * float(dx @ quad.matrix @ dx)
    if penalty is not None:
        out -= 0.5 * float(dx @ penalty.matrix @ dx)
    return out


@dataclass(frozen=True)
class ChartMapAtPoint:
    """Point-local data of a coordinate change x = x(y).

    ``jacobian[i, a] = dx^i/dy^a``; ``second[m, a, b] = d2 x^m/dy^a dy^b``.
    """

    source: Chart
    target: Chart
    jacobian: np.ndarray
    second: np.ndarray = None

    def __post_init__(self):
        d = self.source.dim
        if self.target.dim != d:
            raise ValidationError("source and target charts must have equal dimension")
        jac = np.asarray(self.jacobian, dtype=float)
        if jac.shape != (d, d):
            raise ValidationError(f"jacobian must be ({d}, {d}), got {jac.shape}")
        sec = np.zeros((d, d, d)) if self.second is None else np.asarray(self.second, dtype=float)
        if sec.shape != (d, d, d):
            raise ValidationError(f"second derivatives must be ({d}, {d}, {d}), got {sec.shape}")
        if not (np.all(np.isfinite(jac)) and np.all(np.isfinite(sec))):
            raise ValidationError("chart map entries must be finite")
        cond = np.linalg.cond(jac)
        if not np.isfinite(cond) or cond > JACOBIAN_MAX_COND:
            raise SingularJacobianError(f"chart map {self.source.id}->{self.target.id}: jacobian condition {cond:.3e}")
        if np.max(np.abs(sec - sec.transpose(0, 2, 1)), initial=0.0) > SYMMETRY_RTOL * max(np.max(np.abs(sec), initial=0.0), 1.0):
            raise ValidationError("second derivatives must be symmetric in the lower pair")
        object.__setattr__(self, "jacobian", _frozen(jac))
        object.__setattr__(self, "second", _frozen(0.5 * (sec + sec.transpose(0, 2, 1))))

    @property
    def inverse_jacobian(self) -> np.ndarray:
        """``dy^a/dx^i`` at the point."""
        return np.linalg.inv(self.jacobian)

    def inverse(self) -> "ChartMapAtPoint":
        """The map y = y(x) at the same point, with second derivatives
        d2y^a/dx^i dx^j = -(dy^a/dx^m) (d2x^m/dy^b dy^c) (dy^b/dx^i)(dy^c/dx^j)."""
        jinv = self.inverse_jacobian
        sec = -np.einsum("am,mbc,bi,cj->aij", jinv, self.second, jinv, jinv)
        return ChartMapAtPoint(self.target, self.source, jinv, sec)


def identity_map(chart: Chart) -> ChartMapAtPoint:
    return ChartMapAtPoint(chart, chart, np.eye(chart.dim))


def forward_to_log_forward(forward: float, source: Chart = FORWARD_VOL, target: Chart = LOG_FORWARD_VOL) -> ChartMapAtPoint:
    """(F, ...) -> (z = log F, ...); the forward is the first coordinate.

    dF/dz = F and d2F/dz2 = F; all other coordinates pass through unchanged.
    """
    if forward <= 0:
        raise ValidationError("forward must be positive")
    d = source.dim
    jac = np.eye(d)
    jac[0, 0] = forward
    sec = np.zeros((d, d, d))
    sec[0, 0, 0] = forward
    return ChartMapAtPoint(source, target, jac, sec)


def spot_to_forward(carry_factor: float, source: Chart = SPOT_VOL, target: Chart = FORWARD_VOL) -> ChartMapAtPoint:
    """(S, ...) -> (F = S * carry_factor, ...) with carry frozen over the horizon.

    ``carry_factor`` is exp((r_d - r_f) T) for FX.  The map is linear, so the
    second derivatives vanish.
    """
    if carry_factor <= 0:
        raise ValidationError("carry factor must be positive")
    jac = np.eye(source.dim)
    jac[0, 0] = 1.0 / carry_factor
    return ChartMapAtPoint(source, target, jac)


def _require_source(obj, cmap: ChartMapAtPoint):
    if obj.chart != cmap.source:
        raise ChartMismatchError(
            f"{type(obj).__name__} is on chart {obj.chart.id!r}, map source is {cmap.source.id!r}"
        )


def transform_gradient(grad: Gradient, cmap: ChartMapAtPoint) -> Gradient:
    _require_source(grad, cmap)
    return Gradient(cmap.target, cmap.jacobian.T @ grad.values)


def transform_move(move: TangentMove, cmap: ChartMapAtPoint) -> TangentMove:
    """Tangent components in the target chart: dy = (dy/dx) dx."""
    _require_source(move, cmap)
    return TangentMove(cmap.target, cmap.inverse_jacobian @ move.delta)


def transform_quadratic_form(q: QuadraticForm, cmap: ChartMapAtPoint) -> QuadraticForm:
    """Tensorial transport J^T H J; no second-derivative term."""
    _require_source(q, cmap)
    jac = cmap.jacobian
    return QuadraticForm(cmap.target, jac.T @ q.matrix @ jac, q.kind)


def transform_ordinary_hessian(hess: QuadraticForm, grad: Gradient, cmap: ChartMapAtPoint) -> QuadraticForm:
    """Chain rule for an ordinary Hessian, which picks up ``d2x^k/dy dy V_k``."""
    _require_source(hess, cmap)
    _require_source(grad, cmap)
    jac = cmap.jacobian
    mat = jac.T @ hess.matrix @ jac + np.einsum("kab,k->ab", cmap.second, grad.values)
    return QuadraticForm(cmap.target, mat, hess.kind)


def transform_connection(conn: Connection, cmap: ChartMapAtPoint) -> Connection:
    _require_source(conn, cmap)
    jac = cmap.jacobian
    jinv = cmap.inverse_jacobian
    tensorial = np.einsum("am,ib,jc,mij->abc", jinv, jac, jac, conn.coeffs)
    inhomogeneous = np.einsum("am,mbc->abc", jinv, cmap.second)
    total = tensorial + inhomogeneous
    # both parts are symmetric in (b, c) up to rounding; when they nearly cancel
    # that rounding would exceed the torsion check's output-relative tolerance
    return Connection(cmap.target, 0.5 * (total + total.transpose(0, 2, 1)))


def predictor_invariance_residual(
    grad: Gradient,
    hess: QuadraticForm,
    conn: Connection,
    move: TangentMove,
    cmap: ChartMapAtPoint,
) -> float:
    """|predictor(source) - predictor(target)| for the same tangent move.

    The target side is rebuilt from scratch: the ordinary Hessian and the
    connection are each transported by their own (non-tensorial) rules and
    the covariant Hessian is recomputed in the target chart.
    """
    _require_same_chart(grad, hess, conn, move)
    _require_source(grad, cmap)
    src = quadratic_predictor(grad, covariant_hessian(hess, conn, grad), move)
    grad_y = transform_gradient(grad, cmap)
    hess_y = transform_ordinary_hessian(hess, grad, cmap)
    conn_y = transform_connection(conn, cmap)
    move_y = transform_move(move, cmap)
    tgt = quadratic_predictor(grad_y, covariant_hessian(hess_y, conn_y, grad_y), move_y)
    return abs(src - tgt)


@dataclass(frozen=True)
class DriftAdjustment:
    """Connection-adjusted generator drift.

    ``fx_residuals`` maps each tradable coordinate to
    ``adjusted_drift - (r_d - r_f) * x`` when a state and rates are supplied.
    """

    chart: Chart
    drift: np.ndarray
    adjusted: np.ndarray
    fx_residuals: dict = field(default_factory=dict)


def generator_drift_adjustment(
    drift: Sequence[float],
    covariance: QuadraticForm,
    conn: Connection,
    state: StatePoint | None = None,
    r_d: float | None = None,
    r_f: float | None = None,
) -> DriftAdjustment:
    """Return ``b^k - 1/2 a^ij C^k_ij`` and, optionally, the martingale
    residual on each tradable coordinate of the chart."""
    chart = _require_same_chart(covariance, conn)
    b = _check_vector(drift, chart, "drift")
    a = covariance.matrix
    lam_min = np.linalg.eigvalsh(a)[0]
    if lam_min < -PSD_RTOL * max(np.linalg.norm(a, 2), 1e-300):
        raise NotPositiveDefiniteError(f"covariance is not PSD: min eigenvalue {lam_min:.3e}")
    adjusted = b - 0.5 * np.einsum("ij,kij->k", a, conn.coeffs)
    residuals = {}
    if state is not None and r_d is not None and r_f is not None:
        _require_same_chart(covariance, state)
        for name in chart.tradable:
            k = chart.index(name)
            residuals[name] = float(adjusted[k] - (r_d - r_f) * state.values[k])
    return DriftAdjustment(chart, _frozen(b), _frozen(adjusted), residuals)


def stack_gradients(grads: Iterable[Gradient]) -> np.ndarray:
    grads = list(grads)
    if grads:
        _require_same_chart(*grads)
    return np.array([g.values for g in grads])
