"""Metric compatibility on a grid: residuals, least-squares reconstruction,
SPD projection and scale anchoring.

A metric g is compatible with a connection C when

    d_k g_ij = C^l_ki g_lj + C^l_kj g_il

at every point.  Given C on a rectangular grid this is a linear first-order
system for the symmetric entries of g; with one node's value fixed it is
solved in least squares.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import SingularDesignError, ValidationError
from .geometry import PENALTY, Chart, Connection, QuadraticForm, TangentMove, _require_same_chart

SPACING_RTOL = 1e-9
METRIZABLE_MIN_ORDER = 1.5
RESIDUAL_FLOOR = 1e-12


@dataclass(frozen=True)
class GridField:
    """Tensor field sampled on a rectangular grid with uniform spacing per axis.

    ``values`` has shape ``grid_shape + (d, d)`` for bilinear forms or
    ``grid_shape + (d, d, d)`` for connection coefficients [k, i, j].
    """

    chart: Chart
    axes: tuple
    values: np.ndarray

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        d = self.chart.dim
        if len(axes) != d:
            raise ValidationError(f"need {d} grid axes for chart {self.chart.id!r}")
        for a in axes:
            if a.ndim != 1 or a.size < 2:
                raise ValidationError("each grid axis needs at least two nodes")
            steps = np.diff(a)
            if np.any(steps <= 0) or np.max(np.abs(steps - steps[0])) > SPACING_RTOL * abs(steps[0]):
                raise ValidationError("grid axes must be strictly increasing with uniform spacing")
        vals = np.asarray(self.values, dtype=float)
        shape = tuple(a.size for a in axes)
        if vals.shape not in (shape + (d, d), shape + (d, d, d)):
            raise ValidationError(f"field values have shape {vals.shape}, expected {shape} + (d, d) or (d, d, d)")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", vals)

    @property
    def grid_shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    @property
    def spacings(self) -> tuple:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @property
    def is_connection(self) -> bool:
        return self.values.ndim == len(self.axes) + 3

    def points(self) -> np.ndarray:
        """Node coordinates, shape grid_shape + (d,)."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def form_at(self, index) -> QuadraticForm:
        return QuadraticForm(self.chart, self.values[tuple(index)], PENALTY)

    def connection_at(self, index) -> Connection:
        return Connection(self.chart, self.values[tuple(index)])

    @classmethod
    def sample(cls, chart: Chart, axes, fn) -> "GridField":
        """Evaluate ``fn(point) -> array`` at every node."""
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        flat = pts.reshape(-1, len(axes))
        vals = np.array([np.asarray(fn(x), dtype=float) for x in flat])
        return cls(chart, axes, vals.reshape(pts.shape[:-1] + vals.shape[1:]))


def _require_colocated(a: GridField, b: GridField):
    _require_same_chart(a, b)
    if a.grid_shape != b.grid_shape or not all(np.array_equal(x, y) for x, y in zip(a.axes, b.axes)):
        raise ValidationError("fields must live on the same grid")


def _compatibility_defect(g: np.ndarray, c: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """R[..., k, i, j] = d_k g_ij - C^l_ki g_lj - C^l_kj g_il."""
    term1 = np.einsum("...lki,...lj->...kij", c, g)
    term2 = np.einsum("...lkj,...il->...kij", c, g)
    return dg - term1 - term2


def metric_pde_residual(metric: GridField, connection: GridField) -> np.ndarray:
    """Per-node Frobenius norm of the compatibility defect (FD derivatives).

    Derivatives are second-order central differences in the interior and
    second-order one-sided at the boundary.
    """
    _require_colocated(metric, connection)
    if metric.is_connection or not connection.is_connection:
        raise ValidationError("expected a metric field and a connection field")
    if min(metric.grid_shape) < 3:
        raise ValidationError("need at least 3 nodes per axis for the finite-difference residual")
    n_axes = len(metric.axes)
    dg = np.stack(
        [np.gradient(metric.values, h, axis=a, edge_order=2) for a, h in enumerate(metric.spacings)],
        axis=n_axes,
    )
    defect = _compatibility_defect(metric.values, connection.values, dg)
    return np.sqrt(np.sum(defect**2, axis=(-3, -2, -1)))


def _diff_matrix(n: int, h: float) -> sp.csr_matrix:
    """1-D first-derivative matrix matching numpy.gradient(edge_order=2)."""
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5, 0.5]
    rows += [0, 0, 0, n - 1, n - 1, n - 1]
    cols += [0, 1, 2, n - 3, n - 2, n - 1]
    vals += [-1.5, 2.0, -0.5, 0.5, -2.0, 1.5]
    return sp.csr_matrix((np.array(vals) / h, (rows, cols)), shape=(n, n))


def _axis_operator(shape: tuple, axis: int, h: float) -> sp.csr_matrix:
    mats = [sp.identity(n, format="csr") for n in shape]
    mats[axis] = _diff_matrix(shape[axis], h)
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


@dataclass
class Reconstruction:
    metric: GridField
    residual_rms: float
    node_residuals: np.ndarray


def reconstruct_metric(connection: GridField, anchor: QuadraticForm, anchor_index=None) -> Reconstruction:
    """Least-squares metric compatible with ``connection``, fixed to ``anchor`` at one node.

    Unknowns are the symmetric entries at every node; the discretized
    first-order system is solved through diagonally scaled normal equations.
    ``residual_rms`` is the root-mean-square defect of the discrete system.
    """
    if not connection.is_connection:
        raise ValidationError("reconstruction needs a connection field")
    _require_same_chart(connection, anchor)
    eig = np.linalg.eigvalsh(anchor.matrix)
    if not eig[0] > 0:
        raise ValidationError("anchor form must be positive definite")
    shape = connection.grid_shape
    if min(shape) < 3:
        raise ValidationError("need at least 3 nodes per axis")
    d = connection.chart.dim
    n_nodes = int(np.prod(shape))
    pairs = list(combinations_with_replacement(range(d), 2))
    ns = len(pairs)
    sym = {}
    for s, (i, j) in enumerate(pairs):
        sym[i, j] = sym[j, i] = s
    n_unknown = n_nodes * ns
    coeffs = connection.values.reshape(n_nodes, d, d, d)
    nodes = np.arange(n_nodes)

    blocks = []
    for k in range(d):
        deriv = sp.kron(_axis_operator(shape, k, connection.spacings[k]), sp.identity(ns), format="csr")
        rows, cols, vals = [], [], []
        for s, (i, j) in enumerate(pairs):
            for l in range(d):
                # C^l_ki g_lj + C^l_kj g_il
                rows.append(nodes * ns + s)
                cols.append(nodes * ns + sym[l, j])
                vals.append(coeffs[:, l, k, i])
                rows.append(nodes * ns + s)
                cols.append(nodes * ns + sym[i, l])
                vals.append(coeffs[:, l, k, j])
        conn_op = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_unknown, n_unknown)
        )
        blocks.append(deriv - conn_op)
    system = sp.vstack(blocks, format="csr")

    if anchor_index is None:
        anchor_index = tuple(n // 2 for n in shape)
    anchor_node = int(np.ravel_multi_index(tuple(anchor_index), shape))
    anchor_cols = anchor_node * ns + np.arange(ns)
    anchor_vals = np.array([anchor.matrix[i, j] for i, j in pairs])
    free = np.ones(n_unknown, dtype=bool)
    free[anchor_cols] = False
    a_free = system[:, free]
    rhs = -(system[:, anchor_cols] @ anchor_vals)
    normal = (a_free.T @ a_free).tocsc()
    diag = normal.diagonal()
    if np.any(diag <= 0):
        raise SingularDesignError("normal system has an empty column; the grid is disconnected from the anchor")
    scale = sp.diags(1.0 / np.sqrt(diag))
    scaled = (scale @ normal @ scale).tocsc()
    y = spsolve(scaled, scale @ (a_free.T @ rhs))
    x_free = scale @ y
    if not np.all(np.isfinite(x_free)):
        raise SingularDesignError("normal equations of the metric reconstruction are singular")
    x = np.empty(n_unknown)
    x[free] = x_free
    x[anchor_cols] = anchor_vals
    defect = system @ x
    residual_rms = float(np.sqrt(np.mean(defect**2)))
    entries = x.reshape(n_nodes, ns)
    g = np.empty((n_nodes, d, d))
    for s, (i, j) in enumerate(pairs):
        g[:, i, j] = g[:, j, i] = entries[:, s]
    field = GridField(connection.chart, connection.axes, g.reshape(shape + (d, d)))
    node_res = np.sqrt(np.sum(defect.reshape(d, n_nodes, ns) ** 2, axis=(0, 2))).reshape(shape)
    return Reconstruction(field, residual_rms, node_res)


def refine_axes(axes) -> tuple:
    """Halve every spacing over the same extent."""
    return tuple(np.linspace(a[0], a[-1], 2 * (len(a) - 1) + 1) for a in axes)


@dataclass
class MetrizabilityVerdict:
    metrizable: bool
    coarse_residual: float
    fine_residual: float
    order: float


def metrizability_check(chart: Chart, connection_fn, axes, anchor: QuadraticForm,
                        min_order: float = METRIZABLE_MIN_ORDER, floor: float = RESIDUAL_FLOOR) -> MetrizabilityVerdict:
    """Reconstruct on a grid and on its refinement; metrizable when the
    least-squares defect shrinks at least at ``min_order`` (or is already
    below ``floor``)."""
    coarse = reconstruct_metric(GridField.sample(chart, axes, connection_fn), anchor)
    fine = reconstruct_metric(GridField.sample(chart, refine_axes(axes), connection_fn), anchor)
    r0, r1 = coarse.residual_rms, fine.residual_rms
    if r0 <= floor and r1 <= floor:
        return MetrizabilityVerdict(True, r0, r1, math.inf)
    order = math.log2(r0 / r1) if r1 > 0 else math.inf
    return MetrizabilityVerdict(order >= min_order, r0, r1, order)


def spd_project(form: QuadraticForm, eps: float = 1e-8, zero_scale: float = 1.0) -> QuadraticForm:
    """Clip eigenvalues below eps * max|eigenvalue|.

    Forms that need no clipping are returned unchanged; the zero matrix maps
    to eps * zero_scale * I.
    """
    if not eps > 0:
        raise ValidationError("eigenvalue floor must be positive")
    a = form.matrix
    eig, vec = np.linalg.eigh(a)
    top = np.max(np.abs(eig))
    if top == 0:
        return QuadraticForm(form.chart, eps * zero_scale * np.eye(form.chart.dim), PENALTY)
    floor = eps * top
    if eig[0] >= floor:
        return QuadraticForm(form.chart, a, PENALTY)
    clipped = np.maximum(eig, floor)
    out = (vec * clipped) @ vec.T
    return QuadraticForm(form.chart, 0.5 * (out + out.T), PENALTY)


def anchor_scale(metric, move: TangentMove, length: float, index=None):
    """Rescale so that ``move`` has squared length ``length**2``.

    ``metric`` is a QuadraticForm or a GridField (then evaluated at ``index``).
    Returns (scaled metric, alpha).
    """
    if not length > 0:
        raise ValidationError("anchor length must be positive")
    if isinstance(metric, GridField):
        if index is None:
            raise ValidationError("grid fields need the anchor node index")
        base = metric.values[tuple(index)]
        chart = metric.chart
    else:
        base = metric.matrix
        chart = metric.chart
    if move.chart != chart:
        _require_same_chart(metric, move)
    norm2 = float(move.delta @ base @ move.delta)
    if not norm2 > 0:
        raise ValidationError("anchor direction has zero or negative squared length")
    alpha = length**2 / norm2
    if isinstance(metric, GridField):
        return GridField(chart, metric.axes, alpha * metric.values), alpha
    return QuadraticForm(chart, alpha * base, metric.kind), alpha


def save_grid_field(field: GridField, path) -> None:
    """CSV with one row per node: coordinates then tensor entries."""
    d = field.chart.dim
    coords = list(field.chart.coords)
    if field.is_connection:
        idx = [(k, i, j) for k in range(d) for i, j in combinations_with_replacement(range(d), 2)]
        names = [f"C_{coords[k]}_{coords[i]}{coords[j]}" for k, i, j in idx]
    else:
        idx = list(combinations_with_replacement(range(d), 2))
        names = [f"g_{coords[i]}{coords[j]}" for i, j in idx]
    pts = field.points().reshape(-1, d)
    vals = field.values.reshape((pts.shape[0],) + field.values.shape[d:])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(coords + names)
        for p, v in zip(pts, vals):
            w.writerow([repr(float(x)) for x in p] + [repr(float(v[t])) for t in idx])


def load_grid_field(path, chart: Chart) -> GridField:
    """Inverse of ``save_grid_field``; rows may come in any order."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = [r for r in reader if r]
    d = chart.dim
    if not header or header[:d] != list(chart.coords):
        raise ValidationError(f"{path}: header must start with coordinates {list(chart.coords)}")
    names = header[d:]
    pairs = list(combinations_with_replacement(range(d), 2))
    is_conn = all(n.startswith("C_") for n in names) and len(names) == d * len(pairs)
    if not is_conn and not (len(names) == len(pairs) and all(n.startswith("g_") for n in names)):
        raise ValidationError(f"{path}: unrecognized entry columns {names}")
    try:
        data = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValidationError(f"{path}: ragged rows")
    axes = tuple(np.unique(data[:, a]) for a in range(d))
    shape = tuple(a.size for a in axes)
    if int(np.prod(shape)) != data.shape[0]:
        raise ValidationError(f"{path}: nodes do not form a full rectangular grid")
    tensor_shape = (d, d, d) if is_conn else (d, d)
    values = np.zeros(shape + tensor_shape)
    for row in data:
        node = tuple(int(np.searchsorted(axes[a], row[a])) for a in range(d))
        entries = row[d:]
        if is_conn:
            for n, (k, (i, j)) in enumerate((k, p) for k in range(d) for p in pairs):
                values[node + (k, i, j)] = values[node + (k, j, i)] = entries[n]
        else:
            for n, (i, j) in enumerate(pairs):
                values[node + (i, j)] = values[node + (j, i)] = entries[n]
    return GridField(chart, axes, values)
