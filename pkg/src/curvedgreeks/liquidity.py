"""Execution-cost geometry: impact matrices, least-cost hedges, pulled-back
penalties, their Levi-Civita connections, energies, triggers and geodesics.

Trades live in an m-dimensional hedge space with quadratic cost
1/2 dq^T Lambda dq.  A hedge rule dq = M dx maps factor moves to trades and
induces the factor-space penalty g = M^T Lambda M.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    ConditioningError,
    NotPositiveDefiniteError,
    ValidationError,
)
from .geometry import (
    PENALTY,
    Chart,
    Connection,
    Gradient,
    QuadraticForm,
    StatePoint,
    TangentMove,
    _require_same_chart,
    covariant_hessian,
)

COND_MAX = 1e12
PD_RTOL = 1e-12
RANK_RTOL = 1e-12
DEFAULT_REG_EPS = 1e-8
FD_REL_STEP = 1e-4
UNITS_PER_MILLION = 1e6


# ---------------------------------------------------------------- width -> lambda

def half_spread_from_vol_width(s_vol, quote_vega):
    """Premium half-spread per trade unit from a vol half-width and a quote-vega per unit."""
    s_vol = np.asarray(s_vol, dtype=float)
    quote_vega = np.asarray(quote_vega, dtype=float)
    if np.any(s_vol < 0) or np.any(quote_vega < 0):
        raise ValidationError("vol width and quote-vega must be nonnegative")
    out = s_vol * quote_vega
    return float(out) if out.ndim == 0 else out


def lambda_from_width_clip(half_spread, clip, clip_quoted: bool = False):
    """Quadratic impact coefficient anchored at a representative clip.

    With a per-unit half-spread s: lambda = 2 s / Q.  With ``clip_quoted`` the
    half-spread is for the whole clip and lambda = 2 s_clip / Q^2.
    """
    clip = np.asarray(clip, dtype=float)
    half_spread = np.asarray(half_spread, dtype=float)
    if np.any(clip <= 0):
        raise ValidationError(f"clip size must be positive, got {clip}")
    if np.any(half_spread < 0):
        raise ValidationError("half-spread must be nonnegative")
    out = 2.0 * half_spread / (clip * clip if clip_quoted else clip)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TierSpec:
    """Plateau impact levels with logistic transitions between them."""

    plateaus: tuple
    transitions: tuple = ()
    widths: tuple = ()

    def __post_init__(self):
        plateaus = tuple(float(v) for v in self.plateaus)
        transitions = tuple(float(v) for v in self.transitions)
        widths = tuple(float(v) for v in self.widths)
        if not plateaus:
            raise ValidationError("tier spec needs at least one plateau")
        if any(p <= 0 for p in plateaus):
            raise ValidationError("tier plateaus must be positive")
        if len(transitions) != len(plateaus) - 1 or len(widths) != len(transitions):
            raise ValidationError("need J-1 transitions and J-1 smoothing widths for J plateaus")
        if any(b <= a for a, b in zip(transitions, transitions[1:])):
            raise ValidationError("tier transitions must be strictly increasing")
        if any(w <= 0 for w in widths):
            raise ValidationError("smoothing widths must be positive")
        object.__setattr__(self, "plateaus", plateaus)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "widths", widths)

    @classmethod
    def from_table(cls, breakpoints, clips, half_spreads, widths=None, width_fraction: float = 0.1) -> "TierSpec":
        """Tiers from per-tier upper breakpoints, clips and per-unit half-spreads.

        Plateau j is 2 s_j / Q_j and transition j sits at the upper breakpoint
        of tier j-1.  Smoothing widths default to ``width_fraction`` times the
        transition level.
        """
        breakpoints = [float(b) for b in breakpoints]
        plateaus = [lambda_from_width_clip(s, q) for s, q in zip(half_spreads, clips)]
        if not (len(breakpoints) == len(plateaus) == len(list(clips))):
            raise ValidationError("breakpoints, clips and half-spreads must have one entry per tier")
        transitions = breakpoints[:-1]
        if widths is None:
            widths = [width_fraction * c for c in transitions]
        return cls(tuple(plateaus), tuple(transitions), tuple(widths))

    @property
    def reference_lambda(self) -> float:
        return self.plateaus[0]


def tiered_lambda(q, tiers: TierSpec):
    """Trade-size dependent impact coefficient (vectorized in ``q``)."""
    u = np.abs(np.asarray(q, dtype=float))
    out = np.full(u.shape, tiers.plateaus[0])
    for j in range(1, len(tiers.plateaus)):
        step = tiers.plateaus[j] - tiers.plateaus[j - 1]
        out = out + step * expit((u - tiers.transitions[j - 1]) / tiers.widths[j - 1])
    return float(out) if out.ndim == 0 else out


def tiered_cost(q, tiers: TierSpec):
    q = np.asarray(q, dtype=float)
    out = 0.5 * tiered_lambda(q, tiers) * q * q
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TierTable:
    """Raw tier rows: upper breakpoints, clips and half-widths in the
    instrument's width units, plus optional smoothing widths (J-1 values)."""

    breakpoints: tuple
    clips: tuple
    half_widths: tuple
    smoothing: tuple | None = None

    def __post_init__(self):
        for name in ("breakpoints", "clips", "half_widths"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.smoothing is not None:
            object.__setattr__(self, "smoothing", tuple(float(v) for v in self.smoothing))
        if not (len(self.breakpoints) == len(self.clips) == len(self.half_widths)) or not self.clips:
            raise ValidationError("tier table needs matching, nonempty breakpoint/clip/width rows")


@dataclass(frozen=True)
class HedgeInstrumentSpec:
    """Width and clip inputs for one hedge instrument.

    Either ``half_spread`` (premium per trade unit) or ``vol_half_width``
    together with a quote-vega (premium per trade unit per vol unit) is
    required.  ``tier_table`` holds size-dependent rows in the same width
    units; vol widths are converted with the quote-vega in force.
    """

    name: str
    unit: str
    clip: float
    half_spread: float | None = None
    vol_half_width: float | None = None
    quote_vega: float | None = None
    tier_table: TierTable | None = None

    def __post_init__(self):
        if not self.clip > 0:
            raise ValidationError(f"{self.name}: clip must be positive")
        if self.half_spread is None and self.vol_half_width is None:
            raise ValidationError(f"{self.name}: need a price half-spread or a vol half-width")
        for v in (self.half_spread, self.vol_half_width, self.quote_vega):
            if v is not None and v < 0:
                raise ValidationError(f"{self.name}: widths and quote-vega must be nonnegative")

    @property
    def vol_quoted(self) -> bool:
        return self.half_spread is None

    def _quote_vega(self, quote_vega):
        qv = self.quote_vega if quote_vega is None else quote_vega
        if self.vol_quoted and qv is None:
            raise ValidationError(f"{self.name}: vol-quoted width needs a quote-vega")
        return qv

    def price_half_spread(self, quote_vega: float | None = None) -> float:
        if not self.vol_quoted:
            return float(self.half_spread)
        return half_spread_from_vol_width(self.vol_half_width, self._quote_vega(quote_vega))

    def impact(self, quote_vega: float | None = None) -> float:
        """Flat coefficient 2 s / Q; for tiered instruments the tier-1 plateau."""
        if self.tier_table is not None:
            return self.tier_spec(quote_vega).reference_lambda
        return lambda_from_width_clip(self.price_half_spread(quote_vega), self.clip)

    def tier_spec(self, quote_vega: float | None = None, width_fraction: float = 0.1) -> TierSpec | None:
        if self.tier_table is None:
            return None
        t = self.tier_table
        widths = np.asarray(t.half_widths)
        spreads = widths * self._quote_vega(quote_vega) if self.vol_quoted else widths
        return TierSpec.from_table(t.breakpoints, t.clips, spreads, t.smoothing, width_fraction)

    def scaled_widths(self, factor: float) -> "HedgeInstrumentSpec":
        hs = None if self.half_spread is None else self.half_spread * factor
        vw = None if self.vol_half_width is None else self.vol_half_width * factor
        table = None
        if self.tier_table is not None:
            t = self.tier_table
            table = TierTable(t.breakpoints, t.clips, tuple(factor * w for w in t.half_widths), t.smoothing)
        return HedgeInstrumentSpec(self.name, self.unit, self.clip, hs, vw, self.quote_vega, table)


LIQUIDITY_COLUMNS = ("name", "unit", "width_type", "half_width", "quote_vega", "clip", "tier", "breakpoint", "smoothing")


def load_liquidity_file(path) -> list[HedgeInstrumentSpec]:
    """Read hedge liquidity inputs from a CSV file.

    Columns: name, unit, width_type (``price`` or ``vol``), half_width,
    quote_vega (may be blank: vol widths then need a model quote-vega at use
    time), clip, and optionally tier, breakpoint, smoothing.  Several rows with
    the same name and increasing ``tier`` define a tiered instrument; the
    last tier's breakpoint may be ``inf``.  Blank smoothing means 10% of the
    transition level.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"name", "unit", "width_type", "half_width", "clip"} - set(reader.fieldnames or [])
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        groups: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                name = row["name"].strip()
                wtype = row["width_type"].strip().lower()
                if wtype not in ("price", "vol"):
                    raise ValueError(f"width_type must be price or vol, got {wtype!r}")
                half_width = float(row["half_width"])
                clip = float(row["clip"])
                qv_text = (row.get("quote_vega") or "").strip()
                qv = float(qv_text) if qv_text else None
                tier = int((row.get("tier") or "").strip() or 1)
                bp_text = (row.get("breakpoint") or "").strip()
                bp = float(bp_text) if bp_text else float("inf")
                sm_text = (row.get("smoothing") or "").strip()
                sm = float(sm_text) if sm_text else None
            except (ValueError, AttributeError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if half_width < 0 or clip <= 0:
                raise ValidationError(f"{path}:{lineno}: negative width or nonpositive clip")
            groups.setdefault(name, []).append((tier, row["unit"].strip(), wtype, half_width, qv, clip, bp, sm, lineno))
    if not groups:
        raise ValidationError(f"{path}: no instruments")
    out = []
    for name, rows in groups.items():
        rows.sort()
        _, unit, wtype, hw, qv, clip, _, _, lineno = rows[0]
        if any(r[2] != wtype for r in rows):
            raise ValidationError(f"{path}:{lineno}: instrument {name!r} mixes width types across tiers")
        kwargs = {"half_spread": hw} if wtype == "price" else {"vol_half_width": hw, "quote_vega": qv}
        table = None
        if len(rows) > 1:
            smooth = [r[7] for r in rows[:-1]]
            table = TierTable(
                tuple(r[6] for r in rows), tuple(r[5] for r in rows), tuple(r[3] for r in rows),
                None if any(v is None for v in smooth) else tuple(smooth),
            )
        try:
            spec = HedgeInstrumentSpec(name, unit, clip, tier_table=table, **kwargs)
            if table is not None and not spec.vol_quoted:
                spec.tier_spec()
        except ValidationError as exc:
            raise ValidationError(f"{path}: instrument {name!r}: {exc}") from None
        out.append(spec)
    return out


# ---------------------------------------------------------------- impact matrix

@dataclass(frozen=True)
class ImpactMatrix:
    matrix: np.ndarray
    units: tuple = ()
    bucket: str = ""

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError("impact matrix must be square")
        if not np.all(np.isfinite(a)):
            raise ValidationError("impact matrix entries must be finite")
        scale = np.max(np.abs(a), initial=0.0)
        if np.max(np.abs(a - a.T), initial=0.0) > 1e-12 * scale:
            raise ValidationError("impact matrix must be symmetric")
        a = 0.5 * (a + a.T)
        if a.size and np.linalg.eigvalsh(a)[0] < -1e-12 * scale:
            raise NotPositiveDefiniteError("impact matrix must be positive semidefinite")
        a.setflags(write=False)
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "units", tuple(self.units))

    @classmethod
    def diagonal(cls, lambdas, units=(), bucket: str = "") -> "ImpactMatrix":
        return cls(np.diag(np.asarray(lambdas, dtype=float)), units, bucket)

    @classmethod
    def from_instruments(cls, specs: Sequence[HedgeInstrumentSpec], quote_vegas=None, bucket: str = "") -> "ImpactMatrix":
        qvs = [None] * len(specs) if quote_vegas is None else list(quote_vegas)
        lams = [s.impact(q) for s, q in zip(specs, qvs)]
        return cls.diagonal(lams, tuple(s.unit for s in specs), bucket)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def scaled(self, alpha: float) -> "ImpactMatrix":
        return ImpactMatrix(alpha * self.matrix, self.units, self.bucket)

    def cost(self, dq) -> float:
        dq = np.asarray(dq, dtype=float)
        return 0.5 * float(dq @ self.matrix @ dq)


def _lam(lam) -> np.ndarray:
    return lam.matrix if isinstance(lam, ImpactMatrix) else np.asarray(lam, dtype=float)


def rescale_trade_units(lam, units_per_block: float = UNITS_PER_MILLION):
    """Impact coefficients for trades measured in blocks of ``units_per_block``.

    With q = units_per_block * q_block, Lambda_block = units_per_block^2 Lambda.
    """
    arr = _lam(lam) * units_per_block**2
    if isinstance(lam, ImpactMatrix):
        return ImpactMatrix(arr, lam.units, lam.bucket)
    return arr


# ---------------------------------------------------------------- least-cost rule

@dataclass(frozen=True)
class ExposureSpec:
    """Exposure per trade unit ``B`` (p x m) and exposure drift ``J_E`` (p x d)."""

    exposure: np.ndarray
    drift: np.ndarray

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.exposure, dtype=float))
        j = np.atleast_2d(np.asarray(self.drift, dtype=float))
        if b.shape[0] != j.shape[0]:
            raise ValidationError("B and J_E need the same number of exposure rows")
        object.__setattr__(self, "exposure", b)
        object.__setattr__(self, "drift", j)


def _cholesky_pd(lam: np.ndarray, what: str = "impact matrix") -> np.ndarray:
    try:
        return np.linalg.cholesky(lam)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(f"{what} must be positive definite for the least-cost rule") from None


def _equilibrated_cond(a: np.ndarray) -> float:
    diag = np.sqrt(np.abs(np.diag(a)))
    if np.any(diag == 0):
        return float("inf")
    return float(np.linalg.cond(a / np.outer(diag, diag)))


def _b_rank(b: np.ndarray, rtol: float = RANK_RTOL) -> int:
    rows = np.linalg.norm(b, axis=1)
    rows[rows == 0] = 1.0
    s = np.linalg.svd(b / rows[:, None], compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0


def _least_cost_operator(lam: np.ndarray, b: np.ndarray, rhs: np.ndarray, cond_max: float, allow_pinv: bool):
    """Solve min 1/2 dq^T Lam dq s.t. B dq = rhs (rhs may have several columns)."""
    m = lam.shape[0]
    if b.shape[1] != m:
        raise ValidationError(f"B has {b.shape[1]} columns, impact matrix is {m} x {m}")
    chol = _cholesky_pd(lam)
    p = b.shape[0]
    if _b_rank(b) < p:
        if not allow_pinv:
            raise ConditioningError("exposure matrix B is rank deficient")
        # whitened problem: z = L^T dq, minimum-norm z with (B L^{-T}) z = rhs
        b_white = np.linalg.solve(chol, b.T).T
        z = np.linalg.pinv(b_white, rcond=RANK_RTOL) @ rhs
        return np.linalg.solve(chol.T, z)
    lam_inv_bt = np.linalg.solve(lam, b.T)
    schur = b @ lam_inv_bt
    cond = _equilibrated_cond(schur)
    if not np.isfinite(cond) or cond > cond_max:
        raise ConditioningError(
            f"B Lambda^-1 B^T is ill-conditioned (condition {cond:.3e} > {cond_max:.1e}); "
            "regularize Lambda or drop redundant hedge instruments"
        )
    return lam_inv_bt @ np.linalg.solve(schur, rhs)


def least_cost_trade(lam, exposure, target, cond_max: float = COND_MAX, allow_pinv: bool = True) -> np.ndarray:
    """Minimum-cost trade dq with B dq = target."""
    b = np.atleast_2d(np.asarray(exposure, dtype=float))
    c = np.asarray(target, dtype=float).reshape(-1)
    if c.shape[0] != b.shape[0]:
        raise ValidationError("target length must equal the number of exposure rows")
    return _least_cost_operator(_lam(lam), b, c, cond_max, allow_pinv)


@dataclass(frozen=True)
class HedgeResponse:
    """Linear hedge rule dq = M dx; ``matrix`` is m x d."""

    matrix: np.ndarray
    chart: Chart
    units: tuple = ()

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if mat.shape[1] != self.chart.dim:
            raise ValidationError(f"hedge response has {mat.shape[1]} columns for a {self.chart.dim}-d chart")
        if not np.all(np.isfinite(mat)):
            raise ValidationError("hedge response must be finite")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    def trade(self, move: TangentMove) -> np.ndarray:
        _require_same_chart(self, move)
        return self.matrix @ move.delta


def build_hedge_response(lam, exposure, drift, chart: Chart, cond_max: float = COND_MAX, allow_pinv: bool = True) -> HedgeResponse:
    """M = -Lambda^{-1} B^T (B Lambda^{-1} B^T)^{-1} J_E."""
    b = np.atleast_2d(np.asarray(exposure, dtype=float))
    j = np.atleast_2d(np.asarray(drift, dtype=float))
    if j.shape != (b.shape[0], chart.dim):
        raise ValidationError(f"J_E must be {b.shape[0]} x {chart.dim}, got {j.shape}")
    m = _least_cost_operator(_lam(lam), b, -j, cond_max, allow_pinv)
    units = lam.units if isinstance(lam, ImpactMatrix) else ()
    return HedgeResponse(m, chart, units)


def pullback_penalty(response: HedgeResponse, lam) -> QuadraticForm:
    """g = M^T Lambda M as a penalty form on the response's chart."""
    lam_arr = _lam(lam)
    mat = response.matrix
    if lam_arr.shape != (mat.shape[0], mat.shape[0]):
        raise ValidationError(f"impact matrix {lam_arr.shape} does not match {mat.shape[0]} hedge instruments")
    g = mat.T @ lam_arr @ mat
    return QuadraticForm(response.chart, 0.5 * (g + g.T), PENALTY)


def closed_form_penalty(lam, exposure, drift, chart: Chart) -> QuadraticForm:
    """J_E^T (B Lambda^{-1} B^T)^{-1} J_E, the least-cost penalty without forming M."""
    lam_arr = _lam(lam)
    b = np.atleast_2d(np.asarray(exposure, dtype=float))
    j = np.atleast_2d(np.asarray(drift, dtype=float))
    schur = b @ np.linalg.solve(lam_arr, b.T)
    g = j.T @ np.linalg.solve(schur, j)
    return QuadraticForm(chart, 0.5 * (g + g.T), PENALTY)


# ---------------------------------------------------------------- derivatives and connection

def g_ell_derivatives(response_matrix, d_response, lam, d_lam=None) -> np.ndarray:
    """Analytic state derivatives of g = M^T Lambda M.

    ``d_response[l]`` is dM/dx^l (m x d) and ``d_lam[l]`` is dLambda/dx^l
    (omit for a constant-Lambda bucket).  Returns D with D[l] = d g / d x^l.
    """
    m = np.asarray(response_matrix, dtype=float)
    dm = np.asarray(d_response, dtype=float)
    lam_arr = _lam(lam)
    d = m.shape[1]
    if dm.shape != (d,) + m.shape:
        raise ValidationError(f"d_response must have shape {(d,) + m.shape}, got {dm.shape}")
    out = np.empty((d, d, d))
    for l in range(d):
        term = dm[l].T @ lam_arr @ m
        g_l = term + term.T
        if d_lam is not None:
            g_l = g_l + m.T @ np.asarray(d_lam[l], dtype=float) @ m
        out[l] = 0.5 * (g_l + g_l.T)
    return out


def fd_metric_derivatives(metric_field: Callable, x, steps=None, scale=None) -> np.ndarray:
    """Central differences of a matrix-valued field; D[l] = d g / d x^l.

    Default steps are ``FD_REL_STEP`` times the coordinate scale (which
    defaults to max(|x_l|, 1)).
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    if steps is None:
        sc = np.maximum(np.abs(x), 1.0) if scale is None else np.asarray(scale, dtype=float)
        steps = FD_REL_STEP * sc
    steps = np.broadcast_to(np.asarray(steps, dtype=float), (d,))
    if np.any(steps <= 0):
        raise ValidationError("finite-difference steps must be positive")
    out = None
    for l in range(d):
        e = np.zeros(d)
        e[l] = steps[l]
        diff = (np.asarray(metric_field(x + e), dtype=float) - np.asarray(metric_field(x - e), dtype=float)) / (2 * steps[l])
        if out is None:
            out = np.empty((d,) + diff.shape)
        out[l] = diff
    return out


def _metric_array(g) -> np.ndarray:
    return g.matrix if isinstance(g, QuadraticForm) else np.asarray(g, dtype=float)


def check_positive_definite(g, rtol: float = PD_RTOL) -> None:
    a = _metric_array(g)
    eig = np.linalg.eigvalsh(0.5 * (a + a.T))
    norm = np.max(np.abs(eig)) if eig.size else 0.0
    if not eig[0] > rtol * norm:
        raise NotPositiveDefiniteError(
            f"metric is not positive definite (min eigenvalue {eig[0]:.3e}, norm {norm:.3e}); "
            "apply regularize_penalty before computing a Levi-Civita connection"
        )


def levi_civita_coefficients(g, dg) -> np.ndarray:
    """C^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij); ``dg[l] = d g / d x^l``."""
    a = _metric_array(g)
    check_positive_definite(a)
    dg = np.asarray(dg, dtype=float)
    d = a.shape[0]
    if dg.shape != (d, d, d):
        raise ValidationError(f"metric derivatives must have shape {(d, d, d)}, got {dg.shape}")
    # lower[l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    lower = 0.5 * (np.transpose(dg, (2, 0, 1)) + np.transpose(dg, (1, 2, 0)) - dg)
    coeffs = np.linalg.solve(a, lower.reshape(d, d * d)).reshape(d, d, d)
    return 0.5 * (coeffs + coeffs.transpose(0, 2, 1))


def levi_civita(g: QuadraticForm, dg) -> Connection:
    return Connection(g.chart, levi_civita_coefficients(g, dg))


def levi_civita_2d(g, dg) -> np.ndarray:
    """Explicit two-coordinate formulas for g = [[a, c], [c, b]]."""
    m = _metric_array(g)
    dg = np.asarray(dg, dtype=float)
    a, c, b = m[0, 0], m[0, 1], m[1, 1]
    a_s, a_v = dg[0, 0, 0], dg[1, 0, 0]
    b_s, b_v = dg[0, 1, 1], dg[1, 1, 1]
    c_s, c_v = dg[0, 0, 1], dg[1, 0, 1]
    det = a * b - c * c
    if not det > 0:
        raise NotPositiveDefiniteError("2x2 metric determinant must be positive")
    out = np.zeros((2, 2, 2))
    out[0, 0, 0] = (b * a_s - 2 * c * c_s + c * a_v) / (2 * det)
    out[0, 0, 1] = out[0, 1, 0] = (b * a_v - c * b_s) / (2 * det)
    out[0, 1, 1] = (b * (2 * c_v - b_s) - c * b_v) / (2 * det)
    out[1, 0, 0] = (a * (2 * c_s - a_v) - c * a_s) / (2 * det)
    out[1, 0, 1] = out[1, 1, 0] = (a * b_s - c * a_v) / (2 * det)
    out[1, 1, 1] = (a * b_v - c * (2 * c_v - b_s)) / (2 * det)
    return out


def regularize_penalty(g: QuadraticForm, eps: float = DEFAULT_REG_EPS, baseline=None, scale=None) -> QuadraticForm:
    """g + eps * g0 with g0 positive definite (default diag(scale^-2), scale defaults to ones)."""
    if not eps > 0:
        raise ValidationError("regularization strength must be positive")
    d = g.chart.dim
    if baseline is None:
        sc = np.ones(d) if scale is None else np.asarray(scale, dtype=float)
        g0 = np.diag(1.0 / sc**2)
    else:
        g0 = _metric_array(baseline)
    check_positive_definite(g0)
    return QuadraticForm(g.chart, g.matrix + eps * g0, PENALTY)


def liquidity_adjusted_hessian(hess: QuadraticForm, grad: Gradient, g: QuadraticForm, dg) -> QuadraticForm:
    """Covariant Hessian under the Levi-Civita connection of the penalty."""
    return covariant_hessian(hess, levi_civita(g, dg), grad)


# ---------------------------------------------------------------- energies and paths

def _metric_at(metric, n: int, x: np.ndarray) -> np.ndarray:
    if callable(metric):
        return _metric_array(metric(x))
    if isinstance(metric, QuadraticForm) or np.ndim(metric) == 2:
        return _metric_array(metric)
    return _metric_array(metric[n])


def execution_energy(path: Sequence, metric) -> float:
    """1/2 sum_n (x_{n+1} - x_n)^T g(x_n) (x_{n+1} - x_n).

    ``path`` is a sequence of StatePoints (or raw vectors); ``metric`` is a
    constant form, a per-node sequence, or a callable of the state vector.
    """
    if len(path) < 2:
        raise ValidationError("execution energy needs at least two path points")
    if isinstance(path[0], StatePoint):
        _require_same_chart(*path)
        if isinstance(metric, QuadraticForm):
            _require_same_chart(path[0], metric)
        xs = [p.values for p in path]
    else:
        xs = [np.asarray(p, dtype=float) for p in path]
    total = 0.0
    for n in range(len(xs) - 1):
        step = xs[n + 1] - xs[n]
        total += 0.5 * float(step @ _metric_at(metric, n, xs[n]) @ step)
    return total


def equal_cost_split(move: TangentMove, g: QuadraticForm, n_steps: int) -> tuple[list[TangentMove], float]:
    """Split a move into ``n_steps`` equal pieces; returns (steps, energy)."""
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValidationError("number of steps must be a positive integer")
    _require_same_chart(move, g)
    if g.kind != PENALTY:
        g = QuadraticForm(g.chart, g.matrix, PENALTY)
    step = TangentMove(move.chart, move.delta / n_steps)
    energy = float(move.delta @ g.matrix @ move.delta) / (2 * n_steps)
    return [step] * int(n_steps), energy


def liquidity_distance(x: StatePoint, x_last: StatePoint, g: QuadraticForm) -> float:
    _require_same_chart(x, x_last, g)
    dx = x.values - x_last.values
    return 0.5 * float(dx @ g.matrix @ dx)


def rebalance_trigger(x: StatePoint, x_last: StatePoint, g: QuadraticForm, threshold: float) -> bool:
    """True when the quadratic cost of the accumulated move reaches ``threshold`` (closed boundary)."""
    if not threshold > 0:
        raise ValidationError("trigger threshold must be positive")
    return liquidity_distance(x, x_last, g) >= threshold


def whitening_factor(g) -> np.ndarray:
    """Upper-triangular R with R^T R = g."""
    a = _metric_array(g)
    check_positive_definite(a)
    return np.linalg.cholesky(0.5 * (a + a.T)).T


def whiten_displacement(g, moves) -> np.ndarray:
    """Whitened displacements u = R dx for each row of ``moves``."""
    r = whitening_factor(g)
    if isinstance(moves, TangentMove):
        return r @ moves.delta
    arr = np.asarray([m.delta if isinstance(m, TangentMove) else m for m in moves], dtype=float)
    return arr @ r.T


@dataclass
class GeodesicPath:
    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray


def geodesic_integrate(metric_field: Callable, x0, v0, n_steps: int = 100, t_end: float = 1.0, fd_steps=None) -> GeodesicPath:
    """Fixed-step RK4 for x'' + C^k_ij(x) x'^i x'^j = 0 with C from ``metric_field``.

    Metric derivatives are central finite differences of ``metric_field``.
    """
    if n_steps < 1:
        raise ValidationError("need at least one integration step")
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    dt = t_end / n_steps

    def accel(x, v):
        g = np.asarray(metric_field(x), dtype=float)
        try:
            coeffs = levi_civita_coefficients(g, fd_metric_derivatives(metric_field, x, fd_steps))
        except NotPositiveDefiniteError as exc:
            raise NotPositiveDefiniteError(f"metric singular along geodesic at x = {x.tolist()}: {exc}") from None
        return -np.einsum("kij,i,j->k", coeffs, v, v)

    xs = np.empty((n_steps + 1, x0.size))
    vs = np.empty_like(xs)
    xs[0], vs[0] = x0, v0
    x, v = x0.copy(), v0.copy()
    for n in range(n_steps):
        k1x, k1v = v, accel(x, v)
        k2x, k2v = v + 0.5 * dt * k1v, accel(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
        k3x, k3v = v + 0.5 * dt * k2v, accel(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
        k4x, k4v = v + dt * k3v, accel(x + dt * k3x, v + dt * k3v)
        x = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        xs[n + 1], vs[n + 1] = x, v
    return GeodesicPath(np.linspace(0.0, t_end, n_steps + 1), xs, vs)
