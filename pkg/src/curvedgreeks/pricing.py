"""FX option pricing: Garman-Kohlhagen vanillas, up-and-in barrier calls,
Vanna-Volga smile corrections and finite-difference target Hessians.

Volatilities are carried as decimals (0.09 for 9%).  Vol-denominated Greeks
are reported per vol point by default (``vol_units="points"``): Vega and
Vanna are divided by 100 and Volga by 10^4, so the second state coordinate
of the (S, sigma) chart is measured in vol points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import PricingError, SingularDesignError, ValidationError
from .geometry import SPOT_VOL, Chart, Gradient, QuadraticForm

VOL_POINTS = "points"
VOL_DECIMAL = "decimal"


def vol_scale(vol_units: str) -> float:
    """Decimal volatility per unit of the sigma coordinate."""
    if vol_units == VOL_POINTS:
        return 0.01
    if vol_units == VOL_DECIMAL:
        return 1.0
    raise ValidationError(f"vol_units must be 'points' or 'decimal', got {vol_units!r}")


def _npdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class MarketSnapshot:
    spot: float
    sigma: float
    r_d: float = 0.0
    r_f: float = 0.0
    date: str | None = None

    def __post_init__(self):
        if not (np.isfinite(self.spot) and self.spot > 0):
            raise ValidationError(f"spot must be positive, got {self.spot}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError(f"volatility must be positive, got {self.sigma}")
        if not (np.isfinite(self.r_d) and np.isfinite(self.r_f)):
            raise ValidationError("rates must be finite")

    def forward(self, expiry: float) -> float:
        return self.spot * math.exp((self.r_d - self.r_f) * expiry)

    def bumped(self, d_spot: float = 0.0, d_sigma: float = 0.0) -> "MarketSnapshot":
        return replace(self, spot=self.spot + d_spot, sigma=self.sigma + d_sigma)


@dataclass(frozen=True)
class VanillaSpec:
    strike: float
    expiry: float
    is_call: bool = True

    def __post_init__(self):
        if not self.strike > 0:
            raise ValidationError(f"strike must be positive, got {self.strike}")
        if not np.isfinite(self.expiry):
            raise ValidationError("expiry must be finite")


@dataclass(frozen=True)
class BarrierSpec:
    """Up-and-in call with continuously monitored barrier and no rebate."""

    strike: float
    barrier: float
    expiry: float

    def __post_init__(self):
        if not (self.strike > 0 and self.barrier > 0 and self.expiry > 0):
            raise ValidationError("barrier spec needs positive strike, barrier and expiry")


@dataclass(frozen=True)
class StraddleSpec:
    """Call plus put struck at the forward (ATM-forward straddle)."""

    expiry: float

    def __post_init__(self):
        if not self.expiry > 0:
            raise ValidationError("straddle expiry must be positive")


@dataclass(frozen=True)
class VanillaStrip:
    """Fixed-strike weighted sum of vanillas, e.g. a straddle after its strike is set."""

    legs: tuple

    def __post_init__(self):
        legs = tuple((float(w), spec) for w, spec in self.legs)
        if not legs or not all(isinstance(spec, VanillaSpec) for _, spec in legs):
            raise ValidationError("a strip needs at least one (weight, VanillaSpec) leg")
        object.__setattr__(self, "legs", legs)


Instrument = Union[VanillaSpec, BarrierSpec, StraddleSpec, VanillaStrip]


def fix_strikes(spec, mkt: "MarketSnapshot"):
    """Freeze a straddle's forward strike at ``mkt`` so bumps reprice one contract."""
    if isinstance(spec, StraddleSpec):
        k = mkt.forward(spec.expiry)
        return VanillaStrip(((1.0, VanillaSpec(k, spec.expiry, True)), (1.0, VanillaSpec(k, spec.expiry, False))))
    return spec


@dataclass(frozen=True)
class GreekBundle:
    price: float
    delta: float
    vega: float
    gamma: float
    vanna: float
    volga: float
    vol_units: str = VOL_POINTS
    extra: dict = field(default_factory=dict)
    degenerate: bool = False

    def __post_init__(self):
        vals = (self.price, self.delta, self.vega, self.gamma, self.vanna, self.volga)
        if not all(np.isfinite(v) for v in vals):
            raise PricingError(f"non-finite Greek in bundle: {vals}")

    def gradient(self, chart: Chart = SPOT_VOL) -> Gradient:
        return Gradient(chart, [self.delta, self.vega])

    def hessian(self, chart: Chart = SPOT_VOL) -> QuadraticForm:
        return QuadraticForm(chart, [[self.gamma, self.vanna], [self.vanna, self.volga]])

    def scaled(self, w: float) -> "GreekBundle":
        return GreekBundle(
            w * self.price, w * self.delta, w * self.vega, w * self.gamma, w * self.vanna,
            w * self.volga, self.vol_units, {k: w * v for k, v in self.extra.items()}, self.degenerate,
        )

    def __add__(self, other: "GreekBundle") -> "GreekBundle":
        if other.vol_units != self.vol_units:
            raise ValidationError("cannot add Greek bundles with different vol units")
        return GreekBundle(
            self.price + other.price, self.delta + other.delta, self.vega + other.vega,
            self.gamma + other.gamma, self.vanna + other.vanna, self.volga + other.volga,
            self.vol_units, {}, self.degenerate or other.degenerate,
        )

    def as_dict(self) -> dict:
        return {
            "price": self.price, "delta": self.delta, "vega": self.vega, "gamma": self.gamma,
            "vanna": self.vanna, "volga": self.volga, "vol_units": self.vol_units,
            "degenerate": self.degenerate,
        }


# ---------------------------------------------------------------- vanillas

def bs_price(strike, expiry, spot, sigma, r_d, r_f, is_call=True):
    """Garman-Kohlhagen price; vectorized over numpy inputs, decimal vol."""
    strike = np.asarray(strike, dtype=float)
    sqrt_t = np.sqrt(expiry)
    df_d = np.exp(-r_d * expiry)
    df_f = np.exp(-r_f * expiry)
    d1 = (np.log(spot / strike) + (r_d - r_f + 0.5 * sigma * sigma) * expiry) / (sigma * sqrt_t)
    d2 = d1 - sigma * sqrt_t
    if is_call:
        return spot * df_f * ndtr(d1) - strike * df_d * ndtr(d2)
    return strike * df_d * ndtr(-d2) - spot * df_f * ndtr(-d1)


def _decimal_greeks(strike, expiry, spot, sigma, r_d, r_f, is_call):
    """Price and Greeks with vol in decimal units (arrays allowed)."""
    sqrt_t = math.sqrt(expiry)
    df_d = math.exp(-r_d * expiry)
    df_f = math.exp(-r_f * expiry)
    sd = sigma * sqrt_t
    d1 = (np.log(spot / strike) + (r_d - r_f + 0.5 * sigma * sigma) * expiry) / sd
    d2 = d1 - sd
    pdf = _npdf(d1)
    if is_call:
        price = spot * df_f * ndtr(d1) - strike * df_d * ndtr(d2)
        delta = df_f * ndtr(d1)
    else:
        price = strike * df_d * ndtr(-d2) - spot * df_f * ndtr(-d1)
        delta = -df_f * ndtr(-d1)
    gamma = df_f * pdf / (spot * sd)
    vega = spot * df_f * pdf * sqrt_t
    vanna = -df_f * pdf * d2 / sigma
    volga = vega * d1 * d2 / sigma
    return price, delta, vega, gamma, vanna, volga


def bs_greeks(spec: VanillaSpec, mkt: MarketSnapshot, vol_units: str = VOL_POINTS) -> GreekBundle:
    """Closed-form Garman-Kohlhagen price and Greeks.

    At or after expiry the intrinsic value is returned with zero second-order
    Greeks and ``degenerate=True``.
    """
    scale = vol_scale(vol_units)
    if spec.expiry <= 0:
        fwd_sign = 1.0 if spec.is_call else -1.0
        intrinsic = max(fwd_sign * (mkt.spot - spec.strike), 0.0)
        moneyness = fwd_sign * (mkt.spot - spec.strike)
        delta = fwd_sign * (1.0 if moneyness > 0 else (0.5 if moneyness == 0 else 0.0))
        return GreekBundle(intrinsic, delta, 0.0, 0.0, 0.0, 0.0, vol_units, degenerate=True)
    p, d, v, g, va, vo = _decimal_greeks(spec.strike, spec.expiry, mkt.spot, mkt.sigma, mkt.r_d, mkt.r_f, spec.is_call)
    return GreekBundle(float(p), float(d), float(v) * scale, float(g), float(va) * scale, float(vo) * scale**2, vol_units)


def straddle_strike(expiry: float, mkt: MarketSnapshot) -> float:
    return mkt.forward(expiry)


def straddle_greeks(spec: StraddleSpec, mkt: MarketSnapshot, vol_units: str = VOL_POINTS, strike: float | None = None) -> GreekBundle:
    """Greeks of an ATM-forward straddle; ``strike`` overrides K=F (fixed-strike hedges)."""
    k = straddle_strike(spec.expiry, mkt) if strike is None else strike
    call = bs_greeks(VanillaSpec(k, spec.expiry, True), mkt, vol_units)
    put = bs_greeks(VanillaSpec(k, spec.expiry, False), mkt, vol_units)
    return call + put


def strike_from_spot_delta(delta: float, expiry: float, mkt: MarketSnapshot, sigma: float, is_call: bool) -> float:
    """Strike whose premium-unadjusted spot delta equals ``delta`` (signed for puts)."""
    df_f = math.exp(-mkt.r_f * expiry)
    target = abs(delta) / df_f
    if not 0 < target < 1:
        raise ValidationError(f"spot delta {delta} not attainable with foreign discount {df_f}")
    d1 = ndtri(target) if is_call else -ndtri(target)
    log_k = math.log(mkt.spot) + (mkt.r_d - mkt.r_f + 0.5 * sigma * sigma) * expiry - d1 * sigma * math.sqrt(expiry)
    return math.exp(log_k)


# ---------------------------------------------------------------- barriers

def reiner_rubinstein_uic(spec: BarrierSpec, mkt: MarketSnapshot) -> float:
    """Up-and-in call under flat volatility, continuous monitoring, no rebate.

    If the barrier is at or below spot the option has already knocked in and
    the vanilla call price is returned through the vanilla code path.
    """
    s, k, h, t = mkt.spot, spec.strike, spec.barrier, spec.expiry
    if h <= s:
        return float(bs_price(k, t, s, mkt.sigma, mkt.r_d, mkt.r_f, True))
    sig = mkt.sigma
    sd = sig * math.sqrt(t)
    carry = mkt.r_d - mkt.r_f
    mu = (carry - 0.5 * sig * sig) / (sig * sig)
    df_d = math.exp(-mkt.r_d * t)
    df_f = math.exp(-mkt.r_f * t)
    shift = (1.0 + mu) * sd
    if k >= h:
        # the barrier is crossed on every path that finishes in the money
        x1 = math.log(s / k) / sd + shift
        return float(s * df_f * ndtr(x1) - k * df_d * ndtr(x1 - sd))
    x2 = math.log(s / h) / sd + shift
    y1 = math.log(h * h / (s * k)) / sd + shift
    y2 = math.log(h / s) / sd + shift
    ratio = h / s
    reflect_s = ratio ** (2.0 * (mu + 1.0))
    reflect_k = ratio ** (2.0 * mu)
    term_b = s * df_f * ndtr(x2) - k * df_d * ndtr(x2 - sd)
    term_c = s * df_f * reflect_s * ndtr(-y1) - k * df_d * reflect_k * ndtr(-y1 + sd)
    term_d = s * df_f * reflect_s * ndtr(-y2) - k * df_d * reflect_k * ndtr(-y2 + sd)
    return float(term_b - term_c + term_d)


def instrument_price(spec: Instrument, mkt: MarketSnapshot) -> float:
    if isinstance(spec, VanillaSpec):
        if spec.expiry <= 0:
            return bs_greeks(spec, mkt).price
        return float(bs_price(spec.strike, spec.expiry, mkt.spot, mkt.sigma, mkt.r_d, mkt.r_f, spec.is_call))
    if isinstance(spec, BarrierSpec):
        return reiner_rubinstein_uic(spec, mkt)
    if isinstance(spec, StraddleSpec):
        return instrument_price(fix_strikes(spec, mkt), mkt)
    if isinstance(spec, VanillaStrip):
        return float(sum(w * instrument_price(leg, mkt) for w, leg in spec.legs))
    raise ValidationError(f"unsupported instrument {type(spec).__name__}")


def _check_stencil(spec: Instrument, spot: float, h_spot: float):
    if isinstance(spec, BarrierSpec) and spot - h_spot < spec.barrier <= spot + h_spot:
        raise PricingError(
            f"barrier {spec.barrier} lies inside the spot stencil [{spot - h_spot}, {spot + h_spot}]"
        )


def fd_greeks(price_fn, mkt: MarketSnapshot, h_spot: float, h_sigma: float, vol_units: str = VOL_POINTS) -> GreekBundle:
    """Central finite-difference Greeks of ``price_fn(mkt)`` in the (S, sigma) chart.

    ``h_sigma`` is expressed in the sigma coordinate's units.
    """
    if not (h_spot > 0 and h_sigma > 0):
        raise ValidationError("finite-difference bumps must be positive")
    hs_dec = h_sigma * vol_scale(vol_units)
    if mkt.sigma - hs_dec <= 0:
        raise ValidationError("vol bump exceeds the volatility level")
    f = {}
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            f[i, j] = price_fn(mkt.bumped(i * h_spot, j * hs_dec))
    vals = np.array(list(f.values()), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise PricingError("non-finite price inside the finite-difference stencil")
    delta = (f[1, 0] - f[-1, 0]) / (2 * h_spot)
    vega = (f[0, 1] - f[0, -1]) / (2 * h_sigma)
    gamma = (f[1, 0] - 2 * f[0, 0] + f[-1, 0]) / h_spot**2
    volga = (f[0, 1] - 2 * f[0, 0] + f[0, -1]) / h_sigma**2
    vanna = (f[1, 1] - f[1, -1] - f[-1, 1] + f[-1, -1]) / (4 * h_spot * h_sigma)
    return GreekBundle(float(f[0, 0]), float(delta), float(vega), float(gamma), float(vanna), float(volga), vol_units)


def default_bumps(mkt: MarketSnapshot, vol_units: str = VOL_POINTS) -> tuple[float, float]:
    """h_S = 1e-4 S and h_sigma = 1e-2 vol point, expressed in chart units."""
    return 1e-4 * mkt.spot, 1e-2 * 0.01 / vol_scale(vol_units)


def barrier_greeks(spec: BarrierSpec, mkt: MarketSnapshot, bumps=None, vol_units: str = VOL_POINTS) -> GreekBundle:
    h_spot, h_sigma = default_bumps(mkt, vol_units) if bumps is None else bumps
    _check_stencil(spec, mkt.spot, h_spot)
    return fd_greeks(lambda m: reiner_rubinstein_uic(spec, m), mkt, h_spot, h_sigma, vol_units)


def instrument_greeks(spec: Instrument, mkt: MarketSnapshot, vol_units: str = VOL_POINTS, bumps=None) -> GreekBundle:
    if isinstance(spec, VanillaSpec):
        return bs_greeks(spec, mkt, vol_units)
    if isinstance(spec, StraddleSpec):
        return straddle_greeks(spec, mkt, vol_units)
    if isinstance(spec, BarrierSpec):
        return barrier_greeks(spec, mkt, bumps, vol_units)
    if isinstance(spec, VanillaStrip):
        out = None
        for w, leg in spec.legs:
            g = bs_greeks(leg, mkt, vol_units).scaled(w)
            out = g if out is None else out + g
        return out
    raise ValidationError(f"unsupported instrument {type(spec).__name__}")


# ---------------------------------------------------------------- Vanna-Volga

@dataclass(frozen=True)
class SmilePillars:
    """Three call pillars (25-delta put strike, ATM, 25-delta call strike)
    at a common expiry, with market vols in decimal units.

    Strikes are stored explicitly so that spot bumps reprice against fixed
    pillar strikes.
    """

    expiry: float
    strikes: tuple
    vols: tuple

    def __post_init__(self):
        strikes = tuple(float(k) for k in self.strikes)
        vols = tuple(float(v) for v in self.vols)
        if len(strikes) != 3 or len(vols) != 3:
            raise ValidationError("smile needs exactly three pillars")
        if min(strikes) <= 0 or min(vols) <= 0:
            raise ValidationError("pillar strikes and vols must be positive")
        if not self.expiry > 0:
            raise ValidationError("pillar expiry must be positive")
        object.__setattr__(self, "strikes", strikes)
        object.__setattr__(self, "vols", vols)

    @classmethod
    def from_quotes(cls, mkt: MarketSnapshot, expiry: float, atm_vol: float, rr25: float = 0.0, bf25: float = 0.0) -> "SmilePillars":
        """Pillars from ATM / 25-delta risk reversal / butterfly quotes (decimal).

        Uses the broker approximation sigma_25C = ATM + BF + RR/2,
        sigma_25P = ATM + BF - RR/2, ATM strike at the forward and wing
        strikes from premium-unadjusted spot deltas.
        """
        vol_c = atm_vol + bf25 + 0.5 * rr25
        vol_p = atm_vol + bf25 - 0.5 * rr25
        k_atm = mkt.forward(expiry)
        k_c = strike_from_spot_delta(0.25, expiry, mkt, vol_c, True)
        k_p = strike_from_spot_delta(-0.25, expiry, mkt, vol_p, False)
        return cls(expiry, (k_p, k_atm, k_c), (vol_p, atm_vol, vol_c))

    @classmethod
    def flat(cls, mkt: MarketSnapshot, expiry: float) -> "SmilePillars":
        return cls.from_quotes(mkt, expiry, mkt.sigma)

    def shifted(self, d_sigma: float) -> "SmilePillars":
        return SmilePillars(self.expiry, self.strikes, tuple(v + d_sigma for v in self.vols))

    def rebased(self, old_atm: float, new_atm: float) -> "SmilePillars":
        """Parallel shift written so that pillars equal to ``old_atm`` land exactly on ``new_atm``."""
        return SmilePillars(self.expiry, self.strikes, tuple(new_atm + (v - old_atm) for v in self.vols))


def _pillar_matrix(pillars: SmilePillars, mkt: MarketSnapshot) -> np.ndarray:
    strikes = np.array(pillars.strikes)
    _, _, vega, _, vanna, volga = _decimal_greeks(strikes, pillars.expiry, mkt.spot, mkt.sigma, mkt.r_d, mkt.r_f, True)
    return np.vstack([vega, vanna, volga])


def _instrument_vol_risk(spec: Instrument, mkt: MarketSnapshot) -> np.ndarray:
    """(vega, vanna, volga) in decimal vol units under flat BS at ``mkt``."""
    if isinstance(spec, BarrierSpec):
        g = barrier_greeks(spec, mkt, vol_units=VOL_DECIMAL)
    else:
        g = instrument_greeks(spec, mkt, vol_units=VOL_DECIMAL)
    return np.array([g.vega, g.vanna, g.volga])


def vanna_volga_weights(spec: Instrument, mkt: MarketSnapshot, pillars: SmilePillars, cond_max: float = 1e12) -> np.ndarray:
    """Pillar notionals matching the instrument's BS Vega, Vanna and Volga."""
    a = _pillar_matrix(pillars, mkt)
    col_scale = np.max(np.abs(a), axis=1, keepdims=True)
    col_scale[col_scale == 0] = 1.0
    scaled = a / col_scale
    if not np.isfinite(np.linalg.cond(scaled)) or np.linalg.cond(scaled) > cond_max:
        raise SingularDesignError("pillars do not span the vega/vanna/volga space")
    target = _instrument_vol_risk(spec, mkt)
    return np.linalg.solve(scaled, target / col_scale[:, 0])


def vanna_volga_price(spec: Instrument, mkt: MarketSnapshot, pillars: SmilePillars) -> float:
    """BS price at ``mkt.sigma`` plus the pillar overhedge cost."""
    if isinstance(spec, BarrierSpec) and spec.barrier <= mkt.spot:
        spec = VanillaSpec(spec.strike, spec.expiry, True)
    base = instrument_price(spec, mkt)
    strikes = np.array(pillars.strikes)
    mkt_vals = bs_price(strikes, pillars.expiry, mkt.spot, np.array(pillars.vols), mkt.r_d, mkt.r_f, True)
    bs_vals = bs_price(strikes, pillars.expiry, mkt.spot, mkt.sigma, mkt.r_d, mkt.r_f, True)
    gap = mkt_vals - bs_vals
    if not np.any(gap):
        return float(base)
    w = vanna_volga_weights(spec, mkt, pillars)
    return float(base + w @ gap)


def vv_target_hessian(
    spec: Instrument,
    mkt: MarketSnapshot,
    pillars: SmilePillars,
    bumps=None,
    vol_units: str = VOL_POINTS,
    chart: Chart = SPOT_VOL,
) -> QuadraticForm:
    """Central finite-difference Hessian of the VV price in the (S, sigma) chart.

    Spot bumps keep pillar strikes and vols fixed; vol bumps shift the ATM
    level and every pillar vol in parallel (risk reversal and butterfly held).
    """
    return vv_fd_bundle(spec, mkt, pillars, bumps, vol_units).hessian(chart)


def vv_fd_bundle(spec: Instrument, mkt: MarketSnapshot, pillars: SmilePillars, bumps=None, vol_units: str = VOL_POINTS) -> GreekBundle:
    h_spot, h_sigma = default_bumps(mkt, vol_units) if bumps is None else bumps
    _check_stencil(spec, mkt.spot, h_spot)
    spec = fix_strikes(spec, mkt)

    def price(m: MarketSnapshot) -> float:
        return vanna_volga_price(spec, m, pillars.rebased(mkt.sigma, m.sigma))

    return fd_greeks(price, mkt, h_spot, h_sigma, vol_units)


def bs_fd_bundle(spec: Instrument, mkt: MarketSnapshot, bumps=None, vol_units: str = VOL_POINTS) -> GreekBundle:
    """Flat-vol Greeks from the same stencil ``vv_fd_bundle`` uses.

    With a flat smile both bundles see identical prices at every stencil node,
    so baseline and target Hessians agree bit for bit.
    """
    h_spot, h_sigma = default_bumps(mkt, vol_units) if bumps is None else bumps
    _check_stencil(spec, mkt.spot, h_spot)
    spec = fix_strikes(spec, mkt)
    return fd_greeks(lambda m: instrument_price(spec, m), mkt, h_spot, h_sigma, vol_units)
