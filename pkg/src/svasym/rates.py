"""Rate functions, Lax-formula solutions, asymptotic prices and smiles.

Two regimes of time-scale coupling delta = eps^r:

    r = 4 (ultra-fast): pure averaging; the rate function is the
          Black-Scholes quadratic with the averaged variance,
          I4(x) = |x0 - x|^2 / (2 sigma_bar^2 t).
    r = 2 (fast): the Hamiltonian retains spectral structure;
          I2(x) = t * Lbar0((x0 - x) / t), Lbar0 the convex conjugate of
          the effective Hamiltonian.

Out-of-the-money option prices decay exponentially at rate I_r(log K), and
the implied variance follows from matching that decay against the
Black-Scholes rate: sigma^2 -> (log K - x0)^2 / (2 I_r t).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ATMWarning, RangeError, ResolutionError, ValidationError
from .hamiltonian import LegendreCurve
from .model import Regime


@dataclass(frozen=True)
class RateCurve:
    """Sampled rate function x -> I_r(x; x0, t) for one regime."""

    regime: Regime
    x0: float
    t: float
    x_grid: np.ndarray
    values: np.ndarray
    sigma_bar_sq: Optional[float] = None      # ingredient for r = 4
    legendre: Optional[LegendreCurve] = None  # ingredient for r = 2

    def __call__(self, x: float) -> float:
        if not self.x_grid[0] <= x <= self.x_grid[-1]:
            raise RangeError(f"x = {x} outside the sampled range")
        return float(np.interp(x, self.x_grid, self.values))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("x,rate,regime\r\n")
            for x, v in zip(self.x_grid, self.values):
                fh.write(f"{x!r},{v!r},{self.regime.r}\r\n")


@dataclass(frozen=True)
class SmileCurve:
    """Implied-variance smile on a log-strike grid."""

    logK_grid: np.ndarray
    values: np.ndarray
    regime: Regime
    atm_value: float

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("logK,implied_var,regime\r\n")
            for k, v in zip(self.logK_grid, self.values):
                fh.write(f"{k!r},{v!r},{self.regime.r}\r\n")


def rate_i4(x, x0: float, t: float, sigma_bar_sq: float):
    """Quadratic (Black-Scholes-with-averaged-variance) rate function."""
    if t <= 0:
        raise ValidationError("t must be > 0")
    if sigma_bar_sq <= 0:
        raise ValidationError("sigma_bar_sq must be > 0")
    x = np.asarray(x, dtype=float)
    out = (x0 - x) ** 2 / (2.0 * sigma_bar_sq * t)
    return out if out.ndim else float(out)


def rate_i2(x, x0: float, t: float, legendre: LegendreCurve):
    """Fast-regime rate function t * Lbar0((x0 - x)/t)."""
    if t <= 0:
        raise ValidationError("t must be > 0")
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.array([t * legendre((x0 - xi) / t) for xi in x])
    return float(out[0]) if scalar else out


def rate_curve(regime: Regime, x0: float, t: float, x_grid: Sequence[float], *,
               sigma_bar_sq: Optional[float] = None,
               legendre: Optional[LegendreCurve] = None) -> RateCurve:
    """Sample the regime's rate function on an x-grid."""
    x_grid = np.asarray(x_grid, dtype=float)
    if regime is Regime.ULTRA_FAST:
        if sigma_bar_sq is None:
            raise ValidationError("the ultra-fast regime needs sigma_bar_sq")
        values = rate_i4(x_grid, x0, t, sigma_bar_sq)
    else:
        if legendre is None:
            raise ValidationError("the fast regime needs a Legendre curve")
        values = rate_i2(x_grid, x0, t, legendre)
    return RateCurve(regime=regime, x0=x0, t=t, x_grid=x_grid, values=values,
                     sigma_bar_sq=sigma_bar_sq, legendre=legendre)


def lax_solution(h_grid: Sequence[float], h_values: Sequence[float], t: float,
                 x, regime: Regime, *, sigma_bar_sq: Optional[float] = None,
                 legendre: Optional[LegendreCurve] = None):
    """Hopf-Lax value  u0(t, x) = sup_{x'} [ h(x') - t L((x - x')/t) ]

    with L the regime's running cost: the quadratic q^2/(2 sigma_bar^2) for
    r = 4, Lbar0 for r = 2.  The sup over the sampled x' is refined by a
    parabolic fit at the argmax; RangeError if the sup sits on the table
    edge (the table window is too small for this x).
    """
    if t <= 0:
        raise ValidationError("t must be > 0")
    h_grid = np.asarray(h_grid, dtype=float)
    h_values = np.asarray(h_values, dtype=float)
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))

    if regime is Regime.ULTRA_FAST:
        if sigma_bar_sq is None:
            raise ValidationError("the ultra-fast regime needs sigma_bar_sq")
        cost = lambda q: q * q / (2.0 * sigma_bar_sq)
    else:
        if legendre is None:
            raise ValidationError("the fast regime needs a Legendre curve")
        cost = lambda q: np.interp(q, legendre.q_grid, legendre.values)

    out = np.empty_like(xs)
    for j, xj in enumerate(xs):
        vals = h_values - t * cost((xj - h_grid) / t)
        i = int(np.argmax(vals))
        if i == 0 or i == h_grid.size - 1:
            raise RangeError(
                f"Hopf-Lax sup for x = {xj} attained at the table edge; "
                "widen the payoff table")
        xa, xb, xc = h_grid[i - 1:i + 2]
        fa, fb, fc = vals[i - 1:i + 2]
        denom = (xa - xb) * (fb - fc) - (xb - xc) * (fa - fb)
        if abs(denom) > 0:
            num = (xa * xa - xb * xb) * (fb - fc) - (xb * xb - xc * xc) * (fa - fb)
            xv = min(max(0.5 * num / denom, xa), xc)
            la = (xv - xb) * (xv - xc) / ((xa - xb) * (xa - xc))
            lb = (xv - xa) * (xv - xc) / ((xb - xa) * (xb - xc))
            lc = (xv - xa) * (xv - xb) / ((xc - xa) * (xc - xb))
            out[j] = la * fa + lb * fb + lc * fc
        else:
            out[j] = fb
    return float(out[0]) if scalar else out


def option_price_log_asymptote(K: float, x0: float, t: float, regime: Regime, *,
                               sigma_bar_sq: Optional[float] = None,
                               legendre: Optional[LegendreCurve] = None,
                               atm_band: float = 1e-9) -> float:
    """Exponential decay rate of the option price:  -I_r(log K; x0, t).

    Calls are the out-of-the-money case log K > x0; strikes below spot use
    the put side, governed by the same rate function.  Near-the-money
    strikes trigger ATMWarning because the asymptote degenerates to 0.
    """
    if K <= 0:
        raise ValidationError("strike must be > 0")
    log_k = math.log(K)
    if abs(log_k - x0) < atm_band:
        warnings.warn("strike is at the money within grid resolution; the "
                      "price asymptote degenerates to 0", ATMWarning)
        return 0.0
    if regime is Regime.ULTRA_FAST:
        return -rate_i4(log_k, x0, t, sigma_bar_sq)
    return -rate_i2(log_k, x0, t, legendre)


def implied_vol_curve(x0: float, regime: Regime, t: float,
                      logK_grid: Sequence[float], *,
                      sigma_bar_sq: float,
                      legendre: Optional[LegendreCurve] = None,
                      atm_band: Optional[float] = None) -> SmileCurve:
    """Asymptotic implied-variance smile  (log K - x0)^2 / (2 I_r t).

    The formula is 0/0 at the money; strikes inside the exclusion band (one
    grid resolution by default) are filled with the at-the-money limit,
    which equals the averaged variance.
    """
    logK_grid = np.asarray(logK_grid, dtype=float)
    if atm_band is None:
        atm_band = float(np.min(np.diff(logK_grid))) if logK_grid.size > 1 else 1e-9
    values = np.empty_like(logK_grid)
    for j, lk in enumerate(logK_grid):
        if abs(lk - x0) < atm_band:
            values[j] = sigma_bar_sq
            continue
        if regime is Regime.ULTRA_FAST:
            rate = rate_i4(lk, x0, t, sigma_bar_sq)
        else:
            rate = rate_i2(lk, x0, t, legendre)
        values[j] = (lk - x0) ** 2 / (2.0 * rate * t)
    return SmileCurve(logK_grid=logK_grid, values=values, regime=regime,
                      atm_value=sigma_bar_sq)


@dataclass(frozen=True)
class AtmProbe:
    """CONJECTURE PROBE: numerical evidence only, never asserted as truth."""

    z: np.ndarray
    ratio: np.ndarray      # z^2 / (2 t^2 Lbar0(z/t))
    target: Optional[float]
    trending: Optional[bool]


def atm_conjecture_probe(t: float, legendre: LegendreCurve, *,
                         target: Optional[float] = None,
                         z_values: Optional[Sequence[float]] = None,
                         noise_floor: float = 1e-12) -> AtmProbe:
    """Probe the conjectured at-the-money limit of the fast-regime smile.

    Reports z -> z^2 / (2 t^2 Lbar0(z/t)) on a shrinking sequence z -> 0 and
    whether the sequence trends toward ``target`` (the averaged variance).
    This is labeled a conjecture probe: the trend is recorded, not asserted.
    """
    if z_values is None:
        q_hi = min(abs(legendre.q_grid[0]), abs(legendre.q_grid[-1]))
        z_values = 0.5 * q_hi * t * 2.0 ** -np.arange(8, dtype=float)
    z = np.asarray(z_values, dtype=float)
    lvals = np.array([legendre(zi / t) for zi in z])
    if np.any(lvals < noise_floor):
        raise ResolutionError(
            "Lbar0 near 0 is below the numerical noise floor; the probe "
            "ratio would be dominated by rounding")
    ratio = z ** 2 / (2.0 * t * t * lvals)
    trending = None
    if target is not None and z.size >= 3:
        gaps = np.abs(ratio - target)
        trending = bool(gaps[-1] <= gaps[0])
    return AtmProbe(z=z, ratio=ratio, target=target, trending=trending)
