"""Vectorized truncated-normal density, quantile and mean.

All functions broadcast over ``mu, sigma, lo, hi`` and their argument. Tail
masses are handled in log space, so intervals far from ``mu`` stay accurate.
A finite interval whose normal mass is below ``MIN_MASS`` is treated as a
uniform distribution on the interval; such cells are reported by
:func:`degenerate`.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtri_exp

MIN_MASS = 1e-300
_LOG_MIN_MASS = np.log(MIN_MASS)
_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


def _standardize(mu, sigma, lo, hi):
    mu, sigma, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (mu, sigma, lo, hi)))
    with np.errstate(invalid="ignore"):
        a = (lo - mu) / sigma
        b = (hi - mu) / sigma
    return mu, sigma, lo, hi, a, b


def log_mass(a, b):
    """log(Phi(b) - Phi(a)) for a < b, accurate in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    flip = a > 0
    aa = np.where(flip, -b, a)
    bb = np.where(flip, -a, b)
    la = log_ndtr(aa)
    lb = log_ndtr(bb)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lb + np.log1p(-np.exp(la - lb))
    return np.where(bb > aa, out, -np.inf)


def degenerate(mu, sigma, lo, hi):
    """True where the finite interval carries (numerically) no normal mass."""
    _, _, lo, hi, a, b = _standardize(mu, sigma, lo, hi)
    return (log_mass(a, b) < _LOG_MIN_MASS) & np.isfinite(lo) & np.isfinite(hi)


def logpdf(x, mu, sigma, lo, hi):
    x = np.asarray(x, dtype=np.float64)
    mu, sigma, lo, hi, a, b = _standardize(mu, sigma, lo, hi)
    lz = log_mass(a, b)
    z = (x - mu) / sigma
    out = -0.5 * z * z - np.log(sigma) - _HALF_LOG_2PI - lz
    uni = (lz < _LOG_MIN_MASS) & np.isfinite(lo) & np.isfinite(hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(uni, -np.log(hi - lo), out)
    inside = (x >= lo) & (x <= hi)
    return np.where(inside, out, -np.inf)


def pdf(x, mu, sigma, lo, hi):
    """Density of N(mu, sigma^2) truncated to [lo, hi]; zero outside."""
    return np.exp(logpdf(x, mu, sigma, lo, hi))


def ppf(u, mu, sigma, lo, hi):
    """Quantile function (inverse CDF) of the truncated normal."""
    u = np.asarray(u, dtype=np.float64)
    mu, sigma, lo, hi, a, b = _standardize(mu, sigma, lo, hi)
    u, mu, sigma, lo, hi, a, b = np.broadcast_arrays(u, mu, sigma, lo, hi, a, b)
    flip = a > 0
    aa = np.where(flip, -b, a)
    bb = np.where(flip, -a, b)
    # for the mirrored interval the quantile runs from the other end
    uu = np.where(flip, 1.0 - u, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        lq = np.logaddexp(np.log1p(-uu) + log_ndtr(aa), np.log(uu) + log_ndtr(bb))
        z = ndtri_exp(lq)
    z = np.where(flip, -z, z)
    x = mu + sigma * z
    lz = log_mass(a, b)
    uni = (lz < _LOG_MIN_MASS) & np.isfinite(lo) & np.isfinite(hi)
    with np.errstate(invalid="ignore"):
        x = np.where(uni, lo + u * (hi - lo), x)
    # log-space arithmetic gave up (mass underflows even as a logarithm)
    stuck = ~np.isfinite(x) & ~uni
    x = np.where(stuck, np.where(np.isfinite(lo), lo, hi), x)
    return np.clip(x, lo, hi)


def mean(mu, sigma, lo, hi):
    """Mean of the truncated normal."""
    mu, sigma, lo, hi, a, b = _standardize(mu, sigma, lo, hi)
    flip = a > 0
    aa = np.where(flip, -b, a)
    bb = np.where(flip, -a, b)
    lz = log_mass(aa, bb)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ta = np.where(np.isfinite(aa), np.exp(-0.5 * aa * aa - _HALF_LOG_2PI - lz), 0.0)
        tb = np.where(np.isfinite(bb), np.exp(-0.5 * bb * bb - _HALF_LOG_2PI - lz), 0.0)
    shift = ta - tb
    shift = np.where(flip, -shift, shift)
    out = mu + sigma * shift
    uni = (lz < _LOG_MIN_MASS) & np.isfinite(lo) & np.isfinite(hi)
    with np.errstate(invalid="ignore"):
        out = np.where(uni, 0.5 * (lo + hi), out)
    stuck = ~np.isfinite(out) & ~uni
    out = np.where(stuck, np.where(np.isfinite(lo), lo, hi), out)
    return np.clip(out, lo, hi)
