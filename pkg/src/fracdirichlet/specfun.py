"""Special functions for time-fractional diffusion.

Covers the one-parameter Mittag-Leffler function on the negative real axis,
the one-sided stable density ``g_beta`` (Laplace transform ``exp(-s**beta)``),
the density of the inverse stable subordinator and power-law gamma ratios.

The inverse-subordinator density is self-similar,
``h(w, t) = t**-beta * M(w * t**-beta)``, where ``M`` is the M-Wright function.
Everything stable-related here is built on :func:`wright_m`.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

__all__ = [
    "DomainError",
    "PoleError",
    "check_frac_order",
    "check_stability_index",
    "mittag_leffler",
    "gamma_ratio",
    "wright_m",
    "stable_density",
    "inv_subordinator_density",
    "inverse_subordinator_tail_bound",
    "inverse_subordinator_cutoff",
]

# Tunables; callers may override per call where a keyword is exposed.
ML_SERIES_RADIUS = 1.0
ML_ASYMPTOTIC_RTOL = 1e-16
ML_QUAD_RTOL = 1e-13
WRIGHT_SERIES_CUTOFF = 0.5
WRIGHT_SERIES_ATOL = 1e-18
# log(q) breakpoints for the Zolotarev integrand q*exp(-q); outside this band it is < 1e-17.
_ZOLOTAREV_LEVELS = np.arange(-40.0, 4.5, 1.0)
_ZOLOTAREV_CHUNK = 2048
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class PoleError(DomainError):
    """Argument hits a pole of the gamma function."""


def check_frac_order(beta: float, *, allow_one: bool = True) -> float:
    beta = float(beta)
    upper_ok = beta <= 1.0 if allow_one else beta < 1.0
    if not (beta > 0.0 and upper_ok):
        interval = "(0, 1]" if allow_one else "(0, 1)"
        raise DomainError(f"time-fractional order beta={beta} not in {interval}")
    return beta


def check_stability_index(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha <= 2.0) or alpha == 1.0:
        raise DomainError(f"stability index alpha={alpha} not in (0,1) U (1,2]")
    return alpha


# ---------------------------------------------------------------------------
# Mittag-Leffler


def _ml_series(beta: float, z: float) -> float:
    total, k = 0.0, 0
    while True:
        term = z**k / math.gamma(beta * k + 1.0)
        total += term
        k += 1
        if abs(term) < 1e-17 * max(abs(total), 1e-300) and k > 3:
            return total


def _ml_asymptotic(beta: float, x: float) -> float | None:
    """Divergent expansion of E_beta(-x); None if it cannot reach the tolerance."""
    total = 0.0
    lead = 1.0 / (x * math.gamma(1.0 - beta))
    prev_env = math.inf
    k = 1
    while True:
        # 1/Gamma(1 - beta k) = Gamma(beta k) sin(pi beta k) / pi
        log_env = special.gammaln(beta * k) - k * math.log(x) - math.log(math.pi)
        env = math.exp(log_env)
        if env >= prev_env:
            return None
        if env < ML_ASYMPTOTIC_RTOL * abs(lead):
            return total
        total += (-1.0) ** (k + 1) * x**-k * special.rgamma(1.0 - beta * k)
        prev_env = env
        k += 1


def _ml_spectral(beta: float, x: float) -> float:
    # E_beta(-x) = sin(beta pi)/(beta pi) * int_0^inf x exp(-v^(1/beta)) / (v^2 + 2 v x cos(beta pi) + x^2) dv
    cb = math.cos(beta * math.pi)
    inv = 1.0 / beta

    def integrand(v: float) -> float:
        return math.exp(-(v**inv)) * x / (v * v + 2.0 * v * x * cb + x * x)

    peak = -x * cb
    edges = [0.0]
    if peak > 0.0:
        edges.append(peak)
    edges.append(max(2.0 * max(peak, 0.0), 60.0))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=ML_QUAD_RTOL, limit=400)[0]
    return math.sin(beta * math.pi) / (beta * math.pi) * total


def _ml_scalar(beta: float, z: float) -> float:
    if z == 0.0:
        return 1.0
    if beta == 1.0:
        return math.exp(z)
    x = -z
    if x <= ML_SERIES_RADIUS:
        return _ml_series(beta, z)
    value = _ml_asymptotic(beta, x)
    if value is not None:
        return value
    return _ml_spectral(beta, x)


def mittag_leffler(beta: float, z):
    """Mittag-Leffler function ``E_beta(z) = sum_k z**k / Gamma(beta*k + 1)`` for ``z <= 0``.

    Three regimes are used: the power series for ``|z| <= 1``, the asymptotic
    expansion when its smallest term is below ``1e-16`` of the leading term, and
    otherwise the spectral (completely monotone) integral representation.

    Accepts a scalar or an array ``z``; returns the same shape.
    """
    beta = check_frac_order(beta)
    arr = np.asarray(z, dtype=float)
    if np.any(arr > 0.0) or np.any(np.isnan(arr)):
        raise DomainError("mittag_leffler is only defined here for real z <= 0")
    if arr.ndim == 0:
        return _ml_scalar(beta, float(arr))
    if beta == 1.0:
        return np.exp(arr)
    out = np.empty_like(arr)
    for idx, val in np.ndenumerate(arr):
        out[idx] = _ml_scalar(beta, float(val))
    return out


# ---------------------------------------------------------------------------
# Gamma ratios


def gamma_ratio(p: float, alpha: float) -> float:
    """``Gamma(p+1) / Gamma(p+1-alpha)``, the coefficient in ``D^alpha x^p``."""
    a, b = p + 1.0, p + 1.0 - alpha
    for arg in (a, b):
        if arg <= 0.0 and arg == math.floor(arg):
            raise PoleError(f"gamma pole at argument {arg}")
    if max(abs(a), abs(b)) < 170.0:
        return math.gamma(a) / math.gamma(b)
    sign = special.gammasgn(a) * special.gammasgn(b)
    return float(sign * math.exp(special.gammaln(a) - special.gammaln(b)))


# ---------------------------------------------------------------------------
# M-Wright function and stable densities


def _wright_series(beta: float, s: np.ndarray) -> np.ndarray:
    smax = float(np.max(s)) if s.size else 0.0
    k = np.arange(4000)
    y = beta * (k + 1)
    # 1/Gamma(1 - y) = Gamma(y) sin(pi y) / pi
    log_mag = special.gammaln(y) - special.gammaln(k + 1) - math.log(math.pi)
    if smax > 0.0:
        log_mag_s = log_mag + k * math.log(smax)
    else:
        log_mag_s = np.where(k == 0, log_mag, -np.inf)
    small = np.nonzero(log_mag_s < math.log(WRIGHT_SERIES_ATOL))[0]
    nterms = int(small[small > 2][0]) + 1 if np.any(small > 2) else k.size
    kk = k[:nterms]
    coef = (-1.0) ** kk * np.sin(math.pi * y[:nterms]) * np.exp(log_mag[:nterms])
    return np.polynomial.polynomial.polyval(s, coef)


def _log_k(beta: float, phi: np.ndarray) -> np.ndarray:
    # log of K(phi) = sin(beta phi)^(beta/(1-beta)) sin((1-beta) phi) / sin(phi)^(1/(1-beta))
    return (
        beta / (1.0 - beta) * np.log(np.sin(beta * phi))
        + np.log(np.sin((1.0 - beta) * phi))
        - np.log(np.sin(phi)) / (1.0 - beta)
    )


def _wright_zolotarev(beta: float, s: np.ndarray) -> np.ndarray:
    # M(s) = 1/(pi (1-beta) s) int_0^pi q e^{-q} dphi,  q = K(phi) s^(1/(1-beta)).
    # log K is increasing on (0, pi); panels are placed at fixed levels of log q.
    out = np.empty_like(s)
    for start in range(0, s.size, _ZOLOTAREV_CHUNK):
        chunk = s[start : start + _ZOLOTAREV_CHUNK]
        lz = np.log(chunk) / (1.0 - beta)
        target = _ZOLOTAREV_LEVELS[None, :] - lz[:, None]
        lo = np.zeros_like(target)
        hi = np.full_like(target, math.pi)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = _log_k(beta, mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        edges = 0.5 * (lo + hi)
        a, b = edges[:, :-1], edges[:, 1:]
        half = 0.5 * (b - a)
        nodes = half[..., None] * _GL_X + (0.5 * (a + b))[..., None]
        with np.errstate(divide="ignore"):
            lq = _log_k(beta, nodes) + lz[:, None, None]
        vals = np.exp(lq - np.exp(np.minimum(lq, 50.0)))
        panel = np.einsum("pkn,n->pk", vals, _GL_W) * half
        out[start : start + chunk.size] = panel.sum(axis=1) / (math.pi * (1.0 - beta) * chunk)
    return out


def wright_m(beta: float, s):
    """M-Wright function, the density of ``E_1`` for the standard inverse subordinator.

    Uses the convergent power series for ``s <= 0.5`` and the Zolotarev-type
    single integral beyond.
    """
    beta = check_frac_order(beta, allow_one=False)
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("wright_m requires s >= 0")
    flat = np.atleast_1d(arr).ravel()
    out = np.empty_like(flat)
    near = flat <= WRIGHT_SERIES_CUTOFF
    if np.any(near):
        out[near] = _wright_series(beta, flat[near])
    if np.any(~near):
        out[~near] = _wright_zolotarev(beta, flat[~near])
    out = np.maximum(out, 0.0)
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def stable_density(beta: float, u):
    """Density ``g_beta`` of the standard stable subordinator at time 1.

    ``beta = 1`` is a point mass at 1 and is refused.
    """
    beta = check_frac_order(beta, allow_one=False)
    arr = np.asarray(u, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("stable_density requires u >= 0")
    flat = np.atleast_1d(arr).ravel()
    out = np.zeros_like(flat)
    pos = flat > 0.0
    if np.any(pos):
        x = flat[pos]
        with np.errstate(over="ignore"):
            s = x**-beta
        finite = np.isfinite(s)
        vals = np.zeros_like(x)
        vals[finite] = beta * x[finite] ** (-1.0 - beta) * wright_m(beta, s[finite])
        out[pos] = vals
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def inv_subordinator_density(beta: float, w, t: float):
    """Density ``h(w, t)`` of the inverse stable subordinator ``E_t``.

    Equal to ``(t/beta) w**(-1-1/beta) g_beta(t w**(-1/beta))``; evaluated through
    the self-similar form ``t**-beta M(w t**-beta)`` which stays finite at ``w = 0``.
    """
    beta = check_frac_order(beta, allow_one=False)
    if not t > 0.0:
        raise DomainError("inv_subordinator_density requires t > 0")
    arr = np.asarray(w, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("inv_subordinator_density requires w >= 0")
    scale = t**-beta
    return scale * wright_m(beta, arr * scale)


def inverse_subordinator_tail_bound(beta: float, s: float) -> float:
    """Markov bound on ``P(E_1 > s)`` using ``E[E_1^k] = k!/Gamma(1 + beta k)``."""
    if s <= 0.0:
        return 1.0
    k = np.arange(1, 400)
    log_b = special.gammaln(k + 1.0) - special.gammaln(1.0 + beta * k) - k * math.log(s)
    return float(min(1.0, math.exp(np.min(log_b))))


def inverse_subordinator_cutoff(beta: float, tol: float) -> float:
    """Smallest ``S`` with ``P(E_1 > S) <= tol`` by the moment bound."""
    beta = check_frac_order(beta, allow_one=False)
    lo, hi = 0.0, 1.0
    while inverse_subordinator_tail_bound(beta, hi) > tol:
        lo, hi = hi, 2.0 * hi
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if inverse_subordinator_tail_bound(beta, mid) > tol:
            lo = mid
        else:
            hi = mid
    return hi
