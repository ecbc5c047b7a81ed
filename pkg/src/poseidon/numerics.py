"""Special functions and safe reductions used throughout the package.

All functions accept scalars or numpy arrays. Scalar input gives a Python
float back; array input gives an ndarray of the same shape.
"""

import math

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


# Bernoulli-number coefficients B_2n / (2n) for the digamma asymptotic series
_DIGAMMA_ASYMP = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
)

# Lanczos approximation, g = 7, n = 9
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Wichura (1988), AS241 PPND16
_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
      1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)

_erfc = np.vectorize(math.erfc, otypes=[float])


def _as_array(x):
    scalar = np.ndim(x) == 0
    return np.asarray(x, dtype=float), scalar


def _out(arr, scalar):
    return float(arr) if scalar else arr


def _check_positive(x, name):
    # NaN fails the first comparison, inf the second
    if x.size and not (x.min() > 0 and x.max() < np.inf):
        raise DomainError(f"{name} requires finite positive arguments")


def _digamma_scalar(x):
    # plain-float version; also compiled by the CAVI kernels
    acc = 0.0
    while x < 6.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = inv2 * (_DIGAMMA_ASYMP[0] + inv2 * (_DIGAMMA_ASYMP[1] + inv2 * (
        _DIGAMMA_ASYMP[2] + inv2 * (_DIGAMMA_ASYMP[3] + inv2 * (
            _DIGAMMA_ASYMP[4] + inv2 * _DIGAMMA_ASYMP[5])))))
    return acc + math.log(x) - 0.5 / x - series


def _log_gamma_scalar(x):
    # plain-float version; also compiled by the CAVI kernels
    reflect = x < 0.5
    if reflect:
        x = 1.0 - x
    z = x - 1.0
    a = _LANCZOS_COEF[0]
    for i in range(1, 9):
        a += _LANCZOS_COEF[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    res = _HALF_LOG_2PI + (z + 0.5) * math.log(t) - t + math.log(a)
    if reflect:
        return math.log(math.pi / math.sin(math.pi * (1.0 - x))) - res
    return res


def digamma(x):
    """psi(x) for x > 0: recurrence up to x >= 6, then the asymptotic series."""
    if isinstance(x, float | int):
        if not (0 < x < math.inf):
            raise DomainError("digamma requires finite positive arguments")
        return _digamma_scalar(float(x))
    x, scalar = _as_array(x)
    _check_positive(x, "digamma")
    # shift every argument by 6; exact by the recurrence
    acc = -(1.0 / x + 1.0 / (x + 1.0) + 1.0 / (x + 2.0) + 1.0 / (x + 3.0) + 1.0 / (x + 4.0) + 1.0 / (x + 5.0))
    z = x + 6.0
    inv2 = 1.0 / (z * z)
    series = _DIGAMMA_ASYMP[-1] * inv2
    for coef in reversed(_DIGAMMA_ASYMP[:-1]):
        series = (series + coef) * inv2
    res = acc + np.log(z) - 0.5 / z - series
    return _out(res, scalar)


def _lanczos(x):
    # valid for x >= 0.5
    z = x - 1.0
    a = _LANCZOS_COEF[0]
    for i, c in enumerate(_LANCZOS_COEF[1:], start=1):
        a = a + c / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(a)


def log_gamma(x):
    """ln Gamma(x) for x > 0 (Lanczos, with reflection below 1/2)."""
    if isinstance(x, float | int):
        if not (0 < x < math.inf):
            raise DomainError("log_gamma requires finite positive arguments")
        return _log_gamma_scalar(float(x))
    x, scalar = _as_array(x)
    _check_positive(x, "log_gamma")
    if x.size and x.min() >= 0.5:
        return _out(_lanczos(x), scalar)
    res = np.empty_like(x)
    hi = x >= 0.5
    res[hi] = _lanczos(x[hi])
    lo = ~hi
    xl = x[lo]
    res[lo] = np.log(np.pi / np.sin(np.pi * xl)) - _lanczos(1.0 - xl)
    return _out(res, scalar)


def _poly(coefs, r):
    out = np.zeros_like(r)
    for c in reversed(coefs):
        out = out * r + c
    return out


def norm_cdf(x):
    """Standard normal CDF through erfc (accurate in both tails)."""
    x, scalar = _as_array(x)
    return _out(0.5 * _erfc(-x / math.sqrt(2.0)), scalar)


def inv_norm_cdf(p):
    """Phi^{-1}(p) on the open interval (0, 1).

    AS241 rational approximation followed by one Halley step against
    the erfc-based CDF.
    """
    p, scalar = _as_array(p)
    if np.any(~np.isfinite(p)) or np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DomainError("inv_norm_cdf requires 0 < p < 1; clamp first")
    q = p - 0.5
    x = np.empty_like(p)

    central = np.abs(q) <= 0.425
    if np.any(central):
        qc = q[central]
        r = 0.180625 - qc * qc
        x[central] = qc * _poly(_A, r) / _poly(_B, r)

    tail = ~central
    if np.any(tail):
        qt = q[tail]
        r = np.where(qt < 0, p[tail], 1.0 - p[tail])
        r = np.sqrt(-np.log(r))
        near = r <= 5.0
        xt = np.empty_like(r)
        rn = r[near] - 1.6
        xt[near] = _poly(_C, rn) / _poly(_D, rn)
        rf = r[~near] - 5.0
        xt[~near] = _poly(_E, rf) / _poly(_F, rf)
        x[tail] = np.where(qt < 0, -xt, xt)

    # Halley refinement; the error is measured on the side with the smaller tail
    upper = x > 0
    cdf_side = np.where(upper, 0.5 * _erfc(x / math.sqrt(2.0)), 0.5 * _erfc(-x / math.sqrt(2.0)))
    target = np.where(upper, 1.0 - p, p)
    err = np.where(upper, target - cdf_side, cdf_side - target)
    u = err * math.sqrt(2.0 * math.pi) * np.exp(0.5 * x * x)
    x = x - u / (1.0 + 0.5 * x * u)
    return _out(x, scalar)


def log_sum_exp(v, axis=None):
    """Max-shifted log(sum(exp(v))). All -inf entries reduce to -inf."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise DomainError("log_sum_exp of an empty input")
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax_log(logits, axis=-1):
    """Normalize finite log-weights along ``axis`` into probabilities."""
    logits = np.asarray(logits, dtype=float)
    e = np.exp(logits - logits.max(axis=axis, keepdims=True))
    e /= e.sum(axis=axis, keepdims=True)
    return e


def xlogx(p):
    """Elementwise p*log(p) with 0*log(0) = 0."""
    p = np.asarray(p, dtype=float)
    pos = p > 0
    out = np.zeros_like(p)
    np.log(p, out=out, where=pos)
    out *= p
    return out
