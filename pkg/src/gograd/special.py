"""Special functions behind the gamma, beta and negative-binomial CDFs.

Every function accepts scalars or numpy arrays (broadcast elementwise) and
returns a Python float for scalar input.  Out-of-domain input raises
:class:`DomainError`; nothing here returns NaN on purpose.

Derivatives of a regularized CDF with respect to a shape parameter use a
differentiated power series where it converges quickly and three-level
Richardson-extrapolated central differences elsewhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.57721566490153286061

_EPS = 1e-16
_CF_EPS = 4e-16
_TINY = 1e-300
_MAX_ITER = 5000


class DomainError(ValueError):
    """Argument outside the domain of a special function or distribution."""


@dataclass(frozen=True)
class FnEvalResult:
    value: float
    est_abs_error: float

    def __post_init__(self):
        if not self.est_abs_error >= 0:
            raise ValueError("est_abs_error must be nonnegative")


def _as_array(*args):
    arrs = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
    scalar = all(np.ndim(a) == 0 for a in args)
    return scalar, [np.array(a, dtype=float) for a in arrs]


def _out(scalar, value):
    return float(value) if scalar else value


def _check(cond, msg):
    if not np.all(cond):
        raise DomainError(msg)


_lgamma_vec = np.frompyfunc(math.lgamma, 1, 1)


def log_gamma(x):
    """ln Gamma(x) for x > 0."""
    scalar, (x,) = _as_array(x)
    _check(x > 0, "log_gamma requires x > 0")
    if scalar:
        return math.lgamma(float(x))
    return _lgamma_vec(x).astype(float)


# Bernoulli numbers B_2k / (2k) for the asymptotic digamma series.
_PSI_ASYMPTOTIC = (
    1.0 / 12,
    -1.0 / 120,
    1.0 / 252,
    -1.0 / 240,
    1.0 / 132,
    -691.0 / 32760,
    1.0 / 12,
)


def digamma(x):
    """Digamma psi(x) = d/dx ln Gamma(x), for x > 0.

    Upward recurrence psi(x) = psi(x + 1) - 1/x until x >= 10, then the
    asymptotic expansion ln x - 1/(2x) - sum B_2k / (2k x^2k).
    """
    scalar, (x,) = _as_array(x)
    _check(x > 0, "digamma requires x > 0")
    acc = np.zeros_like(x)
    x = x.copy()
    small = x < 10.0
    while np.any(small):
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < 10.0
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    for coef in reversed(_PSI_ASYMPTOTIC):
        series = series * inv2 + coef
    value = acc + np.log(x) - 0.5 / x - inv2 * series
    return _out(scalar, value)


def _gamma_series(a, x):
    """Lower regularized gamma P(a, x) by its power series (x < a + 1 fastest)."""
    term = np.ones_like(a) / a
    total = term.copy()
    denom = a.copy()
    active = np.ones(a.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        denom = denom + 1.0
        term = np.where(active, term * x / denom, 0.0)
        total = total + term
        active = np.abs(term) > np.abs(total) * _EPS
        if not np.any(active):
            break
    else:
        raise RuntimeError("gamma series failed to converge")
    with np.errstate(divide="ignore"):
        logpre = a * np.log(x) - x - _lgamma_vec(a).astype(float)
    return total * np.exp(logpre)


def _gamma_cf_scaled(a, x):
    """Continued fraction for Gamma(a, x) * e^x x^-a (modified Lentz), x > a + 1 fastest."""
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = np.where(done, 1.0, d * c)
        h = h * delta
        done |= np.abs(delta - 1.0) < _CF_EPS
        if np.all(done):
            break
    else:
        raise RuntimeError("gamma continued fraction failed to converge")
    return h


def _gamma_pq(a, x):
    """(P, Q) regularized incomplete gammas, each accurate in relative terms."""
    p = np.zeros_like(x)
    q = np.ones_like(x)
    pos = x > 0
    use_series = pos & (x < a + 1.0)
    use_cf = pos & ~use_series
    if np.any(use_series):
        ps = _gamma_series(a[use_series], x[use_series])
        p[use_series] = ps
        q[use_series] = 1.0 - ps
    if np.any(use_cf):
        aa, xx = a[use_cf], x[use_cf]
        logpre = aa * np.log(xx) - xx - _lgamma_vec(aa).astype(float)
        qs = np.exp(logpre) * _gamma_cf_scaled(aa, xx)
        q[use_cf] = qs
        p[use_cf] = 1.0 - qs
    return p, q


def reg_gamma_p(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    scalar, (a, x) = _as_array(a, x)
    _check((a > 0) & (x >= 0) & np.isfinite(x), "reg_gamma_p requires a > 0, x >= 0")
    return _out(scalar, _gamma_pq(a, x)[0])


def reg_gamma_q(a, x):
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    scalar, (a, x) = _as_array(a, x)
    _check((a > 0) & (x >= 0) & np.isfinite(x), "reg_gamma_q requires a > 0, x >= 0")
    return _out(scalar, _gamma_pq(a, x)[1])


def _richardson(fn, center, h, *fixed):
    """Central difference of fn at center with steps h, h/2, h/4, Richardson-combined.

    All six shifted evaluations go through ``fn(shifted, *fixed)`` in one
    vectorized call; ``fixed`` arrays are tiled to match.  Returns
    (estimate, error estimate).
    """
    steps = h / np.array([1.0, 2.0, 4.0])[:, None]
    shifted = np.concatenate([center + steps, center - steps]).ravel()
    tiled = [np.tile(np.ravel(a), 6) for a in fixed]
    vals = np.asarray(fn(shifted, *tiled)).reshape(6, -1)
    d = (vals[:3] - vals[3:]) / (2.0 * steps)
    r1 = (4.0 * d[1] - d[0]) / 3.0
    r2 = (4.0 * d[2] - d[1]) / 3.0
    best = (16.0 * r2 - r1) / 15.0
    return best, np.abs(best - r2)


def _fd_step(shape):
    # three Richardson levels stay inside shape > 0
    return np.minimum(np.maximum(1e-4 * np.abs(shape), 1e-5), 0.5 * shape)


def _dgamma_p_da_series(a, x):
    """Term-wise derivative of the P(a, x) power series.

    P(a, x) = sum_n exp((a+n) ln x - x - lnGamma(a+n+1)); each term picks up
    a factor (ln x - psi(a+n+1)).
    """
    out = np.zeros_like(x)
    pos = x > 0
    if not np.any(pos):
        return out
    a, x = a[pos], x[pos]
    out[pos] = x * np.exp((a - 1.0) * np.log(x) - x - _lgamma_vec(a).astype(float)) * _dgamma_series_ratio(a, x)
    return out


def _dgamma_series_ratio(a, x):
    """sum_n x^n Gamma(a)/Gamma(a+n+1) (ln x - psi(a+n+1)).

    Equals (dP/da) / (x * x^(a-1) e^-x / Gamma(a)); free of under/overflow for tiny x.
    """
    logx = np.log(x)
    psi = digamma(a + 1.0)
    coef = 1.0 / a
    total = coef * (logx - psi)
    n_plus_a = a.copy()
    active = np.ones(a.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        psi = psi + 1.0 / (n_plus_a + 1.0)
        n_plus_a = n_plus_a + 1.0
        coef = np.where(active, coef * x / n_plus_a, 0.0)
        term = coef * (logx - psi)
        total = total + term
        # coef bounds the tail once the ratio x/(a+n) drops below 1
        active = (np.abs(term) > _EPS * np.abs(total) + 1e-300) | (x > n_plus_a)
        if not np.any(active):
            break
    else:
        raise RuntimeError("differentiated gamma series failed to converge")
    return total


def _dgamma_p_da_fd(a, x):
    h = _fd_step(a)
    p, q = _gamma_pq(a, x)
    # difference the smaller tail so relative accuracy survives
    use_q = q < p
    def fn(shape, xs, flip):
        pp, qq = _gamma_pq(shape, xs)
        return np.where(flip, -qq, pp)
    return _richardson(fn, a, h, x, use_q)


def grad_reg_gamma_p_wrt_a(a, x, backend="auto", full_output=False):
    """dP(a, x)/da.

    backend: "series" (differentiated power series), "fd" (Richardson central
    differences on :func:`reg_gamma_p`) or "auto" (series for x < a + 1,
    fd otherwise).  With ``full_output`` an :class:`FnEvalResult` is returned
    (scalar input only).
    """
    scalar, (a, x) = _as_array(a, x)
    _check((a > 0) & (x >= 0) & np.isfinite(x), "grad_reg_gamma_p_wrt_a requires a > 0, x >= 0")
    if backend not in ("auto", "series", "fd"):
        raise ValueError(f"unknown backend {backend!r}")
    value = np.zeros_like(x)
    err = np.zeros_like(x)
    pos = x > 0
    if backend == "series":
        series_mask = pos
    elif backend == "fd":
        series_mask = np.zeros_like(pos)
    else:
        series_mask = pos & (x < a + 1.0)
    fd_mask = pos & ~series_mask
    if np.any(series_mask):
        value[series_mask] = _dgamma_p_da_series(a[series_mask], x[series_mask])
        err[series_mask] = 1e-15 * (1.0 + np.abs(value[series_mask]))
    if np.any(fd_mask):
        v, e = _dgamma_p_da_fd(a[fd_mask], x[fd_mask])
        value[fd_mask] = v
        err[fd_mask] = e
    if full_output:
        if not scalar:
            raise ValueError("full_output requires scalar input")
        return FnEvalResult(float(value), float(err))
    return _out(scalar, value)


def gamma_shape_nabla_ratio(a, x):
    """(dP(a, x)/da) divided by the unit-rate gamma density x^(a-1) e^-x / Gamma(a).

    Used for the gamma shape variable-nabla; stays finite for x near the
    smallest positive double, where the density itself overflows.
    """
    scalar, (a, x) = _as_array(a, x)
    _check((a > 0) & (x > 0) & np.isfinite(x), "gamma_shape_nabla_ratio requires a > 0, x > 0")
    out = np.empty_like(x)
    series = x < a + 1.0
    if np.any(series):
        out[series] = x[series] * _dgamma_series_ratio(a[series], x[series])
    cf = ~series
    if np.any(cf):
        aa, xx = a[cf], x[cf]
        lg = _lgamma_vec(aa).astype(float)
        logx = np.log(xx)

        def scaled_q(shape, a0, xs, lx, lg0):
            # Q(shape, x) / (x^(a-1) e^-x / Gamma(a)); e^-x cancels analytically
            lgs = _lgamma_vec(shape).astype(float)
            return np.exp((shape - a0 + 1.0) * lx - lgs + lg0) * _gamma_cf_scaled(shape, xs)

        dq, _ = _richardson(scaled_q, aa, _fd_step(aa), aa, xx, logx, lg)
        out[cf] = -dq
    return _out(scalar, out)


def _beta_cf(x, a, b):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        h = np.where(done, h, h * d * c)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = np.where(done, 1.0, d * c)
        h = h * delta
        done |= np.abs(delta - 1.0) < _CF_EPS
        if np.all(done):
            break
    else:
        raise RuntimeError("incomplete beta continued fraction failed to converge")
    return h


def _beta_pair(x, a, b):
    """(I_x(a, b), 1 - I_x(a, b)), each accurate in relative terms."""
    lower = np.zeros_like(x)
    upper = np.ones_like(x)
    one = x >= 1.0
    lower[one] = 1.0
    upper[one] = 0.0
    inner = (x > 0) & (x < 1)
    if np.any(inner):
        xx, aa, bb = x[inner], a[inner], b[inner]
        lg = _lgamma_vec
        logpre = (
            lg(aa + bb).astype(float) - lg(aa).astype(float) - lg(bb).astype(float)
            + aa * np.log(xx) + bb * np.log1p(-xx)
        )
        pre = np.exp(logpre)
        direct = xx < (aa + 1.0) / (aa + bb + 2.0)
        lo = np.empty_like(xx)
        hi = np.empty_like(xx)
        if np.any(direct):
            v = pre[direct] * _beta_cf(xx[direct], aa[direct], bb[direct]) / aa[direct]
            lo[direct] = v
            hi[direct] = 1.0 - v
        flip = ~direct
        if np.any(flip):
            v = pre[flip] * _beta_cf(1.0 - xx[flip], bb[flip], aa[flip]) / bb[flip]
            hi[flip] = v
            lo[flip] = 1.0 - v
        lower[inner] = lo
        upper[inner] = hi
    return lower, upper


def reg_beta_i(x, a, b):
    """Regularized incomplete beta I_x(a, b)."""
    scalar, (x, a, b) = _as_array(x, a, b)
    _check((x >= 0) & (x <= 1) & (a > 0) & (b > 0), "reg_beta_i requires x in [0, 1], a > 0, b > 0")
    return _out(scalar, _beta_pair(x, a, b)[0])


def reg_beta_i_upper(x, a, b):
    """1 - I_x(a, b), without cancellation when I_x is close to 1."""
    scalar, (x, a, b) = _as_array(x, a, b)
    _check((x >= 0) & (x <= 1) & (a > 0) & (b > 0), "reg_beta_i_upper requires x in [0, 1], a > 0, b > 0")
    return _out(scalar, _beta_pair(x, a, b)[1])


def grad_reg_beta_wrt_shape(x, a, b, which, full_output=False):
    """dI_x(a, b)/da (which="a") or dI_x(a, b)/db (which="b").

    Richardson central differences with step max(1e-4 |shape|, 1e-5),
    differencing whichever tail is smaller.
    """
    scalar, (x, a, b) = _as_array(x, a, b)
    _check((x >= 0) & (x <= 1) & (a > 0) & (b > 0), "grad_reg_beta_wrt_shape requires x in [0, 1], a > 0, b > 0")
    if which not in ("a", "b"):
        raise ValueError("which must be 'a' or 'b'")
    value = np.zeros_like(x)
    err = np.zeros_like(x)
    inner = (x > 0) & (x < 1)
    if np.any(inner):
        xx, aa, bb = x[inner], a[inner], b[inner]
        lo, hi = _beta_pair(xx, aa, bb)
        use_hi = hi < lo

        if which == "a":
            def fn(s, xs, other, flip):
                l, u = _beta_pair(xs, s, other)
                return np.where(flip, -u, l)
            v, e = _richardson(fn, aa, _fd_step(aa), xx, bb, use_hi)
        else:
            def fn(s, xs, other, flip):
                l, u = _beta_pair(xs, other, s)
                return np.where(flip, -u, l)
            v, e = _richardson(fn, bb, _fd_step(bb), xx, aa, use_hi)
        value[inner] = v
        err[inner] = e
    if full_output:
        if not scalar:
            raise ValueError("full_output requires scalar input")
        return FnEvalResult(float(value), float(err))
    return _out(scalar, value)
