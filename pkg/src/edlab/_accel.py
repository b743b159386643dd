"""Hot kernels: numba-compiled loops with vectorised numpy twins.

The training loops spend nearly all of their non-matmul time here: a
bisection per sample to locate the optimal dispatch, and the regret loss
evaluated on the piecewise-linear cost curve. Every kernel exists twice,
as an explicit loop (compiled with ``numba.njit``) and as array code
(``*_np``). ``EDLAB_NUMBA=0`` selects the numpy versions; they are also
used automatically when numba is not importable.

Curves are passed as a padded bank so one call can serve samples that
use different curves:

    bank_g[c, :K[c]]       breakpoints of curve c
    bank_cost[c, :K[c]]    cost at each breakpoint
    bank_slope[c, :K[c]-1] segment slopes

Demand families are encoded as integers with up to three parameters:
0 Normal(mu, sigma), 1 Uniform(a, b), 2 BoundedPareto(L, H, alpha).
"""
from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import ndtr, ndtri

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("EDLAB_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

NORMAL, UNIFORM, BOUNDED_PARETO = 0, 1, 2

if HAVE_NUMBA and os.environ.get("EDLAB_THREADS"):
    numba.set_num_threads(max(1, min(int(os.environ["EDLAB_THREADS"]), numba.config.NUMBA_NUM_THREADS)))


def _jit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


# -- scalar special functions (usable from python and from compiled code) ----

# Acklam's rational approximation to the inverse normal cdf (|rel err| < 1.15e-9),
# followed by one Halley step against erfc which brings it to machine precision.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


@_jit
def _norm_cdf(z):
    return 0.5 * math.erfc(-z / _SQRT2)


@_jit
def _norm_pdf(z):
    return math.exp(-0.5 * z * z) / _SQRT2PI


@_jit
def _ppf_lower(p):
    # 0 < p <= 0.5
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    e = 0.5 * math.erfc(-x / _SQRT2) - p
    u = e * _SQRT2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@_jit
def _norm_ppf(p):
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    if p > 0.5:
        # 1 - p is exact here; refining in the lower tail avoids cancellation
        return -_ppf_lower(1.0 - p)
    return _ppf_lower(p)


norm_cdf = _norm_cdf
norm_pdf = _norm_pdf
norm_ppf = _norm_ppf


@_jit
def _family_cdf(fam, p0, p1, p2, x):
    if fam == 0:
        return _norm_cdf((x - p0) / p1)
    if fam == 1:
        if x <= p0:
            return 0.0
        if x >= p1:
            return 1.0
        return (x - p0) / (p1 - p0)
    if x <= p0:
        return 0.0
    if x >= p1:
        return 1.0
    return (1.0 - (p0 / x) ** p2) / (1.0 - (p0 / p1) ** p2)


@_jit
def _family_ppf(fam, p0, p1, p2, p):
    if fam == 0:
        return p0 + p1 * _norm_ppf(p)
    if fam == 1:
        return p0 + p * (p1 - p0)
    return p0 * (1.0 - p * (1.0 - (p0 / p1) ** p2)) ** (-1.0 / p2)


family_cdf = _family_cdf
family_ppf = _family_ppf


# -- batched optimal dispatch --------------------------------------------------

@_jit
def _dispatch_loop(idx, bank_g, bank_slope, nbp, fam, params, gamma1, gamma2, rtol):
    """Per-sample bisection on D(g) = C'(g) + (g1+g2) F(g) - g1 over [g_min, g_max].

    Returns the dispatch, the slope of the segment used for the critical
    fractile, and a flag telling whether the fractile condition holds at
    the returned point (0 means pinned at a kink or a domain end).
    """
    n = idx.shape[0]
    out = np.empty(n)
    lam = np.empty(n)
    free = np.zeros(n, dtype=np.int8)
    gs = gamma1 + gamma2
    for s in range(n):
        c = idx[s]
        K = nbp[c]
        lo = bank_g[c, 0]
        hi = bank_g[c, K - 1]
        width = hi - lo
        p0 = params[s, 0]
        p1 = params[s, 1]
        p2 = params[s, 2]
        a = lo
        b = hi
        while b - a > rtol * width:
            m = 0.5 * (a + b)
            k = 0
            while k < K - 2 and bank_g[c, k + 1] <= m:
                k += 1
            D = bank_slope[c, k] + gs * _family_cdf(fam, p0, p1, p2, m) - gamma1
            if D < 0.0:
                a = m
            else:
                b = m
        g = 0.5 * (a + b)
        if a == lo and bank_slope[c, 0] + gs * _family_cdf(fam, p0, p1, p2, lo) - gamma1 >= 0.0:
            g = lo
        elif b == hi and bank_slope[c, K - 2] + gs * _family_cdf(fam, p0, p1, p2, hi) - gamma1 < 0.0:
            g = hi
        # locate the segment; within 1e-9 of a breakpoint the left one wins
        k = 0
        while k < K - 2 and bank_g[c, k + 1] < g - 1e-9 * width:
            k += 1
        sl = bank_slope[c, k]
        pf = (gamma1 - sl) / gs
        flag = 0
        if 0.0 < pf < 1.0:
            q = _family_ppf(fam, p0, p1, p2, pf)
            slack = 2.0 * rtol * width
            if a - slack <= q <= b + slack and bank_g[c, k] <= q <= bank_g[c, k + 1] and lo < q < hi:
                g = q
                flag = 1
        if g < lo:
            g = lo
        elif g > hi:
            g = hi
        out[s] = g
        lam[s] = sl
        free[s] = flag
    return out, lam, free


def _segment_np(bank_g, nbp, idx, x, left=False):
    """Vectorised segment lookup, right segment at breakpoints unless ``left``."""
    G = bank_g[idx]
    K = nbp[idx]
    cols = np.arange(G.shape[1])[None, :]
    inner = (cols >= 1) & (cols <= (K - 2)[:, None])
    if left:
        width = G[np.arange(len(idx)), K - 1] - G[:, 0]
        hit = inner & (G < (x - 1e-9 * width)[:, None])
    else:
        hit = inner & (G <= x[:, None])
    return hit.sum(axis=1)


def _family_cdf_np(fam, params, x):
    p0, p1, p2 = params[:, 0], params[:, 1], params[:, 2]
    if fam == NORMAL:
        return ndtr((x - p0) / p1)
    if fam == UNIFORM:
        return np.clip((x - p0) / (p1 - p0), 0.0, 1.0)
    xc = np.clip(x, p0, p1)
    return (1.0 - (p0 / xc) ** p2) / (1.0 - (p0 / p1) ** p2)


def _family_ppf_np(fam, params, p):
    p0, p1, p2 = params[:, 0], params[:, 1], params[:, 2]
    if fam == NORMAL:
        return p0 + p1 * ndtri(p)
    if fam == UNIFORM:
        return p0 + p * (p1 - p0)
    return p0 * (1.0 - p * (1.0 - (p0 / p1) ** p2)) ** (-1.0 / p2)


def dispatch_batch_np(idx, bank_g, bank_slope, nbp, fam, params, gamma1, gamma2, rtol):
    idx = np.asarray(idx)
    lo = bank_g[idx, 0]
    hi = bank_g[idx, nbp[idx] - 1]
    width = hi - lo
    gs = gamma1 + gamma2
    a, b = lo.copy(), hi.copy()
    # same halving sequence as the loop kernel, all samples in lockstep
    while True:
        active = (b - a) > rtol * width
        if not active.any():
            break
        m = 0.5 * (a + b)
        k = _segment_np(bank_g, nbp, idx, m)
        D = bank_slope[idx, k] + gs * _family_cdf_np(fam, params, m) - gamma1
        go_right = active & (D < 0.0)
        go_left = active & ~(D < 0.0)
        a = np.where(go_right, m, a)
        b = np.where(go_left, m, b)
    g = 0.5 * (a + b)
    at_lo = (a == lo) & (bank_slope[idx, 0] + gs * _family_cdf_np(fam, params, lo) - gamma1 >= 0.0)
    at_hi = (b == hi) & (bank_slope[idx, nbp[idx] - 2] + gs * _family_cdf_np(fam, params, hi) - gamma1 < 0.0)
    g = np.where(at_lo, lo, np.where(at_hi, hi, g))
    k = _segment_np(bank_g, nbp, idx, g, left=True)
    lam = bank_slope[idx, k]
    pf = (gamma1 - lam) / gs
    ok = (pf > 0.0) & (pf < 1.0)
    q = np.full_like(g, np.nan)
    if ok.any():
        q[ok] = _family_ppf_np(fam, params[ok], pf[ok])
    slack = 2.0 * rtol * width
    with np.errstate(invalid="ignore"):
        snap = ok & (q >= a - slack) & (q <= b + slack) & (q >= bank_g[idx, k]) \
            & (q <= bank_g[idx, k + 1]) & (q > lo) & (q < hi)
    g = np.where(snap, q, g)
    g = np.clip(g, lo, hi)
    return g, lam, snap.astype(np.int8)


# -- batched regret loss --------------------------------------------------------

@_jit
def _qloss_loop(idx, bank_g, bank_cost, bank_slope, nbp, g_hat, d, gamma1, gamma2):
    """Regret C(g_hat) - C(d) + g1 (d - g_hat)^+ + g2 (g_hat - d)^+ and its g_hat-subgradient."""
    n = idx.shape[0]
    val = np.empty(n)
    grad = np.empty(n)
    for s in range(n):
        c = idx[s]
        K = nbp[c]
        gh = g_hat[s]
        dd = d[s]
        # C(g_hat), g_hat already inside the domain
        k = 0
        while k < K - 2 and bank_g[c, k + 1] <= gh:
            k += 1
        c_hat = bank_cost[c, k] + bank_slope[c, k] * (gh - bank_g[c, k])
        slope_hat = bank_slope[c, k]
        # C(d) with linear continuation outside the domain
        if dd <= bank_g[c, 0]:
            c_d = bank_cost[c, 0] + bank_slope[c, 0] * (dd - bank_g[c, 0])
        elif dd >= bank_g[c, K - 1]:
            c_d = bank_cost[c, K - 1] + bank_slope[c, K - 2] * (dd - bank_g[c, K - 1])
        else:
            j = 0
            while j < K - 2 and bank_g[c, j + 1] <= dd:
                j += 1
            c_d = bank_cost[c, j] + bank_slope[c, j] * (dd - bank_g[c, j])
        v = c_hat - c_d
        gr = slope_hat
        if dd > gh:
            v += gamma1 * (dd - gh)
            gr -= gamma1
        elif gh > dd:
            v += gamma2 * (gh - dd)
            gr += gamma2
        val[s] = v
        grad[s] = gr
    return val, grad


def _eval_extended_np(bank_g, bank_cost, bank_slope, nbp, idx, x):
    K = nbp[idx]
    lo = bank_g[idx, 0]
    hi = bank_g[idx, K - 1]
    k = _segment_np(bank_g, nbp, idx, x)
    inside = bank_cost[idx, k] + bank_slope[idx, k] * (x - bank_g[idx, k])
    below = bank_cost[idx, 0] + bank_slope[idx, 0] * (x - lo)
    above = bank_cost[idx, K - 1] + bank_slope[idx, K - 2] * (x - hi)
    return np.where(x <= lo, below, np.where(x >= hi, above, inside))


def qloss_batch_np(idx, bank_g, bank_cost, bank_slope, nbp, g_hat, d, gamma1, gamma2):
    idx = np.asarray(idx)
    k = _segment_np(bank_g, nbp, idx, g_hat)
    c_hat = bank_cost[idx, k] + bank_slope[idx, k] * (g_hat - bank_g[idx, k])
    c_d = _eval_extended_np(bank_g, bank_cost, bank_slope, nbp, idx, d)
    short = d > g_hat
    over = g_hat > d
    val = c_hat - c_d + gamma1 * np.where(short, d - g_hat, 0.0) + gamma2 * np.where(over, g_hat - d, 0.0)
    grad = bank_slope[idx, k] - gamma1 * short + gamma2 * over
    return val, grad


dispatch_batch_loop = _dispatch_loop
qloss_batch_loop = _qloss_loop

if USE_NUMBA:
    dispatch_batch = dispatch_batch_loop
    qloss_batch = qloss_batch_loop
    BACKEND = "numba"
else:
    dispatch_batch = dispatch_batch_np
    qloss_batch = qloss_batch_np
    BACKEND = "numpy"
