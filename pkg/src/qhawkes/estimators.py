"""Estimators for binned event streams and the exact relations they satisfy.

The model implies two closed relations between the rate autocovariance

    C(tau) = (<n_b n_{b+tau}> - <n>^2) / delta^2        (counts per bin n_b)

and the rate/return-pair covariance

    D(t1, t2) = <n_b r_{b-t1} r_{b-t2}> / (psi^2 delta^3),   0 < t1 < t2,

both estimated here together with batch-means standard errors.
:func:`covariance_identity_residuals` evaluates the relations on the lag grid
and reports left-minus-right residuals with propagated errors, which is the
sharpest internal consistency check available for a simulated or fitted model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Optional, Union

import numpy as np

from .errors import NumericalError
from .kernels import ModelParams
from .simulate import BinSeries

__all__ = [
    "CorrelationEstimates",
    "IdentityResiduals",
    "HillReport",
    "TraReport",
    "rate_autocovariance",
    "rate_return_pair_covariance",
    "estimate_correlations",
    "covariance_identity_residuals",
    "hill_exponent",
    "rs_vol",
    "tra_curve",
    "apparent_branching",
    "write_c_grid_csv",
    "write_d_grid_csv",
    "write_tra_csv",
]


def _batch_se(x: np.ndarray, n_batches: int = 32) -> float:
    """Standard error of mean(x) by non-overlapping batch means."""
    b = min(n_batches, x.size)
    if b < 2:
        return float("nan")
    means = np.array([chunk.mean() for chunk in np.array_split(x, b)])
    return float(means.std(ddof=1) / math.sqrt(b))


@dataclass(frozen=True)
class CorrelationEstimates:
    """Lag-grid estimates of C and D with standard errors.

    ``lags`` runs 1..q (units of delta); ``pairs`` holds (t1, t2) lag-index
    pairs with t1 < t2, row-aligned with ``d`` and ``d_se``.
    """

    delta: float
    q: int
    lambda_bar: float
    lags: np.ndarray
    c: np.ndarray
    c_se: np.ndarray
    pairs: np.ndarray
    d: np.ndarray
    d_se: np.ndarray

    def d_at(self, t1: int, t2: int) -> float:
        """Estimated D at an unordered lag pair (symmetric accessor)."""
        a, b = (int(t1), int(t2)) if t1 < t2 else (int(t2), int(t1))
        if a == b:
            raise ValueError("coincident lags have no pair estimate")
        if not (1 <= a and b <= self.q):
            raise ValueError(f"lag pair ({t1},{t2}) outside 1..{self.q}")
        idx = (a - 1) * (2 * self.q - a) // 2 + (b - a - 1)
        return float(self.d[idx])

    def d_matrix(self) -> np.ndarray:
        """Symmetric (q+1) x (q+1) matrix of D on the estimated grid.

        Index [a, b] is D(a*delta, b*delta).  Row/column 0 and the diagonal
        are filled by linear extrapolation (they are not directly estimable
        from distinct-lag pairs); used by the identity evaluation.
        """
        q = self.q
        m = np.full((q + 1, q + 1), np.nan)
        for (a, b), val in zip(self.pairs, self.d):
            m[a, b] = val
            m[b, a] = val
        # diagonal: linear extrapolation along the row, backward at the edge
        for a in range(1, q + 1):
            if a + 2 <= q:
                m[a, a] = 2.0 * m[a, a + 1] - m[a, a + 2]
            else:
                m[a, a] = 2.0 * m[a, a - 1] - m[a, a - 2]
        # zero row/column, then the corner
        for b in range(1, q + 1):
            m[0, b] = 2.0 * m[1, b] - m[2, b]
            m[b, 0] = m[0, b]
        m[0, 0] = 2.0 * m[0, 1] - m[0, 2]
        return m


def rate_autocovariance(counts: np.ndarray, delta: float, q: int):
    """Autocovariance of the binned event rate at lags 1..q.

    Returns (lags, c, c_se, lambda_bar).
    """
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 1 or counts.size < 10 * q:
        raise ValueError(f"need a 1-d count series much longer than q={q}")
    if not (delta > 0.0):
        raise ValueError(f"delta must be > 0, got {delta}")
    nbar = counts.mean()
    lambda_bar = nbar / delta
    lags = np.arange(1, q + 1, dtype=np.int64)
    c = np.empty(q)
    se = np.empty(q)
    for i, tau in enumerate(lags):
        x = counts[tau:] * counts[:-tau]
        c[i] = (x.mean() - nbar * nbar) / delta**2
        se[i] = _batch_se(x) / delta**2
    return lags, c, se, float(lambda_bar)


def rate_return_pair_covariance(
    counts: np.ndarray, returns: np.ndarray, delta: float, q: int, psi: float = 1.0
):
    """Covariance of the rate with products of two past signed returns.

    Estimates D(t1, t2) = <n_b r_{b-t1} r_{b-t2}> / (psi^2 delta^3) for all
    1 <= t1 < t2 <= q.  Returns (pairs, d, d_se).
    """
    counts = np.asarray(counts, dtype=float)
    returns = np.asarray(returns, dtype=float)
    if counts.shape != returns.shape or counts.ndim != 1:
        raise ValueError("counts and returns must be 1-d arrays of equal length")
    if counts.size < 10 * q:
        raise ValueError(f"need series much longer than q={q}")
    if not (delta > 0.0 and psi > 0.0):
        raise ValueError("delta and psi must be > 0")
    norm = psi**2 * delta**3
    pairs = np.array([(t1, t2) for t1 in range(1, q + 1) for t2 in range(t1 + 1, q + 1)], dtype=np.int64)
    d = np.empty(pairs.shape[0])
    se = np.empty(pairs.shape[0])
    n = counts.size
    for i, (t1, t2) in enumerate(pairs):
        y = counts[t2:] * returns[t2 - t1 : n - t1] * returns[: n - t2]
        d[i] = y.mean() / norm
        se[i] = _batch_se(y) / norm
    return pairs, d, se


def estimate_correlations(
    bins: Union[BinSeries, tuple], q: int, psi: Optional[float] = None, delta: Optional[float] = None
) -> CorrelationEstimates:
    """Build both correlation grids from a BinSeries (or (counts, returns))."""
    if isinstance(bins, BinSeries):
        counts, returns = bins.counts, bins.ret
        delta = bins.delta
        psi = bins.psi if psi is None else psi
    else:
        counts, returns = bins
        if delta is None or psi is None:
            raise ValueError("delta and psi are required with raw arrays")
    lags, c, c_se, lambda_bar = rate_autocovariance(counts, delta, q)
    pairs, d, d_se = rate_return_pair_covariance(counts, returns, delta, q, psi)
    return CorrelationEstimates(
        delta=float(delta), q=int(q), lambda_bar=lambda_bar,
        lags=lags, c=c, c_se=c_se, pairs=pairs, d=d, d_se=d_se,
    )


# ---------------------------------------------------------------------------
# Exact covariance relations.


class _Accumulator:
    """Linear-combination bookkeeping for error propagation.

    The relation right-hand sides are linear in the estimated C and D values;
    tracking each coefficient lets the residual standard error include the
    RHS contribution (lags treated as independent, adequate at the tolerances
    used here).
    """

    def __init__(self):
        self.value = 0.0
        self.c_coef = {}
        self.d_coef = {}

    def add_const(self, x: float):
        self.value += x

    def add_c(self, m: int, coef: float, cvals: "_CGrid"):
        self.value += coef * cvals.at(m)
        for idx, w in cvals.weights(m):
            self.c_coef[idx] = self.c_coef.get(idx, 0.0) + coef * w

    def add_d(self, a: int, b: int, coef: float, dgrid: "_DGrid"):
        self.value += coef * dgrid.at(a, b)
        for key, w in dgrid.weights(a, b):
            self.d_coef[key] = self.d_coef.get(key, 0.0) + coef * w

    def variance(self, c_se: np.ndarray, d_se_map: dict) -> float:
        v = 0.0
        for idx, w in self.c_coef.items():
            v += (w * c_se[idx - 1]) ** 2
        for key, w in self.d_coef.items():
            v += (w * d_se_map[key]) ** 2
        return v


class _CGrid:
    """C on integer lags with even extension, origin extrapolation, tail closure."""

    def __init__(self, c: np.ndarray, q: int, tail_points: int = 5):
        self.c = c
        self.q = q
        # quadratic extrapolation to lag 0 from lags 1..3
        self.c0 = 3.0 * c[0] - 3.0 * c[1] + c[2]
        # geometric tail ratio from the last few lags when they decay cleanly
        tail = c[-tail_points:]
        if np.all(tail > 0.0) and np.all(np.diff(tail) < 0.0):
            self.rho = float(np.exp(np.mean(np.diff(np.log(tail)))))
        else:
            self.rho = 0.0

    def at(self, m: int) -> float:
        m = abs(m)
        if m == 0:
            return self.c0
        if m <= self.q:
            return float(self.c[m - 1])
        return float(self.c[-1] * self.rho ** (m - self.q))

    def weights(self, m: int):
        """Coefficients of the estimated c values entering self.at(m)."""
        m = abs(m)
        if m == 0:
            return ((1, 3.0), (2, -3.0), (3, 1.0))
        if m <= self.q:
            return ((m, 1.0),)
        return ((self.q, self.rho ** (m - self.q)),)


class _DGrid:
    """D on the integer pair grid with extrapolated borders and diagonal."""

    def __init__(self, est: CorrelationEstimates):
        self.q = est.q
        self.m = est.d_matrix()
        self._w = {}
        base = {(int(a), int(b)): ((int(a), int(b)), 1.0) for a, b in est.pairs}
        for (a, b), (key, w) in base.items():
            self._w[(a, b)] = [(key, w)]
            self._w[(b, a)] = [(key, w)]
        q = est.q
        for a in range(1, q + 1):
            if a + 2 <= q:
                self._w[(a, a)] = self._scaled((a, a + 1), 2.0) + self._scaled((a, a + 2), -1.0)
            else:
                self._w[(a, a)] = self._scaled((a, a - 1), 2.0) + self._scaled((a, a - 2), -1.0)
        for b in range(1, q + 1):
            w0 = self._scaled((1, b), 2.0) + self._scaled((2, b), -1.0)
            self._w[(0, b)] = w0
            self._w[(b, 0)] = w0
        self._w[(0, 0)] = self._scaled((0, 1), 2.0) + self._scaled((0, 2), -1.0)

    def _scaled(self, key, f):
        return [(k, f * w) for k, w in self._w[key]]

    def at(self, a: int, b: int) -> float:
        return float(self.m[a, b])

    def weights(self, a: int, b: int):
        return self._w[(a, b)]


def _trapz_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


@dataclass(frozen=True)
class IdentityResiduals:
    """Left-minus-right residuals of the two covariance relations.

    ``coarse_grid`` warns that a kernel time constant is shorter than the bin
    width, in which case the grid quadrature underresolves the integrands and
    the residuals carry discretization bias beyond ``quad_tol``.
    """

    lags: np.ndarray
    res_rate: np.ndarray
    se_rate: np.ndarray
    pairs: np.ndarray
    res_pair: np.ndarray
    se_pair: np.ndarray
    quad_tol: float  # discretization + truncation error estimate, rate relation
    coarse_grid: bool = False


def covariance_identity_residuals(model: ModelParams, est: CorrelationEstimates) -> IdentityResiduals:
    """Evaluate the exact covariance relations on the estimated grids.

    Rate relation, for tau > 0 (C evenly extended to negative arguments):

        C(tau) = rate * phi_d(tau) + int_0^inf phi_d(u) C(tau - u) du
                 + 2 int_{0<u<r} k(tau+u) k(tau+r) D(u, r) du dr

    Pair relation, for 0 < t1 < t2, with gap g = t2 - t1:

        D(t1, t2) = 2 k(t1) k(t2) (C(g) + rate^2)
                    + int_g^{t2} phi_d(t2 - u) D(u - g, u) du
                    + 2 int_0^inf k(t1) k(t1 + w) D(g, w) dw

    Integrals use the trapezoid rule on the estimation grid (the integrand
    kink at u = tau falls on a node), with C closed by a fitted geometric
    tail and D truncated at the grid edge; the reported ``quad_tol`` bounds
    what those choices can contribute to the rate-relation residuals.
    """
    from .kernels import ExponentialHawkes, ExponentialZumbach, ZeroKernel

    if est.q < 5:
        raise ValueError("identity evaluation needs q >= 5")
    if not isinstance(model.diagonal, (ExponentialHawkes, ZeroKernel)):
        raise ValueError(
            "identity evaluation requires exponential-family kernels; "
            f"got {type(model.diagonal).__name__} self-excitation"
        )
    if not isinstance(model.zumbach, (ExponentialZumbach, ZeroKernel)):
        raise ValueError(
            "identity evaluation requires exponential-family kernels; "
            f"got {type(model.zumbach).__name__} signed memory"
        )
    delta = est.delta
    coarse = False
    if isinstance(model.diagonal, ExponentialHawkes) and model.diagonal.beta * delta > 1.0:
        coarse = True
    if isinstance(model.zumbach, ExponentialZumbach) and model.zumbach.omega * delta > 1.0:
        coarse = True
    q = est.q
    lam = est.lambda_bar
    cg = _CGrid(est.c, q)
    dg = _DGrid(est)
    d_se_map = {(int(a), int(b)): float(s) for (a, b), s in zip(est.pairs, est.d_se)}

    def phi_d(m: int) -> float:
        return float(model.phi_d(np.array([m * delta]))[0])

    def kv(m: int) -> float:
        return float(model.zumbach.evaluate(np.array([m * delta]))[0])

    # extent of the convolution: stop once both kernel and closed tail are dead
    scale = max(abs(cg.at(m)) for m in range(0, q + 1))
    res_rate = np.empty(q)
    se_rate = np.empty(q)
    trunc_err = 0.0
    has_z = model.zumbach.squared_norm() > 0.0
    tri_wt: dict = {}
    if has_z:
        # triangle 0 <= u < r <= q*delta, cell-by-cell quadrature weights:
        # interior cells bilinear trapezoid (1/4 per corner), cells straddling
        # the diagonal keep their upper half (area delta^2/2, mean of the 3
        # corners on or above the diagonal)
        for a in range(0, q):
            for b in range(a, q):
                if b > a:
                    for corner in ((a, b), (a + 1, b), (a, b + 1), (a + 1, b + 1)):
                        tri_wt[corner] = tri_wt.get(corner, 0.0) + 0.25
                else:
                    for corner in ((a, a), (a, a + 1), (a + 1, a + 1)):
                        tri_wt[corner] = tri_wt.get(corner, 0.0) + 1.0 / 6.0
    for j in range(1, q + 1):
        acc = _Accumulator()
        acc.add_const(lam * phi_d(j))
        m_max = j + q
        while m_max < j + 40 * q:
            contrib = phi_d(m_max) * abs(cg.at(j - m_max)) * delta
            if contrib < 1e-13 * max(scale, 1e-300) or (cg.rho == 0.0 and m_max >= j + q):
                break
            m_max += q
        w = _trapz_weights(m_max + 1)
        for m in range(0, m_max + 1):
            acc.add_c(j - m, delta * w[m] * phi_d(m), cg)
        trunc_err = max(trunc_err, phi_d(m_max) * abs(cg.at(j - m_max)) * delta)

        if has_z:
            for (a, b), w_ab in tri_wt.items():
                lo, hi = min(a, b), max(a, b)
                coef = 2.0 * kv(j + lo) * kv(j + hi) * delta * delta * w_ab
                acc.add_d(lo, hi, coef, dg)
        res_rate[j - 1] = est.c[j - 1] - acc.value
        var = acc.variance(est.c_se, d_se_map)
        se_rate[j - 1] = math.sqrt(est.c_se[j - 1] ** 2 + var)

    res_pair = np.empty(est.pairs.shape[0])
    se_pair = np.empty(est.pairs.shape[0])
    for idx, (t1, t2) in enumerate(est.pairs):
        t1, t2 = int(t1), int(t2)
        g = t2 - t1
        acc = _Accumulator()
        pref = 2.0 * kv(t1) * kv(t2)
        if pref != 0.0:
            acc.add_const(pref * lam * lam)
            acc.add_c(g, pref, cg)
        w = _trapz_weights(t1 + 1)
        for m in range(0, t1 + 1):
            acc.add_d(m, m + g, delta * w[m] * phi_d(t1 - m), dg)
        if has_z:
            w2 = _trapz_weights(q + 1)
            for m in range(0, q + 1):
                acc.add_d(min(g, m), max(g, m), 2.0 * delta * w2[m] * kv(t1) * kv(t1 + m), dg)
        res_pair[idx] = est.d[idx] - acc.value
        var = acc.variance(est.c_se, d_se_map)
        se_pair[idx] = math.sqrt(d_se_map[(t1, t2)] ** 2 + var)

    # trapezoid discretization estimate from second differences of phi_d
    dd = np.abs(np.diff([phi_d(m) for m in range(0, 2 * q)], 2)).sum()
    quad_tol = float(delta * dd / 12.0 * scale + trunc_err)
    return IdentityResiduals(
        lags=est.lags.copy(), res_rate=res_rate, se_rate=se_rate,
        pairs=est.pairs.copy(), res_pair=res_pair, se_pair=se_pair,
        quad_tol=quad_tol, coarse_grid=coarse,
    )


# ---------------------------------------------------------------------------
# Tail and asymmetry statistics.


@dataclass(frozen=True)
class HillReport:
    nu_hill: float
    sigma_min: float
    n_tail: int


def hill_exponent(values: np.ndarray, tail_fraction: float = 0.02) -> HillReport:
    """Hill estimator of the density tail exponent.

    Uses the top k = ceil(tail_fraction * n) order statistics above the
    threshold sigma_min = x_(n-k) (ascending):

        nu_hill = 1 + 1 / mean(log(x_i / sigma_min)),  x_i the k largest.

    For data with survival function ~ x^(-a) this estimates a + 1, the
    exponent of the probability density.
    """
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if not (0.0 < tail_fraction <= 0.2):
        raise ValueError(f"tail_fraction must be in (0, 0.2], got {tail_fraction}")
    n = x.size
    k = int(math.ceil(tail_fraction * n))
    if k < 50:
        raise NumericalError(f"only {k} tail points at fraction {tail_fraction}; need >= 50")
    if k >= n:
        raise NumericalError("tail fraction leaves no bulk below the threshold")
    part = np.partition(x, n - k - 1)
    sigma_min = float(part[n - k - 1])
    tail = part[n - k :]
    if sigma_min <= 0.0:
        raise NumericalError(f"tail threshold must be positive, got {sigma_min}")
    mean_log = float(np.mean(np.log(tail / sigma_min)))
    if mean_log <= 0.0:
        raise NumericalError("degenerate tail: all top values equal the threshold")
    return HillReport(nu_hill=1.0 + 1.0 / mean_log, sigma_min=sigma_min, n_tail=k)


def rs_vol(open_, high, low, close) -> np.ndarray:
    """Range-based volatility from positive OHLC prices.

    sqrt(ln(H/O) ln(H/C) + ln(L/O) ln(L/C)); both products are non-negative
    whenever H >= max(O, C) and L <= min(O, C).
    """
    o = np.asarray(open_, dtype=float)
    h = np.asarray(high, dtype=float)
    l = np.asarray(low, dtype=float)
    c = np.asarray(close, dtype=float)
    if np.any(o <= 0) or np.any(h <= 0) or np.any(l <= 0) or np.any(c <= 0):
        raise ValueError("prices must be positive")
    if np.any(h < np.maximum(o, c)) or np.any(l > np.minimum(o, c)):
        raise ValueError("OHLC ordering violated: need l <= o,c <= h")
    v2 = np.log(h / o) * np.log(h / c) + np.log(l / o) * np.log(l / c)
    return np.sqrt(np.clip(v2, 0.0, None))


@dataclass(frozen=True)
class TraReport:
    """Cross-correlation of volatility with past/future absolute returns.

    ``c_cross[i]`` is the correlation at lag ``lags[i]`` (negative lags:
    volatility leads).  ``delta_ratio[t-1]`` is the normalized partial-sum
    asymmetry up to lag t; it lies in [-1, 1] by construction and is positive
    when past returns influence future volatility more than the reverse.
    """

    q: int
    lags: np.ndarray
    c_cross: np.ndarray
    delta_ratio: np.ndarray


def tra_curve(vol: np.ndarray, returns: np.ndarray, q: int = 36) -> TraReport:
    """Time-asymmetry of the volatility / absolute-return cross-correlation."""
    sig = np.asarray(vol, dtype=float)
    r = np.abs(np.asarray(returns, dtype=float))
    if sig.shape != r.shape or sig.ndim != 1:
        raise ValueError("vol and returns must be 1-d arrays of equal length")
    if sig.size < 10 * q:
        raise ValueError(f"need series much longer than q={q}")
    ms, mr = sig.mean(), r.mean()
    vs = sig.var()
    vr = np.mean(r**2) - mr**2
    if vs <= 0.0 or vr <= 0.0:
        raise NumericalError("zero variance in volatility or returns")
    norm = math.sqrt(vs * vr)
    lags = np.arange(-q, q + 1, dtype=np.int64)
    cc = np.empty(lags.size)
    n = sig.size
    for i, tau in enumerate(lags):
        if tau >= 0:
            prod = sig[tau:] * r[: n - tau]
        else:
            prod = sig[: n + tau] * r[-tau:]
        cc[i] = (prod.mean() - ms * mr) / norm
    pos = cc[q + 1 :]
    neg = cc[:q][::-1]
    denom = 2.0 * np.sum(np.maximum(np.abs(pos), np.abs(neg)))
    if denom == 0.0:
        raise NumericalError("degenerate cross-correlation: zero everywhere")
    delta_ratio = np.cumsum(pos - neg) / denom
    return TraReport(q=q, lags=lags, c_cross=cc, delta_ratio=delta_ratio)


def apparent_branching(values: Union[np.ndarray, BinSeries], window: int) -> float:
    """Apparent feedback mass from the dispersion of windowed activity.

    Sums ``values`` (or squared range volatility for a BinSeries) over
    non-overlapping windows; for a memoryless stream the window sums are
    Poisson-like with variance ~ mean, and the statistic

        1 - sqrt(mean(V) / var(V))

    is ~ 0, while self-excited streams inflate the variance.  Clamped to
    [0, 1].
    """
    if isinstance(values, BinSeries):
        x = values.rs_vol**2
    else:
        x = np.asarray(values, dtype=float)
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    nwin = x.size // window
    if nwin < 100:
        raise ValueError(f"need >= 100 windows, got {nwin}")
    v = x[: nwin * window].reshape(nwin, window).sum(axis=1)
    var = v.var(ddof=1)
    if var <= 0.0:
        raise NumericalError("windowed activity has zero variance")
    return float(min(1.0, max(0.0, 1.0 - math.sqrt(v.mean() / var))))


# ---------------------------------------------------------------------------
# CSV writers (deterministic, no timestamps).


def write_c_grid_csv(est: CorrelationEstimates, fp: IO[str]) -> None:
    fp.write(f"# delta={est.delta!r} lambda_bar={est.lambda_bar!r} q={est.q}\n")
    fp.write("lag,value,stderr\n")
    for lag, v, s in zip(est.lags, est.c, est.c_se):
        fp.write(f"{int(lag)},{float(v)!r},{float(s)!r}\n")


def write_d_grid_csv(est: CorrelationEstimates, fp: IO[str]) -> None:
    fp.write(f"# delta={est.delta!r} lambda_bar={est.lambda_bar!r} q={est.q}\n")
    fp.write("lag1,lag2,value,stderr\n")
    for (a, b), v, s in zip(est.pairs, est.d, est.d_se):
        fp.write(f"{int(a)},{int(b)},{float(v)!r},{float(s)!r}\n")


def write_tra_csv(rep: TraReport, fp: IO[str]) -> None:
    fp.write(f"# q={rep.q}\n")
    fp.write("tau,c_pos,c_neg,delta\n")
    for t in range(1, rep.q + 1):
        fp.write(
            f"{t},{float(rep.c_cross[rep.q + t])!r},{float(rep.c_cross[rep.q - t])!r},"
            f"{float(rep.delta_ratio[t - 1])!r}\n"
        )
