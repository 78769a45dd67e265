"""Lagged quadratic variance models on binned returns.

sigma_t^2 = sigma_inf2 + sum_a leverage[a-1] * r_{t-a}
          + sum_{a,b} kmat[a-1, b-1] * r_{t-a} * r_{t-b}

with lags a, b in 1..q.  kmat is symmetric; the leverage row is carried for
diagnostics but is zero in every model produced by this package.

The module provides the variance filter and a simulator for this model,
two-stage calibration (method-of-moments least squares, then Student-t
maximum likelihood), the decomposition of a fitted lag matrix into a
diagonal part plus a rank-one part, parametric fits of the two resulting
lag profiles, and the endogeneity accounting built from them.  Calibration
assumes the input returns are normalized to zero mean and unit variance
(checked to 1%); see the data-loading module for the normalization pipeline.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import IO, Optional, Union

import numba
import numpy as np
from scipy import optimize, special

from ._rng import STREAM_QARCH, philox
from .errors import NumericalError

__all__ = [
    "QarchModel",
    "KernelFit",
    "GmmFit",
    "MleFit",
    "QarchSample",
    "qarch_variance",
    "filter_variance",
    "simulate_qarch",
    "gmm_estimate",
    "mle_student",
    "rank_one_diag_fit",
    "parametric_fit",
    "endogeneity",
    "write_qarch_csv",
    "read_qarch_csv",
    "write_kernel_fit_csv",
]

DEFAULT_FLOOR_EPS = 1e-3


@dataclass(frozen=True)
class QarchModel:
    sigma_inf2: float
    leverage: np.ndarray
    kmat: np.ndarray
    q: int
    delta: float

    def __post_init__(self):
        kmat = np.asarray(self.kmat, dtype=float)
        lev = np.asarray(self.leverage, dtype=float)
        object.__setattr__(self, "kmat", kmat)
        object.__setattr__(self, "leverage", lev)
        if kmat.shape != (self.q, self.q):
            raise ValueError(f"kmat must be ({self.q},{self.q}), got {kmat.shape}")
        if lev.shape != (self.q,):
            raise ValueError(f"leverage must have length {self.q}, got {lev.shape}")
        if not np.allclose(kmat, kmat.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(kmat).max()))):
            raise ValueError("kmat must be symmetric")
        if kmat.size and float(np.diag(kmat).min()) < 0.0:
            raise ValueError("kmat diagonal entries must be >= 0")
        if not (self.sigma_inf2 >= 0.0):
            raise ValueError(f"sigma_inf2 must be >= 0, got {self.sigma_inf2}")
        if not (self.delta > 0.0):
            raise ValueError(f"delta must be > 0, got {self.delta}")

    def trace(self) -> float:
        """Sum of diagonal feedback coefficients; the discrete analogue of the kernel mass."""
        return float(np.trace(self.kmat))

    def is_stationary(self) -> bool:
        """Whether the feedback mass allows a finite unconditional variance."""
        return self.trace() < 1.0


# ---------------------------------------------------------------------------
# filtering and simulation


@numba.njit(cache=True, nogil=True)
def _filter_loop(returns, sigma_inf2, leverage, kmat, floor, out):
    """Fill out[t] with the model variance of bin t; returns the floor count.

    History before the first bin is zero-padded.
    """
    n = returns.shape[0]
    q = kmat.shape[0]
    n_floored = 0
    for t in range(n):
        s = sigma_inf2
        amax = t if t < q else q
        for a in range(1, amax + 1):
            ra = returns[t - a]
            s += leverage[a - 1] * ra
            s += kmat[a - 1, a - 1] * ra * ra
            for b in range(a + 1, amax + 1):
                s += 2.0 * kmat[a - 1, b - 1] * ra * returns[t - b]
        if s < floor:
            s = floor
            n_floored += 1
        out[t] = s
    return n_floored


@numba.njit(cache=True, nogil=True)
def _simulate_loop(xi, sigma_inf2, leverage, kmat, floor, out_r, out_s2):
    n = xi.shape[0]
    q = kmat.shape[0]
    n_floored = 0
    for t in range(n):
        s = sigma_inf2
        amax = t if t < q else q
        for a in range(1, amax + 1):
            ra = out_r[t - a]
            s += leverage[a - 1] * ra
            s += kmat[a - 1, a - 1] * ra * ra
            for b in range(a + 1, amax + 1):
                s += 2.0 * kmat[a - 1, b - 1] * ra * out_r[t - b]
        if s < floor:
            s = floor
            n_floored += 1
        out_s2[t] = s
        out_r[t] = math.sqrt(s) * xi[t]
    return n_floored


def qarch_variance(
    model: QarchModel,
    history,
    *,
    floor_eps: float = DEFAULT_FLOOR_EPS,
    pad_short: bool = False,
) -> float:
    """One-step model variance given the most recent returns.

    ``history`` is in natural time order: its last element is the latest
    return (lag 1).  At least q returns are required unless ``pad_short``
    is set, in which case missing early lags are treated as zero.  A result
    below floor_eps * sigma_inf2 (possible for an indefinite fitted lag
    matrix) is floored there.
    """
    history = np.asarray(history, dtype=float)
    if history.ndim != 1:
        raise ValueError("history must be one-dimensional")
    if history.size < model.q and not pad_short:
        raise ValueError(
            f"history has {history.size} returns but the model needs {model.q}; "
            "pass pad_short=True to zero-pad the startup"
        )
    lagged = np.zeros(model.q)
    take = min(model.q, history.size)
    if take:
        lagged[:take] = history[::-1][:take]
    value = (
        model.sigma_inf2
        + float(model.leverage @ lagged)
        + float(lagged @ model.kmat @ lagged)
    )
    return max(value, floor_eps * model.sigma_inf2)


def filter_variance(
    model: QarchModel, returns, *, floor_eps: float = DEFAULT_FLOOR_EPS
):
    """Model variance at every bin of a return series, with zero-padded startup.

    Returns (sigma2 array aligned with ``returns``, number of floored bins).
    """
    returns = np.ascontiguousarray(returns, dtype=float)
    if returns.ndim != 1:
        raise ValueError("returns must be one-dimensional")
    out = np.empty_like(returns)
    n_floored = _filter_loop(
        returns, model.sigma_inf2, model.leverage, model.kmat,
        floor_eps * model.sigma_inf2, out,
    )
    return out, int(n_floored)


@dataclass(frozen=True)
class QarchSample:
    """Simulated returns with their model variances."""

    returns: np.ndarray
    sigma2: np.ndarray
    n_floored: int
    nu_dof: Optional[float]


def simulate_qarch(
    model: QarchModel,
    n: int,
    seed: int,
    *,
    nu_dof: Optional[float] = 8.0,
    burn_in: Optional[int] = None,
    floor_eps: float = DEFAULT_FLOOR_EPS,
) -> QarchSample:
    """Simulate the model with i.i.d. standardized residuals.

    Residuals are Student-t with ``nu_dof`` degrees of freedom scaled to unit
    variance (requires nu_dof > 2), or Gaussian when ``nu_dof`` is None.  The
    first ``burn_in`` bins (default 50*q) are simulated from zero-padded
    history and discarded.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not model.is_stationary():
        raise ValueError(
            f"feedback mass {model.trace():.3f} >= 1: no stationary regime to sample"
        )
    if burn_in is None:
        burn_in = 50 * model.q
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    rng = philox(seed, STREAM_QARCH)
    total = n + burn_in
    if nu_dof is None or math.isinf(nu_dof):
        xi = rng.standard_normal(total)
        nu_out = None
    else:
        if not (nu_dof > 2.0):
            raise ValueError(f"nu_dof must be > 2 for unit-variance residuals, got {nu_dof}")
        xi = rng.standard_t(nu_dof, total) * math.sqrt((nu_dof - 2.0) / nu_dof)
        nu_out = float(nu_dof)
    out_r = np.empty(total)
    out_s2 = np.empty(total)
    n_floored = _simulate_loop(
        xi, model.sigma_inf2, model.leverage, model.kmat,
        floor_eps * model.sigma_inf2, out_r, out_s2,
    )
    return QarchSample(
        returns=out_r[burn_in:], sigma2=out_s2[burn_in:],
        n_floored=int(n_floored), nu_dof=nu_out,
    )


# ---------------------------------------------------------------------------
# method-of-moments estimation


def _check_normalized(returns: np.ndarray) -> None:
    mean = float(returns.mean())
    var = float(returns.var())
    if abs(mean) > 0.01 or abs(var - 1.0) > 0.01:
        raise ValueError(
            f"calibration expects normalized input (zero mean, unit variance "
            f"within 1%); got mean {mean:.4g}, variance {var:.4g}"
        )


def _pair_indices(q: int):
    ii, jj = np.triu_indices(q)
    return ii, jj


def _feature_chunk(lagged: np.ndarray, ii, jj, with_leverage: bool) -> np.ndarray:
    """Feature rows [1, r_a r_b (a<=b), r_a] for a block of lagged histories."""
    m, q = lagged.shape
    n_pairs = ii.size
    p = 1 + n_pairs + (q if with_leverage else 0)
    x = np.empty((m, p))
    x[:, 0] = 1.0
    np.multiply(lagged[:, ii], lagged[:, jj], out=x[:, 1 : 1 + n_pairs])
    if with_leverage:
        x[:, 1 + n_pairs :] = lagged
    return x


def _lagged_view(returns: np.ndarray, q: int) -> np.ndarray:
    """lagged[i, a-1] = returns[q + i - a] for targets t = q + i."""
    windows = np.lib.stride_tricks.sliding_window_view(returns, q)[: returns.size - q]
    return windows[:, ::-1]


def _unpack_beta(beta: np.ndarray, q: int, ii, jj):
    """Split a coefficient vector into (sigma_inf2, kmat, leverage-or-None)."""
    n_pairs = ii.size
    kmat = np.zeros((q, q))
    pair_coefs = beta[1 : 1 + n_pairs]
    kmat[ii, jj] = pair_coefs
    kmat[jj, ii] = pair_coefs
    off = ii != jj
    kmat[ii[off], jj[off]] /= 2.0
    kmat[jj[off], ii[off]] /= 2.0
    lev = beta[1 + n_pairs :] if beta.size > 1 + n_pairs else None
    return float(beta[0]), kmat, lev


@dataclass(frozen=True)
class GmmFit:
    """Least-squares moment fit of the lag matrix.

    ``model`` carries the fitted matrix with the leverage row zeroed (the
    default contract of this model family); the fitted leverage row and all
    entrywise standard errors are reported alongside.  ``ridge_weight`` is
    nonzero when the normal equations needed regularization.
    """

    model: QarchModel
    sigma_inf2_stderr: float
    kmat_stderr: np.ndarray
    leverage_estimate: np.ndarray
    leverage_stderr: np.ndarray
    moment_residual_max: float
    residual_variance: float
    ridge_weight: float
    n_used: int
    n_diag_clamped: int


def gmm_estimate(
    returns,
    q: int,
    *,
    delta: float = 1.0,
    keep_leverage: bool = False,
    chunk: int = 65536,
) -> GmmFit:
    """Fit the lag matrix by least squares on the squared-return moments.

    Solves the normal equations of regressing r_t^2 on the constant, all lag
    pair products r_{t-a} r_{t-b} (a <= b <= q), and the single lags (the
    leverage row, reported but zeroed in the returned model unless
    ``keep_leverage``).  An ill-conditioned moment matrix triggers a ridge
    fallback with a warning.
    """
    returns = np.ascontiguousarray(returns, dtype=float)
    if returns.ndim != 1:
        raise ValueError("returns must be one-dimensional")
    if q < 1:
        raise ValueError("q must be >= 1")
    if returns.size < 50 * q * q:
        raise ValueError(
            f"need at least 50*q^2 = {50 * q * q} returns for a stable fit, "
            f"got {returns.size}"
        )
    _check_normalized(returns)

    ii, jj = _pair_indices(q)
    lagged = _lagged_view(returns, q)
    y_all = returns[q:] ** 2
    n_used = lagged.shape[0]
    p = 1 + ii.size + q
    gram = np.zeros((p, p))
    rhs = np.zeros(p)
    for lo in range(0, n_used, chunk):
        x = _feature_chunk(lagged[lo : lo + chunk], ii, jj, True)
        gram += x.T @ x
        rhs += x.T @ y_all[lo : lo + chunk]

    ridge = 0.0
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        ridge = 1e-8 * float(np.trace(gram)) / p
        warnings.warn(
            f"moment matrix ill-conditioned (cond={cond:.2e}); "
            f"ridge-regularized with weight {ridge:.3e}",
            stacklevel=2,
        )
        gram = gram + ridge * np.eye(p)
    beta = np.linalg.solve(gram, rhs)

    sse = 0.0
    meat = np.zeros((p, p))
    for lo in range(0, n_used, chunk):
        x = _feature_chunk(lagged[lo : lo + chunk], ii, jj, True)
        resid = y_all[lo : lo + chunk] - x @ beta
        sse += float(resid @ resid)
        xw = x * resid[:, None]
        meat += xw.T @ xw
    residual_variance = sse / max(n_used - p, 1)
    # sandwich covariance: squared-return residuals are strongly
    # heteroskedastic, so the homoskedastic formula understates the noise
    bread = np.linalg.inv(gram)
    cov = bread @ meat @ bread
    stderr = np.sqrt(np.diag(cov))

    moment_residual = (rhs - gram @ beta) / n_used
    sigma_inf2, kmat, lev = _unpack_beta(beta, q, ii, jj)
    _, kmat_stderr, lev_stderr = _unpack_beta(stderr, q, ii, jj)
    diag = np.diag(kmat)
    n_diag_clamped = int((diag < 0.0).sum())
    if n_diag_clamped:  # noise can push weak diagonal entries below the model domain
        kmat = kmat - np.diag(np.minimum(diag, 0.0))
    model = QarchModel(
        sigma_inf2=max(sigma_inf2, 0.0),
        leverage=lev if keep_leverage else np.zeros(q),
        kmat=0.5 * (kmat + kmat.T),
        q=q,
        delta=delta,
    )
    return GmmFit(
        model=model,
        sigma_inf2_stderr=float(stderr[0]),
        kmat_stderr=0.5 * (kmat_stderr + kmat_stderr.T),
        leverage_estimate=lev,
        leverage_stderr=lev_stderr,
        moment_residual_max=float(np.abs(moment_residual).max()),
        residual_variance=float(residual_variance),
        ridge_weight=float(ridge),
        n_used=n_used,
        n_diag_clamped=n_diag_clamped,
    )


# ---------------------------------------------------------------------------
# Student-t maximum likelihood


@numba.njit(cache=True, nogil=True)
def _mle_pass(returns, q, c0, kmat, leverage, nu, floor_eps, pair_index, grad):
    """Accumulate -LL (up to nu-only terms) and its gradient.

    grad layout: [c0, packed pairs (a<=b), slot for d/dnu pieces]; the last
    two slots receive sum log(1+u) and sum u/(1+u) so the caller can finish
    the nu derivative with digamma terms.  Returns (neg_sum, n_floored)
    where neg_sum = sum_t [0.5 log s_t + (nu+1)/2 log(1+u_t)].
    """
    n = returns.shape[0]
    n_pairs = pair_index.shape[0] * (pair_index.shape[0] + 1) // 2
    floor = floor_eps * c0
    total = 0.0
    sum_log1u = 0.0
    sum_frac = 0.0
    n_floored = 0
    for t in range(q, n):
        s = c0
        for a in range(1, q + 1):
            ra = returns[t - a]
            s += leverage[a - 1] * ra
            s += kmat[a - 1, a - 1] * ra * ra
            for b in range(a + 1, q + 1):
                s += 2.0 * kmat[a - 1, b - 1] * ra * returns[t - b]
        floored = s < floor
        if floored:
            s = floor
            n_floored += 1
        r2 = returns[t] * returns[t]
        u = r2 / ((nu - 2.0) * s)
        one_u = 1.0 + u
        total += 0.5 * math.log(s) + 0.5 * (nu + 1.0) * math.log(one_u)
        sum_log1u += math.log(one_u)
        sum_frac += u / one_u
        # d(-ll)/d sigma2 = 1/(2s) - (nu+1) u / (2 s (1+u))
        w = 0.5 / s - 0.5 * (nu + 1.0) * u / (s * one_u)
        if floored:
            grad[0] += w * floor_eps
        else:
            grad[0] += w
            for a in range(1, q + 1):
                ra = returns[t - a]
                grad[1 + pair_index[a - 1, a - 1]] += w * ra * ra
                for b in range(a + 1, q + 1):
                    grad[1 + pair_index[a - 1, b - 1]] += w * ra * returns[t - b]
    grad[1 + n_pairs] = sum_log1u
    grad[2 + n_pairs] = sum_frac
    return total, n_floored


@dataclass(frozen=True)
class MleFit:
    """Student-t maximum-likelihood refinement of a moment fit."""

    model: QarchModel
    nu_dof: float
    log_likelihood: float
    init_log_likelihood: float
    converged: bool
    n_floored: int
    n_iter: int


def _nu_constant(nu: float, n_obs: int) -> float:
    """Observation-count multiple of the residual-density normalization."""
    return n_obs * (
        math.lgamma(0.5 * (nu + 1.0))
        - math.lgamma(0.5 * nu)
        - 0.5 * math.log((nu - 2.0) * math.pi)
    )


def mle_student(
    returns,
    q: int,
    init: Union[QarchModel, GmmFit],
    *,
    floor_eps: float = DEFAULT_FLOOR_EPS,
    nu_init: float = 6.0,
    max_iter: int = 150,
) -> MleFit:
    """Maximize the standardized Student-t likelihood of the variance model.

    Optimizes the baseline variance, all lag-matrix entries, and the degrees
    of freedom (profiled through log(nu - 2) to keep residual variance
    finite); the leverage row stays fixed at the initial model's values.
    The returned fit never has lower likelihood than the initial model: if
    the optimizer fails to improve, the initial parameters are returned with
    ``converged=False``.
    """
    if isinstance(init, GmmFit):
        init = init.model
    if init.q != q:
        raise ValueError(f"init model has q={init.q}, expected {q}")
    returns = np.ascontiguousarray(returns, dtype=float)
    if returns.size < 50 * q * q:
        raise ValueError(
            f"need at least 50*q^2 = {50 * q * q} returns for a stable fit, "
            f"got {returns.size}"
        )
    _check_normalized(returns)

    ii, jj = _pair_indices(q)
    n_pairs = ii.size
    pair_index = np.zeros((q, q), dtype=np.int64)
    pair_index[ii, jj] = np.arange(n_pairs)
    pair_index[jj, ii] = pair_index[ii, jj]
    n_obs = returns.size - q
    leverage = init.leverage.copy()

    def pack(model: QarchModel, nu: float) -> np.ndarray:
        theta = np.empty(1 + n_pairs + 1)
        theta[0] = max(model.sigma_inf2, 1e-10)
        packed = model.kmat[ii, jj].copy()
        off = ii != jj
        packed[off] *= 2.0
        theta[1 : 1 + n_pairs] = packed
        theta[-1] = math.log(nu - 2.0)
        return theta

    def unpack(theta: np.ndarray):
        c0 = float(theta[0])
        kmat = np.zeros((q, q))
        kmat[ii, jj] = theta[1 : 1 + n_pairs]
        kmat[jj, ii] = theta[1 : 1 + n_pairs]
        off = ii != jj
        kmat[ii[off], jj[off]] /= 2.0
        kmat[jj[off], ii[off]] /= 2.0
        nu = 2.0 + math.exp(float(theta[-1]))
        return c0, kmat, nu

    state = {"n_floored": 0}

    def neg_ll_and_grad(theta: np.ndarray):
        c0, kmat, nu = unpack(theta)
        grad = np.zeros(1 + n_pairs + 2)
        core, n_floored = _mle_pass(
            returns, q, c0, kmat, leverage, nu, floor_eps, pair_index, grad
        )
        state["n_floored"] = int(n_floored)
        sum_log1u = grad[1 + n_pairs]
        sum_frac = grad[2 + n_pairs]
        nll = core - _nu_constant(nu, n_obs)
        # d nll/d nu, then chain through theta[-1] = log(nu - 2)
        dnu = (
            -0.5 * n_obs * (special.digamma(0.5 * (nu + 1.0)) - special.digamma(0.5 * nu))
            + 0.5 * n_obs / (nu - 2.0)
            + 0.5 * sum_log1u
            - 0.5 * (nu + 1.0) / (nu - 2.0) * sum_frac
        )
        g = np.empty_like(theta)
        g[: 1 + n_pairs] = grad[: 1 + n_pairs]
        g[-1] = dnu * (nu - 2.0)
        return nll, g

    theta0 = pack(init, nu_init)
    nll0, _ = neg_ll_and_grad(theta0)
    # diagonal lag coefficients are bounded below at 0 (model domain)
    bounds = (
        [(1e-10, None)]
        + [(0.0, None) if a == b else (None, None) for a, b in zip(ii, jj)]
        + [(math.log(0.1), math.log(500.0))]
    )
    result = optimize.minimize(
        neg_ll_and_grad,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iter, "maxfun": 4 * max_iter},
    )
    converged = bool(result.success)
    if not converged:
        warnings.warn(
            f"likelihood optimizer stopped early ({result.message}); "
            "returning the best point found",
            stacklevel=2,
        )
    if result.fun <= nll0:
        theta_best, nll_best = result.x, float(result.fun)
    else:  # optimizer contract: never return worse than the start
        theta_best, nll_best, converged = theta0, float(nll0), False
    neg_ll_and_grad(theta_best)  # refresh floor count at the returned point
    c0, kmat, nu = unpack(theta_best)
    model = QarchModel(
        sigma_inf2=c0, leverage=leverage, kmat=kmat, q=q, delta=init.delta
    )
    return MleFit(
        model=model,
        nu_dof=float(nu),
        log_likelihood=-nll_best,
        init_log_likelihood=-float(nll0),
        converged=converged,
        n_floored=state["n_floored"],
        n_iter=int(result.nit),
    )


# ---------------------------------------------------------------------------
# rank-one + diagonal decomposition


@dataclass(frozen=True)
class KernelFit:
    """Decomposition of a lag matrix into diagonal plus rank-one parts.

    ``phi`` is the diagonal lag profile, ``k`` the rank-one one (determined
    up to sign, reported nonnegative-sum with stray negatives clipped);
    ``g``/``alpha`` and ``k0``/``omega`` are filled by the parametric fits
    (power law for phi, exponential for k) together with their log-space
    R^2 and excluded-entry counts.
    """

    phi: np.ndarray
    k: np.ndarray
    frobenius_residual: float
    converged: bool
    n_iter: int
    g: Optional[float] = None
    alpha: Optional[float] = None
    r2_phi: Optional[float] = None
    n_excluded_phi: Optional[int] = None
    k0: Optional[float] = None
    omega: Optional[float] = None
    r2_k: Optional[float] = None
    n_excluded_k: Optional[int] = None


def _residual_norm(kmat: np.ndarray, phi: np.ndarray, k: np.ndarray) -> float:
    return float(np.linalg.norm(kmat - np.diag(phi) - np.outer(k, k)))


def _alternate(kmat: np.ndarray, k: np.ndarray, tol: float, max_iter: int):
    scale = max(float(np.linalg.norm(kmat)), 1e-300)
    phi = np.clip(np.diag(kmat) - k**2, 0.0, None)
    res = _residual_norm(kmat, phi, k)
    for it in range(max_iter):
        # best rank-one given phi: top eigenpair of the diagonal-corrected matrix
        w, v = np.linalg.eigh(kmat - np.diag(phi))
        lam = w[-1]
        k_new = math.sqrt(max(lam, 0.0)) * v[:, -1]
        phi_new = np.clip(np.diag(kmat) - k_new**2, 0.0, None)
        res_new = _residual_norm(kmat, phi_new, k_new)
        assert res_new <= res + 1e-12 * scale, "alternating step increased the residual"
        done = res_new <= 1e-14 * scale or abs(res - res_new) <= tol * max(res, 1e-300)
        phi, k, res = phi_new, k_new, res_new
        if done:
            return phi, k, res, True, it + 1
    return phi, k, res, False, max_iter


def rank_one_diag_fit(
    kmat, *, tol: float = 1e-10, max_iter: int = 500
) -> KernelFit:
    """Best diagonal + rank-one decomposition of a symmetric lag matrix.

    Alternates two exact block minimizations (the diagonal given the rank-one
    part, clamped nonnegative; the rank-one part given the diagonal, from the
    top eigenpair) from five deterministic starts, keeping the lowest
    Frobenius residual.  Descent is monotone by construction and asserted.
    """
    kmat = np.asarray(kmat, dtype=float)
    if kmat.ndim != 2 or kmat.shape[0] != kmat.shape[1]:
        raise ValueError(f"kmat must be square, got {kmat.shape}")
    if not np.allclose(kmat, kmat.T, rtol=0.0, atol=1e-10 * max(1.0, float(np.abs(kmat).max()))):
        raise ValueError("kmat must be symmetric")
    q = kmat.shape[0]
    kmat = 0.5 * (kmat + kmat.T)

    starts = [np.zeros(q)]
    w, v = np.linalg.eigh(kmat)
    starts.append(math.sqrt(max(w[-1], 0.0)) * v[:, -1])
    hollow = kmat - np.diag(np.diag(kmat))
    w2, v2 = np.linalg.eigh(hollow)
    starts.append(math.sqrt(max(w2[-1], 0.0)) * v2[:, -1])
    scale = math.sqrt(max(float(np.abs(kmat).max()), 1e-300))
    for seed in (3, 4):
        starts.append(scale * philox(seed, STREAM_QARCH).standard_normal(q))

    best = None
    for start in starts:
        phi, k, res, converged, n_iter = _alternate(kmat, start, tol, max_iter)
        if k.sum() < 0.0:
            k = -k
        if np.any(k < 0.0):
            # profiles are nonnegative by contract: clip strays and
            # re-optimize the diagonal for the clipped rank-one part
            k = np.clip(k, 0.0, None)
            phi = np.clip(np.diag(kmat) - k**2, 0.0, None)
            res = _residual_norm(kmat, phi, k)
        if best is None or res < best[2]:
            best = (phi, k, res, converged, n_iter)
    # pure-diagonal candidate: the best feasible fit with no rank-one part
    phi0 = np.clip(np.diag(kmat), 0.0, None)
    res0 = _residual_norm(kmat, phi0, np.zeros(q))
    if res0 < best[2]:
        best = (phi0, np.zeros(q), res0, True, 0)
    phi, k, res, converged, n_iter = best
    return KernelFit(
        phi=phi, k=k, frobenius_residual=res, converged=converged, n_iter=n_iter
    )


def _loglog_fit(y: np.ndarray, x_log: np.ndarray):
    """Least squares of log(y) on x_log over positive entries."""
    mask = y > 0.0
    n_excluded = int((~mask).sum())
    if mask.sum() < 2:
        return None, None, None, n_excluded
    ylog = np.log(y[mask])
    xs = x_log[mask]
    slope, intercept = np.polyfit(xs, ylog, 1)
    fitted = slope * xs + intercept
    sst = float(np.sum((ylog - ylog.mean()) ** 2))
    sse = float(np.sum((ylog - fitted) ** 2))
    r2 = 1.0 - sse / sst if sst > 0.0 else (1.0 if sse < 1e-30 else 0.0)
    return float(slope), float(intercept), float(r2), n_excluded


def parametric_fit(fit: KernelFit) -> KernelFit:
    """Fit closed forms to both lag profiles of a decomposition.

    The diagonal profile is fit as g * lag^-alpha and the rank-one profile
    as k0 * exp(-omega * lag), both by least squares in log space over the
    positive entries (nonpositive ones are excluded and counted).  Returns a
    copy of ``fit`` with the parameters and log-space R^2 filled in.
    """
    q = fit.phi.size
    lags = np.arange(1, q + 1, dtype=float)
    slope_p, icept_p, r2_p, nex_p = _loglog_fit(fit.phi, np.log(lags))
    slope_k, icept_k, r2_k, nex_k = _loglog_fit(fit.k, lags)
    updates = {"n_excluded_phi": nex_p, "n_excluded_k": nex_k}
    if slope_p is not None:
        updates.update(g=math.exp(icept_p), alpha=-slope_p, r2_phi=r2_p)
    if slope_k is not None:
        updates.update(k0=math.exp(icept_k), omega=-slope_k, r2_k=r2_k)
    return replace(fit, **updates)


def endogeneity(obj: Union[QarchModel, KernelFit], q: Optional[int] = None) -> dict:
    """Feedback-mass split {sum_phi, sum_k2, trace} over lags 1..q.

    For a decomposition with parametric fits, the sums use the fitted closed
    forms (so q may exceed the fitted lag range); for one without, the raw
    profile vectors; for a model, its lag matrix is decomposed first.  The
    result is invariant under flipping the sign of the rank-one profile.
    """
    if isinstance(obj, QarchModel):
        fit = rank_one_diag_fit(obj.kmat)
        if q is None:
            q = obj.q
    else:
        fit = obj
        if q is None:
            q = fit.phi.size
    if q < 1:
        raise ValueError("q must be >= 1")
    lags = np.arange(1, q + 1, dtype=float)
    if fit.g is not None and fit.k0 is not None:
        sum_phi = float(np.sum(fit.g * lags ** -fit.alpha))
        sum_k2 = float(np.sum((fit.k0 * np.exp(-fit.omega * lags)) ** 2))
    else:
        if q > fit.phi.size:
            raise ValueError(
                f"q={q} exceeds the fitted lag range {fit.phi.size}; "
                "run parametric_fit first to extrapolate"
            )
        sum_phi = float(np.sum(fit.phi[:q]))
        sum_k2 = float(np.sum(fit.k[:q] ** 2))
    return {"sum_phi": sum_phi, "sum_k2": sum_k2, "trace": sum_phi + sum_k2}


# ---------------------------------------------------------------------------
# CSV blocks


def write_qarch_csv(model: QarchModel, fp: IO[str]) -> None:
    fp.write(f"# q={model.q!r} delta={model.delta!r}\n")
    fp.write(f"sigma_inf2,{float(model.sigma_inf2)!r}\n")
    fp.write("leverage," + ",".join(f"{float(x)!r}" for x in model.leverage) + "\n")
    fp.write("kmat\n")
    for row in model.kmat:
        fp.write(",".join(f"{float(x)!r}" for x in row) + "\n")


def read_qarch_csv(fp: IO[str]) -> QarchModel:
    header = fp.readline().strip()
    if not header.startswith("# "):
        raise ValueError("missing header line")
    meta = dict(part.split("=", 1) for part in header[2:].split())
    q = int(meta["q"])
    delta = float(meta["delta"])
    line = fp.readline().strip().split(",")
    if line[0] != "sigma_inf2":
        raise ValueError("expected sigma_inf2 line")
    sigma_inf2 = float(line[1])
    line = fp.readline().strip().split(",")
    if line[0] != "leverage":
        raise ValueError("expected leverage line")
    leverage = np.array([float(x) for x in line[1:]])
    if fp.readline().strip() != "kmat":
        raise ValueError("expected kmat block")
    kmat = np.array(
        [[float(x) for x in fp.readline().strip().split(",")] for _ in range(q)]
    )
    return QarchModel(sigma_inf2=sigma_inf2, leverage=leverage, kmat=kmat, q=q, delta=delta)


def write_kernel_fit_csv(fit: KernelFit, fp: IO[str]) -> None:
    fp.write(f"# q={fit.phi.size!r}\n")
    fp.write("phi," + ",".join(f"{float(x)!r}" for x in fit.phi) + "\n")
    fp.write("k," + ",".join(f"{float(x)!r}" for x in fit.k) + "\n")
    fp.write(f"frobenius_residual,{fit.frobenius_residual!r}\n")
    for name in ("g", "alpha", "r2_phi", "k0", "omega", "r2_k"):
        value = getattr(fit, name)
        if value is not None:
            fp.write(f"{name},{float(value)!r}\n")
