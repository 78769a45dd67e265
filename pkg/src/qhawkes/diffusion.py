"""Two-dimensional limit diffusion of the event-rate dynamics.

In the many-events scaling limit the pair (smooth memory H, signed memory Z)
follows

    dH = [-(1 - n_h) * H + n_h * (lambda_inf + Z^2)] * beta_bar * dt
    dZ = -omega_bar * Z * dt + sqrt(2 * n_z * omega_bar) * sqrt(V) * dW

with V = psi^2 * (lambda_inf + H + Z^2) the reported squared-volatility scale.
H has no Brownian part, so it is advanced by exact exponential integration of
its linear ODE (which preserves H >= 0 step by step); Z uses Euler-Maruyama
with the square-root argument clamped at lambda_inf (the clamp only guards
rounding — V >= lambda_inf holds whenever H >= 0).

The timescale-separation parameter chi = 2*omega_bar/beta_bar controls the
conditional feedback ratio lim E[H | Z^2 = y]/y as y grows;
:func:`feedback_ratio_mc` measures it from long trajectories by conditional
means above high quantiles of Z^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Optional

import numba
import numpy as np

from ._rng import STREAM_DIFFUSION, STREAM_PRICE, BlockBuffer, philox
from .errors import NumericalError

__all__ = [
    "DiffusionParams",
    "DiffusionPath",
    "FeedbackRatioEstimate",
    "integrate",
    "sample_stationary",
    "feedback_ratio_mc",
    "price_path",
    "write_path_csv",
    "write_samples_csv",
]

_NEED_NORMALS = 1
_NEGATIVE_H = 2


@dataclass(frozen=True)
class DiffusionParams:
    """Parameters of the limit diffusion.

    ``n_h`` and ``n_z`` are the feedback masses of the smooth and signed
    memory channels, ``beta_bar`` and ``omega_bar`` their relaxation rates,
    ``lambda_inf`` the baseline intensity, and ``psi`` the jump scale entering
    the reported V = psi^2 * (lambda_inf + H + Z^2).
    """

    n_h: float
    beta_bar: float
    n_z: float
    omega_bar: float
    lambda_inf: float
    psi: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.n_h < 1.0):
            raise ValueError(f"n_h must be in [0, 1), got {self.n_h}")
        if not (0.0 <= self.n_z < 1.0):
            raise ValueError(f"n_z must be in [0, 1), got {self.n_z}")
        if not (self.n_h + self.n_z < 1.0):
            raise ValueError(f"total feedback mass must be < 1, got {self.n_h + self.n_z}")
        if not (self.beta_bar > 0.0 and self.omega_bar > 0.0):
            raise ValueError("beta_bar and omega_bar must be > 0")
        if not (self.lambda_inf >= 0.0 and math.isfinite(self.lambda_inf)):
            raise ValueError(f"lambda_inf must be finite and >= 0, got {self.lambda_inf}")
        if not (self.psi > 0.0):
            raise ValueError(f"psi must be > 0, got {self.psi}")

    @property
    def chi(self) -> float:
        """Timescale ratio 2*omega_bar/beta_bar of the two memory channels."""
        return 2.0 * self.omega_bar / self.beta_bar

    @property
    def noise_scale(self) -> float:
        """Diffusion coefficient sqrt(2*n_z*omega_bar) of the signed memory."""
        return math.sqrt(2.0 * self.n_z * self.omega_bar)

    @property
    def trace(self) -> float:
        return self.n_h + self.n_z

    def mean_v(self) -> float:
        """Stationary mean of V from the first-moment balance."""
        return self.psi**2 * self.lambda_inf / (1.0 - self.trace)

    def relaxation_time(self) -> float:
        """Timescale of the slower memory channel."""
        rates = [self.omega_bar]
        if self.n_h > 0.0:
            rates.append((1.0 - self.n_h) * self.beta_bar)
        return 1.0 / min(rates)


@dataclass(frozen=True)
class DiffusionPath:
    """A trajectory on a uniform grid, with V and optionally a price path."""

    times: np.ndarray
    h: np.ndarray
    z: np.ndarray
    v: np.ndarray
    params: DiffusionParams
    p: Optional[np.ndarray] = None


@numba.njit(cache=True, nogil=True)
def _step_record(state, n_steps, eh, src_fac, lam, om_dt, sig_dt, normals, pos,
                 stride, phase, out_h, out_z, filled):
    """Advance up to n_steps, recording every stride-th state.

    Returns (status, pos, steps_done, phase, filled); status 1 means the
    normals block is exhausted, 2 that H went negative (cannot happen for
    valid parameters; defensive).
    """
    h = state[0]
    z = state[1]
    steps = 0
    while steps < n_steps:
        if pos >= normals.shape[0]:
            state[0] = h
            state[1] = z
            return (1, pos, steps, phase, filled)
        y = z * z
        v = lam + h + y
        if v < lam:
            v = lam
        z_new = z - om_dt * z + sig_dt * math.sqrt(v) * normals[pos]
        pos += 1
        h = h * eh + src_fac * (lam + y)
        if h < 0.0:
            state[0] = h
            state[1] = z
            return (2, pos, steps, phase, filled)
        z = z_new
        steps += 1
        phase += 1
        if stride > 0 and phase >= stride:
            phase = 0
            out_h[filled] = h
            out_z[filled] = z
            filled += 1
            if filled >= out_h.shape[0]:
                state[0] = h
                state[1] = z
                return (0, pos, steps, phase, filled)
    state[0] = h
    state[1] = z
    return (0, pos, steps, phase, filled)


@numba.njit(cache=True, nogil=True)
def _step_accumulate(state, n_steps, step0, batch_len, eh, src_fac, lam, om_dt,
                     sig_dt, thresholds, acc, normals, pos):
    """Advance up to n_steps accumulating conditional sums above thresholds.

    ``thresholds`` is ascending; for each level k and time batch b, ``acc[k, b]``
    collects (count, sum H, sum Z^2, sum H/(lambda_inf + Z^2)) over steps with
    Z^2 above the level.  The shifted denominator makes the ratio exactly the
    feedback coefficient when the smooth memory is slaved to the signed one
    (H proportional to lambda_inf + Z^2), removing the 1/threshold bias of a
    bare H/Z^2.
    Returns (status, pos, steps_done).
    """
    h = state[0]
    z = state[1]
    steps = 0
    n_batches = acc.shape[1]
    while steps < n_steps:
        if pos >= normals.shape[0]:
            state[0] = h
            state[1] = z
            return (1, pos, steps)
        y = z * z
        v = lam + h + y
        if v < lam:
            v = lam
        z_new = z - om_dt * z + sig_dt * math.sqrt(v) * normals[pos]
        pos += 1
        h = h * eh + src_fac * (lam + y)
        if h < 0.0:
            state[0] = h
            state[1] = z
            return (2, pos, steps)
        z = z_new
        y = z * z
        if y > thresholds[0]:
            b = (step0 + steps) // batch_len
            if b >= n_batches:
                b = n_batches - 1
            for k in range(thresholds.shape[0]):
                if y > thresholds[k]:
                    acc[k, b, 0] += 1.0
                    acc[k, b, 1] += h
                    acc[k, b, 2] += y
                    acc[k, b, 3] += h / (lam + y)
        steps += 1
    state[0] = h
    state[1] = z
    return (0, pos, steps)


def _coefficients(params: DiffusionParams, dt: float):
    a = (1.0 - params.n_h) * params.beta_bar
    eh = math.exp(-a * dt)
    src_fac = params.n_h * params.beta_bar / a * (1.0 - eh)
    om_dt = params.omega_bar * dt
    sig_dt = params.noise_scale * math.sqrt(dt)
    return eh, src_fac, om_dt, sig_dt


def _check_dt(params: DiffusionParams, dt: float) -> None:
    if not (dt > 0.0):
        raise ValueError(f"dt must be > 0, got {dt}")
    if dt * max(params.beta_bar, params.omega_bar) >= 0.1:
        raise ValueError(
            f"dt={dt} too coarse: need dt*max(beta_bar, omega_bar) < 0.1, "
            f"got {dt * max(params.beta_bar, params.omega_bar):.3g}"
        )


def _default_dt(params: DiffusionParams) -> float:
    return 0.01 / max(params.beta_bar, params.omega_bar)


def _drive_record(params, dt, n_steps, buf, state, stride, out_h, out_z):
    """Run _step_record across block refills until n_steps are consumed."""
    eh, src_fac, om_dt, sig_dt = _coefficients(params, dt)
    lam = params.lambda_inf
    done = 0
    phase = 0
    filled = 0
    while done < n_steps:
        status, pos, steps, phase, filled = _step_record(
            state, n_steps - done, eh, src_fac, lam, om_dt, sig_dt,
            buf.buf, buf.pos, stride, phase, out_h, out_z, filled,
        )
        buf.pos = pos
        done += steps
        if status == _NEED_NORMALS:
            buf.refill()
        elif status == _NEGATIVE_H:
            raise NumericalError("smooth memory went negative; invalid state")
        elif stride > 0 and filled >= out_h.shape[0]:
            break
    return filled


def integrate(
    params: DiffusionParams,
    dt: float,
    horizon: float,
    seed: int,
    *,
    h0: float = 0.0,
    z0: float = 0.0,
    store_every: int = 1,
) -> DiffusionPath:
    """Integrate the diffusion over [0, horizon] on a fixed grid.

    Stores every ``store_every``-th step (all of them by default); the first
    row is the initial state.  The number of steps is rounded to a whole
    number of storage strides.
    """
    _check_dt(params, dt)
    if not (horizon > 0.0):
        raise ValueError(f"horizon must be > 0, got {horizon}")
    if store_every < 1:
        raise ValueError("store_every must be >= 1")
    if h0 < 0.0:
        raise ValueError("h0 must be >= 0")
    n_out = int(round(horizon / dt)) // store_every
    if n_out < 1:
        raise ValueError("horizon shorter than one storage stride")
    out_h = np.empty(n_out)
    out_z = np.empty(n_out)
    state = np.array([h0, z0], dtype=float)
    buf = BlockBuffer(seed, STREAM_DIFFUSION, kind="normal")
    filled = _drive_record(params, dt, n_out * store_every, buf, state, store_every, out_h, out_z)
    assert filled == n_out
    times = np.concatenate([[0.0], dt * store_every * np.arange(1, n_out + 1)])
    h = np.concatenate([[h0], out_h])
    z = np.concatenate([[z0], out_z])
    v = params.psi**2 * (params.lambda_inf + h + z * z)
    if np.any(h < 0.0):
        raise NumericalError("smooth memory went negative; invalid state")
    assert v.min() >= params.psi**2 * params.lambda_inf * (1.0 - 1e-15)
    return DiffusionPath(times=times, h=h, z=z, v=v, params=params)


def sample_stationary(
    params: DiffusionParams,
    n_samples: int,
    burn_in_time: Optional[float] = None,
    thinning_interval: Optional[float] = None,
    seed: int = 0,
    *,
    dt: Optional[float] = None,
) -> np.ndarray:
    """Decorrelated draws of V from the stationary law.

    Defaults: dt = 0.01/max(rate), burn-in 50 relaxation times, thinning 5
    relaxation times; a burn-in below 20 relaxation times is rejected.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if dt is None:
        dt = _default_dt(params)
    _check_dt(params, dt)
    relax = params.relaxation_time()
    if burn_in_time is None:
        burn_in_time = 50.0 * relax
    if thinning_interval is None:
        thinning_interval = 5.0 * relax
    if burn_in_time < 20.0 * relax:
        raise ValueError(
            f"burn_in_time {burn_in_time:.3g} below 20 relaxation times ({20.0 * relax:.3g})"
        )
    if thinning_interval <= 0.0:
        raise ValueError("thinning_interval must be > 0")
    thin_steps = max(1, int(round(thinning_interval / dt)))
    burn_steps = int(math.ceil(burn_in_time / dt))
    # start at the deterministic fixed point of the smooth memory
    state = np.array([params.n_h * params.lambda_inf / (1.0 - params.trace), 0.0])
    buf = BlockBuffer(seed, STREAM_DIFFUSION, kind="normal")
    sink = np.empty(0)
    _drive_record(params, dt, burn_steps, buf, state, 0, sink, sink)
    out_h = np.empty(n_samples)
    out_z = np.empty(n_samples)
    filled = _drive_record(params, dt, n_samples * thin_steps, buf, state, thin_steps, out_h, out_z)
    assert filled == n_samples
    return params.psi**2 * (params.lambda_inf + out_h + out_z * out_z)


@dataclass(frozen=True)
class FeedbackRatioEstimate:
    """Monte-Carlo estimate of the conditional feedback ratio.

    ``mode`` is 'conditional_ratio' (mean of H/(lambda_inf + Z^2) above the
    main threshold; used when chi <= 1, where the smooth memory is slaved to
    the signed one and that ratio equals the limit pointwise) or 'two_threshold'
    (slope of E[H | Z^2 > u] against E[Z^2 | Z^2 > u] between two thresholds,
    cancelling the additive offset that dominates when chi > 1).  ``stderr``
    is a delete-one-batch jackknife over time batches; ``sensitivity`` is the
    shift observed when the thresholds are moved one notch, reported because
    the threshold choice is a free parameter.
    """

    ratio: float
    stderr: float
    mode: str
    thresholds: tuple
    n_exceed: int
    sensitivity: float
    total_steps: int
    dt: float


def _jackknife(theta_fn, acc: np.ndarray):
    """Jackknife mean/SE of a statistic of column-summed accumulators."""
    n_batches = acc.shape[1]
    total = acc.sum(axis=1)
    full = theta_fn(total)
    reps = []
    for b in range(n_batches):
        t = total - acc[:, b, :]
        val = theta_fn(t)
        if math.isfinite(val):
            reps.append(val)
    if len(reps) < 8:
        return full, float("nan")
    reps = np.array(reps)
    m = len(reps)
    se = math.sqrt((m - 1) / m * np.sum((reps - reps.mean()) ** 2))
    return full, float(se)


def feedback_ratio_mc(
    params: DiffusionParams,
    y_threshold_quantile: float = 0.999,
    *,
    total_time: Optional[float] = None,
    dt: Optional[float] = None,
    seed: int = 0,
    n_batches: int = 64,
) -> FeedbackRatioEstimate:
    """Estimate lim E[H | Z^2 = y]/y by conditional means on a long run.

    Two passes over the same seed: the first collects thinned Z^2 samples to
    place three quantile thresholds, the second replays the trajectory
    accumulating conditional sums above each.  Mode selection and error bars
    are described on :class:`FeedbackRatioEstimate`.
    """
    if not (params.n_h > 0.0):
        raise ValueError("feedback-ratio estimation requires n_h > 0")
    if not (0.99 <= y_threshold_quantile < 1.0):
        raise ValueError(f"threshold quantile must be >= 0.99, got {y_threshold_quantile}")
    if dt is None:
        dt = _default_dt(params)
    _check_dt(params, dt)
    relax = params.relaxation_time()
    if total_time is None:
        total_time = 1.0e4 * relax
    total_steps = int(math.ceil(total_time / dt))
    if total_steps < 1000 * n_batches:
        raise ValueError("total_time too short for batched error estimation")
    burn_steps = int(math.ceil(50.0 * relax / dt))
    h_star = params.n_h * params.lambda_inf / (1.0 - params.trace)

    # pass 1: thresholds from thinned Z^2 samples over a prefix of the run
    prefix_steps = max(total_steps // 8, min(total_steps, int(2000.0 * relax / dt)))
    n_thin = min(1_500_000, prefix_steps)
    stride = max(1, prefix_steps // n_thin)
    n_rec = prefix_steps // stride
    state = np.array([h_star, 0.0])
    buf = BlockBuffer(seed, STREAM_DIFFUSION, kind="normal")
    sink = np.empty(0)
    _drive_record(params, dt, burn_steps, buf, state, 0, sink, sink)
    rec_h = np.empty(n_rec)
    rec_z = np.empty(n_rec)
    filled = _drive_record(params, dt, n_rec * stride, buf, state, stride, rec_h, rec_z)
    y_samples = rec_z[:filled] ** 2
    q = y_threshold_quantile
    levels = (1.0 - 2.0 * (1.0 - q), q, 1.0 - (1.0 - q) / 8.0)
    thresholds = np.quantile(y_samples, levels)
    if not np.all(np.diff(thresholds) > 0.0):
        raise NumericalError("degenerate thresholds: Z^2 quantiles not distinct")

    # pass 2: replay from the same seed and accumulate conditional sums
    state = np.array([h_star, 0.0])
    buf = BlockBuffer(seed, STREAM_DIFFUSION, kind="normal")
    _drive_record(params, dt, burn_steps, buf, state, 0, sink, sink)
    acc = np.zeros((3, n_batches, 4))
    batch_len = max(1, total_steps // n_batches)
    eh, src_fac, om_dt, sig_dt = _coefficients(params, dt)
    done = 0
    while done < total_steps:
        status, pos, steps = _step_accumulate(
            state, total_steps - done, done, batch_len, eh, src_fac,
            params.lambda_inf, om_dt, sig_dt, thresholds, acc, buf.buf, buf.pos,
        )
        buf.pos = pos
        done += steps
        if status == _NEED_NORMALS:
            buf.refill()
        elif status == _NEGATIVE_H:
            raise NumericalError("smooth memory went negative; invalid state")

    n_exceed = int(acc[1, :, 0].sum())
    if n_exceed < 200:
        raise NumericalError(
            f"only {n_exceed} exceedances above the main threshold; "
            "increase total_time or lower the quantile"
        )

    def ratio_above(level):
        def theta(total):
            return total[level, 3] / total[level, 0] if total[level, 0] > 0 else float("nan")
        return theta

    def slope_between(lo, hi):
        def theta(total):
            if total[lo, 0] <= 0 or total[hi, 0] <= 0:
                return float("nan")
            mh_lo, my_lo = total[lo, 1] / total[lo, 0], total[lo, 2] / total[lo, 0]
            mh_hi, my_hi = total[hi, 1] / total[hi, 0], total[hi, 2] / total[hi, 0]
            if my_hi <= my_lo:
                return float("nan")
            return (mh_hi - mh_lo) / (my_hi - my_lo)
        return theta

    if params.chi <= 1.0:
        mode = "conditional_ratio"
        value, se = _jackknife(ratio_above(1), acc)
        alt0, _ = _jackknife(ratio_above(0), acc)
        alt2, _ = _jackknife(ratio_above(2), acc)
        sensitivity = max(abs(alt0 - value), abs(alt2 - value))
    else:
        mode = "two_threshold"
        value, se = _jackknife(slope_between(1, 2), acc)
        alt, _ = _jackknife(slope_between(0, 1), acc)
        sensitivity = abs(alt - value)
    return FeedbackRatioEstimate(
        ratio=float(value), stderr=float(se), mode=mode,
        thresholds=tuple(float(u) for u in thresholds), n_exceed=n_exceed,
        sensitivity=float(sensitivity), total_steps=total_steps, dt=float(dt),
    )


def price_path(path: DiffusionPath, seed: int) -> np.ndarray:
    """Cumulative price on the path's grid: increments are N(0, v*dt)."""
    times, v = path.times, path.v
    if times.size < 2:
        raise ValueError("path needs at least two grid points")
    xi = philox(seed, STREAM_PRICE).standard_normal(times.size - 1)
    incr = np.sqrt(v[:-1] * np.diff(times)) * xi
    return np.concatenate([[0.0], np.cumsum(incr)])


# ---------------------------------------------------------------------------
# CSV export


def _params_header(params: DiffusionParams) -> str:
    return (
        f"# n_h={params.n_h!r} beta_bar={params.beta_bar!r} n_z={params.n_z!r} "
        f"omega_bar={params.omega_bar!r} lambda_inf={params.lambda_inf!r} psi={params.psi!r}"
    )


def write_path_csv(path: DiffusionPath, fp: IO[str]) -> None:
    fp.write(_params_header(path.params) + "\n")
    if path.p is None:
        fp.write("t,h,z,v\n")
        for t, h, z, v in zip(path.times, path.h, path.z, path.v):
            fp.write(f"{float(t)!r},{float(h)!r},{float(z)!r},{float(v)!r}\n")
    else:
        fp.write("t,h,z,v,p\n")
        for t, h, z, v, p in zip(path.times, path.h, path.z, path.v, path.p):
            fp.write(f"{float(t)!r},{float(h)!r},{float(z)!r},{float(v)!r},{float(p)!r}\n")


def write_samples_csv(values: np.ndarray, params: DiffusionParams, fp: IO[str]) -> None:
    fp.write(_params_header(params) + "\n")
    fp.write("v\n")
    for x in np.asarray(values, dtype=float):
        fp.write(f"{float(x)!r}\n")
