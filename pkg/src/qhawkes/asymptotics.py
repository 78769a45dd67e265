"""Closed-form asymptotics of the quadratic-feedback intensity model.

Four groups of results, all analytic:

- :func:`phase_exponents`: the piecewise table mapping the decay exponents of
  the quadratic kernel (diagonal ~ t^-(1+epsilon), off-diagonal rays ~
  t^-(2*delta)) to the decay exponents of the rate autocovariance and of the
  rate/return-pair covariance, away from and at the stability boundary.
- :func:`stationary_density_nohawkes`: the exact stationary density of the
  squared-volatility scale V for the limit diffusion without the smooth
  memory channel (n_h = 0), supported on V > psi^2 * lambda_inf with a
  power-law tail of exponent 3/2 + 1/(2*n_z).
- :func:`feedback_ratio`: the conditional feedback ratio
  lim E[H | Z^2 = y]/y of the limit diffusion in every tractable regime of
  the timescale ratio chi = 2*omega_bar/beta_bar, plus a Monte-Carlo
  delegate for intermediate regimes.
- :func:`tail_exponents` / :func:`gaussian_scaling_coeff`: the volatility and
  return tail exponents implied by a feedback ratio, and the quadratic
  coefficient governing the conditional spread of the smooth memory.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .diffusion import DiffusionParams, feedback_ratio_mc

__all__ = [
    "PhaseExponents",
    "TailExponents",
    "phase_exponents",
    "stationary_density_nohawkes",
    "stationary_cdf_nohawkes",
    "feedback_ratio",
    "tail_exponents",
    "gaussian_scaling_coeff",
]

FEEDBACK_METHODS = (
    "chi_zero_order0",
    "chi_small_order1",
    "chi_large",
    "nz_small_quadratic",
    "monte_carlo",
)


# ---------------------------------------------------------------------------
# phase table


@dataclass(frozen=True)
class PhaseExponents:
    """Decay exponents of the correlation structure in one phase.

    ``beta`` is the power-law exponent of the rate autocovariance C(t) ~
    t^-beta, ``beta_prime`` of the diagonal of the pair covariance D(t, t) ~
    t^-beta_prime, and ``rho`` of its off-diagonal rays D(t*v1, t*v2) ~
    t^-(2*rho).  ``branch`` names which mechanism sets the tails:
    'kernel_dominated' (both inherit the kernel's own diagonal decay),
    'slow_rate_decay' (quadratic feedback slows the rate autocovariance
    only), or 'slow_rate_and_pair_decay' (it slows both).  ``on_boundary``
    marks a query lying exactly on a branch boundary, where the adjacent
    branches agree by continuity and the slower-decay branch is reported.
    ``lower_bound_corrected`` marks the slowest non-critical branch, whose
    printed lower bound is inconsistent (it would make the interval empty)
    and is implemented as delta_exp > 1/2.
    """

    beta: float
    beta_prime: float
    rho: float
    regime: str
    branch: str
    on_boundary: bool = False
    lower_bound_corrected: bool = False


def phase_exponents(
    epsilon: float, delta_exp: float, regime: str = "non_critical"
) -> PhaseExponents:
    """Map kernel decay exponents to correlation decay exponents.

    ``epsilon`` is the diagonal kernel exponent (diagonal ~ t^-(1+epsilon)),
    ``delta_exp`` the off-diagonal one (rays ~ t^-(2*delta_exp)), and
    ``regime`` either 'non_critical' (total feedback mass below one) or
    'critical' (at the stability boundary).  Validity: epsilon in (0, 1) and
    delta_exp > 1/2 away from criticality; epsilon in (0, 1/2) and
    delta_exp > (1 + epsilon)/2 at it.

    The off-diagonal exponent of the pair covariance equals ``delta_exp`` in
    every branch; the other two exponents switch at two delta thresholds,
    continuously, as quadratic feedback starts to dominate the kernel's own
    decay.  Exactly-on-threshold queries return the common value with
    ``on_boundary`` set.
    """
    if regime not in ("non_critical", "critical"):
        raise ValueError(
            f"regime must be 'non_critical' or 'critical', got {regime!r}"
        )
    if not math.isfinite(epsilon) or not math.isfinite(delta_exp):
        raise ValueError("epsilon and delta_exp must be finite")
    if regime == "non_critical":
        if not (0.0 < epsilon < 1.0):
            raise ValueError(
                f"non-critical regime needs epsilon in (0, 1), got {epsilon}"
            )
        if not (delta_exp > 0.5):
            raise ValueError(
                f"non-critical regime needs delta_exp > 1/2, got {delta_exp}"
            )
        hi = (3.0 + epsilon) / 4.0
        lo = (2.0 + epsilon) / 3.0
        if delta_exp > hi:
            return PhaseExponents(
                beta=1.0 + epsilon, beta_prime=1.0 + epsilon, rho=delta_exp,
                regime=regime, branch="kernel_dominated",
            )
        if delta_exp > lo:
            return PhaseExponents(
                beta=4.0 * delta_exp - 2.0, beta_prime=1.0 + epsilon,
                rho=delta_exp, regime=regime, branch="slow_rate_decay",
                on_boundary=(delta_exp == hi),
            )
        return PhaseExponents(
            beta=4.0 * delta_exp - 2.0, beta_prime=3.0 * delta_exp - 1.0,
            rho=delta_exp, regime=regime, branch="slow_rate_and_pair_decay",
            on_boundary=(delta_exp == lo), lower_bound_corrected=True,
        )
    if not (0.0 < epsilon < 0.5):
        raise ValueError(
            f"critical regime needs epsilon in (0, 1/2), got {epsilon}"
        )
    if not (delta_exp > (1.0 + epsilon) / 2.0):
        raise ValueError(
            f"critical regime needs delta_exp > (1+epsilon)/2, got {delta_exp}"
        )
    hi = 0.75
    lo = 2.0 / 3.0
    if delta_exp > hi:
        return PhaseExponents(
            beta=1.0 - 2.0 * epsilon, beta_prime=1.0 - epsilon, rho=delta_exp,
            regime=regime, branch="kernel_dominated",
        )
    if delta_exp > lo:
        return PhaseExponents(
            beta=4.0 * delta_exp - 2.0 * epsilon - 2.0,
            beta_prime=1.0 - epsilon, rho=delta_exp, regime=regime,
            branch="slow_rate_decay", on_boundary=(delta_exp == hi),
        )
    return PhaseExponents(
        beta=4.0 * delta_exp - 2.0 * epsilon - 2.0,
        beta_prime=3.0 * delta_exp - epsilon - 1.0, rho=delta_exp,
        regime=regime, branch="slow_rate_and_pair_decay",
        on_boundary=(delta_exp == lo),
    )


# ---------------------------------------------------------------------------
# stationary law without the smooth memory channel


def _nohawkes_student(n_z: float, lambda_inf: float, psi: float):
    if not (0.0 < n_z < 1.0):
        raise ValueError(f"n_z must be in (0, 1), got {n_z}")
    if not (lambda_inf > 0.0 and math.isfinite(lambda_inf)):
        raise ValueError(f"lambda_inf must be finite and > 0, got {lambda_inf}")
    if not (psi > 0.0):
        raise ValueError(f"psi must be > 0, got {psi}")
    df = 1.0 + 1.0 / n_z
    # variance parameter of the Student-t law of the signed memory
    scale2 = psi**2 * lambda_inf * n_z / (1.0 + n_z)
    v_floor = psi**2 * lambda_inf
    return df, scale2, v_floor


def stationary_density_nohawkes(
    v, n_z: float, lambda_inf: float, psi: float = 1.0
):
    """Stationary density of V for the diffusion with n_h = 0.

    With no smooth memory, the signed memory is stationary Student-t with
    1 + 1/n_z degrees of freedom, and V = psi^2 * (lambda_inf + Z^2) has a
    closed-form density supported on v > psi^2 * lambda_inf, diverging
    integrably at the support edge and decaying as v^-(3/2 + 1/(2 n_z)).
    Vectorized over ``v``; returns 0.0 at and below the support edge.
    """
    df, scale2, v_floor = _nohawkes_student(n_z, lambda_inf, psi)
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    above = v > v_floor
    u = np.sqrt((v[above] - v_floor) / scale2)
    out[above] = stats.t.pdf(u, df) / (scale2 * u)
    if out.ndim == 0:
        return float(out)
    return out


def stationary_cdf_nohawkes(v, n_z: float, lambda_inf: float, psi: float = 1.0):
    """Stationary CDF of V for the diffusion with n_h = 0 (see the density)."""
    df, scale2, v_floor = _nohawkes_student(n_z, lambda_inf, psi)
    v = np.asarray(v, dtype=float)
    u = np.sqrt(np.maximum(v - v_floor, 0.0) / scale2)
    out = 2.0 * stats.t.cdf(u, df) - 1.0
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# conditional feedback ratio


def feedback_ratio(
    n_h: float,
    n_z: float,
    chi: float,
    method: str = "nz_small_quadratic",
    *,
    seed: int = 0,
    total_time: Optional[float] = None,
    dt: Optional[float] = None,
) -> float:
    """Conditional feedback ratio lim E[H | Z^2 = y]/y of the limit diffusion.

    ``chi`` = 2*omega_bar/beta_bar is the timescale ratio of the two memory
    channels.  Methods:

    - 'chi_zero_order0': the slaved limit n_h/(1 - n_h) (chi ignored).
    - 'chi_small_order1': first-order correction in chi around that limit;
      emits a warning and may go negative outside its validity range.
    - 'chi_large': the scale-separated limit n_h/(chi*(1 - n_z)).
    - 'nz_small_quadratic': the positive root of the quadratic closure that
      becomes exact as n_z -> 0; interpolates between the two limits above.
    - 'monte_carlo': delegates to the diffusion module's conditional-mean
      estimator (keyword arguments ``seed``, ``total_time``, ``dt`` apply
      only here).
    """
    if method not in FEEDBACK_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {FEEDBACK_METHODS}")
    if not (0.0 <= n_h < 1.0):
        raise ValueError(f"n_h must be in [0, 1), got {n_h}")
    if not (0.0 <= n_z < 1.0):
        raise ValueError(f"n_z must be in [0, 1), got {n_z}")
    if not (n_h + n_z < 1.0):
        raise ValueError(f"total feedback mass must be < 1, got {n_h + n_z}")
    if method in ("chi_small_order1", "nz_small_quadratic"):
        if not (chi >= 0.0 and math.isfinite(chi)):
            raise ValueError(f"chi must be finite and >= 0, got {chi}")
    elif method in ("chi_large", "monte_carlo"):
        if not (chi > 0.0 and math.isfinite(chi)):
            raise ValueError(f"chi must be finite and > 0 for {method}, got {chi}")

    if method == "chi_zero_order0":
        return n_h / (1.0 - n_h)
    if method == "chi_small_order1":
        value = n_h / (1.0 - n_h) * (
            1.0 - chi * (1.0 - n_h - n_z) / (1.0 - n_h) ** 2
        )
        if value < 0.0:
            warnings.warn(
                f"first-order feedback ratio is negative at chi={chi}; "
                "outside the small-chi validity range",
                stacklevel=2,
            )
        return value
    if method == "chi_large":
        return n_h / (chi * (1.0 - n_z))
    if method == "nz_small_quadratic":
        gamma = 1.0 - n_h + chi
        a2 = gamma * (gamma + 2.0 * chi) - chi**2
        a1 = gamma**2 - n_h * (gamma + 2.0 * chi)
        a0 = -n_h * gamma
        # a2 = (1-n_h)^2 + 4*chi*(1-n_h) + 2*chi^2 > 0 and a0 <= 0, so there
        # is exactly one nonnegative root; compute it stably
        assert a2 > 0.0
        disc = a1 * a1 - 4.0 * a2 * a0
        assert disc >= 0.0, "no real root: cannot occur for valid inputs"
        sq = math.sqrt(disc)
        if a1 >= 0.0:
            qq = -0.5 * (a1 + sq)
        else:
            qq = -0.5 * (a1 - sq)
        roots = [r for r in (qq / a2, a0 / qq if qq != 0.0 else 0.0)]
        positive = [r for r in roots if r >= 0.0]
        assert positive, "no nonnegative root: cannot occur for valid inputs"
        return max(positive)
    # monte_carlo
    params = DiffusionParams(
        n_h=n_h, beta_bar=1.0, n_z=n_z, omega_bar=chi / 2.0, lambda_inf=1.0
    )
    est = feedback_ratio_mc(params, seed=seed, total_time=total_time, dt=dt)
    return est.ratio


# ---------------------------------------------------------------------------
# tail exponents


@dataclass(frozen=True)
class TailExponents:
    """Power-law tail exponents implied by a feedback ratio.

    ``v_density_exponent``: the stationary density of V decays as
    v^-v_density_exponent; ``v_survival_exponent``: P(V > v) ~
    v^-v_survival_exponent (one less than the density exponent);
    ``return_survival_exponent``: P(|return| > x) ~ x^-return_survival_exponent,
    twice the V survival exponent since returns scale like sqrt(V).
    """

    n_z: float
    feedback: float
    v_density_exponent: float
    v_survival_exponent: float
    return_survival_exponent: float


def tail_exponents(n_z: float, feedback: float) -> TailExponents:
    """Tail exponents of squared volatility and returns from the feedback ratio.

    The smooth memory conditioned on a large signed memory multiplies the
    effective noise mass by (1 + feedback), flattening the tails: the V
    survival exponent is 1/2 + 1/(2*n_z*(1 + feedback)) and the return
    survival exponent twice that.
    """
    if not (0.0 < n_z <= 1.0):
        raise ValueError(f"n_z must be in (0, 1], got {n_z}")
    if not (feedback >= 0.0 and math.isfinite(feedback)):
        raise ValueError(f"feedback must be finite and >= 0, got {feedback}")
    inv = 1.0 / (n_z * (1.0 + feedback))
    return TailExponents(
        n_z=n_z,
        feedback=feedback,
        v_density_exponent=1.5 + 0.5 * inv,
        v_survival_exponent=0.5 + 0.5 * inv,
        return_survival_exponent=1.0 + inv,
    )


def gaussian_scaling_coeff(n_h: float, chi: float, feedback: float) -> float:
    """Quadratic coefficient of the conditional spread of the smooth memory.

    In the small-n_z regime the law of H given Z^2 = y is Gaussian around
    feedback*(lambda_inf + y); this returns the coefficient
    (1 + feedback)^2 * ((1 - n_h + chi)*feedback - n_h) / chi
    of the y^2 term in its variance scale.  It vanishes exactly when
    ``feedback`` equals n_h/(1 - n_h + chi) and is positive above.
    """
    if not (chi > 0.0 and math.isfinite(chi)):
        raise ValueError(f"chi must be finite and > 0, got {chi}")
    return (1.0 + feedback) ** 2 * ((1.0 - n_h + chi) * feedback - n_h) / chi
