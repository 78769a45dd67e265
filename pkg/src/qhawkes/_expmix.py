"""Sum-of-exponentials representation of the power-law kernel.

The event engine needs per-event state updates, which exist only for
exponential memory.  A power-law kernel g*(1+c*t)**(-alpha) is rewritten
through its Gamma-integral representation

    (1 + c*t)**(-alpha) = (1/Gamma(alpha)) * int_0^inf s^(alpha-1) e^(-s) e^(-c*s*t) ds

and the integral is discretized with Gauss-Legendre rules on geometric panels
of s.  The result is a positive mixture sum_j a_j exp(-r_j t) whose sup
relative error against the exact kernel is measured on a log grid covering
[0, t_max] and certified below a requested tolerance before use.  Positive
weights keep the mixture monotone decreasing, so intensity bounds derived
from it remain valid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import NumericalError
from .kernels import ExponentialHawkes, PowerLawHawkes, ZeroKernel

__all__ = ["ExpMixture", "powerlaw_mixture", "diagonal_mixture"]


@dataclass(frozen=True)
class ExpMixture:
    """Positive exponential mixture sum_j amps[j] * exp(-rates[j] * t)."""

    amps: np.ndarray
    rates: np.ndarray
    rel_err: float  # certified sup relative error on [0, t_max]
    t_max: float

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-np.multiply.outer(t, self.rates)) @ self.amps

    def norm(self) -> float:
        """Integral over [0, inf)."""
        if self.amps.size == 0:
            return 0.0
        return float(np.sum(self.amps / self.rates))

    @property
    def n_terms(self) -> int:
        return int(self.amps.size)


def _panel_nodes(s_lo: float, s_hi: float, ratio: float, order: int):
    """Gauss-Legendre nodes/weights on geometric panels covering [s_lo, s_hi]."""
    n_panels = max(1, int(np.ceil(np.log(s_hi / s_lo) / np.log(ratio))))
    edges = s_lo * (s_hi / s_lo) ** (np.arange(n_panels + 1) / n_panels)
    x, w = np.polynomial.legendre.leggauss(order)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def powerlaw_mixture(kernel: PowerLawHawkes, t_max: float, rtol: float = 1e-7) -> ExpMixture:
    """Certified exponential-mixture approximation of a power-law kernel.

    Parameters
    ----------
    kernel : PowerLawHawkes
    t_max : float
        Largest elapsed time the mixture must be accurate for.  Beyond it the
        mixture decays faster than the true kernel (its slowest rate is
        ~1/(c*t_max)), which under-counts excitation from events older than
        t_max; callers must choose t_max >= simulation horizon.
    rtol : float
        Sup relative error to certify on [0, t_max].

    Raises
    ------
    NumericalError
        If certification fails after escalating the quadrature order.
    """
    g, c, alpha = kernel.g, kernel.c, kernel.alpha
    if g == 0.0:
        return ExpMixture(np.empty(0), np.empty(0), 0.0, t_max)
    if not (t_max > 0.0):
        raise ValueError(f"t_max must be > 0, got {t_max}")

    budget = rtol / 4.0
    # Upper cutoff: dropped Gamma tail, relative error at t = 0.
    s_hi = float(special.gammainccinv(alpha, budget))
    # Lower cutoff: dropped head, worst relative error at t = t_max where the
    # kernel itself is smallest.
    s_lo = (alpha * budget * special.gamma(alpha)) ** (1.0 / alpha) / (1.0 + c * t_max)

    t_check = np.concatenate(([0.0], np.geomspace(max(t_max * 1e-12, 1e-300), t_max, 400)))
    exact = kernel.evaluate(t_check)
    for ratio, order in ((4.0, 10), (3.0, 14), (2.0, 18)):
        s, w = _panel_nodes(s_lo, s_hi, ratio, order)
        amps = (g / special.gamma(alpha)) * w * s ** (alpha - 1.0) * np.exp(-s)
        rates = c * s
        mix = ExpMixture(amps, rates, np.nan, t_max)
        err = float(np.max(np.abs(mix.evaluate(t_check) / exact - 1.0)))
        # The mixture norm falls short of the kernel norm by (roughly) the
        # kernel mass at elapsed times beyond t_max, which the simulation can
        # never realize; only the sup error on [0, t_max] is certified.
        if err <= rtol and mix.norm() <= kernel.norm() * (1.0 + 4.0 * rtol):
            return ExpMixture(amps, rates, err, t_max)
    raise NumericalError(
        f"exponential mixture failed certification: rel_err={err:.3e}, target {rtol:.1e} "
        f"(alpha={alpha}, c={c}, t_max={t_max})"
    )


def diagonal_mixture(diagonal, t_max: float, rtol: float = 1e-7) -> ExpMixture:
    """Exponential-mixture form of any supported diagonal kernel.

    Exact (one term, zero error) for the exponential kernel; certified
    approximation for the power law; empty for the zero kernel.
    """
    if isinstance(diagonal, ZeroKernel):
        return ExpMixture(np.empty(0), np.empty(0), 0.0, t_max)
    if isinstance(diagonal, ExponentialHawkes):
        if diagonal.n_h == 0.0:
            return ExpMixture(np.empty(0), np.empty(0), 0.0, t_max)
        return ExpMixture(
            np.array([diagonal.n_h * diagonal.beta]), np.array([diagonal.beta]), 0.0, t_max
        )
    if isinstance(diagonal, PowerLawHawkes):
        return powerlaw_mixture(diagonal, t_max, rtol)
    raise TypeError(f"unsupported diagonal kernel: {type(diagonal).__name__}")
