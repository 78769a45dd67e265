"""Kernel definitions for the quadratic self-exciting intensity model.

The instantaneous event rate is

    lambda(t) = lambda_inf + H(t) + Z(t)^2,
    H(t) = sum_{t_i < t} phi(t - t_i),
    Z(t) = sum_{t_i < t} sign_i k(t - t_i),

with a diagonal (self-exciting) kernel phi and an off-diagonal square-root
kernel k whose signed sum feeds back quadratically.  ``phi_d(t) = phi(t) +
k(t)^2`` is the full diagonal of the quadratic feedback operator and is the
quantity that plays the role of a branching density: the process is stationary
when lambda_inf > 0 and trace = int phi + int k^2 < 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Union

import numpy as np

from .errors import ConfigError

__all__ = [
    "ExponentialHawkes",
    "PowerLawHawkes",
    "ExponentialZumbach",
    "ZeroKernel",
    "ModelParams",
    "StationarityReport",
    "kernel_norms",
    "stationarity_check",
    "evaluate_kernel",
    "discretize_qarch",
    "model_to_keyvalues",
    "model_from_keyvalues",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class ExponentialHawkes:
    """Exponential self-excitation phi(t) = n_h * beta * exp(-beta t)."""

    n_h: float
    beta: float

    def __post_init__(self):
        if not (self.n_h >= 0.0):
            raise ValueError(f"n_h must be >= 0, got {self.n_h}")
        if not (self.beta > 0.0):
            raise ValueError(f"beta must be > 0, got {self.beta}")

    def evaluate(self, t):
        return self._eval(np.asarray(t, dtype=float))

    def _eval(self, t):
        out = np.zeros_like(t, dtype=float)
        m = t >= 0.0
        out[m] = self.n_h * self.beta * np.exp(-self.beta * t[m])
        return out

    def norm(self) -> float:
        return self.n_h


@dataclass(frozen=True)
class PowerLawHawkes:
    """Power-law self-excitation phi(t) = g * (1 + c*t)**(-alpha).

    Parameters
    ----------
    g : float
        Amplitude at t = 0.  Must be >= 0.
    c : float
        Inverse of the crossover time; the kernel is flat below 1/c and decays
        like (c*t)**(-alpha) above it.  Must be > 0.
    alpha : float
        Decay exponent; alpha > 1 so the kernel is integrable, with
        int_0^inf phi = g / (c * (alpha - 1)).
    """

    g: float
    c: float
    alpha: float

    def __post_init__(self):
        if not (self.g >= 0.0):
            raise ValueError(f"g must be >= 0, got {self.g}")
        if not (self.c > 0.0):
            raise ValueError(f"c must be > 0, got {self.c}")
        if not (self.alpha > 1.0):
            raise ValueError(f"alpha must be > 1 for an integrable kernel, got {self.alpha}")

    def _eval(self, t):
        out = np.zeros_like(t, dtype=float)
        m = t >= 0.0
        out[m] = self.g * (1.0 + self.c * t[m]) ** (-self.alpha)
        return out

    def evaluate(self, t):
        return self._eval(np.asarray(t, dtype=float))

    def norm(self) -> float:
        return self.g / (self.c * (self.alpha - 1.0))

    @staticmethod
    def from_norm(n_h: float, c: float, alpha: float) -> "PowerLawHawkes":
        """Build from the integrated norm instead of the amplitude."""
        if not (n_h >= 0.0):
            raise ValueError(f"n_h must be >= 0, got {n_h}")
        return PowerLawHawkes(g=n_h * c * (alpha - 1.0), c=c, alpha=alpha)


@dataclass(frozen=True)
class ExponentialZumbach:
    """Exponential square-root kernel k(t) = sqrt(2*n_z*omega) * exp(-omega t).

    The amplitude is fixed by the squared norm: int_0^inf k(t)^2 dt = n_z.
    """

    n_z: float
    omega: float

    def __post_init__(self):
        if not (self.n_z >= 0.0):
            raise ValueError(f"n_z must be >= 0, got {self.n_z}")
        if not (self.omega > 0.0):
            raise ValueError(f"omega must be > 0, got {self.omega}")

    @property
    def k0(self) -> float:
        """Amplitude at t = 0."""
        return float(np.sqrt(2.0 * self.n_z * self.omega))

    def _eval(self, t):
        out = np.zeros_like(t, dtype=float)
        m = t >= 0.0
        out[m] = self.k0 * np.exp(-self.omega * t[m])
        return out

    def evaluate(self, t):
        return self._eval(np.asarray(t, dtype=float))

    def squared_norm(self) -> float:
        return self.n_z


@dataclass(frozen=True)
class ZeroKernel:
    """Identically zero kernel; disables the corresponding feedback channel."""

    def evaluate(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    _eval = evaluate

    def norm(self) -> float:
        return 0.0

    def squared_norm(self) -> float:
        return 0.0


DiagonalKernel = Union[ExponentialHawkes, PowerLawHawkes, ZeroKernel]
SquareRootKernel = Union[ExponentialZumbach, ZeroKernel]


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set: kernels, baseline rate, and jump size.

    Attributes
    ----------
    diagonal : ExponentialHawkes | PowerLawHawkes | ZeroKernel
        Self-excitation kernel phi.
    zumbach : ExponentialZumbach | ZeroKernel
        Square-root kernel k feeding the quadratic term.
    lambda_inf : float
        Baseline event rate, >= 0.
    psi : float
        Absolute price jump per event; signs are symmetric coin flips.
    """

    diagonal: DiagonalKernel
    zumbach: SquareRootKernel
    lambda_inf: float
    psi: float = 1.0

    def __post_init__(self):
        if not (self.lambda_inf >= 0.0):
            raise ValueError(f"lambda_inf must be >= 0, got {self.lambda_inf}")
        if not (self.psi > 0.0):
            raise ValueError(f"psi must be > 0, got {self.psi}")
        if not isinstance(self.diagonal, (ExponentialHawkes, PowerLawHawkes, ZeroKernel)):
            raise TypeError(f"unsupported diagonal kernel: {type(self.diagonal).__name__}")
        if not isinstance(self.zumbach, (ExponentialZumbach, ZeroKernel)):
            raise TypeError(f"unsupported square-root kernel: {type(self.zumbach).__name__}")

    @property
    def trace(self) -> float:
        """Total feedback mass int phi + int k^2."""
        return self.diagonal.norm() + self.zumbach.squared_norm()

    def mean_rate(self) -> float:
        """Stationary event rate lambda_inf / (1 - trace)."""
        tr = self.trace
        if not (self.lambda_inf > 0.0 and tr < 1.0):
            raise ValueError(f"no stationary rate: lambda_inf={self.lambda_inf}, trace={tr}")
        return self.lambda_inf / (1.0 - tr)

    def phi_d(self, t):
        """Full diagonal phi(t) + k(t)^2 of the quadratic feedback operator."""
        t = np.asarray(t, dtype=float)
        return self.diagonal.evaluate(t) + self.zumbach.evaluate(t) ** 2


@dataclass(frozen=True)
class StationarityReport:
    stationary: bool
    critical: bool
    trace: float
    mean_rate: float  # nan unless stationary


def kernel_norms(model: ModelParams) -> dict:
    """Integrated kernel masses: {'n_h', 'n_z', 'trace'}."""
    n_h = model.diagonal.norm()
    n_z = model.zumbach.squared_norm()
    return {"n_h": n_h, "n_z": n_z, "trace": n_h + n_z}


def stationarity_check(model: ModelParams, rtol: float = 1e-12) -> StationarityReport:
    """Classify the parameter set as stationary, critical, or neither.

    Stationary requires lambda_inf > 0 and trace < 1, giving mean rate
    lambda_inf / (1 - trace).  Critical means lambda_inf = 0 with trace = 1
    (to relative tolerance ``rtol``): events sustain themselves with no
    external input and no stationary rate exists.
    """
    tr = model.trace
    stationary = model.lambda_inf > 0.0 and tr < 1.0
    critical = model.lambda_inf == 0.0 and abs(tr - 1.0) <= rtol
    rate = model.lambda_inf / (1.0 - tr) if stationary else float("nan")
    return StationarityReport(stationary=stationary, critical=critical, trace=tr, mean_rate=rate)


def evaluate_kernel(model: ModelParams, t, which: str) -> np.ndarray:
    """Evaluate one kernel of the model on times t (zero for t < 0).

    ``which`` is 'diagonal', 'zumbach', or 'phi_d' for the combined diagonal
    phi + k^2.
    """
    t = np.asarray(t, dtype=float)
    if which == "diagonal":
        return model.diagonal.evaluate(t)
    if which == "zumbach":
        return model.zumbach.evaluate(t)
    if which == "phi_d":
        return model.phi_d(t)
    raise ValueError(f"which must be 'diagonal', 'zumbach' or 'phi_d', got {which!r}")


def discretize_qarch(model: ModelParams, delta: float, q: int):
    """Project the continuous model onto a lagged quadratic variance model.

    Maps the intensity feedback onto bin returns r at resolution ``delta``:

        sigma_t^2 = sigma_inf^2 + sum_{a<=q} sum_{b<=q} K[a,b] r_{t-a} r_{t-b}

    with sigma_inf^2 = psi^2 * lambda_inf * delta, diagonal K[a,a] =
    (phi(a*delta) + k(a*delta)^2) * delta and off-diagonal K[a,b] =
    k(a*delta) * k(b*delta) * delta.  The mapping is exact in the limit
    delta -> 0 with q*delta fixed; at finite delta the error is O(delta) from
    evaluating kernels at the bin left edge.

    Returns a QarchModel with a zero leverage row.
    """
    from .qarch import QarchModel

    if not (delta > 0.0):
        raise ValueError(f"delta must be > 0, got {delta}")
    if not (q >= 1):
        raise ValueError(f"q must be >= 1, got {q}")
    tau = np.arange(1, q + 1, dtype=float) * delta
    kvals = model.zumbach.evaluate(tau)
    kmat = np.outer(kvals, kvals) * delta
    np.fill_diagonal(kmat, (model.diagonal.evaluate(tau) + kvals**2) * delta)
    return QarchModel(
        sigma_inf2=model.psi**2 * model.lambda_inf * delta,
        leverage=np.zeros(q),
        kmat=kmat,
        q=q,
        delta=delta,
    )


# ---------------------------------------------------------------------------
# Flat key=value serialization.

_DIAG_KINDS = {"exp", "powerlaw", "zero"}
_SQRT_KINDS = {"exp", "zero"}


def model_to_keyvalues(model: ModelParams) -> dict:
    """Serialize to a flat string dict with dotted keys."""
    out = {"lambda_inf": repr(model.lambda_inf), "psi": repr(model.psi)}
    d = model.diagonal
    if isinstance(d, ExponentialHawkes):
        out["diagonal.kind"] = "exp"
        out["diagonal.n_h"] = repr(d.n_h)
        out["diagonal.beta"] = repr(d.beta)
    elif isinstance(d, PowerLawHawkes):
        out["diagonal.kind"] = "powerlaw"
        out["diagonal.g"] = repr(d.g)
        out["diagonal.c"] = repr(d.c)
        out["diagonal.alpha"] = repr(d.alpha)
    else:
        out["diagonal.kind"] = "zero"
    z = model.zumbach
    if isinstance(z, ExponentialZumbach):
        out["zumbach.kind"] = "exp"
        out["zumbach.n_z"] = repr(z.n_z)
        out["zumbach.omega"] = repr(z.omega)
    else:
        out["zumbach.kind"] = "zero"
    return out


def _need(d: dict, key: str) -> str:
    if key not in d:
        raise ConfigError(f"missing key: {key}")
    return d[key]


def model_from_keyvalues(d: dict) -> ModelParams:
    """Inverse of model_to_keyvalues. Raises ConfigError on malformed input."""
    try:
        kind = _need(d, "diagonal.kind").strip().lower()
        if kind == "exp":
            diag: DiagonalKernel = ExponentialHawkes(
                n_h=float(_need(d, "diagonal.n_h")), beta=float(_need(d, "diagonal.beta"))
            )
        elif kind == "powerlaw":
            diag = PowerLawHawkes(
                g=float(_need(d, "diagonal.g")),
                c=float(_need(d, "diagonal.c")),
                alpha=float(_need(d, "diagonal.alpha")),
            )
        elif kind == "zero":
            diag = ZeroKernel()
        else:
            raise ConfigError(f"diagonal.kind must be one of {sorted(_DIAG_KINDS)}, got {kind!r}")
        zkind = _need(d, "zumbach.kind").strip().lower()
        if zkind == "exp":
            zum: SquareRootKernel = ExponentialZumbach(
                n_z=float(_need(d, "zumbach.n_z")), omega=float(_need(d, "zumbach.omega"))
            )
        elif zkind == "zero":
            zum = ZeroKernel()
        else:
            raise ConfigError(f"zumbach.kind must be one of {sorted(_SQRT_KINDS)}, got {zkind!r}")
        return ModelParams(
            diagonal=diag,
            zumbach=zum,
            lambda_inf=float(_need(d, "lambda_inf")),
            psi=float(d.get("psi", "1.0")),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad model parameters: {exc}") from exc


def save_model(model: ModelParams, fp: IO[str]) -> None:
    for key, val in sorted(model_to_keyvalues(model).items()):
        fp.write(f"{key}={val}\n")


def load_model(fp: IO[str]) -> ModelParams:
    d = {}
    for line in fp:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        d[key.strip()] = val.strip()
    return model_from_keyvalues(d)
