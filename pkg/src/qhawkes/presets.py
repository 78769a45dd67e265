"""Named parameter presets for the benchmark simulation experiments.

Presets pin the integrated kernel masses (never raw amplitudes): the
calibration-inspired quadratic model combines a slowly decaying power-law
self-excitation with an exponential signed-memory kernel, while the
near-critical linear benchmark has no signed-memory channel at all.  The
baseline intensity and jump size stay free knobs so experiments can set the
event-rate scale independently of the feedback structure.
"""

from __future__ import annotations

from .errors import ConfigError
from .kernels import (
    ExponentialZumbach,
    ModelParams,
    PowerLawHawkes,
    ZeroKernel,
)

__all__ = ["PRESET_NAMES", "preset_model"]

PRESET_NAMES = ("zhawkes-paper", "hawkes-benchmark")


def preset_model(
    name: str, *, lambda_inf: float = 1.0, psi: float = 1.0
) -> ModelParams:
    """Build the model for a named preset.

    ``zhawkes-paper``: power-law self-excitation with mass 0.8 (exponent 1.2,
    horizon constant c=0.01) plus an exponential signed-memory kernel with
    squared mass 0.1 and decay 0.03 — total feedback trace 0.9.

    ``hawkes-benchmark``: power-law self-excitation with mass 0.99 (exponent
    1.3, c=0.01) and no signed-memory channel.

    Raises ConfigError for unknown names, listing the available presets.
    """
    if name == "zhawkes-paper":
        return ModelParams(
            diagonal=PowerLawHawkes.from_norm(n_h=0.8, c=0.01, alpha=1.2),
            zumbach=ExponentialZumbach(n_z=0.1, omega=0.03),
            lambda_inf=lambda_inf,
            psi=psi,
        )
    if name == "hawkes-benchmark":
        return ModelParams(
            diagonal=PowerLawHawkes.from_norm(n_h=0.99, c=0.01, alpha=1.3),
            zumbach=ZeroKernel(),
            lambda_inf=lambda_inf,
            psi=psi,
        )
    raise ConfigError(
        f"unknown preset {name!r}; available presets: {', '.join(PRESET_NAMES)}"
    )
