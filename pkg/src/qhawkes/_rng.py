"""Counter-based random number supply.

All stochastic code in the package draws from numpy's Philox bit generator so
that every output is reproducible from (seed, stream) alone, independent of
chunk sizes, compilation details, or thread scheduling.  Compiled kernels never
generate randomness themselves; they consume pre-drawn blocks handed in by a
Python driver and report how much they used, which keeps them resumable.
"""

from __future__ import annotations

import numpy as np

# Distinct stream ids keep independent consumers (event engine, sign draws,
# diffusion noise, price noise) off each other's counters.
STREAM_EVENTS = 0x45564E54
STREAM_SIGNS = 0x5349474E
STREAM_DIFFUSION = 0x44494646
STREAM_PRICE = 0x50524943
STREAM_QARCH = 0x51415243


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator over a Philox counter keyed by (seed, stream)."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ (np.uint64(stream) << np.uint64(20))))


class BlockBuffer:
    """Refillable block of random numbers backing a resumable compiled loop.

    The consumer reads ``buf[pos:]`` and reports back how far it got; ``refill``
    replaces exhausted contents.  Draws come in fixed-size blocks so the stream
    position depends only on how many numbers were consumed.
    """

    def __init__(self, seed: int, stream: int, block: int = 1 << 20, kind: str = "uniform"):
        self._gen = philox(seed, stream)
        self._block = int(block)
        self._kind = kind
        self.buf = self._draw()
        self.pos = 0

    def _draw(self) -> np.ndarray:
        if self._kind == "uniform":
            return self._gen.random(self._block)
        if self._kind == "normal":
            return self._gen.standard_normal(self._block)
        raise ValueError(f"unknown block kind: {self._kind}")

    def refill(self) -> None:
        self.buf = self._draw()
        self.pos = 0

    @property
    def remaining(self) -> int:
        return self.buf.size - self.pos
