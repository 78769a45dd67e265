"""Intraday OHLC panel ingestion and the calibration normalization pipeline.

The loader reads a long-format CSV (one row per stock, day, and intraday bin)
into a dense panel, rejecting malformed rows individually.  ``normalize``
turns the panel into calibration-ready series: per-bin log-returns and
range-based volatilities, divided by a trailing daily-volatility proxy and by
the leave-one-out cross-sectional volatility pattern, with outlier days
excluded and each stock standardized to zero-mean unit-variance returns and
unit-mean-square range volatility.  Every scale factor applied along the way
is kept in the result so raw returns can be reconstructed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, List, Tuple

import numpy as np

from .errors import ConfigError

__all__ = [
    "OhlcPanel",
    "NormalizedPanel",
    "load_csv",
    "normalize",
    "write_normalized_csv",
    "write_audit",
]

CSV_HEADER = "stock_id,date,bin,open,high,low,close"
MAX_LOGGED_REJECTS = 100
MAX_LOGGED_FALLBACKS = 100


@dataclass(frozen=True)
class OhlcPanel:
    """Dense (stock, day, bin) panel of positive open/high/low/close prices.

    ``valid`` flags (stock, day) pairs whose every bin loaded cleanly; rows
    that failed validation are counted in ``n_rejected`` with the first
    reasons kept in ``reject_reasons``.
    """

    stocks: List[str]
    dates: List[str]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    valid: np.ndarray
    n_rejected: int = 0
    reject_reasons: List[Tuple[int, str]] = field(default_factory=list)

    @property
    def n_stocks(self) -> int:
        return len(self.stocks)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_bins(self) -> int:
        return int(self.open.shape[2])

    def log_returns(self) -> np.ndarray:
        """Per-bin close-over-open log-returns."""
        return np.log(self.close / self.open)

    def range_vol(self) -> np.ndarray:
        """Per-bin range volatility sqrt(ln(H/O)ln(H/C) + ln(L/O)ln(L/C))."""
        ho = np.log(self.high / self.open)
        hc = np.log(self.high / self.close)
        lo = np.log(self.low / self.open)
        lc = np.log(self.low / self.close)
        return np.sqrt(np.maximum(ho * hc + lo * lc, 0.0))


def _parse_row(parts: List[str]):
    if len(parts) != 7:
        raise ValueError(f"expected 7 fields, got {len(parts)}")
    stock, date = parts[0].strip(), parts[1].strip()
    if not stock or not date:
        raise ValueError("empty stock_id or date")
    b = int(parts[2])
    if b < 0:
        raise ValueError(f"bin must be >= 0, got {b}")
    o, h, l, c = (float(x) for x in parts[3:7])
    if not (o > 0.0 and h > 0.0 and l > 0.0 and c > 0.0):
        raise ValueError("prices must be positive")
    if h < max(o, c):
        raise ValueError("high below open/close")
    if l > min(o, c):
        raise ValueError("low above open/close")
    return stock, date, b, o, h, l, c


def load_csv(fp: IO[str]) -> OhlcPanel:
    """Load a long-format OHLC CSV into a dense panel.

    Malformed rows (bad field count, nonpositive prices, high/low ordering
    violations, duplicates) are rejected individually and counted; a
    (stock, day) missing any bin after rejection is marked invalid.  A file
    with no loadable day raises ConfigError.
    """
    header = fp.readline().strip()
    if header != CSV_HEADER:
        raise ConfigError(
            f"expected header {CSV_HEADER!r}, got {header!r}"
        )
    rows = {}
    rejects: List[Tuple[int, str]] = []
    n_rejected = 0
    max_bin = -1
    for line_no, line in enumerate(fp, start=2):
        line = line.strip()
        if not line:
            continue
        try:
            stock, date, b, o, h, l, c = _parse_row(line.split(","))
            key = (stock, date, b)
            if key in rows:
                raise ValueError(f"duplicate record for {key}")
        except ValueError as exc:
            n_rejected += 1
            if len(rejects) < MAX_LOGGED_REJECTS:
                rejects.append((line_no, str(exc)))
            continue
        rows[key] = (o, h, l, c)
        max_bin = max(max_bin, b)
    if not rows:
        raise ConfigError("no loadable rows: empty or fully rejected panel")

    stocks = sorted({k[0] for k in rows})
    dates = sorted({k[1] for k in rows})
    n_bins = max_bin + 1
    shape = (len(stocks), len(dates), n_bins)
    opens = np.full(shape, np.nan)
    highs = np.full(shape, np.nan)
    lows = np.full(shape, np.nan)
    closes = np.full(shape, np.nan)
    stock_idx = {s: i for i, s in enumerate(stocks)}
    date_idx = {d: i for i, d in enumerate(dates)}
    for (stock, date, b), (o, h, l, c) in rows.items():
        u, t = stock_idx[stock], date_idx[date]
        opens[u, t, b] = o
        highs[u, t, b] = h
        lows[u, t, b] = l
        closes[u, t, b] = c
    valid = ~np.isnan(opens).any(axis=2)
    if not valid.any():
        raise ConfigError(
            "inconsistent bins-per-day: no (stock, day) has the full "
            f"{n_bins} bins implied by the largest bin index"
        )
    # NaN-filled holes only survive on invalid days; make them inert
    for arr in (opens, highs, lows, closes):
        np.nan_to_num(arr, copy=False, nan=1.0)
    return OhlcPanel(
        stocks=stocks,
        dates=dates,
        open=opens,
        high=highs,
        low=lows,
        close=closes,
        valid=valid,
        n_rejected=n_rejected,
        reject_reasons=rejects,
    )


@dataclass(frozen=True)
class NormalizedPanel:
    """Calibration-ready series plus the audit needed to undo every stage.

    ``ret`` and ``rs`` are the normalized per-bin returns and range
    volatilities; ``excluded`` marks (stock, day) pairs dropped by the
    outlier rule, and ``usable`` pairs that are both loaded and not
    excluded.  For usable days the raw return is exactly
    ``(ret * ret_scale[u] + ret_offset[u]) * pattern[u,t,b] * daily_vol[u,t]``.
    """

    stocks: List[str]
    dates: List[str]
    ret: np.ndarray
    rs: np.ndarray
    valid: np.ndarray
    excluded: np.ndarray
    daily_vol: np.ndarray
    pattern: np.ndarray
    ret_offset: np.ndarray
    ret_scale: np.ndarray
    rs_scale: np.ndarray
    exclusion_rate: float
    n_fallbacks: int
    fallback_entries: List[str]

    @property
    def usable(self) -> np.ndarray:
        return self.valid & ~self.excluded


def _daily_vol_proxy(ret: np.ndarray, valid: np.ndarray, decay: float) -> np.ndarray:
    """Trailing per-stock daily volatility from past realized variance.

    Day 1 has no history and gets proxy 1; later days use the
    exponentially weighted mean (weights decay per day) of past days'
    realized variance, skipping days that never loaded.
    """
    n_stocks, n_days, _ = ret.shape
    out = np.ones((n_stocks, n_days))
    rv2 = np.sum(ret**2, axis=2)
    for u in range(n_stocks):
        acc = 0.0
        wsum = 0.0
        for t in range(n_days):
            if wsum > 0.0:
                out[u, t] = math.sqrt(acc / wsum)
            acc *= decay
            wsum *= decay
            if valid[u, t]:
                acc += rv2[u, t]
                wsum += 1.0
    return out


def normalize(
    panel: OhlcPanel, *, ewma_decay: float = 0.94, sigma_clip: float = 6.0
) -> NormalizedPanel:
    """Run the full normalization pipeline on a loaded panel.

    Stages, in order: (1) divide each stock-day by the trailing daily
    volatility proxy; (2) divide by the leave-one-out cross-sectional
    pattern sqrt(mean of other stocks' squared returns in the same day and
    bin); (3) exclude any (stock, day) with a bin beyond ``sigma_clip``
    standard deviations of that stock's absolute returns; (4) demean returns
    per stock; (5) rescale per stock so returns have unit mean square and
    range volatilities have unit mean square.  Any zero divisor falls back
    to 1 and is recorded.  Range volatilities share the stage-1/2/5 scale
    factors of returns but are never demeaned or inspected for outliers.
    """
    if panel.n_stocks < 2:
        raise ConfigError(
            "normalization needs at least 2 stocks for the leave-one-out pattern"
        )
    if not (0.0 < ewma_decay < 1.0):
        raise ConfigError(f"ewma_decay must be in (0, 1), got {ewma_decay}")
    if sigma_clip <= 0.0:
        raise ConfigError(f"sigma_clip must be > 0, got {sigma_clip}")

    valid = panel.valid.copy()
    ret = np.where(valid[:, :, None], panel.log_returns(), 0.0)
    rs = np.where(valid[:, :, None], panel.range_vol(), 0.0)
    fallbacks: List[str] = []
    n_fallbacks = 0

    def fallback(kind: str, where: str) -> None:
        nonlocal n_fallbacks
        n_fallbacks += 1
        if len(fallbacks) < MAX_LOGGED_FALLBACKS:
            fallbacks.append(f"{kind},{where}")

    # stage 1: trailing daily volatility
    daily_vol = _daily_vol_proxy(ret, valid, ewma_decay)
    zero = daily_vol == 0.0
    if zero.any():
        for u, t in zip(*np.nonzero(zero)):
            fallback("daily_vol", f"{panel.stocks[u]},{panel.dates[t]}")
        daily_vol = np.where(zero, 1.0, daily_vol)
    ret = ret / daily_vol[:, :, None]
    rs = rs / daily_vol[:, :, None]

    # stage 2: leave-one-out cross-sectional pattern per (day, bin)
    sq = np.where(valid[:, :, None], ret**2, 0.0)
    counts = valid.astype(float)[:, :, None]
    total_sq = sq.sum(axis=0, keepdims=True)
    total_n = counts.sum(axis=0, keepdims=True)
    loo_n = total_n - counts
    with np.errstate(invalid="ignore", divide="ignore"):
        pattern = np.sqrt((total_sq - sq) / loo_n)
    bad = ~np.isfinite(pattern) | (pattern == 0.0)
    if bad.any():
        for u, t, b in zip(*np.nonzero(bad)):
            if valid[u, t]:
                fallback(
                    "pattern", f"{panel.stocks[u]},{panel.dates[t]},{b}"
                )
        pattern = np.where(bad, 1.0, pattern)
    ret = ret / pattern
    rs = rs / pattern

    # stage 3: outlier-day exclusion per stock
    excluded = np.zeros_like(valid)
    abs_ret = np.abs(ret)
    for u in range(panel.n_stocks):
        sample = abs_ret[u][valid[u]]
        if sample.size == 0:
            continue
        cut = sample.mean() + sigma_clip * sample.std()
        excluded[u] = valid[u] & (abs_ret[u] > cut).any(axis=1)
    usable = valid & ~excluded
    n_valid = int(valid.sum())
    exclusion_rate = float(excluded.sum()) / n_valid if n_valid else 0.0

    # stages 4-5: per-stock demeaning, then unit mean squares (demeaning
    # first keeps both the zero-mean and unit-variance contracts exact)
    ret_offset = np.zeros(panel.n_stocks)
    ret_scale = np.ones(panel.n_stocks)
    rs_scale = np.ones(panel.n_stocks)
    for u in range(panel.n_stocks):
        sel = usable[u]
        if not sel.any():
            fallback("stock_scale", panel.stocks[u])
            continue
        ret_offset[u] = ret[u][sel].mean()
        ret[u] -= ret_offset[u]
        ms = float((ret[u][sel] ** 2).mean())
        if ms > 0.0:
            ret_scale[u] = math.sqrt(ms)
            ret[u] /= ret_scale[u]
        else:
            fallback("ret_scale", panel.stocks[u])
        ms_rs = float((rs[u][sel] ** 2).mean())
        if ms_rs > 0.0:
            rs_scale[u] = math.sqrt(ms_rs)
            rs[u] /= rs_scale[u]
        else:
            fallback("rs_scale", panel.stocks[u])

    return NormalizedPanel(
        stocks=panel.stocks,
        dates=panel.dates,
        ret=ret,
        rs=rs,
        valid=valid,
        excluded=excluded,
        daily_vol=daily_vol,
        pattern=pattern,
        ret_offset=ret_offset,
        ret_scale=ret_scale,
        rs_scale=rs_scale,
        exclusion_rate=exclusion_rate,
        n_fallbacks=n_fallbacks,
        fallback_entries=fallbacks,
    )


def write_normalized_csv(result: NormalizedPanel, fp: IO[str]) -> None:
    """One row per (stock, day, bin): normalized return, range vol, flag."""
    fp.write("stock_id,date,bin,ret_norm,rs_norm,excluded\n")
    usable = result.usable
    for u, stock in enumerate(result.stocks):
        for t, date in enumerate(result.dates):
            if not result.valid[u, t]:
                continue
            flag = 0 if usable[u, t] else 1
            for b in range(result.ret.shape[2]):
                fp.write(
                    f"{stock},{date},{b},{float(result.ret[u, t, b])!r},"
                    f"{float(result.rs[u, t, b])!r},{flag}\n"
                )


def write_audit(result: NormalizedPanel, fp: IO[str]) -> None:
    """Flat text with every scale factor the pipeline applied."""
    fp.write(f"exclusion_rate,{result.exclusion_rate!r}\n")
    fp.write(f"n_fallbacks,{result.n_fallbacks}\n")
    for entry in result.fallback_entries:
        fp.write(f"fallback,{entry}\n")
    for u, stock in enumerate(result.stocks):
        fp.write(
            f"stock_scale,{stock},{float(result.ret_offset[u])!r},"
            f"{float(result.ret_scale[u])!r},{float(result.rs_scale[u])!r}\n"
        )
    for u, stock in enumerate(result.stocks):
        for t, date in enumerate(result.dates):
            if not result.valid[u, t]:
                continue
            fp.write(f"daily_vol,{stock},{date},{float(result.daily_vol[u, t])!r}\n")
    for u, stock in enumerate(result.stocks):
        for t, date in enumerate(result.dates):
            if not result.valid[u, t]:
                continue
            row = ",".join(f"{float(x)!r}" for x in result.pattern[u, t])
            fp.write(f"pattern,{stock},{date},{row}\n")
