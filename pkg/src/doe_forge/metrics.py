"""Coverage and error metrics for DoE profiles.

Coverage is tracked as fixed-range 10-bin histograms over terminal voltage,
applied current and SoC, scored by normalized Shannon entropy (1.0 = flat,
0.0 = empty or single-bin).  Frequency coverage splits the one-sided spectrum
of sliding current windows into three bands and counts which bands each
window visits.  Error statistics summarize model-vs-measurement residuals as
MAE plus signed-error histograms, marginal and against SoC / current.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NBINS",
    "CoverageHistogram",
    "Hist2d",
    "BandCoverage",
    "band_energies",
    "ErrorStats",
    "uniformity",
]

NBINS = 10  # fixed resolution for all coverage histograms


def uniformity(counts: np.ndarray) -> float:
    """Normalized Shannon entropy of a histogram: H(p)/log(nbins).

    1.0 for a flat histogram, 0.0 for a single occupied bin or no data.
    """
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum() / np.log(counts.shape[0])) + 0.0


@dataclass
class CoverageHistogram:
    """Fixed-range histogram; out-of-range samples clamp into the edge bins."""

    lo: float
    hi: float
    counts: np.ndarray = None
    total: int = 0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"histogram range must have hi > lo, got [{self.lo}, {self.hi}]")
        if self.counts is None:
            self.counts = np.zeros(NBINS, dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (NBINS,):
                raise ValueError(f"histogram needs exactly {NBINS} bins")
            self.total = int(self.counts.sum())

    def _bin(self, x) -> np.ndarray:
        k = np.floor((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo) * NBINS)
        return np.clip(k, 0, NBINS - 1).astype(np.int64)

    def update(self, x: float) -> None:
        self.counts[self._bin(x)] += 1
        self.total += 1

    def update_many(self, xs) -> None:
        np.add.at(self.counts, self._bin(xs), 1)
        self.total = int(self.counts.sum())

    def normalized(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros(NBINS)
        return self.counts / self.total

    def uniformity(self) -> float:
        return uniformity(self.counts)

    def merge(self, other: "CoverageHistogram") -> "CoverageHistogram":
        if (other.lo, other.hi) != (self.lo, self.hi):
            raise ValueError("cannot merge histograms with different ranges")
        return CoverageHistogram(self.lo, self.hi, self.counts + other.counts)

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "counts": self.counts.tolist()}


@dataclass
class Hist2d:
    """Fixed-range 2-D histogram (NBINS x NBINS), clamped like CoverageHistogram."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    counts: np.ndarray = None

    def __post_init__(self):
        if not (self.x_hi > self.x_lo and self.y_hi > self.y_lo):
            raise ValueError("2-D histogram ranges must be non-degenerate")
        if self.counts is None:
            self.counts = np.zeros((NBINS, NBINS), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (NBINS, NBINS):
                raise ValueError(f"2-D histogram must be {NBINS}x{NBINS}")

    @staticmethod
    def _axis_bin(x, lo, hi) -> np.ndarray:
        k = np.floor((np.asarray(x, dtype=float) - lo) / (hi - lo) * NBINS)
        return np.clip(k, 0, NBINS - 1).astype(np.int64)

    def update_many(self, xs, ys) -> None:
        kx = self._axis_bin(xs, self.x_lo, self.x_hi)
        ky = self._axis_bin(ys, self.y_lo, self.y_hi)
        np.add.at(self.counts, (kx, ky), 1)

    def merge(self, other: "Hist2d") -> "Hist2d":
        if (other.x_lo, other.x_hi, other.y_lo, other.y_hi) != (
            self.x_lo,
            self.x_hi,
            self.y_lo,
            self.y_hi,
        ):
            raise ValueError("cannot merge 2-D histograms with different ranges")
        return Hist2d(self.x_lo, self.x_hi, self.y_lo, self.y_hi, self.counts + other.counts)

    def to_dict(self) -> dict:
        return {
            "x_range": [self.x_lo, self.x_hi],
            "y_range": [self.y_lo, self.y_hi],
            "counts": self.counts.tolist(),
        }


def band_energies(
    x: np.ndarray,
    dt: float,
    split_hz: tuple = (0.005, 0.05),
    return_total_ac: bool = False,
):
    """Split one window's AC energy into (low, mid, high) bands.

    The window is mean-removed, Hann-weighted and DFT'd; bin energies
    |X_k|^2/W (one-sided, doubled for interior bins) are summed per band.
    The bands partition (0, Nyquist]: low = (0, split[0]], mid =
    (split[0], split[1]], high = (split[1], Nyquist].  The residual DC bin is
    excluded, so the three bands sum to the windowed signal's AC energy.
    """
    x = np.asarray(x, dtype=float)
    w = x.shape[0]
    if w < 4 or w % 2 != 0:
        raise ValueError(f"window length must be even and >= 4, got {w}")
    if not 0.0 < split_hz[0] < split_hz[1] < 0.5 / dt + 1e-15:
        raise ValueError(
            f"band splits must satisfy 0 < f1 < f2 < nyquist ({0.5 / dt} Hz), got {split_hz}"
        )
    y = x - x.mean()
    y = y * np.hanning(w)
    spec = np.fft.rfft(y)
    mag2 = (spec.real**2 + spec.imag**2) / w
    weights = np.full(mag2.shape, 2.0)
    weights[0] = 0.0  # residual DC after windowing: not part of any band
    weights[-1] = 1.0  # Nyquist bin is unique
    freqs = np.arange(mag2.shape[0]) / (w * dt)
    weighted = weights * mag2
    low = freqs <= split_hz[0]
    mid = (freqs > split_hz[0]) & (freqs <= split_hz[1])
    high = freqs > split_hz[1]
    bands = np.array([weighted[low].sum(), weighted[mid].sum(), weighted[high].sum()])
    if return_total_ac:
        total_ac = float((y**2).sum() - w * y.mean() ** 2)
        return bands, total_ac
    return bands


@dataclass
class BandCoverage:
    """Streaming frequency-band coverage over sliding current windows.

    Every ``hop`` new samples, the trailing ``window`` samples are scored with
    :func:`band_energies`.  A band is "visited" by a window when the window
    has non-trivial AC power and the band holds at least ``visit_share_min``
    of it.  Coverage is the normalized entropy of the visit counts.
    """

    window: int = 256
    hop: int = 64
    dt: float = 1.0
    split_hz: tuple = (0.005, 0.05)
    visit_share_min: float = 0.2
    visit_power_min: float = 0.25  # mean-square amps; below this a window is "quiet"
    energies: np.ndarray = field(default_factory=lambda: np.zeros(3))
    visits: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    windows_processed: int = 0

    def __post_init__(self):
        if self.hop <= 0 or self.window <= 0 or self.window % self.hop != 0:
            raise ValueError("window must be a positive multiple of hop")
        self._buf = np.zeros(self.window)
        self._head = 0  # ring-buffer write position
        self._filled = 0
        self._since_hop = 0
        self.energies = np.asarray(self.energies, dtype=float)
        self.visits = np.asarray(self.visits, dtype=np.int64)

    def push(self, sample: float) -> None:
        self._buf[self._head] = sample
        self._head = (self._head + 1) % self.window
        if self._filled < self.window:
            self._filled += 1
        self._since_hop += 1
        if self._filled >= self.window and self._since_hop >= self.hop:
            self._since_hop = 0
            ordered = np.concatenate((self._buf[self._head :], self._buf[: self._head]))
            self._process(ordered)

    def _process(self, win: np.ndarray) -> None:
        e = band_energies(win, self.dt, self.split_hz)
        self.energies += e
        total = e.sum()
        self.windows_processed += 1
        if total / self.window >= self.visit_power_min:
            self.visits += (e >= self.visit_share_min * total).astype(np.int64)

    def normalized_visits(self) -> np.ndarray:
        if self.windows_processed == 0:
            return np.zeros(3)
        return self.visits / self.windows_processed

    def score(self) -> float:
        """Normalized entropy of per-band visit counts (0 = nothing visited)."""
        return uniformity(self.visits)

    def merge(self, other: "BandCoverage") -> "BandCoverage":
        """Combine completed-window counters (pending partial buffers drop)."""
        if (self.window, self.hop, self.dt, self.split_hz) != (
            other.window,
            other.hop,
            other.dt,
            other.split_hz,
        ):
            raise ValueError("cannot merge band coverage with different windowing")
        merged = BandCoverage(
            self.window,
            self.hop,
            self.dt,
            self.split_hz,
            self.visit_share_min,
            self.visit_power_min,
            self.energies + other.energies,
            self.visits + other.visits,
            self.windows_processed + other.windows_processed,
        )
        return merged

    def to_dict(self) -> dict:
        return {
            "split_hz": list(self.split_hz),
            "energies": self.energies.tolist(),
            "visits": self.visits.tolist(),
            "windows_processed": self.windows_processed,
        }


@dataclass
class ErrorStats:
    """Streaming voltage-error statistics: MAE, signed-error histogram, and
    error location against SoC and current."""

    err_max_v: float = 0.015
    i_lo: float = -10.0
    i_hi: float = 10.0
    n: int = 0
    sum_abs: float = 0.0
    sum_sq: float = 0.0
    max_abs: float = 0.0
    err_hist: CoverageHistogram = None
    err_vs_soc: Hist2d = None
    err_vs_current: Hist2d = None

    def __post_init__(self):
        if self.err_hist is None:
            self.err_hist = CoverageHistogram(-self.err_max_v, self.err_max_v)
        if self.err_vs_soc is None:
            self.err_vs_soc = Hist2d(0.0, 1.0, -self.err_max_v, self.err_max_v)
        if self.err_vs_current is None:
            self.err_vs_current = Hist2d(self.i_lo, self.i_hi, -self.err_max_v, self.err_max_v)

    def update_many(self, errors, socs, currents) -> None:
        errors = np.asarray(errors, dtype=float)
        if not np.all(np.isfinite(errors)):
            raise ValueError("errors must be finite")
        self.n += errors.shape[0]
        if errors.shape[0]:
            self.max_abs = max(self.max_abs, float(np.abs(errors).max()))
        self.sum_abs += float(np.abs(errors).sum())
        self.sum_sq += float((errors**2).sum())
        self.err_hist.update_many(errors)
        self.err_vs_soc.update_many(socs, errors)
        self.err_vs_current.update_many(currents, errors)

    @property
    def mae(self) -> float:
        return self.sum_abs / self.n if self.n else 0.0

    @property
    def rmse(self) -> float:
        return float(np.sqrt(self.sum_sq / self.n)) if self.n else 0.0

    def merge(self, other: "ErrorStats") -> "ErrorStats":
        if (other.err_max_v, other.i_lo, other.i_hi) != (self.err_max_v, self.i_lo, self.i_hi):
            raise ValueError("cannot merge error stats with different ranges")
        return ErrorStats(
            self.err_max_v,
            self.i_lo,
            self.i_hi,
            self.n + other.n,
            self.sum_abs + other.sum_abs,
            self.sum_sq + other.sum_sq,
            max(self.max_abs, other.max_abs),
            self.err_hist.merge(other.err_hist),
            self.err_vs_soc.merge(other.err_vs_soc),
            self.err_vs_current.merge(other.err_vs_current),
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mae_v": self.mae,
            "rmse_v": self.rmse,
            "max_abs_err_v": self.max_abs,
            "err_hist": self.err_hist.to_dict(),
            "err_vs_soc": self.err_vs_soc.to_dict(),
            "err_vs_current": self.err_vs_current.to_dict(),
        }
