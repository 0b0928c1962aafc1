"""Current profiles: zero-order-hold sample trains plus DoE generators.

A profile is a sequence of (time, current) samples holding each current until
the next sample time; ``duration`` marks the end of the last hold.  Sampling
past the end returns 0 A (rest).  Positive current charges.

Generators cover the traditional characterization playbook: constant-current
(OCV and rate tests), pulse trains over a SoC ladder, and a seeded synthetic
urban-style drive cycle used as validation holdout.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CurrentProfile",
    "PulseSpec",
    "constant_current_profile",
    "pulse_profile",
    "drive_cycle_profile",
    "traditional_suite",
    "concat_profiles",
    "save_profile",
    "load_profile",
]

CSV_HEADER = ("t_s", "current_a")


@dataclass
class CurrentProfile:
    """Zero-order-hold current samples. Times start at 0, strictly increasing."""

    t_s: np.ndarray
    current_a: np.ndarray
    name: str = "profile"
    source: str = "external"  # traditional | ai | external
    dt_nominal: float | None = None
    duration: float | None = None  # defaults to the last sample time
    start_soc: float | None = None  # suggested initial SoC for replay

    def __post_init__(self):
        self.t_s = np.asarray(self.t_s, dtype=float)
        self.current_a = np.asarray(self.current_a, dtype=float)
        if self.t_s.ndim != 1 or self.t_s.shape != self.current_a.shape:
            raise ValueError("t_s and current_a must be 1-D arrays of equal length")
        if self.t_s.shape[0] == 0:
            raise ValueError("profile needs at least one sample")
        if self.t_s[0] != 0.0:
            raise ValueError(f"profile must start at t=0, got t[0]={self.t_s[0]}")
        if np.any(np.diff(self.t_s) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if not np.all(np.isfinite(self.current_a)):
            raise ValueError("currents must be finite")
        if self.duration is None:
            self.duration = float(self.t_s[-1])
        elif self.duration < self.t_s[-1]:
            raise ValueError(
                f"duration {self.duration} shorter than last sample time {self.t_s[-1]}"
            )

    def __len__(self) -> int:
        return self.t_s.shape[0]

    def sample(self, t):
        """Current at time t (scalar or array): held value for 0 <= t <= duration
        (a sample time takes the new value), 0 A past the end."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise ValueError("cannot sample at negative time")
        idx = np.searchsorted(self.t_s, t_arr, side="right") - 1
        out = np.where(t_arr > self.duration, 0.0, self.current_a[idx])
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out

    def charge_throughput_ah(self) -> float:
        """Integral of |current| over the profile, in Ah."""
        edges = np.append(self.t_s, self.duration)
        return float(np.sum(np.abs(self.current_a) * np.diff(edges)) / 3600.0)


def _from_segments(
    segments: list[tuple[float, float]], **meta
) -> CurrentProfile:
    """Build a profile from (duration, current) segments; zero-length segments drop."""
    t, i = [], []
    now = 0.0
    for dur, cur in segments:
        if dur < 0:
            raise ValueError("segment durations must be non-negative")
        if dur == 0:
            continue
        if t and now == t[-1]:  # replace a sample that never had a chance to hold
            i[-1] = cur
        else:
            t.append(now)
            i.append(cur)
        now += dur
    if not t:
        raise ValueError("profile needs at least one non-empty segment")
    return CurrentProfile(np.array(t), np.array(i), duration=now, **meta)


def constant_current_profile(
    c_rate: float,
    capacity_ah: float,
    duration_s: float | None = None,
    soc_span: float = 1.0,
    name: str | None = None,
    start_soc: float | None = None,
    direction: str | None = None,
) -> CurrentProfile:
    """Constant current at c_rate * capacity (sign of c_rate = direction).

    Alternatively pass a positive c_rate plus ``direction``
    ('charge'/'discharge').  Default duration moves SoC by ``soc_span``:
    3600 * soc_span / |c_rate| s.
    """
    if direction is not None:
        if direction not in ("charge", "discharge"):
            raise ValueError(f"direction must be 'charge' or 'discharge', got {direction!r}")
        if c_rate <= 0:
            raise ValueError("c_rate must be positive when direction is given")
        c_rate = c_rate if direction == "charge" else -c_rate
    if c_rate == 0:
        raise ValueError("c_rate must be nonzero")
    if capacity_ah <= 0:
        raise ValueError("capacity must be positive")
    if duration_s is None:
        duration_s = 3600.0 * soc_span / abs(c_rate)
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    current = c_rate * capacity_ah
    if start_soc is None:
        start_soc = 0.0 if c_rate > 0 else 1.0
    return CurrentProfile(
        np.array([0.0]),
        np.array([current]),
        name=name or f"cc_{c_rate:+g}C",
        source="traditional",
        dt_nominal=1.0,
        duration=float(duration_s),
        start_soc=start_soc,
    )


@dataclass
class PulseSpec:
    """Pulse-train recipe: at each SoC point (strictly decreasing), for each
    amplitude, a charge pulse / rest / discharge pulse / rest block.  Rests
    default to the pulse duration."""

    amplitudes_a: tuple = (2.5, 10.0)
    pulse_s: float = 10.0
    rest_s: float | None = None
    soc_points: tuple = tuple(np.round(np.linspace(0.9, 0.0, 10), 10))
    reposition_c_rate: float = 1.0

    def __post_init__(self):
        if any(a <= 0 for a in self.amplitudes_a):
            raise ValueError("pulse amplitudes must be positive (sign handled per pulse)")
        if self.pulse_s <= 0:
            raise ValueError("pulse duration must be positive")
        if self.rest_s is None:
            self.rest_s = self.pulse_s
        pts = np.asarray(self.soc_points, dtype=float)
        if np.any((pts < 0) | (pts > 1)):
            raise ValueError("soc points must lie in [0, 1]")
        if np.any(np.diff(pts) >= 0):
            raise ValueError("soc points must be strictly decreasing")
        if self.reposition_c_rate <= 0:
            raise ValueError("reposition c-rate must be positive")


def pulse_profile(
    spec: PulseSpec,
    capacity_ah: float,
    start_soc: float = 1.0,
    name: str = "pulse_train",
) -> CurrentProfile:
    """Pulse train over a descending SoC ladder.

    Repositioning between points is discharge-only at ``reposition_c_rate``;
    asking for a SoC above the current one is an error.  Each amplitude block
    is net-zero charge, so the ladder bookkeeping stays exact.
    """
    if capacity_ah <= 0:
        raise ValueError("capacity must be positive")
    segments: list[tuple[float, float]] = []
    soc = start_soc
    reposition_a = -spec.reposition_c_rate * capacity_ah
    for target in spec.soc_points:
        if target > soc + 1e-12:
            raise ValueError(
                f"cannot reposition from soc {soc:.3f} up to {target:.3f}: "
                "repositioning is discharge-only"
            )
        dt_repo = (soc - target) * 3600.0 / spec.reposition_c_rate
        if dt_repo > 0:
            segments.append((dt_repo, reposition_a))
            segments.append((spec.rest_s, 0.0))
        soc = target
        for amp in spec.amplitudes_a:
            segments.append((spec.pulse_s, +amp))
            segments.append((spec.rest_s, 0.0))
            segments.append((spec.pulse_s, -amp))
            segments.append((spec.rest_s, 0.0))
    return _from_segments(
        segments,
        name=name,
        source="traditional",
        dt_nominal=1.0,
        start_soc=start_soc,
    )


def drive_cycle_profile(
    duration_s: float,
    i_chg_max_a: float,
    i_dis_max_a: float,
    capacity_ah: float,
    seed: int,
    name: str = "drive_cycle",
    hold_range_s: tuple = (2.0, 30.0),
    rest_prob: float = 0.15,
    start_soc: float = 0.6,
) -> CurrentProfile:
    """Seeded synthetic urban-style cycle: piecewise-constant current with
    random hold lengths, rests, and a mean-reverting charge balance so SoC
    wanders around its start instead of drifting off."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    i_scale = 0.5 * (i_chg_max_a + i_dis_max_a)
    segments: list[tuple[float, float]] = []
    t = 0.0
    net_as = 0.0  # net charge so far, ampere-seconds
    # pull back toward balance once the net drift approaches ~5% SoC
    drift_scale_as = 0.05 * capacity_ah * 3600.0
    while t < duration_s:
        hold = float(rng.uniform(*hold_range_s))
        hold = min(hold, duration_s - t)
        if rng.uniform() < rest_prob:
            amp = 0.0
        else:
            amp = 0.5 * i_scale * rng.standard_normal() - 0.6 * i_scale * np.tanh(
                net_as / drift_scale_as
            )
            amp = float(np.clip(amp, -i_dis_max_a, i_chg_max_a))
        segments.append((hold, amp))
        net_as += amp * hold
        t += hold
    return _from_segments(
        segments,
        name=name,
        source="external",
        dt_nominal=1.0,
        start_soc=start_soc,
    )


def concat_profiles(profiles: list, name: str | None = None) -> CurrentProfile:
    """Concatenate profiles back to back; durations add."""
    if not profiles:
        raise ValueError("nothing to concatenate")
    t, i = [], []
    offset = 0.0
    for p in profiles:
        for tk, ik in zip(p.t_s, p.current_a):
            tt = tk + offset
            if t and tt == t[-1]:
                i[-1] = ik
            else:
                t.append(tt)
                i.append(ik)
        offset += p.duration
    return CurrentProfile(
        np.array(t),
        np.array(i),
        name=name or "+".join(p.name for p in profiles),
        source=profiles[0].source,
        dt_nominal=profiles[0].dt_nominal,
        duration=offset,
        start_soc=profiles[0].start_soc,
    )


def save_profile(profile: CurrentProfile, path) -> None:
    """Write the sample train as CSV (header t_s,current_a; UTF-8, LF) plus a
    JSON metadata sidecar at <path>.meta.json carrying name/source/duration."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(CSV_HEADER) + "\n")
        for t, c in zip(profile.t_s, profile.current_a):
            f.write(f"{float(t)!r},{float(c)!r}\n")
    meta = {
        "name": profile.name,
        "source": profile.source,
        "dt_nominal": profile.dt_nominal,
        "duration": profile.duration,
        "start_soc": profile.start_soc,
    }
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")


def load_profile(path) -> CurrentProfile:
    """Load a profile CSV (+ sidecar metadata when present)."""
    path = Path(path)
    t, i = [], []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(CSV_HEADER):
            raise ValueError(f"{path}: expected header '{','.join(CSV_HEADER)}', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                t.append(float(row[0]))
                i.append(float(row[1]))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
    if not t:
        raise ValueError(f"{path}: no samples")
    meta = {}
    sidecar = Path(str(path) + ".meta.json")
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as f:
            meta = json.load(f)
    return CurrentProfile(
        np.array(t),
        np.array(i),
        name=meta.get("name", path.stem),
        source=meta.get("source", "external"),
        dt_nominal=meta.get("dt_nominal"),
        duration=meta.get("duration"),
        start_soc=meta.get("start_soc"),
    )


def traditional_suite(
    capacity_ah: float,
    i_chg_max_a: float,
    i_dis_max_a: float,
    rate_c: tuple = (0.2, 0.5, 1.0, 2.0),
    pulse_durations_s: tuple = (1.0, 10.0, 100.0),
    pulse_soc_points: tuple = tuple(np.round(np.linspace(0.9, 0.0, 10), 10)),
    ocv_c_rate: float | None = 0.05,
    directions: tuple = ("discharge", "charge"),
) -> list[tuple[CurrentProfile, int]]:
    """Standard characterization battery: slow OCV cycles, rate tests, and
    pulse trains over the SoC ladder at several widths.

    ``ocv_c_rate=None`` drops the OCV cycles; ``directions`` restricts rate
    tests.  Returns (profile, log_every) pairs; log_every is the recommended
    measurement decimation for that test (slow tests don't need 1 Hz logs).
    """
    for d in directions:
        if d not in ("discharge", "charge"):
            raise ValueError(f"unknown direction {d!r}")
    out: list[tuple[CurrentProfile, int]] = []
    if ocv_c_rate is not None:
        if "discharge" in directions:
            out.append(
                (constant_current_profile(-ocv_c_rate, capacity_ah, name="ocv_discharge"), 30)
            )
        if "charge" in directions:
            out.append(
                (constant_current_profile(+ocv_c_rate, capacity_ah, name="ocv_charge"), 30)
            )
    for rate in rate_c:
        dis = min(rate * capacity_ah, i_dis_max_a) / capacity_ah
        chg = min(rate * capacity_ah, i_chg_max_a) / capacity_ah
        log_every = max(1, int(round(10.0 / rate)))
        if "discharge" in directions:
            out.append(
                (constant_current_profile(-dis, capacity_ah, name=f"rate_dis_{rate:g}C"), log_every)
            )
        if "charge" in directions:
            out.append(
                (constant_current_profile(+chg, capacity_ah, name=f"rate_chg_{rate:g}C"), log_every)
            )
    amp_low = 0.5 * capacity_ah  # 0.5C
    amp_high = min(2.0 * capacity_ah, i_chg_max_a, i_dis_max_a)
    for dur in pulse_durations_s:
        spec = PulseSpec(
            amplitudes_a=(amp_low, amp_high),
            pulse_s=dur,
            soc_points=pulse_soc_points,
        )
        out.append(
            (
                pulse_profile(spec, capacity_ah, start_soc=1.0, name=f"pulse_{dur:g}s"),
                1,
            )
        )
    return out
