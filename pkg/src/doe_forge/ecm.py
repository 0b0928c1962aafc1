"""Equivalent-circuit battery cell model with table-driven parameters.

The cell is an open-circuit voltage source behind a series resistance and a
chain of parallel RC pairs.  All electrical parameters come from lookup
tables: OCV over (SoC, temperature), series resistance R0 over (SoC,
temperature, current) to capture charge/discharge asymmetry, each RC pair's
resistance and capacitance over (SoC, temperature), and capacity over
temperature.  Positive current charges the cell (SoC increases).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LookupTable",
    "EcmParams",
    "CellState",
    "StepResult",
    "SimResult",
    "rc_discretize",
    "step",
    "simulate_profile",
    "PARAMS_FORMAT_VERSION",
]

PARAMS_FORMAT_VERSION = 1


def _axis_locate(axis: np.ndarray, x: float) -> tuple[int, float]:
    """Return (lower index, fractional weight) for clamped linear interpolation."""
    n = axis.shape[0]
    if n == 1:
        return 0, 0.0
    if x <= axis[0]:
        return 0, 0.0
    if x >= axis[-1]:
        return n - 2, 1.0
    j = int(np.searchsorted(axis, x, side="right")) - 1
    if j > n - 2:
        j = n - 2
    return j, (x - axis[j]) / (axis[j + 1] - axis[j])


class LookupTable:
    """Multilinear interpolation over a rectilinear grid, clamped at the edges.

    Queries outside the breakpoint range hold the edge value (no
    extrapolation).  Breakpoints must be strictly increasing along each axis.
    """

    def __init__(self, axes: tuple[np.ndarray, ...] | list, values, name: str = "table"):
        self.axes = tuple(np.asarray(ax, dtype=float) for ax in axes)
        self.values = np.asarray(values, dtype=float)
        self.name = name
        if self.values.ndim != len(self.axes):
            raise ValueError(
                f"{name}: values have {self.values.ndim} dims but {len(self.axes)} axes given"
            )
        for d, ax in enumerate(self.axes):
            if ax.ndim != 1 or ax.shape[0] < 1:
                raise ValueError(f"{name}: axis {d} must be a non-empty 1-D array")
            if ax.shape[0] != self.values.shape[d]:
                raise ValueError(
                    f"{name}: axis {d} has {ax.shape[0]} breakpoints, values expect {self.values.shape[d]}"
                )
            if np.any(np.diff(ax) <= 0):
                raise ValueError(f"{name}: axis {d} breakpoints must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{name}: values must be finite")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def __call__(self, *coords: float) -> float:
        if len(coords) != len(self.axes):
            raise ValueError(f"{self.name}: expected {len(self.axes)} coordinates, got {len(coords)}")
        v = self.values
        if len(self.axes) == 1:
            j, w = _axis_locate(self.axes[0], coords[0])
            if self.axes[0].shape[0] == 1:
                return float(v[0])
            return float(v[j] * (1.0 - w) + v[j + 1] * w)
        # interpolate the trailing axes dimension by dimension
        locs = [_axis_locate(ax, x) for ax, x in zip(self.axes, coords)]
        sub = v
        for (j, w), ax in zip(locs, self.axes):
            if ax.shape[0] == 1:
                sub = sub[0]
            else:
                sub = sub[j] * (1.0 - w) + sub[j + 1] * w
        return float(sub)

    def scaled(self, factor: float, name: str | None = None) -> "LookupTable":
        """New table with every value multiplied by ``factor``."""
        return LookupTable(self.axes, self.values * factor, name or self.name)

    def to_dict(self, axis_names: tuple[str, ...], value_name: str) -> dict:
        d = {an: ax.tolist() for an, ax in zip(axis_names, self.axes)}
        d[value_name] = self.values.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict, axis_names: tuple[str, ...], value_name: str, name: str) -> "LookupTable":
        missing = [k for k in (*axis_names, value_name) if k not in d]
        if missing:
            raise ValueError(f"{name}: missing keys {missing}")
        return cls(tuple(np.asarray(d[an], dtype=float) for an in axis_names), d[value_name], name)


@dataclass
class EcmParams:
    """Full parameter set for an N-RC equivalent-circuit cell.

    capacity : Ah over (temp_c,)
    ocv      : V over (soc, temp_c)
    r0       : ohm over (soc, temp_c, current_a)
    rc_pairs : list of (r, c) tables, each over (soc, temp_c); ohm and farad
    """

    capacity: LookupTable
    ocv: LookupTable
    r0: LookupTable
    rc_pairs: list = field(default_factory=list)
    name: str = "cell"

    def __post_init__(self):
        if self.capacity.ndim != 1:
            raise ValueError("capacity table must be 1-D (temperature)")
        if self.ocv.ndim != 2:
            raise ValueError("ocv table must be 2-D (soc, temperature)")
        if self.r0.ndim != 3:
            raise ValueError("r0 table must be 3-D (soc, temperature, current)")
        if np.any(self.capacity.values <= 0):
            raise ValueError("capacity must be positive")
        if np.any(self.r0.values <= 0):
            raise ValueError("r0 must be positive")
        for k, (r, c) in enumerate(self.rc_pairs):
            if r.ndim != 2 or c.ndim != 2:
                raise ValueError(f"rc pair {k}: r and c tables must be 2-D (soc, temperature)")
            if np.any(r.values <= 0) or np.any(c.values <= 0):
                raise ValueError(f"rc pair {k}: resistances and capacitances must be positive")
        socs = self.ocv.axes[0]
        for t in self.ocv.axes[1]:
            curve = [self.ocv(s, t) for s in socs]
            if np.any(np.diff(curve) <= 0):
                raise ValueError("ocv must be strictly increasing in soc at every temperature")

    @property
    def n_rc(self) -> int:
        return len(self.rc_pairs)

    def to_dict(self) -> dict:
        return {
            "format_version": PARAMS_FORMAT_VERSION,
            "name": self.name,
            "capacity": self.capacity.to_dict(("temp_c",), "ah"),
            "ocv": self.ocv.to_dict(("soc", "temp_c"), "volts"),
            "r0": self.r0.to_dict(("soc", "temp_c", "current_a"), "ohms"),
            "rc_pairs": [
                {
                    "r": r.to_dict(("soc", "temp_c"), "ohms"),
                    "c": c.to_dict(("soc", "temp_c"), "farads"),
                }
                for r, c in self.rc_pairs
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EcmParams":
        version = d.get("format_version")
        if version != PARAMS_FORMAT_VERSION:
            raise ValueError(f"unsupported cell parameter format_version {version!r}")
        for key in ("capacity", "ocv", "r0", "rc_pairs"):
            if key not in d:
                raise ValueError(f"cell parameters: missing key {key!r}")
        pairs = [
            (
                LookupTable.from_dict(p["r"], ("soc", "temp_c"), "ohms", f"rc{k}_r"),
                LookupTable.from_dict(p["c"], ("soc", "temp_c"), "farads", f"rc{k}_c"),
            )
            for k, p in enumerate(d["rc_pairs"])
        ]
        return cls(
            capacity=LookupTable.from_dict(d["capacity"], ("temp_c",), "ah", "capacity"),
            ocv=LookupTable.from_dict(d["ocv"], ("soc", "temp_c"), "volts", "ocv"),
            r0=LookupTable.from_dict(d["r0"], ("soc", "temp_c", "current_a"), "ohms", "r0"),
            rc_pairs=pairs,
            name=d.get("name", "cell"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "EcmParams":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass
class CellState:
    """Electrical state: SoC in [0, 1], one RC voltage per pair, temperature in degC."""

    soc: float
    v_rc: np.ndarray
    temp_c: float

    def __post_init__(self):
        self.v_rc = np.asarray(self.v_rc, dtype=float)
        if not 0.0 <= self.soc <= 1.0:
            raise ValueError(f"soc must be within [0, 1], got {self.soc}")
        if not np.all(np.isfinite(self.v_rc)):
            raise ValueError("rc voltages must be finite")

    @classmethod
    def rested(cls, soc: float, n_rc: int, temp_c: float = 25.0) -> "CellState":
        return cls(soc=soc, v_rc=np.zeros(n_rc), temp_c=temp_c)


@dataclass
class StepResult:
    state: CellState
    terminal_voltage: float
    saturated: bool  # SoC hit 0 or 1 and was clamped


def rc_discretize(r: float, c: float, dt: float) -> tuple[float, float]:
    """Exact zero-order-hold discretization of one RC pair.

    v' = alpha*v + beta*i with alpha = exp(-dt/(r*c)), beta = r*(1 - alpha).
    """
    if r <= 0 or c <= 0 or dt <= 0:
        raise ValueError("r, c and dt must be positive")
    alpha = math.exp(-dt / (r * c))
    return alpha, r * (1.0 - alpha)


def step(params: EcmParams, state: CellState, current_a: float, dt: float) -> StepResult:
    """Advance the cell one step under constant current (positive = charge).

    SoC advances by Ah counting and clamps to [0, 1] (saturation flagged).
    RC tables are evaluated at the pre-step SoC; OCV and R0 at the post-step
    SoC, R0 additionally at the applied current.  The input is pure: the
    passed-in state is not mutated.
    """
    if not math.isfinite(current_a):
        raise ValueError(f"current must be finite, got {current_a}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    temp = state.temp_c
    cap_ah = params.capacity(temp)
    soc_raw = state.soc + current_a * dt / (3600.0 * cap_ah)
    soc_new = min(1.0, max(0.0, soc_raw))
    saturated = soc_new != soc_raw

    v_rc_new = np.empty_like(state.v_rc)
    for k, (r_tab, c_tab) in enumerate(params.rc_pairs):
        r = r_tab(state.soc, temp)
        c = c_tab(state.soc, temp)
        alpha, beta = rc_discretize(r, c, dt)
        v_rc_new[k] = alpha * state.v_rc[k] + beta * current_a

    v_term = (
        params.ocv(soc_new, temp)
        + current_a * params.r0(soc_new, temp, current_a)
        + float(np.sum(v_rc_new))
    )
    return StepResult(CellState(soc_new, v_rc_new, temp), v_term, saturated)


@dataclass
class SimResult:
    """Per-step trace of a profile replay: times are step starts, voltage and
    SoC are end-of-step values."""

    t_s: np.ndarray
    current_a: np.ndarray
    voltage_v: np.ndarray
    soc: np.ndarray
    final_state: CellState
    saturated_steps: int = 0


def simulate_profile(params: EcmParams, profile, initial_state: CellState, dt: float) -> SimResult:
    """Replay a current profile against the cell model at a fixed step dt.

    ``profile`` needs only ``duration`` and ``sample(t)``; the current in
    [t, t+dt) is the profile sampled at t.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = int(round(profile.duration / dt))
    if n <= 0:
        raise ValueError(f"profile duration {profile.duration} shorter than one dt step")
    t = np.arange(n) * dt
    i_a = np.empty(n)
    v = np.empty(n)
    soc = np.empty(n)
    state = initial_state
    saturated = 0
    for k in range(n):
        i_k = profile.sample(t[k])
        res = step(params, state, i_k, dt)
        state = res.state
        i_a[k] = i_k
        v[k] = res.terminal_voltage
        soc[k] = state.soc
        saturated += res.saturated
    return SimResult(t, i_a, v, soc, state, saturated)
