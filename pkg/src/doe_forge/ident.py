"""Cell parameter identification by nonlinear least squares.

The identification model is a 2-RC equivalent circuit with a known OCV curve
and capacity: free parameters are the series resistance on a (SoC, current)
grid plus each RC branch's resistance and capacitance on a SoC grid, all
encoded in log space so positivity is structural.  Residuals are simulated
minus measured terminal voltage over recorded profiles; a damped
Gauss-Newton (Levenberg-Marquardt) solver with a forward-difference Jacobian
drives them down.

Measurement data is CSV with header ``t_s,current_a,voltage_v,soc`` at a
uniform row cadence; rows carry end-of-step voltage/SoC for the current held
since the previous row.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ecm
from .cells import DESK_I_CHG_MAX_A, DESK_I_DIS_MAX_A, DESK_V_MAX, DESK_V_MIN
from .metrics import CoverageHistogram, ErrorStats

__all__ = [
    "IdentSpec",
    "IdentData",
    "LmResult",
    "IdentResult",
    "encode",
    "decode",
    "build_params",
    "residuals",
    "jacobian",
    "solve_lm",
    "initial_guess",
    "support_counts",
    "identify",
    "evaluate",
    "save_measurements",
    "load_measurements",
    "MEAS_HEADER",
    "RESULT_FORMAT_VERSION",
]

MEAS_HEADER = ("t_s", "current_a", "voltage_v", "soc")
RESULT_FORMAT_VERSION = 1

_LOG_ALPHA_FLOOR = -200.0  # exp(-200) is zero for every practical purpose
# generous physical box for log-parameters (ohms/farads in [1e-13, 1e13]):
# wide enough never to bind an identifiable parameter, tight enough that
# data-blind parameters can't drift into exp overflow
_X_BOUNDS = (-30.0, 30.0)


@dataclass
class IdentSpec:
    """Identification grid and the fixed (known) quantities.

    ``ocv_soc`` / ``ocv_v`` pin the known OCV curve at the working
    temperature; capacity is Ah at that temperature.
    """

    soc_breakpoints: np.ndarray = field(
        default_factory=lambda: np.round(np.linspace(0.0, 1.0, 11), 10)
    )
    current_breakpoints: np.ndarray = field(
        default_factory=lambda: np.array([-10.0, -1.0, 1.0, 10.0])
    )
    ocv_soc: np.ndarray = None
    ocv_v: np.ndarray = None
    capacity_ah: float = 5.0
    temp_c: float = 25.0
    smoothing: float = 0.0  # Tikhonov weight on adjacent-breakpoint log differences

    def __post_init__(self):
        self.soc_breakpoints = np.asarray(self.soc_breakpoints, dtype=float)
        self.current_breakpoints = np.asarray(self.current_breakpoints, dtype=float)
        for name, bps in (
            ("soc", self.soc_breakpoints),
            ("current", self.current_breakpoints),
        ):
            if bps.shape[0] < 2:
                raise ValueError(f"need at least 2 {name} breakpoints")
            if np.any(np.diff(bps) <= 0):
                raise ValueError(f"{name} breakpoints must be strictly increasing")
        if self.ocv_soc is None or self.ocv_v is None:
            raise ValueError("identification needs the known OCV curve (ocv_soc, ocv_v)")
        self.ocv_soc = np.asarray(self.ocv_soc, dtype=float)
        self.ocv_v = np.asarray(self.ocv_v, dtype=float)
        if self.ocv_soc.shape != self.ocv_v.shape or self.ocv_soc.ndim != 1:
            raise ValueError("ocv_soc and ocv_v must be 1-D arrays of equal length")
        if self.capacity_ah <= 0:
            raise ValueError("capacity must be positive")
        if self.smoothing < 0:
            raise ValueError("smoothing weight must be non-negative")

    @property
    def n_soc(self) -> int:
        return self.soc_breakpoints.shape[0]

    @property
    def n_current(self) -> int:
        return self.current_breakpoints.shape[0]

    @property
    def n_params(self) -> int:
        return self.n_soc * self.n_current + 4 * self.n_soc

    @classmethod
    def for_cell(
        cls,
        params: ecm.EcmParams,
        temp_c: float = 25.0,
        soc_breakpoints=None,
        current_breakpoints=None,
        smoothing: float = 0.0,
    ) -> "IdentSpec":
        """Spec with OCV and capacity taken as known from a cell definition."""
        kwargs = {}
        if soc_breakpoints is not None:
            kwargs["soc_breakpoints"] = soc_breakpoints
        if current_breakpoints is not None:
            kwargs["current_breakpoints"] = current_breakpoints
        ocv_soc = params.ocv.axes[0].copy()
        ocv_v = np.array([params.ocv(s, temp_c) for s in ocv_soc])
        return cls(
            ocv_soc=ocv_soc,
            ocv_v=ocv_v,
            capacity_ah=params.capacity(temp_c),
            temp_c=temp_c,
            smoothing=smoothing,
            **kwargs,
        )

    def to_dict(self) -> dict:
        return {
            "soc_breakpoints": self.soc_breakpoints.tolist(),
            "current_breakpoints": self.current_breakpoints.tolist(),
            "ocv_soc": self.ocv_soc.tolist(),
            "ocv_v": self.ocv_v.tolist(),
            "capacity_ah": self.capacity_ah,
            "temp_c": self.temp_c,
            "smoothing": self.smoothing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IdentSpec":
        return cls(
            soc_breakpoints=np.asarray(d["soc_breakpoints"], dtype=float),
            current_breakpoints=np.asarray(d["current_breakpoints"], dtype=float),
            ocv_soc=np.asarray(d["ocv_soc"], dtype=float),
            ocv_v=np.asarray(d["ocv_v"], dtype=float),
            capacity_ah=d["capacity_ah"],
            temp_c=d["temp_c"],
            smoothing=d.get("smoothing", 0.0),
        )


@dataclass
class IdentData:
    """One measured record: uniform-cadence rows of applied current and the
    resulting end-of-step voltage/SoC."""

    t_s: np.ndarray
    current_a: np.ndarray
    voltage_v: np.ndarray
    soc: np.ndarray
    soc0: float
    temp_c: float = 25.0
    name: str = "measurement"

    def __post_init__(self):
        for arr_name in ("t_s", "current_a", "voltage_v", "soc"):
            setattr(self, arr_name, np.asarray(getattr(self, arr_name), dtype=float))
        n = self.t_s.shape[0]
        if n < 2:
            raise ValueError("measurement record needs at least 2 rows")
        if any(getattr(self, a).shape[0] != n for a in ("current_a", "voltage_v", "soc")):
            raise ValueError("measurement columns must have equal length")
        d = np.diff(self.t_s)
        if np.any(d <= 0):
            raise ValueError("measurement times must be strictly increasing")
        if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(d[0])):
            raise ValueError("measurement cadence must be uniform")
        if not (0.0 <= self.soc0 <= 1.0):
            raise ValueError(f"initial soc must be within [0, 1], got {self.soc0}")

    @property
    def dt(self) -> float:
        return float(self.t_s[1] - self.t_s[0])

    @property
    def duration_s(self) -> float:
        return float(self.t_s.shape[0]) * self.dt


def save_measurements(data: IdentData, path, extra_meta: dict | None = None) -> None:
    """Write measurement CSV plus a metadata sidecar (<path>.meta.json)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(MEAS_HEADER) + "\n")
        for row in zip(data.t_s, data.current_a, data.voltage_v, data.soc):
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    meta = {
        "name": data.name,
        "soc0": data.soc0,
        "temp_c": data.temp_c,
        "dt": data.dt,
        "duration_s": data.duration_s,
    }
    meta.update(extra_meta or {})
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")


_LOG_HEADER = ("t_s", "action", "current_a", "voltage_v", "soc", "reward")


def load_measurements(path, capacity_ah: float | None = None, temp_c: float = 25.0) -> IdentData:
    """Load a measurement record from CSV.

    Accepts either the measurement format (``t_s,current_a,voltage_v,soc``,
    rows at end-of-step times) or an environment episode log
    (``t_s,action,current_a,voltage_v,soc,reward``, rows at step-start
    times); the episode log's shared columns carry the same step data, so
    its times are shifted by one cadence to the measurement convention.
    The sidecar (if present) supplies soc0 and temperature, otherwise soc0
    is back-stepped from the first row (which needs the capacity).
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        header = [h.strip() for h in header] if header else []
        if header == list(MEAS_HEADER):
            wanted, is_log = MEAS_HEADER, False
        elif header == list(_LOG_HEADER):
            wanted, is_log = _LOG_HEADER, True
        else:
            raise ValueError(
                f"{path}: expected header '{','.join(MEAS_HEADER)}' "
                f"(or an episode log), got {header}"
            )
        cols = {h: [] for h in wanted}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(wanted):
                raise ValueError(f"{path}:{lineno}: expected {len(wanted)} columns")
            try:
                for h, v in zip(wanted, row):
                    cols[h].append(float(v))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
    if len(cols["t_s"]) < 2:
        raise ValueError(f"{path}: need at least 2 measurement rows")
    t_s = np.asarray(cols["t_s"])
    if is_log:
        # log rows are stamped at step start; measurement rows at step end
        t_s = t_s + (t_s[1] - t_s[0])
    sidecar = Path(str(path) + ".meta.json")
    meta = {}
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as f:
            meta = json.load(f)
    if "soc0" in meta:
        soc0 = float(meta["soc0"])
    elif "start_soc" in meta:
        soc0 = float(meta["start_soc"])
    else:
        if capacity_ah is None:
            raise ValueError(
                f"{path}: no metadata sidecar; pass capacity_ah so soc0 can be back-stepped"
            )
        dt = t_s[1] - t_s[0]
        soc0 = cols["soc"][0] - cols["current_a"][0] * dt / (3600.0 * capacity_ah)
        soc0 = min(1.0, max(0.0, soc0))
    return IdentData(
        t_s=t_s,
        current_a=np.asarray(cols["current_a"]),
        voltage_v=np.asarray(cols["voltage_v"]),
        soc=np.asarray(cols["soc"]),
        soc0=soc0,
        temp_c=float(meta.get("temp_c", temp_c)),
        name=meta.get("name", path.stem),
    )


# --- parameter vector encoding ------------------------------------------------


def encode(tables: dict, spec: IdentSpec) -> np.ndarray:
    """Pack {r0 (ns,nc), r1, c1, r2, c2 (ns,)} into a log-space vector."""
    ns, nc = spec.n_soc, spec.n_current
    r0 = np.asarray(tables["r0"], dtype=float)
    if r0.shape != (ns, nc):
        raise ValueError(f"r0 grid must be ({ns}, {nc}), got {r0.shape}")
    parts = [r0.reshape(-1)]
    for key in ("r1", "c1", "r2", "c2"):
        arr = np.asarray(tables[key], dtype=float)
        if arr.shape != (ns,):
            raise ValueError(f"{key} must have shape ({ns},), got {arr.shape}")
        parts.append(arr)
    flat = np.concatenate(parts)
    if np.any(flat <= 0):
        raise ValueError("all parameters must be positive for log encoding")
    return np.log(flat)


def decode(x: np.ndarray, spec: IdentSpec) -> dict:
    """Inverse of :func:`encode`."""
    x = np.asarray(x, dtype=float)
    ns, nc = spec.n_soc, spec.n_current
    if x.shape != (spec.n_params,):
        raise ValueError(f"parameter vector must have {spec.n_params} entries, got {x.shape}")
    vals = np.exp(x)
    out = {"r0": vals[: ns * nc].reshape(ns, nc)}
    for k, key in enumerate(("r1", "c1", "r2", "c2")):
        out[key] = vals[ns * nc + k * ns : ns * nc + (k + 1) * ns]
    return out


def build_params(tables: dict, spec: IdentSpec, name: str = "identified") -> ecm.EcmParams:
    """Assemble the identified 2-RC cell as a full parameter set (singleton
    temperature axis at the working temperature)."""
    temp = np.array([spec.temp_c])
    return ecm.EcmParams(
        capacity=ecm.LookupTable((temp,), np.array([spec.capacity_ah]), "capacity"),
        ocv=ecm.LookupTable((spec.ocv_soc, temp), spec.ocv_v[:, None], "ocv"),
        r0=ecm.LookupTable(
            (spec.soc_breakpoints, temp, spec.current_breakpoints),
            np.asarray(tables["r0"], dtype=float)[:, None, :],
            "r0",
        ),
        rc_pairs=[
            (
                ecm.LookupTable((spec.soc_breakpoints, temp), np.asarray(tables["r1"])[:, None], "rc_r"),
                ecm.LookupTable((spec.soc_breakpoints, temp), np.asarray(tables["c1"])[:, None], "rc_c"),
            ),
            (
                ecm.LookupTable((spec.soc_breakpoints, temp), np.asarray(tables["r2"])[:, None], "rc_r"),
                ecm.LookupTable((spec.soc_breakpoints, temp), np.asarray(tables["c2"])[:, None], "rc_c"),
            ),
        ],
        name=name,
    )


# --- fast residual machinery ----------------------------------------------------


def _interp_weights(bps: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamped linear interpolation weights: indices (n, 2) and weights (n, 2)."""
    xc = np.clip(x, bps[0], bps[-1])
    j = np.clip(np.searchsorted(bps, xc, side="right") - 1, 0, bps.shape[0] - 2)
    w = (xc - bps[j]) / (bps[j + 1] - bps[j])
    idx = np.stack([j, j + 1], axis=1)
    wts = np.stack([1.0 - w, w], axis=1)
    return idx, wts


def _soc_trajectory(soc0: float, current_a: np.ndarray, dt: float, capacity_ah: float):
    """Pre/post-step SoC per sample, with clamping at 0/1 (Ah counting)."""
    scale = dt / (3600.0 * capacity_ah)
    raw = soc0 + np.cumsum(current_a) * scale
    if raw.min() >= 0.0 and raw.max() <= 1.0:
        post = raw
    else:  # clamping engaged: mirror the stepwise clamp exactly
        post = np.empty_like(raw)
        s = soc0
        for k, i_k in enumerate(current_a):
            s = min(1.0, max(0.0, s + i_k * scale))
            post[k] = s
    pre = np.concatenate(([soc0], post[:-1]))
    return pre, post


class _PreparedRecord:
    """Everything about one record that does not depend on the parameters."""

    def __init__(self, data: IdentData, spec: IdentSpec):
        self.n = data.t_s.shape[0]
        self.dt = data.dt
        self.i = data.current_a
        self.v_meas = data.voltage_v
        soc_pre, soc_post = _soc_trajectory(data.soc0, self.i, self.dt, spec.capacity_ah)
        self.soc_pre = soc_pre
        self.soc_post = soc_post
        self.ocv = np.interp(soc_post, spec.ocv_soc, spec.ocv_v)
        # bilinear gather for r0 at (soc_post, current): 4 corners into the flat grid
        ns, nc = spec.n_soc, spec.n_current
        sj, sw = _interp_weights(spec.soc_breakpoints, soc_post)
        cj, cw = _interp_weights(spec.current_breakpoints, self.i)
        self.r0_idx = (sj[:, :, None] * nc + cj[:, None, :]).reshape(self.n, 4)
        self.r0_w = (sw[:, :, None] * cw[:, None, :]).reshape(self.n, 4)
        # linear gather for RC tables at the pre-step SoC
        self.rc_idx, self.rc_w = _interp_weights(spec.soc_breakpoints, soc_pre)

    def gather_soc(self, values: np.ndarray) -> np.ndarray:
        return (values[self.rc_idx] * self.rc_w).sum(axis=1)

    def gather_r0(self, r0_flat: np.ndarray) -> np.ndarray:
        return (r0_flat[self.r0_idx] * self.r0_w).sum(axis=1)


def _rc_scan(log_alpha: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Evaluate v[k] = exp(log_alpha[k]) * v[k-1] + u[k] from v[-1] = 0.

    Work happens in log space with block-local rescaling, so decay products
    never underflow and the whole scan stays vectorized.
    """
    la = np.maximum(log_alpha, _LOG_ALPHA_FLOOR)
    cs = np.cumsum(la)
    ncs = -cs
    out = np.empty_like(u)
    carry = 0.0
    pos = 0
    n = la.shape[0]
    base = 0.0
    while pos < n:
        # widest block whose internal decay range stays exp-representable
        end = int(np.searchsorted(ncs, -base + 400.0, side="right"))
        end = max(end, pos + 1)
        end = min(end, n)
        cs_b = cs[pos:end] - base
        growth = np.exp(-cs_b) * u[pos:end]
        out[pos:end] = np.exp(cs_b) * (carry + np.cumsum(growth))
        carry = out[end - 1]
        base = cs[end - 1]
        pos = end
    return out


def residuals(x: np.ndarray, prepared: list, spec: IdentSpec) -> np.ndarray:
    """Simulated minus measured voltage over all records (plus optional
    smoothing rows penalizing adjacent-breakpoint log differences)."""
    vals = decode(x, spec)
    r0_flat = vals["r0"].reshape(-1)
    blocks = []
    for rec in prepared:
        r1 = rec.gather_soc(vals["r1"])
        c1 = rec.gather_soc(vals["c1"])
        r2 = rec.gather_soc(vals["r2"])
        c2 = rec.gather_soc(vals["c2"])
        la1 = -rec.dt / (r1 * c1)
        la2 = -rec.dt / (r2 * c2)
        v1 = _rc_scan(la1, r1 * -np.expm1(la1) * rec.i)
        v2 = _rc_scan(la2, r2 * -np.expm1(la2) * rec.i)
        v_sim = rec.ocv + rec.i * rec.gather_r0(r0_flat) + v1 + v2
        blocks.append(v_sim - rec.v_meas)
    if spec.smoothing > 0.0:
        w = math.sqrt(spec.smoothing)
        ns, nc = spec.n_soc, spec.n_current
        r0_log = x[: ns * nc].reshape(ns, nc)
        blocks.append(w * np.diff(r0_log, axis=0).reshape(-1))
        for k in range(4):
            seg = x[ns * nc + k * ns : ns * nc + (k + 1) * ns]
            blocks.append(w * np.diff(seg))
    return np.concatenate(blocks)


def jacobian(x: np.ndarray, residual_fn, f0: np.ndarray | None = None) -> np.ndarray:
    """Forward-difference Jacobian: column j = (f(x + h_j e_j) - f(x)) / h_j
    with h_j = max(1e-6, 1e-6 * |x_j|)."""
    x = np.asarray(x, dtype=float)
    if f0 is None:
        f0 = residual_fn(x)
    n, p = f0.shape[0], x.shape[0]
    jac = np.empty((n, p))
    for j in range(p):
        h = max(1e-6, 1e-6 * abs(x[j]))
        xj = x.copy()
        xj[j] += h
        jac[:, j] = (residual_fn(xj) - f0) / h
    return jac


@dataclass
class LmResult:
    x: np.ndarray
    cost: float
    grad_inf: float
    n_iter: int
    n_fev: int
    status: str         # gradient | step | cost | max_iter
    cost_history: list


def solve_lm(
    residual_fn,
    x0: np.ndarray,
    jacobian_fn=None,
    tol_g: float = 1e-8,
    tol_x: float = 1e-10,
    tol_f: float = 1e-10,
    max_iter: int = 100,
    lambda0: float = 1e-3,
    lambda_max: float = 1e12,
    x_bounds: tuple | None = None,
) -> LmResult:
    """Levenberg-Marquardt with multiplicative damping on diag(JtJ).

    Accepted steps halve lambda, rejected ones quadruple it; the cost
    sequence is monotone non-increasing by construction.  Damping past
    ``lambda_max`` without an acceptable step is a hard failure.
    ``x_bounds`` (lo, hi) optionally boxes every component: candidate steps
    are projected into the box before the acceptance test, which keeps
    data-blind (flat) parameter directions from running off to overflow.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if jacobian_fn is None:
        jacobian_fn = lambda x, f: jacobian(x, residual_fn, f)
    x = np.asarray(x0, dtype=float).copy()
    if x_bounds is not None:
        x = np.clip(x, x_bounds[0], x_bounds[1])
    f = residual_fn(x)
    if not np.all(np.isfinite(f)):
        raise RuntimeError("residuals non-finite at the initial point")
    cost = float(f @ f)
    lam = lambda0
    n_fev = 1
    history = [cost]
    status = "max_iter"
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        jac = jacobian_fn(x, f)
        n_fev += x.shape[0]
        g = jac.T @ f
        grad_inf = float(np.max(np.abs(g)))
        if grad_inf <= tol_g:
            status = "gradient"
            break
        jtj = jac.T @ jac
        diag = np.diag(jtj).copy()
        # flat (data-blind) directions get a relative floor so the damped
        # system stays well-conditioned and barely moves them
        floor = max(float(diag.max()), 1.0) * 1e-8
        diag[diag < floor] = floor
        while True:
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                candidate = x + delta
                if x_bounds is not None:
                    candidate = np.clip(candidate, x_bounds[0], x_bounds[1])
                f_new = residual_fn(candidate)
                n_fev += 1
                cost_new = float(f_new @ f_new) if np.all(np.isfinite(f_new)) else np.inf
                if cost_new < cost:
                    break
            lam *= 4.0
            if lam > lambda_max:
                raise RuntimeError(
                    f"Levenberg-Marquardt damping exceeded {lambda_max:g} without progress"
                )
        step = candidate - x
        x = candidate
        rel_step = float(np.linalg.norm(step)) / (float(np.linalg.norm(x)) + tol_x)
        rel_decrease = (cost - cost_new) / max(cost, 1e-300)
        f, cost = f_new, cost_new
        history.append(cost)
        lam = max(lam * 0.5, 1e-12)
        if rel_step <= tol_x:
            status = "step"
            break
        if rel_decrease <= tol_f:
            status = "cost"
            break
    g = jacobian_fn(x, f).T @ f if status == "max_iter" else g
    return LmResult(
        x=x,
        cost=cost,
        grad_inf=float(np.max(np.abs(g))),
        n_iter=n_iter,
        n_fev=n_fev,
        status=status,
        cost_history=history,
    )


def initial_guess(prepared: list, spec: IdentSpec) -> np.ndarray:
    """Seed: r0 from the median step-to-step dV/dI (fallback 10 mOhm), RC
    branches at 5 mOhm with 30 s / 300 s time constants."""
    ratios = []
    for rec in prepared:
        di = np.diff(rec.i)
        dv = np.diff(rec.v_meas)
        mask = np.abs(di) >= 0.5
        if mask.any():
            ratios.append(np.abs(dv[mask] / di[mask]))
    if ratios:
        r0_est = float(np.clip(np.median(np.concatenate(ratios)), 1e-3, 0.2))
    else:
        r0_est = 0.01
    ns, nc = spec.n_soc, spec.n_current
    tables = {
        "r0": np.full((ns, nc), r0_est),
        "r1": np.full(ns, 5e-3),
        "c1": np.full(ns, 30.0 / 5e-3),
        "r2": np.full(ns, 5e-3),
        "c2": np.full(ns, 300.0 / 5e-3),
    }
    return encode(tables, spec)


def support_counts(prepared: list, spec: IdentSpec) -> tuple[np.ndarray, np.ndarray]:
    """Data support: samples nearest each SoC breakpoint, and (for r0)
    nearest each (SoC, current) breakpoint pair among samples actually
    carrying current."""
    ns, nc = spec.n_soc, spec.n_current
    soc_support = np.zeros(ns, dtype=np.int64)
    r0_support = np.zeros((ns, nc), dtype=np.int64)
    for rec in prepared:
        sj = np.argmin(np.abs(rec.soc_post[:, None] - spec.soc_breakpoints[None, :]), axis=1)
        np.add.at(soc_support, sj, 1)
        active = np.abs(rec.i) > 1e-3
        if active.any():
            cj = np.argmin(
                np.abs(rec.i[active, None] - spec.current_breakpoints[None, :]), axis=1
            )
            np.add.at(r0_support, (sj[active], cj), 1)
    return soc_support, r0_support


@dataclass
class IdentResult:
    """Identified tables plus solver and fit diagnostics.

    ``residual_vector`` (per-sample data residuals at the solution) and
    ``fit_stats`` (error statistics of those residuals) are fit-time
    diagnostics; the JSON round-trip keeps their summaries but not the raw
    vector.
    """

    spec: IdentSpec
    tables: dict
    cost: float
    cost_history: list
    n_iter: int
    status: str
    support_soc: np.ndarray
    support_r0: np.ndarray
    fit_n_samples: int
    fit_duration_s: float
    fit_mae_v: float
    fit_uniformity: dict | None = None
    fit_stats: ErrorStats | None = None
    residual_vector: np.ndarray | None = None
    name: str = "identified"

    def to_params(self) -> ecm.EcmParams:
        return build_params(self.tables, self.spec, name=self.name)

    @property
    def residual_norm(self) -> float:
        """Euclidean norm of the full residual vector at the solution."""
        return math.sqrt(self.cost)

    def time_constants(self) -> dict:
        """tau1/tau2 per SoC breakpoint (seconds)."""
        return {
            "tau1": self.tables["r1"] * self.tables["c1"],
            "tau2": self.tables["r2"] * self.tables["c2"],
        }

    def to_dict(self) -> dict:
        return {
            "format_version": RESULT_FORMAT_VERSION,
            "name": self.name,
            "spec": self.spec.to_dict(),
            "tables": {k: np.asarray(v).tolist() for k, v in self.tables.items()},
            "cost": self.cost,
            "cost_history": list(self.cost_history),
            "n_iter": self.n_iter,
            "status": self.status,
            "support_soc": self.support_soc.tolist(),
            "support_r0": self.support_r0.tolist(),
            "fit": {
                "n_samples": self.fit_n_samples,
                "duration_s": self.fit_duration_s,
                "mae_v": self.fit_mae_v,
                "uniformity": self.fit_uniformity,
            },
            "fit_stats": self.fit_stats.to_dict() if self.fit_stats is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IdentResult":
        if d.get("format_version") != RESULT_FORMAT_VERSION:
            raise ValueError(f"unsupported result format_version {d.get('format_version')!r}")
        return cls(
            spec=IdentSpec.from_dict(d["spec"]),
            tables={k: np.asarray(v, dtype=float) for k, v in d["tables"].items()},
            cost=d["cost"],
            cost_history=list(d["cost_history"]),
            n_iter=d["n_iter"],
            status=d["status"],
            support_soc=np.asarray(d["support_soc"], dtype=np.int64),
            support_r0=np.asarray(d["support_r0"], dtype=np.int64),
            fit_n_samples=d["fit"]["n_samples"],
            fit_duration_s=d["fit"]["duration_s"],
            fit_mae_v=d["fit"]["mae_v"],
            fit_uniformity=d["fit"].get("uniformity"),
            name=d.get("name", "identified"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "IdentResult":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save_csv(self, path) -> None:
        """Breakpoint/value/support rows for every identified parameter."""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("quantity,soc,current_a,value,support\n")
            for i, s in enumerate(self.spec.soc_breakpoints):
                for j, c in enumerate(self.spec.current_breakpoints):
                    f.write(
                        f"r0,{float(s)!r},{float(c)!r},"
                        f"{float(self.tables['r0'][i, j])!r},{self.support_r0[i, j]}\n"
                    )
            for key in ("r1", "c1", "r2", "c2"):
                for i, s in enumerate(self.spec.soc_breakpoints):
                    f.write(
                        f"{key},{float(s)!r},,"
                        f"{float(self.tables[key][i])!r},{self.support_soc[i]}\n"
                    )


def identify(
    data: IdentData | list,
    spec: IdentSpec,
    x0: np.ndarray | None = None,
    max_iter: int = 60,
    name: str = "identified",
) -> IdentResult:
    """Fit the 2-RC tables to one or more measurement records."""
    records = [data] if isinstance(data, IdentData) else list(data)
    if not records:
        raise ValueError("no measurement records given")
    prepared = [_PreparedRecord(rec, spec) for rec in records]
    if x0 is None:
        x0 = initial_guess(prepared, spec)

    def residual_fn(x):
        return residuals(x, prepared, spec)

    lm = solve_lm(residual_fn, x0, max_iter=max_iter, x_bounds=_X_BOUNDS)
    tables = decode(lm.x, spec)
    soc_support, r0_support = support_counts(prepared, spec)
    if int(np.count_nonzero(soc_support)) < 2:
        warnings.warn(
            "measurement data covers fewer than 2 SoC breakpoints; "
            "most parameters are unconstrained",
            stacklevel=2,
        )

    n_samples = int(sum(rec.n for rec in prepared))
    duration = float(sum(rec.n * rec.dt for rec in prepared))
    # data rows come first; any smoothing rows are appended after them
    f_data = residuals(lm.x, prepared, spec)[:n_samples]
    fit_mae = float(np.mean(np.abs(f_data)))

    fit_stats = ErrorStats(i_lo=-DESK_I_DIS_MAX_A, i_hi=DESK_I_CHG_MAX_A)
    v_hist = CoverageHistogram(DESK_V_MIN, DESK_V_MAX)
    i_hist = CoverageHistogram(-DESK_I_DIS_MAX_A, DESK_I_CHG_MAX_A)
    soc_hist = CoverageHistogram(0.0, 1.0)
    offset = 0
    for rec in prepared:
        fit_stats.update_many(f_data[offset : offset + rec.n], rec.soc_post, rec.i)
        offset += rec.n
        v_hist.update_many(rec.v_meas)
        i_hist.update_many(rec.i)
        soc_hist.update_many(rec.soc_post)
    fit_uniformity = {
        "v": v_hist.uniformity(),
        "i": i_hist.uniformity(),
        "soc": soc_hist.uniformity(),
    }

    return IdentResult(
        spec=spec,
        tables=tables,
        cost=lm.cost,
        cost_history=lm.cost_history,
        n_iter=lm.n_iter,
        status=lm.status,
        support_soc=soc_support,
        support_r0=r0_support,
        fit_n_samples=n_samples,
        fit_duration_s=duration,
        fit_mae_v=fit_mae,
        fit_uniformity=fit_uniformity,
        fit_stats=fit_stats,
        residual_vector=f_data,
        name=name,
    )


def synthesize_measurements(
    params: ecm.EcmParams,
    profile,
    dt: float = 1.0,
    noise_mv: float = 0.0,
    seed: int = 0,
    soc0: float | None = None,
    temp_c: float = 25.0,
    name: str | None = None,
) -> IdentData:
    """Run a profile against a cell and log it as a measurement record.

    The record cadence equals the simulation step, rows carry end-of-step
    voltage/SoC, and optional Gaussian noise (sigma in mV) lands on the
    voltage column only; SoC stays the coulomb-counted value a real logger
    would integrate from the current channel.
    """
    soc_init = profile.start_soc if soc0 is None else soc0
    state = ecm.CellState.rested(soc_init, params.n_rc, temp_c)
    sim = ecm.simulate_profile(params, profile, state, dt)
    v = sim.voltage_v
    if noise_mv > 0.0:
        rng = np.random.default_rng(seed)
        v = v + rng.normal(0.0, noise_mv * 1e-3, size=v.shape)
    return IdentData(
        t_s=sim.t_s + dt,
        current_a=sim.current_a,
        voltage_v=v,
        soc=sim.soc,
        soc0=soc_init,
        temp_c=temp_c,
        name=name or profile.name,
    )


def evaluate(
    params: ecm.EcmParams,
    data: IdentData,
    err_max_v: float = 0.015,
    i_lo: float = -10.0,
    i_hi: float = 10.0,
) -> ErrorStats:
    """Replay a holdout record through the identified cell step by step and
    accumulate voltage-error statistics (this deliberately uses the plain
    per-step model, not the vectorized fit path).  ``i_lo``/``i_hi`` fix the
    current axis of the error-location histogram so stats from different
    records stay mergeable."""
    state = ecm.CellState.rested(data.soc0, params.n_rc, data.temp_c)
    n = data.t_s.shape[0]
    v_sim = np.empty(n)
    soc_sim = np.empty(n)
    for k in range(n):
        res = ecm.step(params, state, float(data.current_a[k]), data.dt)
        state = res.state
        v_sim[k] = res.terminal_voltage
        soc_sim[k] = state.soc
    stats = ErrorStats(err_max_v=err_max_v, i_lo=i_lo, i_hi=i_hi)
    stats.update_many(v_sim - data.voltage_v, soc_sim, data.current_a)
    return stats
