"""Battery excitation environment for coverage-driven profile generation.

One episode is one candidate DoE profile: the agent picks a normalized
current each step, the cell reacts, and the reward pays for newly gained
coverage of voltage / current / SoC histograms and of three spectral bands,
minus a per-step time cost and safety-violation penalties.

Observation layout (43 elements, all in [0, 1]):

    [0]      terminal voltage, normalized over [v_min, v_max]
    [1]      last applied current, normalized over [-i_dis_max, i_chg_max]
    [2]      SoC
    [3:13]   voltage coverage histogram (counts / total)
    [13:23]  current coverage histogram
    [23:33]  SoC coverage histogram
    [33:36]  per-band window-visit fractions (low / mid / high)
    [36:42]  mean normalized current over trailing windows of
             1, 4, 16, 64, 256, 1024 steps
    [42]     elapsed episode fraction

Actions are scalars in [-1, 1]; a >= 0 scales to a * i_chg_max, a < 0 to
a * i_dis_max, so the charge and discharge ranges can differ.  If the
requested current would push terminal voltage outside [v_min, v_max], the
applied current is zeroed and the step is flagged as a violation (as is SoC
saturation at 0 or 1).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ecm
from .cells import DESK_I_CHG_MAX_A, DESK_I_DIS_MAX_A, DESK_V_MAX, DESK_V_MIN
from .metrics import NBINS, BandCoverage, CoverageHistogram
from .profiles import CurrentProfile

__all__ = [
    "OBS_SIZE",
    "ACTION_WINDOW_STEPS",
    "RewardWeights",
    "EnvConfig",
    "EpisodeLog",
    "BatteryDoeEnv",
    "scale_action",
    "save_episode_log",
    "load_episode_log",
]

# --- frozen observation layout ---------------------------------------------
IDX_VOLTAGE = 0
IDX_CURRENT = 1
IDX_SOC = 2
SL_VHIST = slice(3, 3 + NBINS)
SL_IHIST = slice(13, 13 + NBINS)
SL_SOCHIST = slice(23, 23 + NBINS)
SL_BANDS = slice(33, 36)
SL_ACTION_WINDOWS = slice(36, 42)
IDX_TIME = 42
OBS_SIZE = 43

# trailing mean-current windows grow geometrically (x4)
ACTION_WINDOW_STEPS = (1, 4, 16, 64, 256, 1024)


@dataclass
class RewardWeights:
    w_time: float = 10.0       # per unit of histogram-uniformity gain
    w_freq: float = 5.0        # per unit of band-coverage gain
    w_step: float = 0.01       # constant per-step time cost
    w_violation: float = 1.0   # per violating step


@dataclass
class EnvConfig:
    dt: float = 1.0
    max_episode_steps: int = 20000
    v_min: float = DESK_V_MIN
    v_max: float = DESK_V_MAX
    i_chg_max_a: float = DESK_I_CHG_MAX_A
    i_dis_max_a: float = DESK_I_DIS_MAX_A
    soc_init_range: tuple = (0.1, 0.9)
    temp_init_range: tuple = (25.0, 25.0)
    coverage_target: float = 0.94  # mean V/I/SoC uniformity ending the episode early
    band_window: int = 256
    band_hop: int = 64
    band_split_hz: tuple = (0.005, 0.05)
    band_visit_share_min: float = 0.2
    band_visit_power_min: float = 0.25
    reward: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        if isinstance(self.reward, dict):
            self.reward = RewardWeights(**self.reward)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.max_episode_steps <= 0:
            raise ValueError("max_episode_steps must be positive")
        if not self.v_max > self.v_min:
            raise ValueError("v_max must exceed v_min")
        if self.i_chg_max_a <= 0 or self.i_dis_max_a <= 0:
            raise ValueError("current limits must be positive magnitudes")
        lo, hi = self.soc_init_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("soc_init_range must be ordered within [0, 1]")
        if not 0.0 < self.coverage_target <= 1.0:
            raise ValueError("coverage_target must be in (0, 1]")


def scale_action(action: float, i_chg_max_a: float, i_dis_max_a: float) -> float:
    """Map a normalized action in [-1, 1] to amps, asymmetrically:
    non-negative actions scale to the charge limit, negative ones to the
    discharge limit."""
    a = min(1.0, max(-1.0, float(action)))
    return a * i_chg_max_a if a >= 0.0 else a * i_dis_max_a


@dataclass
class EpisodeLog:
    """Per-step episode record; times are step starts, spaced by dt."""

    t_s: np.ndarray
    action: np.ndarray
    current_a: np.ndarray
    voltage_v: np.ndarray
    soc: np.ndarray
    reward: np.ndarray
    dt: float
    start_soc: float
    temp_c: float

    def __len__(self) -> int:
        return self.t_s.shape[0]


LOG_HEADER = ("t_s", "action", "current_a", "voltage_v", "soc", "reward")


def save_episode_log(log: EpisodeLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(LOG_HEADER) + "\n")
        for row in zip(log.t_s, log.action, log.current_a, log.voltage_v, log.soc, log.reward):
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as f:
        json.dump({"dt": log.dt, "start_soc": log.start_soc, "temp_c": log.temp_c}, f, indent=2)
        f.write("\n")


def load_episode_log(
    path, dt: float | None = None, start_soc: float | None = None, temp_c: float | None = None
) -> EpisodeLog:
    """Load an episode log; omitted dt/start_soc/temp_c fall back to the
    metadata sidecar written at save time."""
    path = Path(path)
    cols = {h: [] for h in LOG_HEADER}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(LOG_HEADER):
            raise ValueError(f"{path}: expected header '{','.join(LOG_HEADER)}'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(LOG_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(LOG_HEADER)} columns")
            for h, v in zip(LOG_HEADER, row):
                cols[h].append(float(v))
    meta = {}
    sidecar = Path(str(path) + ".meta.json")
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as f:
            meta = json.load(f)
    if dt is None:
        dt = meta.get("dt")
    if start_soc is None:
        start_soc = meta.get("start_soc")
    if temp_c is None:
        temp_c = meta.get("temp_c", 25.0)
    if dt is None or start_soc is None:
        raise ValueError(f"{path}: no metadata sidecar; pass dt and start_soc explicitly")
    return EpisodeLog(
        *(np.asarray(cols[h]) for h in LOG_HEADER),
        dt=float(dt),
        start_soc=float(start_soc),
        temp_c=float(temp_c),
    )


class _TrailingMeans:
    """Streaming means of the last L values for several window lengths L."""

    def __init__(self, lengths: tuple, neutral: float):
        self.lengths = lengths
        self.neutral = neutral
        cap = max(lengths)
        self._ring = np.zeros(cap)
        self._n = 0
        self._sums = np.zeros(len(lengths))

    def push(self, x: float) -> None:
        cap = self._ring.shape[0]
        pos = self._n % cap
        for j, length in enumerate(self.lengths):
            self._sums[j] += x
            if self._n >= length:
                # value leaving window j sits `length` pushes back
                self._sums[j] -= self._ring[(self._n - length) % cap]
        self._ring[pos] = x
        self._n += 1

    def means(self) -> np.ndarray:
        if self._n == 0:
            return np.full(len(self.lengths), self.neutral)
        counts = np.minimum(self._n, np.asarray(self.lengths))
        return self._sums / counts


class BatteryDoeEnv:
    """Coverage-driven excitation environment around one equivalent-circuit cell."""

    def __init__(self, params: ecm.EcmParams, config: EnvConfig | None = None, seed: int | None = None):
        self.params = params
        self.config = config or EnvConfig()
        self._rng = np.random.default_rng(seed)
        self._i_span = self.config.i_chg_max_a + self.config.i_dis_max_a
        self.state: ecm.CellState | None = None
        self._needs_reset = True

    # -- normalization helpers ------------------------------------------------
    def _v_norm(self, v: float) -> float:
        c = self.config
        return min(1.0, max(0.0, (v - c.v_min) / (c.v_max - c.v_min)))

    def _i_norm(self, i: float) -> float:
        return (i + self.config.i_dis_max_a) / self._i_span

    # -- episode control -------------------------------------------------------
    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        c = self.config
        soc0 = float(self._rng.uniform(*c.soc_init_range))
        temp0 = float(self._rng.uniform(*c.temp_init_range))
        self.state = ecm.CellState.rested(soc0, self.params.n_rc, temp0)
        self._start_soc = soc0
        self._steps = 0
        self._violations = 0
        self._last_applied_a = 0.0
        self._last_voltage = self.params.ocv(soc0, temp0)
        self.v_hist = CoverageHistogram(c.v_min, c.v_max)
        self.i_hist = CoverageHistogram(-c.i_dis_max_a, c.i_chg_max_a)
        self.soc_hist = CoverageHistogram(0.0, 1.0)
        self.bands = BandCoverage(
            c.band_window,
            c.band_hop,
            c.dt,
            c.band_split_hz,
            c.band_visit_share_min,
            c.band_visit_power_min,
        )
        self._act_windows = _TrailingMeans(ACTION_WINDOW_STEPS, self._i_norm(0.0))
        self._log_rows: list[tuple] = []
        self._needs_reset = False
        return self._observe()

    @property
    def violations(self) -> int:
        """Count of violating steps this episode."""
        return self._violations

    def coverage_score(self) -> float:
        """Mean uniformity over the V / I / SoC histograms."""
        return (
            self.v_hist.uniformity() + self.i_hist.uniformity() + self.soc_hist.uniformity()
        ) / 3.0

    def _quality_sum(self) -> float:
        return (
            self.v_hist.uniformity()
            + self.i_hist.uniformity()
            + self.soc_hist.uniformity()
        )

    def step(self, action: float):
        """Apply one action; returns (obs, reward, done, info).

        info carries 'violation' (this step), 'terminal' (coverage target
        met) and 'truncated' (step limit) -- terminal and truncated are
        distinct so a learner can bootstrap through truncations.
        """
        if self._needs_reset:
            raise RuntimeError("environment must be reset before stepping")
        c = self.config
        a = min(1.0, max(-1.0, float(action)))
        i_req = scale_action(a, c.i_chg_max_a, c.i_dis_max_a)

        predicted = ecm.step(self.params, self.state, i_req, c.dt)
        violation = False
        if not (c.v_min <= predicted.terminal_voltage <= c.v_max):
            violation = True
            applied = 0.0
            result = ecm.step(self.params, self.state, 0.0, c.dt)
        else:
            applied = i_req
            result = predicted
        violation = violation or result.saturated

        quality_before = self._quality_sum()
        band_before = self.bands.score()

        self.state = result.state
        self._last_applied_a = applied
        self._last_voltage = result.terminal_voltage
        self.v_hist.update(result.terminal_voltage)
        self.i_hist.update(applied)
        self.soc_hist.update(self.state.soc)
        self.bands.push(applied)
        self._act_windows.push(self._i_norm(applied))
        self._violations += violation
        self._steps += 1

        reward = (
            c.reward.w_time * (self._quality_sum() - quality_before)
            + c.reward.w_freq * (self.bands.score() - band_before)
            - c.reward.w_step
            - c.reward.w_violation * float(violation)
        )

        terminal = self.coverage_score() >= c.coverage_target
        truncated = self._steps >= c.max_episode_steps
        done = terminal or truncated
        self._log_rows.append(
            ((self._steps - 1) * c.dt, a, applied, result.terminal_voltage, self.state.soc, reward)
        )
        if done:
            self._needs_reset = True
        info = {"violation": violation, "terminal": terminal, "truncated": truncated}
        return self._observe(), reward, done, info

    def _observe(self) -> np.ndarray:
        obs = np.empty(OBS_SIZE)
        obs[IDX_VOLTAGE] = self._v_norm(self._last_voltage)
        obs[IDX_CURRENT] = self._i_norm(self._last_applied_a)
        obs[IDX_SOC] = self.state.soc
        obs[SL_VHIST] = self.v_hist.normalized()
        obs[SL_IHIST] = self.i_hist.normalized()
        obs[SL_SOCHIST] = self.soc_hist.normalized()
        obs[SL_BANDS] = self.bands.normalized_visits()
        obs[SL_ACTION_WINDOWS] = self._act_windows.means()
        obs[IDX_TIME] = self._steps / self.config.max_episode_steps
        return obs

    # -- episode products --------------------------------------------------------
    def episode_log(self) -> EpisodeLog:
        if not self._log_rows:
            raise ValueError("no steps logged yet")
        cols = list(zip(*self._log_rows))
        return EpisodeLog(
            *(np.asarray(col, dtype=float) for col in cols),
            dt=self.config.dt,
            start_soc=self._start_soc,
            temp_c=self.state.temp_c,
        )

    def export_profile(self, name: str = "ai_doe") -> CurrentProfile:
        """Turn the logged applied currents into a replayable profile: one
        sample per step, duration = steps * dt, source 'ai'."""
        log = self.episode_log()
        return CurrentProfile(
            log.t_s,
            log.current_a,
            name=name,
            source="ai",
            dt_nominal=self.config.dt,
            duration=len(log) * self.config.dt,
            start_soc=log.start_soc,
        )
