"""Synthetic cell parameter sets shipped with the package.

``refcell`` is the desk-scale plant: a 5 Ah cell with three RC branches whose
time constants span ~10 s / ~100 s / ~1000 s, a monotone 3.0-4.2 V OCV curve
and a series resistance with mild charge/discharge asymmetry.  It stands in
for proprietary measured cells: every value is generated from smooth closed
forms, so nothing here is calibration data.

``truth_cell_2rc`` builds a two-branch cell whose parameters sit exactly on a
given identification grid, so identification runs have an exact recoverable
ground truth.
"""
from __future__ import annotations

import numpy as np

from .ecm import EcmParams, LookupTable

__all__ = [
    "refcell",
    "truth_cell_2rc",
    "perturbed_cell",
    "DESK_V_MIN",
    "DESK_V_MAX",
    "DESK_I_CHG_MAX_A",
    "DESK_I_DIS_MAX_A",
    "DESK_CAPACITY_AH",
]

# Desk-scale operating limits for the 5 Ah reference cell (2C both ways).
DESK_V_MIN = 2.8
DESK_V_MAX = 4.35
DESK_I_CHG_MAX_A = 10.0
DESK_I_DIS_MAX_A = 10.0
DESK_CAPACITY_AH = 5.0

_SOC_BPS = np.linspace(0.0, 1.0, 21)
_TEMP_BPS = np.array([0.0, 25.0, 45.0])
_CURRENT_BPS = np.array([-60.0, -10.0, -2.0, 0.0, 2.0, 10.0, 120.0])


def _ocv_curve(soc: np.ndarray) -> np.ndarray:
    # monotone 3.0 V -> 4.2 V, ~3.63 V at mid SoC
    s = np.asarray(soc, dtype=float)
    return 3.0 + 1.2 * (1.35 * s - 0.85 * s**2 + 0.5 * s**3)


def refcell() -> EcmParams:
    """Desk-scale 5 Ah / 3-RC reference cell."""
    s = _SOC_BPS[:, None]
    t = _TEMP_BPS[None, :]
    ocv = _ocv_curve(s) + 2e-4 * (t - 25.0)

    # series resistance: higher when empty and cold, Butler-Volmer-like easing
    # at high |I| with slight charge/discharge asymmetry
    s3 = _SOC_BPS[:, None, None]
    t3 = _TEMP_BPS[None, :, None]
    i3 = _CURRENT_BPS[None, None, :]
    r0 = (
        (0.009 + 0.011 * (1.0 - s3) ** 2)
        * (1.0 + 0.004 * (25.0 - t3))
        * (1.0 + 0.25 * np.exp(-np.abs(i3) / 15.0) - 0.04 * np.tanh(i3 / 30.0))
    )

    temp_r = 1.0 + 0.003 * (25.0 - t)  # resistances grow when cold
    temp_c = 1.0 - 0.002 * (25.0 - t)  # capacitances shrink when cold
    pairs = []
    for r_base, r_slope, c_base, c_slope in (
        (0.004, 0.25, 2500.0, 0.20),     # tau ~ 10 s
        (0.006, 0.25, 16000.0, 0.15),    # tau ~ 100 s
        (0.005, 0.20, 200000.0, 0.10),   # tau ~ 1000 s
    ):
        r = r_base * (1.0 + r_slope * (1.0 - s)) * temp_r
        c = c_base * (1.0 + c_slope * s) * temp_c
        pairs.append(
            (
                LookupTable((_SOC_BPS, _TEMP_BPS), r, "rc_r"),
                LookupTable((_SOC_BPS, _TEMP_BPS), c, "rc_c"),
            )
        )

    return EcmParams(
        capacity=LookupTable((_TEMP_BPS,), np.array([4.7, 5.0, 5.1]), "capacity"),
        ocv=LookupTable((_SOC_BPS, _TEMP_BPS), ocv, "ocv"),
        r0=LookupTable((_SOC_BPS, _TEMP_BPS, _CURRENT_BPS), r0, "r0"),
        rc_pairs=pairs,
        name="refcell",
    )


def truth_cell_2rc(
    soc_breakpoints: np.ndarray | None = None,
    current_breakpoints: np.ndarray | None = None,
    temp_c: float = 25.0,
    capacity_ah: float = DESK_CAPACITY_AH,
) -> EcmParams:
    """Two-RC ground-truth cell with parameters exactly on the given grid.

    Defaults match the identification grid (11 SoC points, current
    breakpoints at the desk limits and +/-0.2C), so a fit over the same grid
    can recover every value exactly from noiseless data.
    """
    soc = np.asarray(
        soc_breakpoints if soc_breakpoints is not None else np.linspace(0.0, 1.0, 11),
        dtype=float,
    )
    cur = np.asarray(
        current_breakpoints
        if current_breakpoints is not None
        else np.array([-DESK_I_DIS_MAX_A, -1.0, 1.0, DESK_I_CHG_MAX_A]),
        dtype=float,
    )
    temp = np.array([temp_c])

    ocv = _ocv_curve(soc)[:, None] + np.zeros((1, 1))
    r0 = (
        (0.008 + 0.010 * (1.0 - soc[:, None, None]) ** 2)
        * (1.0 + 0.20 * np.exp(-np.abs(cur[None, None, :]) / 5.0)
           - 0.03 * np.tanh(cur[None, None, :] / 10.0))
    )
    r1 = (0.004 + 0.002 * (1.0 - soc))[:, None]
    c1 = ((18.0 + 8.0 * soc)[:, None]) / r1        # tau1: 18 -> 26 s
    r2 = (0.005 + 0.002 * soc)[:, None]
    c2 = ((260.0 + 120.0 * soc)[:, None]) / r2     # tau2: 260 -> 380 s

    return EcmParams(
        capacity=LookupTable((temp,), np.array([capacity_ah]), "capacity"),
        ocv=LookupTable((soc, temp), ocv, "ocv"),
        r0=LookupTable((soc, temp, cur), r0, "r0"),
        rc_pairs=[
            (LookupTable((soc, temp), r1, "rc_r"), LookupTable((soc, temp), c1, "rc_c")),
            (LookupTable((soc, temp), r2, "rc_r"), LookupTable((soc, temp), c2, "rc_c")),
        ],
        name="truth_cell_2rc",
    )


def perturbed_cell(base: EcmParams, rng: np.random.Generator, frac: float = 0.2) -> EcmParams:
    """Scale resistance/capacitance/capacity tables by independent uniform
    factors in [1-frac, 1+frac].  OCV is left untouched (a scaled OCV curve
    would be an unphysical cell, not a manufacturing spread)."""
    if not 0.0 <= frac < 1.0:
        raise ValueError(f"perturbation fraction must be in [0, 1), got {frac}")

    def factor() -> float:
        return float(rng.uniform(1.0 - frac, 1.0 + frac))

    pairs = [(r.scaled(factor()), c.scaled(factor())) for r, c in base.rc_pairs]
    return EcmParams(
        capacity=base.capacity.scaled(factor()),
        ocv=base.ocv,
        r0=base.r0.scaled(factor()),
        rc_pairs=pairs,
        name=f"{base.name}_perturbed",
    )
