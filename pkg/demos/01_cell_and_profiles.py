#!/usr/bin/env python3
"""
Cell model and current-profile playground
=========================================

Builds the 5 Ah reference cell, replays three kinds of excitation against it
(constant-current discharge, a pulse ladder, a randomized drive cycle), and
prints what each one reveals about the cell.  Traces land in ``demos/out/``
as plain CSV so they are easy to plot.

Run:  python3 demos/01_cell_and_profiles.py
"""
from pathlib import Path

import numpy as np

from doe_forge.cells import refcell
from doe_forge.ecm import CellState, simulate_profile
from doe_forge.profiles import (
    PulseSpec,
    constant_current_profile,
    drive_cycle_profile,
    pulse_profile,
)

OUT = Path(__file__).parent / "out" / "01_cell_and_profiles"
OUT.mkdir(parents=True, exist_ok=True)


def save_trace(sim, path):
    rows = np.column_stack([sim.t_s, sim.current_a, sim.voltage_v, sim.soc])
    np.savetxt(path, rows, delimiter=",", header="t_s,current_a,voltage_v,soc",
               comments="", fmt="%.6f")


def main():
    cell = refcell()
    capacity = cell.capacity(25.0)
    print(f"cell: {cell.name}, {capacity:.1f} Ah, {len(cell.rc_pairs)} RC branches")

    # --- 1C discharge: capacity bookkeeping and the OCV curve under load ---
    discharge = constant_current_profile(-1.0, capacity, name="discharge_1c")
    sim = simulate_profile(cell, discharge, CellState.rested(1.0, len(cell.rc_pairs)), dt=1.0)
    save_trace(sim, OUT / "discharge_1c.csv")
    print(f"\n1C discharge: {discharge.duration:.0f} s, "
          f"SoC {1.0:.2f} -> {sim.soc[-1]:.3f}, "
          f"voltage {sim.voltage_v[0]:.3f} V -> {sim.voltage_v[-1]:.3f} V")

    # --- pulse ladder: the workhorse of resistance characterization ---
    # each pulse's instantaneous voltage jump isolates the series resistance;
    # the relaxation after the pulse exposes the RC time constants
    pulses = pulse_profile(
        PulseSpec(amplitudes_a=(2.5, 10.0), pulse_s=10.0, rest_s=30.0,
                  soc_points=(0.8, 0.5, 0.2)),
        capacity, start_soc=1.0, name="pulse_ladder",
    )
    sim = simulate_profile(cell, pulses, CellState.rested(1.0, len(cell.rc_pairs)), dt=1.0)
    save_trace(sim, OUT / "pulse_ladder.csv")
    jumps = np.abs(np.diff(sim.voltage_v))[np.abs(np.diff(sim.current_a)) > 5.0]
    print(f"\npulse ladder: {pulses.duration:.0f} s, "
          f"{np.count_nonzero(np.abs(np.diff(sim.current_a)) > 5.0)} large current edges, "
          f"median voltage jump {np.median(jumps) * 1e3:.1f} mV")

    # --- drive cycle: broadband excitation used for validation, not fitting ---
    cycle = drive_cycle_profile(1800.0, i_chg_max_a=10.0, i_dis_max_a=10.0,
                                capacity_ah=capacity, seed=42, start_soc=0.7)
    sim = simulate_profile(cell, cycle, CellState.rested(0.7, len(cell.rc_pairs)), dt=1.0)
    save_trace(sim, OUT / "drive_cycle.csv")
    print(f"\ndrive cycle: {cycle.duration:.0f} s, "
          f"current range [{sim.current_a.min():+.1f}, {sim.current_a.max():+.1f}] A, "
          f"SoC range [{sim.soc.min():.2f}, {sim.soc.max():.2f}], "
          f"voltage range [{sim.voltage_v.min():.3f}, {sim.voltage_v.max():.3f}] V")

    print(f"\ntraces written to {OUT}/")


if __name__ == "__main__":
    main()
