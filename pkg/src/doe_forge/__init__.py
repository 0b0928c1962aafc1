"""Simulation-grounded design-of-experiments for battery cell testing.

The package trains a reinforcement-learning agent to drive a battery cell
through information-dense current profiles, simulates those profiles (and
traditional characterization suites) against table-driven equivalent-circuit
cells, identifies cell parameters from the resulting measurements by
nonlinear least squares, and compares the learned and traditional test
plans on holdout accuracy per hour of test time.
"""
from .cells import (
    DESK_CAPACITY_AH,
    DESK_I_CHG_MAX_A,
    DESK_I_DIS_MAX_A,
    DESK_V_MAX,
    DESK_V_MIN,
    perturbed_cell,
    refcell,
    truth_cell_2rc,
)
from .ecm import (
    CellState,
    EcmParams,
    LookupTable,
    SimResult,
    StepResult,
    rc_discretize,
    simulate_profile,
    step,
)
from .env import BatteryDoeEnv, EnvConfig, RewardWeights, scale_action
from .ident import (
    IdentData,
    IdentResult,
    IdentSpec,
    identify,
    load_measurements,
    save_measurements,
    synthesize_measurements,
)
from .metrics import BandCoverage, CoverageHistogram, ErrorStats, band_energies, uniformity
from .nn import Adam, Mlp
from .profiles import (
    CurrentProfile,
    PulseSpec,
    concat_profiles,
    constant_current_profile,
    drive_cycle_profile,
    load_profile,
    pulse_profile,
    save_profile,
    traditional_suite,
)
from .td3 import ReplayBuffer, Td3Agent, Td3Config, TrainResult, generate_doe, train

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # cells
    "DESK_CAPACITY_AH",
    "DESK_I_CHG_MAX_A",
    "DESK_I_DIS_MAX_A",
    "DESK_V_MAX",
    "DESK_V_MIN",
    "refcell",
    "truth_cell_2rc",
    "perturbed_cell",
    # ecm
    "LookupTable",
    "EcmParams",
    "CellState",
    "StepResult",
    "SimResult",
    "rc_discretize",
    "step",
    "simulate_profile",
    # profiles
    "CurrentProfile",
    "PulseSpec",
    "constant_current_profile",
    "pulse_profile",
    "drive_cycle_profile",
    "concat_profiles",
    "save_profile",
    "load_profile",
    "traditional_suite",
    # metrics
    "uniformity",
    "CoverageHistogram",
    "BandCoverage",
    "band_energies",
    "ErrorStats",
    # env
    "BatteryDoeEnv",
    "EnvConfig",
    "RewardWeights",
    "scale_action",
    # nn / td3
    "Mlp",
    "Adam",
    "ReplayBuffer",
    "Td3Agent",
    "Td3Config",
    "TrainResult",
    "train",
    "generate_doe",
    # ident
    "IdentSpec",
    "IdentData",
    "IdentResult",
    "identify",
    "synthesize_measurements",
    "save_measurements",
    "load_measurements",
]
