"""Secure UAV uplink simulation: UT-UR matching followed by overlapping
coalitions of relays that null-steer against eavesdroppers."""

from .beamforming import (NEG_INF, BeamformingProblem, BeamformingSolution, coalition_utility,
                          null_steering_weights)
from .coalition import (CoalitionStructure, StructureUtility, as_baseline, check_stability,
                        dcs_baseline, evaluate_structure, fgs_baseline, initialize_structure,
                        ocf_iterate)
from .config import ConfigError, ExperimentConfig, InfeasibleConfigError, PhysicalParams, Region
from .geometry import ChannelSet, Scenario, effective_radius, realize_channels, sample_scenario
from .harness import ExperimentResult, TrialMetrics, ablation_two_stage, run_experiment, run_trial
from .matching import (Matching, PreferenceTables, build_preferences, da_baseline,
                       is_pairwise_stable, proposed_matching, random_baseline)

__version__ = "0.1.0"

__all__ = [
    "NEG_INF",
    "BeamformingProblem",
    "BeamformingSolution",
    "coalition_utility",
    "null_steering_weights",
    "CoalitionStructure",
    "StructureUtility",
    "as_baseline",
    "check_stability",
    "dcs_baseline",
    "evaluate_structure",
    "fgs_baseline",
    "initialize_structure",
    "ocf_iterate",
    "ConfigError",
    "ExperimentConfig",
    "InfeasibleConfigError",
    "PhysicalParams",
    "Region",
    "ChannelSet",
    "Scenario",
    "effective_radius",
    "realize_channels",
    "sample_scenario",
    "ExperimentResult",
    "TrialMetrics",
    "ablation_two_stage",
    "run_experiment",
    "run_trial",
    "Matching",
    "PreferenceTables",
    "build_preferences",
    "da_baseline",
    "is_pairwise_stable",
    "proposed_matching",
    "random_baseline",
]
