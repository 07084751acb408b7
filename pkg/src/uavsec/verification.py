"""Invariant suites used by ``uavsec verify``.

Each suite returns a list of human-readable violations; empty means healthy.
"""

from __future__ import annotations

import math

import numpy as np

from .beamforming import BeamformingProblem, null_steering_weights
from .coalition import (OCFTrace, UtilityTable, check_stability, initialize_structure,
                        ocf_iterate)
from .config import ExperimentConfig
from .geometry import derive_seed, make_rng, realize_channels, sample_scenario
from .matching import build_preferences, is_pairwise_stable, proposed_matching


def random_problem(rng: np.random.Generator, max_n: int = 8, max_s: int = 4,
                   power_budget: float = 0.01) -> BeamformingProblem:
    s = int(rng.integers(0, max_s + 1))
    n = int(rng.integers(s + 1, max(s + 1, max_n) + 1))
    h = rng.normal(size=n) + 1j * rng.normal(size=n)
    H = rng.normal(size=(n, s)) + 1j * rng.normal(size=(n, s))
    return BeamformingProblem(h, H, power_budget)


def random_feasible_weights(rng: np.random.Generator, h_te: np.ndarray, power_budget: float,
                            count: int) -> np.ndarray:
    """``count`` random weights with ``w^H H = 0`` and ``|w|^2 <= P0`` (rows)."""
    n, s = h_te.shape
    z = rng.normal(size=(count, n)) + 1j * rng.normal(size=(count, n))
    if s:
        # orthonormal basis of the null space of H^H from a full SVD
        _, _, vh = np.linalg.svd(h_te.conj().T)
        null = vh[s:].conj().T
        z = z @ (null @ null.conj().T).T
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    radius = np.sqrt(power_budget * rng.random((count, 1)))
    return z / norms * radius


def check_beamforming(problem: BeamformingProblem, rng: np.random.Generator,
                      samples: int = 1000, rtol: float = 1e-9) -> list[str]:
    sol = null_steering_weights(problem)
    w, h, H, p0 = sol.weights, problem.h_tr, problem.h_te, problem.power_budget
    out = []
    scale = math.sqrt(p0) * (np.linalg.norm(H, axis=0).max() if H.shape[1] else 1.0)
    if H.shape[1] and np.abs(w.conj() @ H).max() > rtol * scale:
        out.append(f"null constraint violated by {np.abs(w.conj() @ H).max():.3e}")
    if abs(np.vdot(w, w).real - p0) > rtol * p0:
        out.append(f"power {np.vdot(w, w).real!r} != budget {p0!r}")
    cand = random_feasible_weights(rng, H, p0, samples)
    best = float(np.max(np.abs(cand.conj() @ h) ** 2))
    if best > sol.array_gain * (1 + rtol):
        out.append(f"random feasible weight beats closed form: {best!r} > {sol.array_gain!r}")
    return out


def verify(seed: int, instances: int, config: ExperimentConfig | None = None) -> dict[str, list[str]]:
    """Run the beamforming, matching and coalition suites on ``instances``
    random cases each."""
    config = config or ExperimentConfig()
    rng = make_rng(seed, "verify-bf")
    report: dict[str, list[str]] = {"beamforming": [], "matching": [], "coalition": []}
    for t in range(instances):
        problem = random_problem(rng, power_budget=config.params.power_budget)
        report["beamforming"] += [f"instance {t}: {v}" for v in check_beamforming(problem, rng)]

    for t in range(instances):
        s = derive_seed(seed, "verify", t)
        scenario = sample_scenario(config, s)
        channels = realize_channels(scenario, s)
        prefs = build_preferences(scenario, channels)
        matching = proposed_matching(prefs, scenario.quotas, config.delta)
        stable, witness = is_pairwise_stable(matching, prefs)
        if not stable:
            report["matching"].append(f"instance {t}: approved swap {witness}")

        table = UtilityTable(matching.assignment, channels, config.params)
        trace = OCFTrace([], [], [])
        start = initialize_structure(matching.assignment, channels, config.params)
        try:
            final = ocf_iterate(start, matching.assignment, channels, config.params,
                                seed=s, table=table, trace=trace)
        except RuntimeError as exc:
            report["coalition"].append(f"instance {t}: {exc}")
            continue
        ok, move = check_stability(final, matching.assignment, channels, config.params, table)
        if not ok:
            report["coalition"].append(f"instance {t}: terminal structure admits {move}")
        if any(b < a for a, b in zip(trace.totals, trace.totals[1:])):
            report["coalition"].append(f"instance {t}: total utility decreased")
        if len({st.masks for st in trace.structures}) != len(trace.structures):
            report["coalition"].append(f"instance {t}: structure revisited")
    return report
