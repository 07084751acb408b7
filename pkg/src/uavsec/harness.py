"""Monte-Carlo orchestration: trials, sweeps, aggregation and the ablation.

Every trial draws its layout and channels from ``derive_seed(master, trial)``.
The seed ignores both the scheme and the sweep point, so all schemes and all
sweep values at one trial index share the same randomness.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .coalition import (CoalitionError, UtilityTable, as_baseline, dcs_best, evaluate_groups,
                        evaluate_structure, fgs_groups, initialize_structure, members_of,
                        ocf_iterate)
from .config import ExperimentConfig
from .geometry import DegenerateGeometryError, derive_seed, realize_channels, sample_scenario
from .matching import (Matching, MatchingError, build_preferences, da_baseline,
                       proposed_matching, random_baseline, social_welfare)

METRICS = ("total_utility", "avg_utility", "welfare")
ABLATION_QUADRANTS = {
    "a": ("RMS", "AS"),
    "b": ("PMA", "AS"),
    "c": ("RMS", "OCFA"),
    "d": ("PMA", "OCFA"),
}


def trial_seed(config: ExperimentConfig, trial_index: int) -> int:
    return derive_seed(config.seed, trial_index)


def scheme_label(stage1: str, stage2: str) -> str:
    return f"{stage1}+{stage2}"


@dataclass(frozen=True)
class TrialMetrics:
    """Outcome of one scheme pair on one layout.

    ``sentinel`` marks trials whose structure scored ``-inf`` or that raised;
    such trials are counted but never averaged.
    """

    stage1: str
    stage2: str
    trial_index: int
    seed: int
    per_ut: tuple[float, ...]
    total: float
    average: float
    welfare: float
    wall_time: float
    assignment: tuple[int, ...] = ()
    groups: tuple[tuple[int, ...], ...] = ()
    error: str | None = None

    @property
    def scheme(self) -> str:
        return scheme_label(self.stage1, self.stage2)

    @property
    def sentinel(self) -> bool:
        return self.error is not None or not math.isfinite(self.total)

    def metric(self, name: str) -> float:
        return {"total_utility": self.total, "avg_utility": self.average,
                "welfare": self.welfare}[name]


@dataclass(frozen=True)
class ResultRow:
    sweep_value: float
    scheme: str
    metric: str
    mean: float
    std: float
    n: int


@dataclass
class ExperimentResult:
    """Aggregated rows plus the per-trial samples behind them.

    ``samples[(sweep_value, scheme, metric)]`` is indexed by trial, with NaN
    for failed trials, so paired comparisons line up.
    """

    axis: str | None
    sweep_values: tuple[float, ...]
    schemes: tuple[str, ...]
    repetitions: int
    rows: list[ResultRow] = field(default_factory=list)
    samples: dict[tuple[float, str, str], tuple[float, ...]] = field(default_factory=dict)
    failed: dict[tuple[float, str], int] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    # trials where OCFA ended below the alone scheme on the same matching
    below_alone: dict[tuple[float, str], int] = field(default_factory=dict)

    def row(self, sweep_value: float, scheme: str, metric: str = "total_utility") -> ResultRow:
        for r in self.rows:
            if r.sweep_value == sweep_value and r.scheme == scheme and r.metric == metric:
                return r
        raise KeyError((sweep_value, scheme, metric))

    def mean(self, scheme: str, metric: str = "total_utility",
             sweep_value: float | None = None) -> float:
        if sweep_value is None:
            sweep_value = self.sweep_values[0]
        return self.row(sweep_value, scheme, metric).mean

    def series(self, scheme: str, metric: str = "total_utility") -> list[float]:
        return [self.row(v, scheme, metric).mean for v in self.sweep_values]

    def subset(self, schemes: Iterable[str]) -> ExperimentResult:
        keep = tuple(s for s in self.schemes if s in set(schemes))
        return ExperimentResult(
            self.axis, self.sweep_values, keep, self.repetitions,
            rows=[r for r in self.rows if r.scheme in keep],
            samples={k: v for k, v in self.samples.items() if k[1] in keep},
            failed={k: v for k, v in self.failed.items() if k[1] in keep},
            errors=list(self.errors),
            below_alone={k: v for k, v in self.below_alone.items() if k[1] in keep},
        )


def _stage1(name: str, prefs, quotas, seed: int, delta: float | None) -> Matching:
    if name == "PMA":
        return proposed_matching(prefs, quotas, delta)
    if name == "DAMS":
        return da_baseline(prefs, quotas)
    if name == "RMS":
        return random_baseline(prefs.n_ut, quotas, seed)
    raise ValueError(f"unknown stage-1 scheme {name!r}")


def _stage2(name: str, assignment, channels, params, table, seed: int, dcs_q):
    """Return ``(StructureUtility, groups)`` for one stage-2 scheme."""
    if name == "AS":
        structure = as_baseline(assignment)
    elif name == "OCFA":
        start = initialize_structure(assignment, channels, params)
        structure = ocf_iterate(start, assignment, channels, params, seed=seed, table=table)
    elif name == "DCS":
        _, structure, score = dcs_best(assignment, channels, params, dcs_q, table)
        return score, structure.to_lists()
    elif name == "FGS":
        groups = fgs_groups(channels, params)
        score = evaluate_groups(groups, assignment, channels, params, table)
        return score, [members_of(g) for g in groups]
    else:
        raise ValueError(f"unknown stage-2 scheme {name!r}")
    return evaluate_structure(structure, assignment, channels, params, table), structure.to_lists()


def run_trial(config: ExperimentConfig, trial_index: int) -> list[TrialMetrics]:
    """Run every selected scheme pair on one layout.

    ``config`` must describe a single point (no sweep). Failures inside one
    scheme are captured in its ``TrialMetrics.error``.
    """
    if config.sweep_axis is not None:
        raise ValueError("run_trial needs a single-point config; use run_experiment for sweeps")
    seed = trial_seed(config, trial_index)
    params = config.params
    n = config.n_ut
    out: list[TrialMetrics] = []

    def failed(s1, s2, exc, elapsed=0.0):
        return TrialMetrics(s1, s2, trial_index, seed, (), math.nan, math.nan, math.nan,
                            elapsed, error=f"{type(exc).__name__}: {exc}")

    try:
        scenario = sample_scenario(config, seed)
        channels = realize_channels(scenario, seed)
        prefs = build_preferences(scenario, channels)
    except DegenerateGeometryError as exc:
        return [failed(s1, s2, exc) for s1, s2 in config.schemes]

    for s1 in config.stage1:
        t0 = time.perf_counter()
        try:
            matching = _stage1(s1, prefs, scenario.quotas, seed, config.delta)
        except MatchingError as exc:
            out.extend(failed(s1, s2, exc) for s2 in config.stage2)
            continue
        welfare = social_welfare(matching, prefs)
        t_match = time.perf_counter() - t0
        assignment = matching.assignment
        table = UtilityTable(assignment, channels, params)
        for s2 in config.stage2:
            t1 = time.perf_counter()
            try:
                score, groups = _stage2(s2, assignment, channels, params, table, seed,
                                        config.dcs_q)
            except CoalitionError as exc:
                out.append(failed(s1, s2, exc, t_match + time.perf_counter() - t1))
                continue
            out.append(TrialMetrics(
                s1, s2, trial_index, seed, score.per_ut, score.total, score.total / n,
                welfare, t_match + time.perf_counter() - t1, assignment,
                tuple(tuple(g) for g in groups)))
    return out


def _run_task(task: tuple[ExperimentConfig, int]) -> list[TrialMetrics]:
    return run_trial(*task)


def _summarise(values: Sequence[float]) -> tuple[float, float, int]:
    arr = np.asarray(values, dtype=float)
    n = len(arr)
    mean = math.fsum(arr) / n
    std = float(np.std(arr, ddof=1)) if n > 1 else 0.0
    return mean, std, n


def trial_record(config: ExperimentConfig, sweep_value: float,
                 metrics: Sequence[TrialMetrics]) -> dict:
    """Structured record of one trial for the optional dump."""
    first = metrics[0]
    scenario = sample_scenario(config, first.seed)
    return {
        "sweep_value": sweep_value,
        "trial_index": first.trial_index,
        "seed": first.seed,
        "positions": {
            "ut": scenario.ut_positions.tolist(),
            "ur": scenario.ur_positions.tolist(),
            "ue": scenario.ue_positions.tolist(),
        },
        "schemes": [{
            "scheme": m.scheme,
            "assignment": list(m.assignment),
            "groups": [list(g) for g in m.groups],
            "per_ut": [None if not math.isfinite(v) else v for v in m.per_ut],
            "total": m.total if math.isfinite(m.total) else None,
            "welfare": m.welfare if math.isfinite(m.welfare) else None,
            "error": m.error,
        } for m in metrics],
    }


def run_experiment(config: ExperimentConfig, workers: int | None = None,
                   dump: TextIO | None = None,
                   progress: Callable[[int, int], None] | None = None) -> ExperimentResult:
    """Aggregate ``repetitions`` trials for every sweep point and scheme pair.

    Trials are reduced in index order, so the result does not depend on
    ``workers``. Failed or ``-inf`` trials are counted, not averaged.
    """
    workers = config.workers if workers is None else workers
    points = list(config.points())
    schemes = tuple(scheme_label(a, b) for a, b in config.schemes)
    result = ExperimentResult(config.sweep_axis, tuple(v for _, v, _ in points), schemes,
                              config.repetitions)
    tasks = [(cfg, t) for _, _, cfg in points for t in range(config.repetitions)]

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        outcomes = []
        for done, task in enumerate(tasks, 1):
            outcomes.append(_run_task(task))
            if progress is not None:
                progress(done, len(tasks))

    reps = config.repetitions
    for p, (_, value, cfg) in enumerate(points):
        block = outcomes[p * reps:(p + 1) * reps]
        if dump is not None:
            for metrics in block:
                dump.write(json.dumps(trial_record(cfg, value, metrics)) + "\n")
        by_scheme: dict[str, list[TrialMetrics]] = {s: [] for s in schemes}
        for metrics in block:
            for m in metrics:
                by_scheme[m.scheme].append(m)
        for scheme in schemes:
            trials = by_scheme[scheme]
            bad = [m for m in trials if m.sentinel]
            result.failed[(value, scheme)] = len(bad)
            result.errors.extend(f"{value} {scheme} trial {m.trial_index}: {m.error or 'no finite utility'}"
                                 for m in bad)
            for metric in METRICS:
                series = tuple(math.nan if m.sentinel else m.metric(metric) for m in trials)
                result.samples[(value, scheme, metric)] = series
                good = [x for x in series if not math.isnan(x)]
                if good:
                    result.rows.append(ResultRow(value, scheme, metric, *_summarise(good)))
        for s1 in cfg.stage1:
            ocfa, alone = scheme_label(s1, "OCFA"), scheme_label(s1, "AS")
            if ocfa in by_scheme and alone in by_scheme:
                result.below_alone[(value, ocfa)] = sum(
                    1 for o, a in zip(by_scheme[ocfa], by_scheme[alone])
                    if not (o.sentinel or a.sentinel) and o.total < a.total)
    return result


def ablation_two_stage(config: ExperimentConfig, workers: int | None = None
                       ) -> dict[str, ExperimentResult]:
    """Four paired quadrants: neither stage, matching only, coalitions only, both.

    All quadrants come from one run, so each trial index uses one layout.
    """
    joint = replace(config, stage1=("RMS", "PMA"), stage2=("AS", "OCFA"))
    result = run_experiment(joint, workers)
    return {tag: result.subset([scheme_label(*pair)])
            for tag, pair in ABLATION_QUADRANTS.items()}
