import math

import pytest
from hypothesis import given, strategies as st

from uavsec.beamforming import NEG_INF, coalition_utility, direct_secrecy_rate
from uavsec.coalition import (CoalitionError, CoalitionStructure, Move, OCFTrace, UtilityTable,
                              as_baseline, check_stability, corrected_neighbourhoods,
                              dcs_baseline, dcs_best, evaluate_structure,
                              fgs_baseline, fgs_groups, group_of, initialize_structure,
                              members_of, ocf_algorithm, ocf_iterate, reach_masks, to_mask,
                              utility_key)
from uavsec.config import ExperimentConfig, PhysicalParams, Region, dbm_to_watts
from uavsec.geometry import derive_seed, effective_radius, make_rng, realize_channels, sample_scenario
from uavsec.matching import build_preferences, proposed_matching

from conftest import DEFAULTS, layout, random_instance


def S(sets, n):
    return CoalitionStructure.from_sets(sets, n)


# --- structure -----------------------------------------------------------------

def test_groups_of_the_seven_player_example():
    pi = S([{0, 1, 2, 3}, {2, 3, 5}, {4}, {6}], 7)
    assert group_of(0, pi) == group_of(1, pi) == {0, 1, 2, 3}
    assert group_of(2, pi) == group_of(3, pi) == {0, 1, 2, 3, 5}
    assert group_of(4, pi) == {4}
    assert group_of(5, pi) == {2, 3, 5}
    assert group_of(6, pi) == {6}
    assert not pi.is_disjoint


def test_group_of_saturates():
    pi = S([{0, 1}, {0, 2}, {0, 3}], 4)
    assert group_of(0, pi) == {0, 1, 2, 3}


@pytest.mark.parametrize("sets", [[{0}], [{0, 1}, set()], [{0, 5}, {1, 2}]])
def test_invalid_structures_rejected(sets):
    with pytest.raises(CoalitionError):
        S(sets, 3)


@pytest.mark.parametrize("masks", [(0b011, 0b011, 0b100), (0b111, 0), (0b011,)])
def test_raw_masks_validated(masks):
    with pytest.raises(CoalitionError):
        CoalitionStructure(masks, 3)


def test_masks_round_trip():
    assert members_of(to_mask([4, 0, 2])) == [0, 2, 4]
    assert S([{2, 1}, {0}], 3).to_lists() == [[0], [1, 2]]


@given(st.lists(st.sets(st.integers(0, 6), min_size=1), min_size=1, max_size=6))
def test_group_cache_matches_recomputation(sets):
    covered = set().union(*sets)
    sets = [s for i, s in enumerate(sets) if s not in sets[:i]] + [{k} for k in range(7) if k not in covered]
    sets = [s for i, s in enumerate(sets) if s not in sets[:i]]
    pi = S(sets, 7)
    for k in range(7):
        assert group_of(k, pi) == set().union(*[s for s in sets if k in s])


# --- evaluation ----------------------------------------------------------------

def test_singletons_score_the_direct_rates():
    cfg, scenario, ch = random_instance(3)
    phi = [k % 3 for k in range(12)]
    total = evaluate_structure(as_baseline(phi), phi, ch, DEFAULTS).total
    assert math.isclose(total, sum(direct_secrecy_rate(k, phi[k], ch, DEFAULTS) for k in range(12)))


def test_undersized_group_makes_total_infeasible():
    cfg, scenario, ch = random_instance(3)
    phi = [0] * 12
    pi = S([{0, 1}] + [{k} for k in range(2, 12)], 12)
    score = evaluate_structure(pi, phi, ch, DEFAULTS)
    assert score.per_ut[0] == score.per_ut[1] == NEG_INF and score.total == NEG_INF


@pytest.mark.parametrize("seed", range(10))
def test_cached_evaluation_matches_direct_computation(seed):
    rng = make_rng(seed, "ev")
    cfg, scenario, ch = random_instance(seed, n_ut=5, n_ue=1, quota=5,
                                        region=Region(width=900, depth=900))
    phi = [int(x) for x in rng.integers(0, 3, size=5)]
    table = UtilityTable(phi, ch, DEFAULTS)
    for _ in range(10):
        sets = [set(rng.choice(5, size=int(rng.integers(1, 5)), replace=False).tolist())
                for _ in range(int(rng.integers(1, 4)))]
        covered = set().union(*sets)
        sets += [{k} for k in range(5) if k not in covered]
        sets = [s for i, s in enumerate(sets) if s not in sets[:i]]
        pi = S(sets, 5)
        fresh = [coalition_utility(k, set().union(*[s for s in sets if k in s]), phi, ch, DEFAULTS)
                 for k in range(5)]
        assert list(evaluate_structure(pi, phi, ch, DEFAULTS, table).per_ut) == fresh


def test_utility_key_orders_infeasible_structures():
    assert utility_key([1.0, NEG_INF, NEG_INF]) < utility_key([0.0, 0.0, NEG_INF])
    assert utility_key([1.0, 2.0]) > utility_key([1.0, 1.5])
    assert utility_key([5.0, NEG_INF]) > utility_key([1.0, NEG_INF])


# --- initialization ------------------------------------------------------------

def test_everyone_in_range_forms_grand_coalition():
    ut = [[0, 0, 0], [100, 0, 0], [0, 100, 0], [100, 100, 0]]
    _, ch = layout(ut, [[0, 0, 800]], [[2000, 2000, 500], [1500, 0, 900]])
    assert initialize_structure([0] * 4, ch, DEFAULTS).masks == (0b1111,)


def test_isolated_ut_goes_alone():
    ut = [[0, 0, 0], [100, 0, 0], [0, 100, 0], [1900, 1900, 400]]
    _, ch = layout(ut, [[0, 0, 800]], [[2000, 0, 500], [1500, 0, 900]])
    pi = initialize_structure([0] * 4, ch, DEFAULTS)
    assert pi.to_lists() == [[0, 1, 2], [3]]


def test_ut_with_one_neighbour_collapses_to_singleton():
    # UT 3 only reaches UT 2; with S = 2 it needs two allies
    ut = [[0, 0, 0], [100, 0, 0], [200, 0, 0], [1150, 0, 0]]
    _, ch = layout(ut, [[0, 0, 800]], [[2000, 1000, 500], [1500, 1800, 900]])
    assert members_of(reach_masks(ch, DEFAULTS)[3]) == [2, 3]
    pi = initialize_structure([0] * 4, ch, DEFAULTS)
    assert pi.to_lists() == [[0, 1, 2], [3]]
    assert corrected_neighbourhoods(ch, DEFAULTS)[3] == 0b1000


def test_correction_cascades():
    # removing the leaf leaves its neighbour short of allies as well
    ut = [[0, 0, 0], [800, 0, 0], [1600, 0, 0], [2400, 0, 0]]
    _, ch = layout(ut, [[0, 0, 800]], [[0, 1900, 500], [1500, 1800, 900]])
    assert [bin(m).count("1") for m in reach_masks(ch, DEFAULTS)] == [2, 3, 3, 2]
    nb = corrected_neighbourhoods(ch, DEFAULTS)
    assert all(bin(m).count("1") == 1 or bin(m).count("1") >= 3 for m in nb)
    assert nb == [0b0001, 0b0010, 0b0100, 0b1000]


@given(st.integers(0, 2**32))
def test_reach_matches_radius(seed):
    _, scenario, ch = random_instance(seed)
    r = effective_radius(DEFAULTS)
    for k, mask in enumerate(reach_masks(ch, DEFAULTS)):
        for j in range(12):
            if j != k and abs(ch.ut_ut_dist[k, j] - r) > 1e-6:
                assert bool(mask >> j & 1) == (ch.ut_ut_dist[k, j] <= r)


# --- dynamics ------------------------------------------------------------------

class ScriptedTable(UtilityTable):
    """Utility table driven by a dict ``{(k, frozenset(group)): value}``."""

    def __init__(self, n, script, default=0.0):
        self.n = n
        self.script = {(k, to_mask(g)): v for (k, g), v in script}
        self.default = default

    def value(self, k, group):
        return self.script.get((k, group), self.default)


def test_planted_quit_executes():
    script = [((k, {0, 1, 2, 3}), 1.0) for k in range(4)]
    script += [((3, {3}), 5.0)] + [((k, {0, 1, 2}), 1.0) for k in range(3)]
    table = ScriptedTable(4, script)
    trace = OCFTrace([], [], [])
    final = ocf_iterate(S([{0, 1, 2, 3}], 4), [0] * 4, None, DEFAULTS, table=table, trace=trace)
    assert final.to_lists() == [[0, 1, 2], [3]]
    assert trace.moves == [Move("quit", 3, frozenset({0, 1, 2, 3}), None)]
    assert trace.totals == [4.0, 8.0]


def test_quit_is_tried_before_join_and_switch():
    # for UT 2 every operation passes the tests; join would even score higher
    script = [((2, {2}), 2.0), ((2, {0, 1, 2, 3, 4}), 3.0), ((2, {2, 3, 4}), 3.0)]
    table = ScriptedTable(5, script, default=1.0)
    trace = OCFTrace([], [], [])
    ocf_iterate(S([{0, 1, 2}, {3, 4}], 5), [0] * 5, None, DEFAULTS, table=table, trace=trace)
    assert trace.moves[0] == Move("quit", 2, frozenset({0, 1, 2}), None)


def test_quit_from_sole_coalition_keeps_coverage():
    script = [((0, {0}), 2.0), ((0, {0, 1}), 1.0), ((1, {0, 1}), 1.0), ((1, {1}), 1.0)]
    table = ScriptedTable(2, script)
    trace = OCFTrace([], [], [])
    final = ocf_iterate(S([{0, 1}], 2), [0, 0], None, DEFAULTS, table=table, trace=trace)
    assert final.to_lists() == [[0], [1]]
    assert trace.moves[0].kind == "quit"


def test_planted_join_is_a_stability_witness():
    script = [((0, {0, 1}), 3.0), ((1, {0, 1}), 1.0), ((0, {0}), 1.0), ((1, {1}), 1.0)]
    table = ScriptedTable(2, script)
    stable, move = check_stability(S([{0}, {1}], 2), [0, 0], None, DEFAULTS, table)
    assert not stable and move.kind == "join" and move.ut == 0


def test_stable_start_is_returned_unchanged():
    cfg, scenario, ch = random_instance(2)
    phi = proposed_matching(build_preferences(scenario, ch), scenario.quotas).assignment
    table = UtilityTable(phi, ch, DEFAULTS)
    final = ocf_algorithm(phi, ch, DEFAULTS, seed=2, table=table)
    trace = OCFTrace([], [], [])
    again = ocf_iterate(final, phi, ch, DEFAULTS, seed=5, table=table, trace=trace)
    assert again == final and trace.moves == []


def _neighbours(sets, k):
    """Independent Quit/Join/Switch enumeration on frozensets."""
    sets = [frozenset(s) for s in sets]
    inside = [c for c in sets if k in c]
    outside = [c for c in sets if k not in c]

    def norm(family):
        family = [c for c in family if c]
        return frozenset(family)

    for a in inside:
        rest = [c for c in sets if c != a]
        shrunk = a - {k}
        fam = rest + [shrunk]
        if not any(k in c for c in fam):
            fam.append(frozenset({k}))
        yield "quit", norm(fam)
        for b in outside:
            yield "join", norm([c for c in sets if c != b] + [b | {k}])
            yield "switch", norm([c for c in sets if c not in (a, b)] + [shrunk, b | {k}])


def _score(family, k_list, phi, ch, p):
    vals = [coalition_utility(k, set().union(*[c for c in family if k in c]), phi, ch, p)
            for k in k_list]
    return vals, sum(vals)


def oracle_stable(sets, phi, ch, p):
    n = len(phi)
    vals, total = _score([frozenset(s) for s in sets], range(n), phi, ch, p)
    for k in range(n):
        for kind, fam in _neighbours(sets, k):
            if fam == frozenset(frozenset(s) for s in sets):
                continue
            nv, nt = _score(fam, range(n), phi, ch, p)
            weak = kind == "quit"
            if (nv[k] >= vals[k] if weak else nv[k] > vals[k]) and nt >= total:
                return False
    return True


def small_instance(seed, n=5):
    cfg = ExperimentConfig(n_ut=n, n_ur=1, n_ue=1, quota=n, region=Region(width=900, depth=900))
    s = derive_seed(seed, "small")
    sc = sample_scenario(cfg, s)
    return cfg, realize_channels(sc, s), (0,) * n


@pytest.mark.parametrize("seed", range(25))
def test_stability_checker_agrees_with_enumerator(seed):
    cfg, ch, phi = small_instance(seed)
    rng = make_rng(seed, "structs")
    table = UtilityTable(phi, ch, cfg.params)
    for _ in range(6):
        sets = [set(rng.choice(5, size=int(rng.integers(1, 5)), replace=False).tolist())
                for _ in range(int(rng.integers(1, 4)))]
        covered = set().union(*sets)
        sets += [{k} for k in range(5) if k not in covered]
        sets = [s for i, s in enumerate(sets) if s not in sets[:i]]
        pi = S(sets, 5)
        assert check_stability(pi, phi, ch, cfg.params, table)[0] == oracle_stable(sets, phi, ch, cfg.params)
    final = ocf_algorithm(phi, ch, cfg.params, seed=seed, table=table)
    assert oracle_stable(final.to_lists(), phi, ch, cfg.params)


@pytest.mark.parametrize("seed", range(15))
def test_six_player_terminals_pass_exhaustive_check(seed):
    cfg = ExperimentConfig(n_ut=6, n_ur=2, n_ue=1, quota=3, region=Region(width=1200, depth=1200))
    s = derive_seed(seed, "six")
    sc = sample_scenario(cfg, s)
    ch = realize_channels(sc, s)
    phi = proposed_matching(build_preferences(sc, ch), sc.quotas).assignment
    final = ocf_algorithm(phi, ch, cfg.params, seed=s)
    assert oracle_stable(final.to_lists(), phi, ch, cfg.params)


@pytest.mark.parametrize("seed", range(20))
def test_trace_is_monotone_without_revisits(seed):
    cfg, scenario, ch = random_instance(seed)
    phi = proposed_matching(build_preferences(scenario, ch), scenario.quotas).assignment
    table = UtilityTable(phi, ch, DEFAULTS)
    trace = OCFTrace([], [], [])
    final = ocf_iterate(initialize_structure(phi, ch, DEFAULTS), phi, ch, DEFAULTS,
                        seed=seed, table=table, trace=trace)
    assert all(b >= a for a, b in zip(trace.totals, trace.totals[1:]))
    assert len({x.masks for x in trace.structures}) == len(trace.structures)
    assert trace.structures[-1] == final
    assert check_stability(final, phi, ch, DEFAULTS, table)[0]
    assert math.isfinite(trace.totals[-1])


def test_ocf_is_seed_deterministic():
    cfg, scenario, ch = random_instance(6)
    phi = proposed_matching(build_preferences(scenario, ch), scenario.quotas).assignment
    assert ocf_algorithm(phi, ch, DEFAULTS, seed=1) == ocf_algorithm(phi, ch, DEFAULTS, seed=1)


def _terminal_neighbourhood(seed):
    cfg, ch, phi = small_instance(seed)
    final = ocf_algorithm(phi, ch, cfg.params, seed=seed)
    sets = [frozenset(s) for s in final.to_lists()]
    vals, total = _score(sets, range(5), phi, ch, cfg.params)
    for k in range(5):
        for kind, fam in _neighbours(sets, k):
            nv, nt = _score(fam, range(5), phi, ch, cfg.params)
            yield k, kind, vals, total, nv, nt


def test_higher_total_neighbours_of_terminals_hurt_the_mover():
    for seed in range(100):
        for k, kind, vals, total, nv, nt in _terminal_neighbourhood(seed):
            if nt > total:
                assert nv[k] < vals[k] or (kind != "quit" and nv[k] == vals[k])


@pytest.mark.xfail(strict=True, reason="a move that raises the total but lowers the mover's own "
                                       "utility is rejected, so terminals are not total-utility "
                                       "local optima")
def test_terminals_are_local_optima_of_total_utility():
    for seed in range(100):
        for k, kind, vals, total, nv, nt in _terminal_neighbourhood(seed):
            assert total >= nt


# --- baselines -----------------------------------------------------------------

def test_as_baseline_is_all_singletons():
    pi = as_baseline([0] * 6)
    assert pi.to_lists() == [[k] for k in range(6)] and pi.is_disjoint


def test_fgs_grand_coalition_when_everyone_is_in_range():
    p = PhysicalParams(power_budget=dbm_to_watts(30))
    cfg, scenario, ch = random_instance(1, params=p)
    phi = proposed_matching(build_preferences(scenario, ch), scenario.quotas).assignment
    full = (1 << 12) - 1
    assert fgs_groups(ch, p) == (full,) * 12
    grand = CoalitionStructure((full,), 12)
    assert fgs_baseline(phi, ch, p).total == evaluate_structure(grand, phi, ch, p).total
    assert initialize_structure(phi, ch, p) == grand


def test_fgs_isolated_ut_transmits_directly():
    ut = [[0, 0, 0], [100, 0, 0], [0, 100, 0], [1900, 1900, 400]]
    _, ch = layout(ut, [[0, 0, 800]], [[2000, 0, 500], [1500, 0, 900]])
    score = fgs_baseline([0] * 4, ch, DEFAULTS)
    assert score.per_ut[3] == direct_secrecy_rate(3, 0, ch, DEFAULTS)
    assert fgs_groups(ch, DEFAULTS)[:3] == (0b0111,) * 3


@given(st.integers(0, 2**32))
def test_fgs_never_infeasible(seed):
    _, scenario, ch = random_instance(seed)
    assert math.isfinite(fgs_baseline([0] * 12, ch, DEFAULTS).total)


def test_dcs_pair_merges_iff_total_improves():
    one_ue = [[1800, 1800, 900]]
    for d, ur in ((150.0, [[0, 0, 500]]), (150.0, [[0, 0, 1000]]), (900.0, [[2000, 0, 600]])):
        _, ch = layout([[0, 0, 0], [d, 0, 0]], ur, one_ue)
        table = UtilityTable([0, 0], ch, DEFAULTS)
        pair = table.value(0, 0b11) + table.value(1, 0b11)
        alone = table.value(0, 0b01) + table.value(1, 0b10)
        pi = dcs_baseline([0, 0], ch, DEFAULTS, q=2)
        assert (pi.masks == (0b11,)) == (pair > alone)


@pytest.mark.parametrize("seed", range(10))
def test_dcs_structures_are_disjoint_partitions(seed):
    _, scenario, ch = random_instance(seed)
    phi = proposed_matching(build_preferences(scenario, ch), scenario.quotas).assignment
    table = UtilityTable(phi, ch, DEFAULTS)
    for q in range(2, 7):
        pi = dcs_baseline(phi, ch, DEFAULTS, q, table)
        assert pi.is_disjoint
        assert math.isfinite(evaluate_structure(pi, phi, ch, DEFAULTS, table).total)
    q, best, score = dcs_best(phi, ch, DEFAULTS, table=table)
    assert score.total >= evaluate_structure(as_baseline(phi), phi, ch, DEFAULTS, table).total
    with pytest.raises(ValueError):
        dcs_baseline(phi, ch, DEFAULTS, 7)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="measured 84 of 100 layouts; merge/split coalitions beat "
                                       "the overlapping dynamics' local optimum more often")
def test_dcs_at_most_ocfa_on_95_of_100_layouts():
    cfg = ExperimentConfig()
    wins = 0
    for t in range(100):
        s = derive_seed(cfg.seed, t)
        sc = sample_scenario(cfg, s)
        ch = realize_channels(sc, s)
        phi = proposed_matching(build_preferences(sc, ch), sc.quotas).assignment
        table = UtilityTable(phi, ch, cfg.params)
        ocfa = evaluate_structure(ocf_algorithm(phi, ch, cfg.params, s, table), phi, ch,
                                  cfg.params, table).total
        wins += dcs_best(phi, ch, cfg.params, table=table)[2].total <= ocfa
    assert wins >= 95
