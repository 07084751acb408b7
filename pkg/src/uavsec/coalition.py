"""Relay selection as an overlapping coalition formation game, plus baselines.

Coalitions are stored as integer bitmasks over UT indices (bit ``k`` set
means UT ``k`` is a member). A structure keeps its masks sorted, so two
structures with the same coalitions compare equal.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

from .beamforming import NEG_INF, POWER_RTOL, coalition_utility, direct_secrecy_rate
from .config import PhysicalParams
from .geometry import ChannelSet, make_rng


class CoalitionError(RuntimeError):
    pass


def to_mask(members: Iterable[int]) -> int:
    mask = 0
    for k in members:
        mask |= 1 << int(k)
    return mask


def members_of(mask: int) -> list[int]:
    out = []
    k = 0
    while mask:
        if mask & 1:
            out.append(k)
        mask >>= 1
        k += 1
    return out


def _canonical(masks: Iterable[int]) -> tuple[int, ...]:
    return tuple(sorted(set(m for m in masks if m)))


@dataclass(frozen=True)
class CoalitionStructure:
    """A covering family of non-empty, pairwise distinct UT sets."""

    masks: tuple[int, ...]
    n_players: int

    def __post_init__(self):
        masks = tuple(self.masks)
        if any(m <= 0 for m in masks):
            raise CoalitionError("empty coalition in structure")
        if len(set(masks)) != len(masks):
            raise CoalitionError("duplicate coalition in structure")
        full = (1 << self.n_players) - 1
        union = 0
        for m in masks:
            if m & ~full:
                raise CoalitionError("coalition member outside [0, N)")
            union |= m
        if union != full:
            raise CoalitionError("structure does not cover every UT")
        object.__setattr__(self, "masks", tuple(sorted(masks)))

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]], n_players: int) -> CoalitionStructure:
        return cls(_canonical(to_mask(s) for s in sets), n_players)

    @property
    def coalitions(self) -> list[frozenset[int]]:
        return [frozenset(members_of(m)) for m in self.masks]

    @cached_property
    def group_masks(self) -> tuple[int, ...]:
        return _groups(self.masks, self.n_players)

    @property
    def is_disjoint(self) -> bool:
        return sum(bin(m).count("1") for m in self.masks) == self.n_players

    def to_lists(self) -> list[list[int]]:
        return [members_of(m) for m in self.masks]


def _groups(masks: Sequence[int], n: int) -> tuple[int, ...]:
    groups = [0] * n
    for m in masks:
        rest = m
        while rest:
            low = rest & -rest
            groups[low.bit_length() - 1] |= m
            rest ^= low
    return tuple(groups)


def group_of(k: int, structure: CoalitionStructure) -> frozenset[int]:
    """Union of every coalition that contains ``k``."""
    return frozenset(members_of(structure.group_masks[k]))


@dataclass(frozen=True)
class StructureUtility:
    per_ut: tuple[float, ...]
    total: float


class UtilityTable:
    """Memoised ``v_k(F)`` for one matching and one channel realization."""

    def __init__(self, assignment: Sequence[int], channels: ChannelSet, params: PhysicalParams):
        self.assignment = tuple(int(i) for i in assignment)
        self.channels = channels
        self.params = params
        self.n = channels.n_ut
        self.min_size = channels.n_ue + 1
        self.direct = [direct_secrecy_rate(k, self.assignment[k], channels, params)
                       for k in range(self.n)]
        self.reach = reach_masks(channels, params)
        self._cache: dict[tuple[int, int], float] = {}

    def value(self, k: int, group: int) -> float:
        key = (k, group)
        v = self._cache.get(key)
        if v is None:
            if group == 1 << k:
                v = self.direct[k]
            elif group & ~self.reach[k] or bin(group).count("1") < self.min_size:
                v = NEG_INF
            else:
                v = coalition_utility(k, members_of(group), self.assignment,
                                      self.channels, self.params)
            self._cache[key] = v
        return v

    def values(self, groups: Sequence[int]) -> list[float]:
        return [self.value(k, g) for k, g in enumerate(groups)]


def reach_masks(channels: ChannelSet, params: PhysicalParams) -> list[int]:
    """Per UT, itself plus every UT it can serve at the decoding threshold
    without exceeding the power budget."""
    limit = params.power_budget * (1.0 + POWER_RTOL)
    need = params.snr_threshold * params.noise_power
    out = []
    for k in range(channels.n_ut):
        mask = 1 << k
        for j in range(channels.n_ut):
            if j != k and need / channels.ut_ut_sq[k, j] <= limit:
                mask |= 1 << j
        out.append(mask)
    return out


def evaluate_groups(groups: Sequence[int], assignment: Sequence[int], channels: ChannelSet,
                    params: PhysicalParams, table: UtilityTable | None = None) -> StructureUtility:
    """Score explicit per-UT groups ``F_k`` (bitmasks)."""
    table = table or UtilityTable(assignment, channels, params)
    vals = table.values(groups)
    return StructureUtility(tuple(vals), sum(vals))


def evaluate_structure(structure: CoalitionStructure, assignment: Sequence[int],
                       channels: ChannelSet, params: PhysicalParams,
                       table: UtilityTable | None = None) -> StructureUtility:
    return evaluate_groups(structure.group_masks, assignment, channels, params, table)


def corrected_neighbourhoods(channels: ChannelSet, params: PhysicalParams) -> list[int]:
    """Per UT, its in-range neighbourhood after the minimum-size correction.

    A UT whose neighbourhood is too small to null every eavesdropper goes
    alone and is removed from every other neighbourhood; this repeats until
    no such UT remains.
    """
    n = channels.n_ut
    coalitions = list(reach_masks(channels, params))
    min_size = channels.n_ue + 1
    alone: set[int] = set()
    while True:
        small = [k for k in range(n) if k not in alone
                 and bin(coalitions[k]).count("1") < min_size]
        if not small:
            return coalitions
        for k in small:
            alone.add(k)
            coalitions[k] = 1 << k
        for k in small:
            for p in range(n):
                if p != k:
                    coalitions[p] &= ~(1 << k)


def initialize_structure(assignment: Sequence[int], channels: ChannelSet,
                         params: PhysicalParams) -> CoalitionStructure:
    """One coalition per corrected neighbourhood, duplicates dropped."""
    return CoalitionStructure(_canonical(corrected_neighbourhoods(channels, params)),
                              channels.n_ut)


@dataclass(frozen=True)
class Move:
    kind: str  # "quit", "join" or "switch"
    ut: int
    source: frozenset[int] | None
    target: frozenset[int] | None


def _quit(masks: tuple[int, ...], a: int, k: int) -> tuple[int, ...]:
    bit = 1 << k
    new = list(masks)
    new[a] &= ~bit
    if not any(m & bit for m in new):
        new.append(bit)
    return _canonical(new)


def _join(masks: tuple[int, ...], b: int, k: int) -> tuple[int, ...]:
    new = list(masks)
    new[b] |= 1 << k
    return _canonical(new)


def _switch(masks: tuple[int, ...], a: int, b: int, k: int) -> tuple[int, ...]:
    new = list(masks)
    new[a] &= ~(1 << k)
    new[b] |= 1 << k
    return _canonical(new)


def utility_key(values: Sequence[float]) -> tuple[int, float]:
    """Total order on structures: fewer infeasible UTs first, then the sum of
    the finite utilities.

    Agrees with comparing plain totals whenever either total is finite, and
    still ranks structures whose totals are both ``NEG_INF``.
    """
    finite = [v for v in values if v != NEG_INF]
    return (len(finite) - len(values), sum(finite))


class _Evaluator:
    """Structure -> (per-UT values, total, ordering key), memoised on the masks."""

    def __init__(self, table: UtilityTable):
        self.table = table
        self.n = table.n
        self._memo: dict[tuple[int, ...], tuple[list[float], float, tuple[int, float]]] = {}

    def __call__(self, masks: tuple[int, ...]) -> tuple[list[float], float, tuple[int, float]]:
        hit = self._memo.get(masks)
        if hit is None:
            vals = self.table.values(_groups(masks, self.n))
            hit = (vals, sum(vals), utility_key(vals))
            self._memo[masks] = hit
        return hit


def _first_move(k: int, masks: tuple[int, ...], evaluate: _Evaluator,
                pairs: Iterable[tuple[int, int | None]],
                tabu: set[tuple[int, ...]] | frozenset = frozenset()
                ) -> tuple[Move, tuple[int, ...]] | None:
    """Try Quit, then Join, then Switch for each ``(C_a, C_b)`` pair in order.

    Candidates in ``tabu`` are skipped.
    """
    vals, total, _ = evaluate(masks)
    vk = vals[k]
    quits: dict[int, tuple[int, ...]] = {}
    for a, b in pairs:
        if a not in quits:
            quits[a] = _quit(masks, a, k)
        cand = quits[a]
        if cand != masks and cand not in tabu:
            cv, ct, _ = evaluate(cand)
            if cv[k] >= vk and ct >= total:
                return Move("quit", k, frozenset(members_of(masks[a])), None), cand
        if b is None:
            continue
        cand = _join(masks, b, k)
        cv, ct, _ = evaluate(cand)
        if cv[k] > vk and ct >= total and cand not in tabu:
            return Move("join", k, None, frozenset(members_of(masks[b]))), cand
        cand = _switch(masks, a, b, k)
        cv, ct, _ = evaluate(cand)
        if cv[k] > vk and ct >= total and cand not in tabu:
            return (Move("switch", k, frozenset(members_of(masks[a])),
                         frozenset(members_of(masks[b]))), cand)
    return None


def _pairs(k: int, masks: tuple[int, ...]) -> list[tuple[int, int | None]]:
    bit = 1 << k
    inside = [x for x, m in enumerate(masks) if m & bit]
    outside: list[int | None] = [x for x, m in enumerate(masks) if not m & bit]
    return [(a, b) for a in inside for b in outside + [None]]


def check_stability(structure: CoalitionStructure, assignment: Sequence[int],
                    channels: ChannelSet, params: PhysicalParams,
                    table: UtilityTable | None = None) -> tuple[bool, Move | None]:
    """Stable iff no UT has an acceptable Quit, Join or Switch."""
    evaluate = _Evaluator(table or UtilityTable(assignment, channels, params))
    masks = structure.masks
    for k in range(structure.n_players):
        found = _first_move(k, masks, evaluate, _pairs(k, masks))
        if found is not None:
            return False, found[0]
    return True, None


@dataclass
class OCFTrace:
    """Per-round record of an OCF run (structure after the round, its total)."""

    structures: list[CoalitionStructure]
    totals: list[float]
    moves: list[Move]


def ocf_iterate(initial: CoalitionStructure, assignment: Sequence[int], channels: ChannelSet,
                params: PhysicalParams, seed: int = 0, table: UtilityTable | None = None,
                trace: OCFTrace | None = None, max_rounds: int = 10_000) -> CoalitionStructure:
    """Run Quit/Join/Switch rounds until no UT wants to move.

    Every round each UT scans its ``(C_a, C_b)`` candidates in a seeded
    random order and keeps its first acceptable move; the candidate with the
    highest total (lowest UT index on ties) becomes the new structure.
    """
    n = initial.n_players
    table = table or UtilityTable(assignment, channels, params)
    evaluate = _Evaluator(table)
    rng = make_rng(seed, "ocf")
    masks = initial.masks
    visited = {masks}
    if trace is not None:
        trace.structures.append(initial)
        trace.totals.append(evaluate(masks)[1])
    for _ in range(max_rounds):
        best: tuple[tuple[int, float], Move, tuple[int, ...]] | None = None
        for k in range(n):
            pairs = _pairs(k, masks)
            order = rng.permutation(len(pairs))
            found = _first_move(k, masks, evaluate, [pairs[x] for x in order], visited)
            if found is None:
                continue
            key = evaluate(found[1])[2]
            if best is None or key > best[0]:
                best = (key, found[0], found[1])
        if best is None:
            result = CoalitionStructure(masks, n)
            stable, witness = check_stability(result, assignment, channels, params, table)
            if not stable:
                raise CoalitionError(f"terminal structure admits {witness}")
            return result
        masks = best[2]
        visited.add(masks)
        if trace is not None:
            trace.structures.append(CoalitionStructure(masks, n))
            trace.totals.append(evaluate(masks)[1])
            trace.moves.append(best[1])
    raise CoalitionError(f"no convergence within {max_rounds} rounds")


def ocf_algorithm(assignment: Sequence[int], channels: ChannelSet, params: PhysicalParams,
                  seed: int = 0, table: UtilityTable | None = None) -> CoalitionStructure:
    """Initialization followed by the Quit/Join/Switch dynamics (OCFA)."""
    start = initialize_structure(assignment, channels, params)
    return ocf_iterate(start, assignment, channels, params, seed=seed, table=table)


def as_baseline(assignment: Sequence[int]) -> CoalitionStructure:
    n = len(assignment)
    return CoalitionStructure(tuple(1 << k for k in range(n)), n)


def fgs_groups(channels: ChannelSet, params: PhysicalParams) -> tuple[int, ...]:
    """Per-UT groups for the full-group scheme: each UT's corrected
    neighbourhood, used as is with no coalition dynamics."""
    return tuple(corrected_neighbourhoods(channels, params))


def fgs_baseline(assignment: Sequence[int], channels: ChannelSet, params: PhysicalParams,
                 table: UtilityTable | None = None) -> StructureUtility:
    return evaluate_groups(fgs_groups(channels, params), assignment, channels, params, table)


def _coalition_value(table: UtilityTable, mask: int, memo: dict[int, float]) -> float:
    v = memo.get(mask)
    if v is None:
        v = 0.0
        for k in members_of(mask):
            v += table.value(k, mask)
            if v == NEG_INF:
                break
        memo[mask] = v
    return v


def _bipartitions(mask: int) -> Iterator[tuple[int, int]]:
    """Both halves non-empty; the half holding the lowest member comes first."""
    low = mask & -mask
    rest = mask ^ low
    sub = rest
    while True:
        part = sub | low
        if part != mask:
            yield part, mask ^ part
        if sub == 0:
            break
        sub = (sub - 1) & rest


def dcs_baseline(assignment: Sequence[int], channels: ChannelSet, params: PhysicalParams,
                 q: int, table: UtilityTable | None = None) -> CoalitionStructure:
    """Disjoint coalitions by q-merge and 2-split on the total utility.

    Starts from singletons. A merge of up to ``q`` coalitions, or a split of
    one coalition in two, happens only if it strictly raises the total.
    """
    if not 2 <= q <= 6:
        raise ValueError("q must lie in [2, 6]")
    table = table or UtilityTable(assignment, channels, params)
    n = table.n
    memo: dict[int, float] = {}
    parts = [1 << k for k in range(n)]

    def value(mask):
        return _coalition_value(table, mask, memo)

    changed = True
    while changed:
        changed = False
        merged = True
        while merged:
            merged = False
            for r in range(2, min(q, len(parts)) + 1):
                for combo in itertools.combinations(range(len(parts)), r):
                    union = 0
                    for c in combo:
                        union |= parts[c]
                    if value(union) > math.fsum(value(parts[c]) for c in combo):
                        parts = sorted([p for x, p in enumerate(parts) if x not in combo] + [union])
                        merged = changed = True
                        break
                if merged:
                    break
        split = None
        for x, mask in enumerate(parts):
            split = next(((a, b) for a, b in _bipartitions(mask)
                          if value(a) + value(b) > value(mask)), None)
            if split is not None:
                parts = sorted(parts[:x] + parts[x + 1:] + list(split))
                changed = True
                break
    return CoalitionStructure(tuple(parts), n)


def dcs_best(assignment: Sequence[int], channels: ChannelSet, params: PhysicalParams,
             qs: Sequence[int] = (2, 3, 4, 5, 6), table: UtilityTable | None = None
             ) -> tuple[int, CoalitionStructure, StructureUtility]:
    """Run the merge/split scheme for every ``q`` and keep the best total."""
    table = table or UtilityTable(assignment, channels, params)
    best = None
    for q in qs:
        structure = dcs_baseline(assignment, channels, params, q, table)
        score = evaluate_structure(structure, assignment, channels, params, table)
        if best is None or score.total > best[2].total:
            best = (q, structure, score)
    return best
