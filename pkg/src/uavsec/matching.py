"""UT-UR association: preferences, two-phase matching, swap stability, baselines.

UT utilities are direct secrecy rates (bits/s/Hz). A UR values a single UT
by ``W*log2(1 + SNR)`` (bits/s) and a set of UTs by the mean of those
values. Ties are always broken towards the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .beamforming import direct_secrecy_rate
from .config import PhysicalParams
from .geometry import ChannelSet, Scenario, make_rng, snr


class MatchingError(RuntimeError):
    pass


class InfeasibleMatchingError(MatchingError, ValueError):
    """Fewer seats than UTs."""


@dataclass(frozen=True, eq=False)
class PreferenceTables:
    """``ut_pref[k, i]`` is UT k's utility at UR i; ``ur_ref_pref[i, k]`` is
    UR i's reference value for UT k."""

    ut_pref: np.ndarray
    ur_ref_pref: np.ndarray

    @property
    def n_ut(self) -> int:
        return self.ut_pref.shape[0]

    @property
    def n_ur(self) -> int:
        return self.ut_pref.shape[1]


@dataclass(frozen=True)
class Matching:
    """Total or partial UT -> UR assignment (``-1`` marks an unmatched UT)."""

    assignment: tuple[int, ...]
    quotas: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(int(i) for i in self.assignment))
        object.__setattr__(self, "quotas", tuple(int(q) for q in self.quotas))
        counts = [0] * len(self.quotas)
        for i in self.assignment:
            if i >= len(self.quotas) or i < -1:
                raise MatchingError(f"unknown UR index {i}")
            if i >= 0:
                counts[i] += 1
        for i, (c, q) in enumerate(zip(counts, self.quotas)):
            if c > q:
                raise MatchingError(f"UR {i} holds {c} UTs, quota {q}")

    def partners(self, i: int) -> tuple[int, ...]:
        return tuple(k for k, j in enumerate(self.assignment) if j == i)

    def remaining(self, i: int) -> int:
        return self.quotas[i] - len(self.partners(i))

    @property
    def is_total(self) -> bool:
        return all(i >= 0 for i in self.assignment)

    def moved(self, changes: dict[int, int]) -> Matching:
        new = list(self.assignment)
        for k, i in changes.items():
            new[k] = i
        return Matching(tuple(new), self.quotas)


@dataclass(frozen=True)
class SwapProposal:
    """UT ``ut_s`` (at ``ur_h``) trades places with ``ut_t`` at ``ur_g``.

    ``ut_t is None`` means an empty seat at ``ur_g``.
    """

    ut_s: int
    ut_t: int | None
    ur_h: int
    ur_g: int


def build_preferences(scenario: Scenario, channels: ChannelSet) -> PreferenceTables:
    p = scenario.params
    n, m = channels.n_ut, channels.n_ur
    ut_pref = np.array([[direct_secrecy_rate(k, i, channels, p) for i in range(m)]
                        for k in range(n)])
    gamma = snr(p.power_budget, channels.ut_ur_sq, p.noise_power)
    ur_ref = (p.bandwidth * np.log2(1.0 + gamma)).T
    ut_pref.setflags(write=False)
    ur_ref.setflags(write=False)
    return PreferenceTables(ut_pref, np.ascontiguousarray(ur_ref))


def _mean_rate(ref_row: np.ndarray, members: Sequence[int]) -> float:
    if not members:
        return 0.0
    return math.fsum(ref_row[k] for k in members) / len(members)


def ur_set_utility(i: int, members: Sequence[int], channels: ChannelSet,
                   params: PhysicalParams) -> float:
    """Average receiving rate of UR ``i`` over its partner set (0 if empty)."""
    gamma = snr(params.power_budget, channels.ut_ur_sq[:, i], params.noise_power)
    return _mean_rate(params.bandwidth * np.log2(1.0 + gamma), list(members))


def default_delta(prefs: PreferenceTables) -> float:
    """Rejection penalty: the top direct rate spread over the number of URs."""
    top = float(prefs.ut_pref.max())
    return top / prefs.n_ur if top > 0 else 1.0


def select_first_time(i: int, applicants: Sequence[int], current: Sequence[int],
                      prefs: PreferenceTables, seats: int) -> list[int]:
    """Greedy admission of first-time applicants to UR ``i``.

    Applicants are taken best reference value first; each is admitted only
    if it is at least as good as the UR's running average, and the scan
    stops at the first one that is not.
    """
    ref = prefs.ur_ref_pref[i]
    ranked = sorted(applicants, key=lambda k: (-ref[k], k))
    held = list(current)
    accepted: list[int] = []
    for k in ranked[:max(seats, 0)]:
        if ref[k] >= _mean_rate(ref, held):
            accepted.append(k)
            held.append(k)
        else:
            break
    return accepted


def _check_capacity(n_ut: int, quotas: Sequence[int]):
    if sum(quotas) < n_ut:
        raise InfeasibleMatchingError(f"total quota {sum(quotas)} < N = {n_ut}")


def phase1_preliminary(prefs: PreferenceTables, quotas: Sequence[int],
                       delta: float | None = None,
                       on_round: Callable[[int, Matching, np.ndarray, np.ndarray], None] | None = None,
                       max_rounds: int | None = None) -> Matching:
    """Phase I: proposals with no eviction, second chances and delta penalties.

    ``on_round(round, matching, penalised_prefs, rejection_counts)`` is
    called after every round, mainly for tests.
    """
    n, m = prefs.n_ut, prefs.n_ur
    quotas = tuple(int(q) for q in quotas)
    _check_capacity(n, quotas)
    delta = default_delta(prefs) if delta is None else float(delta)
    if not delta > 0:
        raise ValueError("delta must be positive")
    working = prefs.ut_pref.astype(float).copy()
    rejections = np.zeros((n, m), dtype=int)
    assignment = [-1] * n
    held: list[list[int]] = [[] for _ in range(m)]
    if max_rounds is None:
        span = float(working.max() - working.min()) + delta * n
        max_rounds = n * m * (int(math.ceil(span / delta)) + 2) + 10

    for rnd in range(1, max_rounds + 1):
        unmatched = [k for k in range(n) if assignment[k] < 0]
        if not unmatched:
            return Matching(tuple(assignment), quotas)
        proposals: dict[int, list[int]] = {}
        for k in unmatched:
            proposals.setdefault(int(np.argmax(working[k])), []).append(k)

        rejected: list[tuple[int, int]] = []
        for i in sorted(proposals):
            applicants = proposals[i]
            seats = quotas[i] - len(held[i])
            if seats <= 0:
                rejected.extend((k, i) for k in applicants)
                continue
            repeat = [k for k in applicants if rejections[k, i] > 0]
            first = [k for k in applicants if rejections[k, i] == 0]
            ref = prefs.ur_ref_pref[i]
            if len(repeat) >= seats:
                accepted = sorted(repeat, key=lambda k: (-ref[k], k))[:seats]
            else:
                accepted = list(repeat)
                accepted += select_first_time(i, first, held[i] + accepted, prefs,
                                              seats - len(accepted))
            for k in accepted:
                held[i].append(k)
                assignment[k] = i
            rejected.extend((k, i) for k in applicants if k not in accepted)

        for k, i in rejected:
            rejections[k, i] += 1
            working[k, i] -= delta
        if on_round is not None:
            on_round(rnd, Matching(tuple(assignment), quotas), working.copy(), rejections.copy())
    raise MatchingError(f"phase I did not terminate within {max_rounds} rounds")


def _ur_utility(prefs: PreferenceTables, assignment: Sequence[int], i: int) -> float:
    return _mean_rate(prefs.ur_ref_pref[i], [k for k, j in enumerate(assignment) if j == i])


def _swap_gains(prefs: PreferenceTables, matching: Matching,
                swap: SwapProposal) -> list[tuple[float, float]]:
    """(before, after) utility for every agent the swap touches."""
    a = matching.assignment
    s, t, h, g = swap.ut_s, swap.ut_t, swap.ur_h, swap.ur_g
    changes = {s: g} if t is None else {s: g, t: h}
    b = matching.moved(changes).assignment
    u = prefs.ut_pref
    out = [(u[s, h], u[s, g])]
    if t is not None:
        out.append((u[t, g], u[t, h]))
    out.append((_ur_utility(prefs, a, h), _ur_utility(prefs, b, h)))
    out.append((_ur_utility(prefs, a, g), _ur_utility(prefs, b, g)))
    return out


def is_approved(prefs: PreferenceTables, matching: Matching, swap: SwapProposal) -> bool:
    """Nobody involved loses and somebody strictly gains. An empty seat
    counts as an agent whose utility stays 0."""
    gains = _swap_gains(prefs, matching, swap)
    return all(after >= before for before, after in gains) and \
        any(after > before for before, after in gains)


def candidate_swaps(matching: Matching) -> Iterator[SwapProposal]:
    """Every swap in lexicographic order: UT pairs ``s < t`` on different URs,
    then for each ``s`` the free seats at other URs."""
    a = matching.assignment
    n, m = len(a), len(matching.quotas)
    free = [matching.remaining(i) for i in range(m)]
    for s in range(n):
        for t in range(s + 1, n):
            if a[s] != a[t]:
                yield SwapProposal(s, t, a[s], a[t])
        for g in range(m):
            if g != a[s] and free[g] > 0:
                yield SwapProposal(s, None, a[s], g)


def is_pairwise_stable(matching: Matching, prefs: PreferenceTables
                       ) -> tuple[bool, SwapProposal | None]:
    for swap in candidate_swaps(matching):
        if is_approved(prefs, matching, swap):
            return False, swap
    return True, None


def apply_swap(matching: Matching, swap: SwapProposal) -> Matching:
    changes = {swap.ut_s: swap.ur_g}
    if swap.ut_t is not None:
        changes[swap.ut_t] = swap.ur_h
    return matching.moved(changes)


def phase2_swap_stabilize(matching: Matching, prefs: PreferenceTables,
                          max_swaps: int | None = None,
                          on_swap: Callable[[SwapProposal, Matching], None] | None = None
                          ) -> Matching:
    """Execute the first approved swap, rescan from the start, repeat."""
    if not matching.is_total:
        raise MatchingError("phase II needs every UT matched")
    if max_swaps is None:
        max_swaps = 1000 * len(matching.assignment) ** 2
    for _ in range(max_swaps + 1):
        stable, swap = is_pairwise_stable(matching, prefs)
        if stable:
            return matching
        matching = apply_swap(matching, swap)
        if on_swap is not None:
            on_swap(swap, matching)
    raise MatchingError(f"phase II did not converge within {max_swaps} swaps")


def proposed_matching(prefs: PreferenceTables, quotas: Sequence[int],
                      delta: float | None = None) -> Matching:
    """The full two-phase algorithm (PMA)."""
    return phase2_swap_stabilize(phase1_preliminary(prefs, quotas, delta), prefs)


def da_baseline(prefs: PreferenceTables, quotas: Sequence[int]) -> Matching:
    """UT-proposing deferred acceptance on the fixed direct-rate lists."""
    n, m = prefs.n_ut, prefs.n_ur
    quotas = tuple(int(q) for q in quotas)
    _check_capacity(n, quotas)
    order = [sorted(range(m), key=lambda i: (-prefs.ut_pref[k, i], i)) for k in range(n)]
    nxt = [0] * n
    held: list[list[int]] = [[] for _ in range(m)]
    free = list(range(n))
    while free:
        k = free.pop(0)
        i = order[k][nxt[k]]
        nxt[k] += 1
        ref = prefs.ur_ref_pref[i]
        pool = sorted(held[i] + [k], key=lambda j: (-ref[j], j))
        held[i] = pool[:quotas[i]]
        free.extend(pool[quotas[i]:])
        free.sort()
    assignment = [-1] * n
    for i, members in enumerate(held):
        for k in members:
            assignment[k] = i
    return Matching(tuple(assignment), quotas)


def random_baseline(n_ut: int, quotas: Sequence[int], seed: int) -> Matching:
    """Shuffle the list of seats and hand the first ``N`` to the UTs."""
    quotas = tuple(int(q) for q in quotas)
    _check_capacity(n_ut, quotas)
    seats = np.repeat(np.arange(len(quotas)), quotas)
    make_rng(seed, "rms").shuffle(seats)
    return Matching(tuple(int(i) for i in seats[:n_ut]), quotas)


def social_welfare(matching: Matching, prefs: PreferenceTables) -> float:
    """UT utilities scaled by the best direct rate in the table plus UR set
    utilities scaled by the best single-UT reference value."""
    a = matching.assignment
    ut_scale = float(prefs.ut_pref.max())
    ur_scale = float(prefs.ur_ref_pref.max())
    ut_part = math.fsum(prefs.ut_pref[k, i] for k, i in enumerate(a))
    ur_part = math.fsum(_ur_utility(prefs, a, i) for i in range(prefs.n_ur))
    return (ut_part / ut_scale if ut_scale > 0 else 0.0) + \
        (ur_part / ur_scale if ur_scale > 0 else 0.0)
