"""Null-steering beamforming and the secrecy-rate / cost / utility model.

Rates are in bits/s/Hz (log base 2). Infeasible coalitions are scored
``NEG_INF``: IEEE negative infinity orders below every real and absorbs
finite addends, so totals over a structure stay ``NEG_INF`` without
special-casing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import PhysicalParams
from .geometry import ChannelSet

NEG_INF = float("-inf")

# relative tolerance when comparing broadcast power against the budget
POWER_RTOL = 1e-9
# relative threshold on the R factor of H_TE before it is called rank deficient
RANK_RTOL = 1e-12


class BeamformingError(ArithmeticError):
    pass


class SingularProjectorError(BeamformingError):
    """Eavesdropper channel matrix is rank deficient."""


class ZeroProjectionError(BeamformingError):
    """Receiver channel lies in the eavesdropper span; nothing survives nulling."""


class NoRelaysError(ValueError):
    """Broadcast power is undefined for a group without relays."""


@dataclass(frozen=True, eq=False)
class BeamformingProblem:
    h_tr: np.ndarray  # (n,) coalition -> receiver
    h_te: np.ndarray  # (n, S) coalition -> eavesdroppers
    power_budget: float

    def __post_init__(self):
        h_tr = np.asarray(self.h_tr, dtype=complex).reshape(-1)
        h_te = np.asarray(self.h_te, dtype=complex).reshape(len(h_tr), -1)
        object.__setattr__(self, "h_tr", h_tr)
        object.__setattr__(self, "h_te", h_te)


@dataclass(frozen=True, eq=False)
class BeamformingSolution:
    weights: np.ndarray
    array_gain: float
    residual_leakage: float


def _orthonormal_span(h_te: np.ndarray) -> np.ndarray:
    """Orthonormal basis of span(h_te), via QR. Raises if rank deficient."""
    n, s = h_te.shape
    if s == 0:
        return np.zeros((n, 0), dtype=complex)
    if s >= n:
        raise SingularProjectorError(f"need more transmitters than eavesdroppers (n={n}, S={s})")
    q, r = np.linalg.qr(h_te)
    diag = np.abs(np.diag(r))
    if diag.min() <= RANK_RTOL * diag.max():
        raise SingularProjectorError("eavesdropper channels are linearly dependent")
    return q


def eavesdropper_projector(h_te: np.ndarray) -> np.ndarray:
    """``H (H^H H)^-1 H^H``, computed as ``Q Q^H`` from a QR factorization."""
    h_te = np.atleast_2d(np.asarray(h_te, dtype=complex))
    q = _orthonormal_span(h_te)
    return q @ q.conj().T


def null_steering_weights(problem: BeamformingProblem) -> BeamformingSolution:
    """Max ``|w^H h_tr|^2`` s.t. ``w^H w <= P0`` and ``w^H H_te = 0``.

    The optimum is the receiver channel projected onto the orthogonal
    complement of the eavesdropper span, scaled to full power.
    """
    h, H, p0 = problem.h_tr, problem.h_te, problem.power_budget
    q = _orthonormal_span(H)
    residual = h - q @ (q.conj().T @ h)
    norm = np.linalg.norm(residual)
    if norm <= RANK_RTOL * max(np.linalg.norm(h), np.finfo(float).tiny):
        raise ZeroProjectionError("receiver channel is inside the eavesdropper span")
    w = math.sqrt(p0) * residual / norm
    gain = float(abs(np.vdot(w, h)) ** 2)
    leakage = float(np.max(np.abs(w.conj() @ H))) if H.shape[1] else 0.0
    return BeamformingSolution(w, gain, leakage)


def _members(group: Iterable[int]) -> list[int]:
    return sorted(set(int(j) for j in group))


def broadcast_power(k: int, group: Iterable[int], channels: ChannelSet,
                    params: PhysicalParams) -> float:
    """Power for every ally in ``group`` to decode at the SNR threshold.

    Set by the weakest (furthest) source-to-ally link; the source itself
    needs no decoding.
    """
    allies = [j for j in _members(group) if j != k]
    if not allies:
        raise NoRelaysError(f"UT {k} has no relays")
    weakest = min(channels.ut_ut_sq[k, j] for j in allies)
    return params.snr_threshold * params.noise_power / weakest


def direct_secrecy_rate(k: int, i: int, channels: ChannelSet, params: PhysicalParams) -> float:
    p0, n0 = params.power_budget, params.noise_power
    legit = math.log2(1.0 + p0 * channels.ut_ur_sq[k, i] / n0)
    leak = max((math.log2(1.0 + p0 * g / n0) for g in channels.ut_ue_sq[k]), default=0.0)
    return max(legit - leak, 0.0)


def broadcast_cost(k: int, p_b: float, channels: ChannelSet, params: PhysicalParams) -> float:
    """Worst-eavesdropper rate overheard during the half-slot broadcast."""
    n0 = params.noise_power
    leak = max((math.log2(1.0 + p_b * g / n0) for g in channels.ut_ue_sq[k]), default=0.0)
    return 0.5 * leak


def cooperative_payoff(k: int, solution: BeamformingSolution, p_b: float,
                       channels: ChannelSet, params: PhysicalParams, receiver: int) -> float:
    n0 = params.noise_power
    broadcast_snr = p_b * channels.ut_ur_sq[k, receiver] / n0
    return 0.5 * math.log2(1.0 + broadcast_snr + solution.array_gain / n0)


def beamforming_problem(group: Sequence[int], receiver: int, channels: ChannelSet,
                        params: PhysicalParams) -> BeamformingProblem:
    idx = _members(group)
    return BeamformingProblem(channels.ut_ur[idx, receiver], channels.ut_ue[idx, :],
                              params.power_budget)


def coalition_utility(k: int, group: Iterable[int], assignment: Sequence[int],
                      channels: ChannelSet, params: PhysicalParams) -> float:
    """Utility of UT ``k`` when ``group`` (which contains ``k``) serves its slot.

    Alone: the direct secrecy rate. A feasible coalition: the clamped payoff
    minus broadcast cost. Anything else is ``NEG_INF``.
    """
    members = _members(group)
    if k not in members:
        raise ValueError(f"UT {k} must belong to its own group")
    receiver = int(assignment[k])
    if len(members) == 1:
        return direct_secrecy_rate(k, receiver, channels, params)
    if len(members) < channels.n_ue + 1:
        return NEG_INF
    p_b = broadcast_power(k, members, channels, params)
    if p_b > params.power_budget * (1.0 + POWER_RTOL):
        return NEG_INF
    try:
        solution = null_steering_weights(beamforming_problem(members, receiver, channels, params))
    except BeamformingError:
        return NEG_INF
    payoff = cooperative_payoff(k, solution, p_b, channels, params, receiver)
    return max(payoff - broadcast_cost(k, p_b, channels, params), 0.0)
