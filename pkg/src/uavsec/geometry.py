"""Node deployment, LoS channel realization and SNR arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig, PhysicalParams


class DegenerateGeometryError(ValueError):
    """Two nodes share a position, so the path loss is undefined."""


class Position3D(NamedTuple):
    x: float
    y: float
    z: float


def derive_seed(seed: int, *keys: int | str) -> int:
    """Mix ``seed`` with ``keys`` into an independent 64-bit seed.

    String keys are hashed through their UTF-8 bytes so the rule does not
    depend on Python's per-process string hashing.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            words.append(int.from_bytes(key.encode("utf-8")[:8].ljust(8, b"\0"), "little"))
        else:
            words.append(int(key) & 0xFFFFFFFFFFFFFFFF)
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *keys)))


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Scenario:
    """One random layout: positions of every node plus link constants.

    Positions are ``(count, 3)`` arrays in metres.
    """

    ut_positions: np.ndarray
    ur_positions: np.ndarray
    ue_positions: np.ndarray
    params: PhysicalParams
    quotas: tuple[int, ...]

    def __post_init__(self):
        for name in ("ut_positions", "ur_positions", "ue_positions"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1, 3)
            if len(arr) < 1:
                raise ConfigError(name, "need at least one node")
            if not np.all(np.isfinite(arr)) or np.any(arr[:, 2] < 0):
                raise ConfigError(name, "coordinates must be finite with z >= 0")
            object.__setattr__(self, name, _frozen(arr))
        if len(self.quotas) != self.n_ur:
            raise ConfigError("quotas", "need one quota per UR")
        if sum(self.quotas) < self.n_ut:
            raise ConfigError("quotas", f"total quota {sum(self.quotas)} < N = {self.n_ut}")

    @property
    def n_ut(self) -> int:
        return len(self.ut_positions)

    @property
    def n_ur(self) -> int:
        return len(self.ur_positions)

    @property
    def n_ue(self) -> int:
        return len(self.ue_positions)


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Complex LoS gains for all UT-UR, UT-UE and UT-UT pairs.

    ``*_sq`` hold the squared magnitudes ``d**-alpha``, computed from the
    distances directly rather than from the complex values.
    """

    ut_ur: np.ndarray
    ut_ue: np.ndarray
    ut_ut: np.ndarray
    ut_ur_sq: np.ndarray
    ut_ue_sq: np.ndarray
    ut_ut_sq: np.ndarray
    ut_ut_dist: np.ndarray

    @property
    def n_ut(self) -> int:
        return self.ut_ur.shape[0]

    @property
    def n_ur(self) -> int:
        return self.ut_ur.shape[1]

    @property
    def n_ue(self) -> int:
        return self.ut_ue.shape[1]


def distance(p: Sequence[float], q: Sequence[float]) -> float:
    return math.dist(p, q)


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))


def _uniform_box(rng: np.random.Generator, count: int, width: float, depth: float,
                 z: tuple[float, float]) -> np.ndarray:
    # draw row by row so the first k nodes do not depend on the total count
    u = rng.random((count, 3))
    lo = np.array([0.0, 0.0, z[0]])
    hi = np.array([width, depth, z[1]])
    return lo + u * (hi - lo)


def sample_scenario(config: ExperimentConfig, seed: int) -> Scenario:
    """Draw a layout. UTs, URs and UEs use separate streams of ``seed``."""
    r = config.region
    for name in ("ut_z", "ur_z", "ue_z"):
        lo, hi = getattr(r, name)
        if not lo < hi:
            raise ConfigError(f"region.{name}", "lo must be < hi")
    ut = _uniform_box(make_rng(seed, "ut"), config.n_ut, r.width, r.depth, r.ut_z)
    ur = _uniform_box(make_rng(seed, "ur"), config.n_ur, r.width, r.depth, r.ur_z)
    ue = _uniform_box(make_rng(seed, "ue"), config.n_ue, r.width, r.depth, r.ue_z)
    return Scenario(ut, ur, ue, config.params, (config.quota,) * config.n_ur)


def _phases(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    # sampled as (cols, rows) so adding receivers keeps earlier columns fixed
    return np.exp(1j * 2.0 * np.pi * rng.random((cols, rows))).T


def realize_channels(scenario: Scenario, seed: int) -> ChannelSet:
    """Build ``h = d**(-alpha/2) * exp(j*theta)`` with uniform random phases."""
    alpha = scenario.params.path_loss_exponent
    ut = scenario.ut_positions
    d_ur = pairwise_distances(ut, scenario.ur_positions)
    d_ue = pairwise_distances(ut, scenario.ue_positions)
    d_ut = pairwise_distances(ut, ut)
    off_diag = ~np.eye(len(ut), dtype=bool)
    if np.any(d_ur <= 0) or np.any(d_ue <= 0) or np.any(d_ut[off_diag] <= 0):
        raise DegenerateGeometryError("co-located nodes have no defined path loss")

    n = len(ut)
    ur_phase = _phases(make_rng(seed, "ph-ur"), n, scenario.n_ur)
    ue_phase = _phases(make_rng(seed, "ph-ue"), n, scenario.n_ue)
    upper = np.exp(1j * 2.0 * np.pi * make_rng(seed, "ph-ut").random((n, n)))
    ut_phase = np.triu(upper, 1)
    ut_phase = ut_phase + ut_phase.T  # reciprocal links

    ut_ut_sq = np.where(off_diag, d_ut, 1.0) ** (-alpha) * off_diag
    return ChannelSet(
        ut_ur=_frozen(d_ur ** (-alpha / 2) * ur_phase),
        ut_ue=_frozen(d_ue ** (-alpha / 2) * ue_phase),
        ut_ut=_frozen(np.sqrt(ut_ut_sq) * ut_phase),
        ut_ur_sq=_frozen(d_ur ** (-alpha)),
        ut_ue_sq=_frozen(d_ue ** (-alpha)),
        ut_ut_sq=_frozen(ut_ut_sq),
        ut_ut_dist=_frozen(d_ut),
    )


def snr(tx_power: float, gain_sq, noise: float):
    return tx_power * gain_sq / noise


def effective_radius(params: PhysicalParams) -> float:
    """Largest UT-UT distance a broadcast can cover at the decoding threshold."""
    p = params
    return (p.power_budget / (p.snr_threshold * p.noise_power)) ** (1.0 / p.path_loss_exponent)
