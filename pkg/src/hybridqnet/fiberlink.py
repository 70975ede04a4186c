"""Rate and fidelity of a trapped-ion repeater chain over optical fiber.

A chain with ``n`` photon repeaters has ``n`` ion-ion links. Each link spans
two half-segments that meet at a photon repeater; a heralded link needs both
photons to arrive and the photon BSM (success 1/2) to click. The chain waits
for all links, approximated by the ``(3/2)**log2(n)`` factor, and the ``n - 1``
trapped-ion repeaters then swap deterministically.

Lengths are in km, times in seconds, ``gamma`` is a log10 attenuation
coefficient (transmission ``10**(-gamma * L)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .bellstate import (
    BellDiagonalState,
    NoiseParams,
    ParameterError,
    chain_fidelity,
    chain_pauli,
    dephasing_probability,
    identical_chain_pauli,
    ion_ion_after_photon_bsm,
    nested_distill,
)

MAX_REPEATERS = 512
MAX_ROUNDS = 6


@dataclass(frozen=True)
class FiberParams:
    gamma: float = 0.0173
    c_fiber: float = 2.0e8
    tau_emit: float = 175e-6
    p_detect: float = 0.21
    multiplex: int = 1

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ParameterError(f"gamma={self.gamma!r} must be > 0")
        if not self.c_fiber > 0:
            raise ParameterError(f"c_fiber={self.c_fiber!r} must be > 0")
        if not self.tau_emit >= 0:
            raise ParameterError(f"tau_emit={self.tau_emit!r} must be >= 0")
        if not 0 < self.p_detect <= 1:
            raise ParameterError(f"p_detect={self.p_detect!r} outside (0, 1]")
        if self.multiplex < 1:
            raise ParameterError(f"multiplex={self.multiplex!r} must be >= 1")

    @property
    def c_km(self) -> float:
        return self.c_fiber / 1e3


# One ion pair per direction for the isolated-link study, and the network
# setting with 10 ion pairs per direction.
SINGLE_PAIR_FIBER = FiberParams()
NETWORK_FIBER = FiberParams(multiplex=10)


@dataclass(frozen=True)
class ChainResult:
    n_photon_repeaters: int
    rate: float
    fidelity: float
    state: BellDiagonalState | None
    rounds: int = 0
    feasible: bool = True
    time_s: float = math.inf
    link_half_segments: tuple[tuple[float, float], ...] = field(default=(), repr=False)

    @classmethod
    def infeasible(cls) -> ChainResult:
        return cls(0, 0.0, 0.0, None, feasible=False)


def segment_transmission(length_km: float, n_photon: int, params: FiberParams = SINGLE_PAIR_FIBER) -> float:
    """Transmission of one half-segment when ``length_km`` is split ``2 n`` ways."""
    if n_photon < 1:
        raise ValueError("n_photon must be >= 1; use time_direct for an unrepeated link")
    if length_km < 0:
        raise ParameterError(f"length_km={length_km!r} must be >= 0")
    return 10.0 ** (-params.gamma * length_km / (2 * n_photon))


def waiting_factor(n_links: int | np.ndarray) -> np.ndarray | float:
    """``(3/2)**log2(n)``, with ``log2`` taken as a real number."""
    return 1.5 ** np.log2(n_links)


def time_with_repeaters(length_km: float, n_photon: int, params: FiberParams = SINGLE_PAIR_FIBER) -> float:
    """Mean time to deliver one end-to-end pair over ``n_photon`` evenly spaced links."""
    eta = segment_transmission(length_km, n_photon, params)
    nu = math.log2(n_photon)
    attempt = length_km / (n_photon * params.c_km) + params.tau_emit
    t = attempt * 3.0**nu / (2.0 ** (nu - 1.0) * params.p_detect**2 * eta**2)
    return t / params.multiplex


def time_direct(length_km: float, params: FiberParams = SINGLE_PAIR_FIBER) -> float:
    """Mean time over a bare fiber: one ion emits, the far end detects."""
    if length_km < 0:
        raise ParameterError(f"length_km={length_km!r} must be >= 0")
    t = (2.0 * length_km / params.c_km + params.tau_emit) / (params.p_detect * 10.0 ** (-params.gamma * length_km))
    return t / params.multiplex


def link_times(half_segments: np.ndarray, params: FiberParams) -> np.ndarray:
    """Per-link mean heralding time for links given as rows ``(left_km, right_km)``.

    The attempt clock is set by the longer half: both ions wait for the photon
    repeater's answer. Not divided by ``multiplex``.
    """
    h = np.asarray(half_segments, dtype=float)
    attempt = 2.0 * h.max(axis=-1) / params.c_km + params.tau_emit
    p = 0.5 * params.p_detect**2 * 10.0 ** (-params.gamma * h.sum(axis=-1))
    return attempt / p


_LAG_X, _LAG_W = np.polynomial.laguerre.laggauss(60)


def heterogeneity_factor(times: np.ndarray) -> float:
    """How much sooner unequal links are all ready than ``n`` copies of the slowest one.

    Ratio of expected maxima of exponential waits (continuous-time limit of
    the geometric attempts); exactly 1 for equal times, down to ``1 / H_n``
    when one link dominates.
    """
    t = np.asarray(times, dtype=float)
    if t.size <= 1:
        return 1.0
    tmax = t.max()
    hetero = _expected_max_exp_1d(tmax / t)
    uniform = _expected_max_exp_1d(np.ones_like(t))
    return float(hetero / uniform)


def _expected_max_exp_1d(scaled_rates: np.ndarray) -> float:
    x = _LAG_X[:, None]
    survive = 1.0 - np.prod(-np.expm1(-x * scaled_rates[None, :]), axis=1)
    return float(np.sum(_LAG_W * np.exp(_LAG_X) * survive))


def chain_time(half_segments: np.ndarray, params: FiberParams, cost: float | np.ndarray = 1.0) -> float:
    """Mean end-to-end time for arbitrary links, each needing ``cost`` raw pairs.

    The slowest link sets the scale, times the ``(3/2)**log2(n)`` waiting
    factor, corrected by :func:`heterogeneity_factor` for unequal links. For
    even spacing and ``cost = 1`` this is :func:`time_with_repeaters`.
    """
    t = link_times(half_segments, params)
    return float(np.asarray(cost) * t.max() * waiting_factor(len(t)) * heterogeneity_factor(t) / params.multiplex)


# --- fidelity ---------------------------------------------------------------------


@lru_cache(maxsize=64)
def _distilled_links(noise: NoiseParams, max_rounds: int) -> tuple[np.ndarray, np.ndarray]:
    """Pauli weights of an r-round purified link and its raw-pair cost, r = 0..max_rounds."""
    f_ii = ion_ion_after_photon_bsm(noise).fidelity
    fids, costs = zip(*(nested_distill(f_ii, r) for r in range(max_rounds + 1)))
    links = np.zeros((max_rounds + 1, 4))
    links[:, 0] = fids
    links[:, 1] = 1.0 - np.asarray(fids)
    return links, np.asarray(costs)


@lru_cache(maxsize=64)
def _direct_links(noise: NoiseParams, max_rounds: int) -> tuple[np.ndarray, np.ndarray]:
    """Same as :func:`_distilled_links` for an unrepeated ion-photon pair (fidelity ``f0``)."""
    fids, costs = zip(*(nested_distill(noise.f0, r) for r in range(max_rounds + 1)))
    links = np.zeros((max_rounds + 1, 4))
    links[:, 0] = fids
    links[:, 1] = 1.0 - np.asarray(fids)
    return links, np.asarray(costs)


@lru_cache(maxsize=64)
def fidelity_table(noise: NoiseParams, max_n: int = MAX_REPEATERS, max_rounds: int = MAX_ROUNDS) -> np.ndarray:
    """Undephased chain fidelity, indexed ``[rounds, n_links]`` (column 0 unused)."""
    links, _ = _distilled_links(noise, max_rounds)
    n = np.arange(max_n + 1)
    table = np.zeros((max_rounds + 1, max_n + 1))
    for r in range(max_rounds + 1):
        table[r, 1:] = identical_chain_pauli(links[r], n[1:], noise.f_swap_ion)[:, 0]
    table.setflags(write=False)
    return table


def chain_fidelity_no_distill(n_photon: int, noise: NoiseParams = NoiseParams()) -> BellDiagonalState:
    """End-to-end state after ``n_photon`` raw ion-ion links and ``n_photon - 1`` DBSMs."""
    if n_photon < 1:
        raise ValueError("n_photon must be >= 1")
    link = ion_ion_after_photon_bsm(noise)
    return chain_fidelity([link] * n_photon, noise.f_swap_ion)


def dephased_chain(
    links: np.ndarray, wait_s: np.ndarray, noise: NoiseParams
) -> np.ndarray:
    """Chain Pauli weights after each link dephases for its own ``wait_s``."""
    links = np.array(links, dtype=float)
    if not math.isinf(noise.tau_q):
        q = np.vectorize(dephasing_probability)(np.maximum(wait_s, 0.0), noise.tau_q)
        q = np.broadcast_to(q, links.shape[:-1])[..., None]
        links = (1.0 - q) * links + q * links[..., [1, 0, 3, 2]]
    return chain_pauli(links, noise.f_swap_ion)


# --- searches ------------------------------------------------------------------------


def optimal_repeater_count(
    length_km: float,
    params: FiberParams = SINGLE_PAIR_FIBER,
    max_n: int = MAX_REPEATERS,
    noise: NoiseParams = NoiseParams(),
) -> ChainResult:
    """Fastest of the direct link and ``n = 1..max_n`` evenly spaced repeaters.

    Fidelity is ignored in the search and reported for the chosen ``n``.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    n = np.arange(1, max_n + 1)
    times = np.array([time_with_repeaters(length_km, int(k), params) for k in n])
    best = int(np.argmin(times))  # first minimum -> smaller n on ties
    t_direct = time_direct(length_km, params)
    if t_direct <= times[best]:
        state = BellDiagonalState.two_component(noise.f0)
        return ChainResult(0, 1.0 / t_direct, state.fidelity, state, time_s=t_direct)
    k = int(n[best])
    state = chain_fidelity_no_distill(k, noise)
    return ChainResult(k, float(1.0 / times[best]), state.fidelity, state, time_s=float(times[best]))


def _uniform_halves(length_km: float, n: int) -> np.ndarray:
    return np.full((n, 2), length_km / (2 * n))


def distilled_rate(
    length_km: float,
    target_fidelity: float,
    noise: NoiseParams = NoiseParams(),
    params: FiberParams = NETWORK_FIBER,
    max_n: int = MAX_REPEATERS,
    max_rounds: int = MAX_ROUNDS,
) -> ChainResult:
    """Highest rate over evenly spaced ``(n, rounds)`` whose fidelity reaches the target.

    Purification runs on every ion-ion link before swapping. Returns an
    infeasible zero-rate result when no configuration reaches the target.
    """
    if not 0.5 < target_fidelity < 1.0:
        raise ParameterError(f"target_fidelity={target_fidelity!r} outside (0.5, 1)")
    candidates = []
    dlinks, dcosts = _direct_links(noise, max_rounds)
    t0 = time_direct(length_km, params)
    for r in range(max_rounds + 1):
        if dlinks[r, 0] >= target_fidelity:
            candidates.append((float(t0 * dcosts[r]), 0, r, dlinks[r]))
            break
    table = fidelity_table(noise, max_n, max_rounds)
    _, costs = _distilled_links(noise, max_rounds)
    for n in range(1, max_n + 1):
        ok = np.nonzero(table[:, n] >= target_fidelity)[0]
        if ok.size == 0:
            continue
        r = int(ok[0])
        candidates.append((time_with_repeaters(length_km, n, params) * costs[r], n, r, None))
    if not candidates:
        return ChainResult.infeasible()
    t, n, r, direct_state = min(candidates, key=lambda c: (c[0], c[1], c[2]))
    if n == 0:
        state = BellDiagonalState.from_pauli(direct_state)
    else:
        links, _ = _distilled_links(noise, max_rounds)
        state = BellDiagonalState.from_pauli(chain_pauli(np.tile(links[r], (n, 1)), noise.f_swap_ion))
    return ChainResult(n, float(1.0 / t), state.fidelity, state, rounds=r, time_s=float(t))


def fidelity_in_time_budget(
    length_km: float,
    budget_s: float,
    noise: NoiseParams = NoiseParams(),
    params: FiberParams = NETWORK_FIBER,
    max_n: int = MAX_REPEATERS,
    max_rounds: int = MAX_ROUNDS,
) -> ChainResult:
    """Best end-to-end fidelity among evenly spaced configurations finishing within ``budget_s``.

    Each link's memories dephase for ``budget_s`` minus that link's own mean
    completion time.
    """
    if not budget_s > 0:
        raise ParameterError(f"budget_s={budget_s!r} must be > 0")
    best: tuple[float, int, int, float, np.ndarray] | None = None

    def consider(fid: float, n: int, r: int, t: float, pauli: np.ndarray) -> None:
        nonlocal best
        if best is None or fid > best[0]:
            best = (fid, n, r, t, pauli)

    dlinks, dcosts = _direct_links(noise, max_rounds)
    t0 = time_direct(length_km, params)
    for r in range(max_rounds + 1):
        t = t0 * dcosts[r]
        if t <= budget_s:
            pauli = dephased_chain(dlinks[r][None, :], np.array([budget_s - t]), noise)
            consider(pauli[0], 0, r, t, pauli)

    links, costs = _distilled_links(noise, max_rounds)
    for n in range(1, max_n + 1):
        halves = _uniform_halves(length_km, n)
        t_link = float(link_times(halves, params)[0]) / params.multiplex
        t_chain = time_with_repeaters(length_km, n, params)
        for r in range(max_rounds + 1):
            t = t_chain * costs[r]
            if t > budget_s:
                break
            pauli = dephased_chain(np.tile(links[r], (n, 1)), np.full(n, budget_s - t_link * costs[r]), noise)
            consider(pauli[0], n, r, t, pauli)

    if best is None:
        return ChainResult.infeasible()
    fid, n, r, t, pauli = best
    state = BellDiagonalState.from_pauli(pauli)
    return ChainResult(n, float(1.0 / t), state.fidelity, state, rounds=r, time_s=float(t))
