"""End-to-end evaluation of fiber-only, satellite-only and hybrid routes.

A route between Alice and Bob is the shortest fiber path. Repeaters can only
sit on nodes of that path, so placements are snapped to the nearest available
node. The hybrid route sends each end to its nearest satellite ground station
by fiber and bridges the stations with a satellite pair; the two station
swaps use the same DBSM model as the trapped-ion repeaters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import isotonic_regression

from .bellstate import BellDiagonalState, NoiseParams, ParameterError, chain_pauli
from .fiberlink import (
    MAX_REPEATERS,
    MAX_ROUNDS,
    NETWORK_FIBER,
    FiberParams,
    _direct_links,
    _distilled_links,
    dephased_chain,
    fidelity_table,
    heterogeneity_factor,
    link_times,
    time_direct,
    waiting_factor,
)
from .satlink import GeoPoint, SatelliteParams, StationParams, pair_rate
from .topology import GeoGraph, Path, StationIndex, distances_from, path_from_distances

RATE = "rate"
FIDELITY = "fidelity"
FIBER_ONLY = "fiber_only"
HYBRID = "hybrid"
SATELLITE_ONLY = "satellite_only"
DEFAULT_TARGET = 0.87
CROSSOVER_BIN_KM = 20.0
ALLOCATIONS = ("fiber_chain", "end_to_end", "segment")
DEFAULT_ALLOCATION = "fiber_chain"


@dataclass(frozen=True)
class PathPlan:
    path: tuple[int, ...]
    active_photon_repeaters: tuple[int, ...]
    active_ion_repeaters: tuple[int, ...]
    objective: str
    segment_lengths: tuple[float, ...]
    rounds: int = 0
    rate: float = 0.0
    fidelity: float = 0.0
    time_s: float = math.inf
    feasible: bool = True
    state: BellDiagonalState | None = field(default=None, repr=False)

    @property
    def n_photon(self) -> int:
        return len(self.active_photon_repeaters)

    @property
    def n_ion(self) -> int:
        return len(self.active_ion_repeaters)

    @property
    def length_km(self) -> float:
        return float(sum(self.segment_lengths))


@dataclass(frozen=True)
class HybridResult:
    pair: tuple[int, int]
    geographic_distance_km: float
    mode: str
    metric: str
    rate_hz: float
    fidelity: float
    fiber_segments: tuple[PathPlan, ...] = ()
    stations_used: tuple[int, ...] = ()
    satellite_rate_hz: float | None = None

    @property
    def value(self) -> float:
        return self.rate_hz if self.metric == RATE else self.fidelity

    @property
    def n_photon(self) -> int:
        return sum(p.n_photon for p in self.fiber_segments)

    @property
    def n_ion(self) -> int:
        return sum(p.n_ion for p in self.fiber_segments)


@dataclass(frozen=True)
class ScalingFactors:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.alpha < 1 or self.beta < 1:
            raise ParameterError(f"scaling factors must be >= 1, got {self}")


# --- placement ----------------------------------------------------------------------


def _snap(cum: np.ndarray, k: int) -> np.ndarray | None:
    """Path indices for the 2k-1 ideal positions j*L/(2k), strictly increasing interior nodes."""
    m = len(cum) - 1
    n_pos = 2 * k - 1
    if n_pos > m - 1:
        return None
    targets = cum[-1] * np.arange(1, 2 * k) / (2 * k)
    right = np.clip(np.searchsorted(cum, targets, side="left"), 1, m - 1)
    left = np.clip(right - 1, 1, m - 1)
    idx = np.where(targets - cum[left] <= cum[right] - targets, left, right)
    # keep the left-to-right order and leave room for the remaining positions
    off = np.arange(n_pos)
    idx = np.maximum.accumulate(np.maximum(idx, off + 1) - off) + off
    back = (m - 1) - (n_pos - 1 - off)
    idx = np.minimum(idx, back)
    if idx[0] < 1 or np.any(np.diff(idx) <= 0):
        return None
    return idx


def _plan(path: Path, idx: np.ndarray | None, objective: str, **kw) -> PathPlan:
    nodes = path.nodes
    if idx is None:
        return PathPlan(nodes, (), (), objective, (path.length_km,), **kw)
    cum = np.asarray(path.cumulative_km)
    bounds = np.concatenate([[0.0], cum[idx], [cum[-1]]])
    photon = tuple(nodes[i] for i in idx[0::2])
    ion = tuple(nodes[i] for i in idx[1::2])
    return PathPlan(nodes, photon, ion, objective, tuple(np.diff(bounds).tolist()), **kw)


def greedy_placement(
    path: Path,
    objective: str = RATE,
    noise: NoiseParams = NoiseParams(),
    params: FiberParams = NETWORK_FIBER,
    constraint: float | None = DEFAULT_TARGET,
    max_n: int = MAX_REPEATERS,
    max_rounds: int = MAX_ROUNDS,
) -> PathPlan:
    """Choose active photon / ion repeaters along ``path``.

    For each photon-repeater count ``k`` the ideal even positions ``j L / 2k``
    are snapped to path nodes (odd ``j`` photon, even ``j`` ion), then the
    purification depth is chosen. ``objective="rate"`` maximises rate subject
    to fidelity >= ``constraint`` (``None``: no fidelity floor, no
    purification); ``objective="fidelity"`` maximises fidelity within the time
    budget ``constraint`` (seconds). Ties go to smaller ``k``.
    """
    if len(path.nodes) < 2:
        raise ValueError("path needs at least two nodes")
    if objective not in (RATE, FIDELITY):
        raise ValueError(f"unknown objective {objective!r}")
    if objective == FIDELITY and not (constraint and constraint > 0):
        raise ParameterError("fidelity objective needs a positive time budget")
    if objective == RATE and constraint is not None and not 0.5 < constraint < 1:
        raise ParameterError(f"target fidelity {constraint!r} outside (0.5, 1)")
    cum = np.asarray(path.cumulative_km)
    L = float(cum[-1])
    rounds_allowed = max_rounds if constraint is not None else 0
    links, costs = _distilled_links(noise, max_rounds)
    dlinks, dcosts = _direct_links(noise, max_rounds)
    table = fidelity_table(noise, max_n, max_rounds)
    dephasing = not math.isinf(noise.tau_q)
    M = params.multiplex

    best: tuple | None = None  # (score, -k, -r, payload)

    def offer(score: float, k: int, r: int, payload: dict) -> None:
        nonlocal best
        key = (score, -k, -r)
        if best is None or key > best[0]:
            best = (key, payload)

    # k = 0: a bare fiber between the end nodes
    t0 = time_direct(L, params)
    for r in range(rounds_allowed + 1):
        t = t0 * dcosts[r]
        f = float(dlinks[r, 0])
        if objective == RATE:
            if constraint is None or f >= constraint:
                offer(1.0 / t, 0, r, dict(idx=None, r=r, t=t, pauli=dlinks[r]))
                break
        elif t <= constraint:
            pauli = dephased_chain(dlinks[r][None, :], np.array([constraint - t]), noise) if dephasing else dlinks[r]
            offer(float(pauli[0]), 0, r, dict(idx=None, r=r, t=t, pauli=pauli))

    k_max = min(max_n, (len(cum) - 1) // 2)
    for k in range(1, k_max + 1):
        if objective == RATE and constraint is not None and table[rounds_allowed, k] < constraint:
            # fidelity only falls with more links
            break
        if objective == FIDELITY and best is not None and table[max_rounds, k] < best[0][0]:
            break
        idx = _snap(cum, k)
        if idx is None:
            continue
        bounds = np.concatenate([[0.0], cum[idx], [L]])
        halves = np.diff(bounds).reshape(k, 2)
        t_links = link_times(halves, params)
        t_chain = float(t_links.max() * waiting_factor(k) * heterogeneity_factor(t_links) / M)
        if objective == RATE:
            if constraint is None:
                r = 0
            else:
                ok = np.nonzero(table[: rounds_allowed + 1, k] >= constraint)[0]
                r = int(ok[0])
            t = t_chain * costs[r]
            offer(1.0 / t, k, r, dict(idx=idx, r=r, t=t, pauli=None))
        else:
            for r in range(max_rounds + 1):
                t = t_chain * costs[r]
                if t > constraint:
                    break
                if dephasing:
                    waits = constraint - t_links * costs[r] / M
                    f = float(dephased_chain(np.tile(links[r], (k, 1)), waits, noise)[0])
                else:
                    f = float(table[r, k])
                offer(f, k, r, dict(idx=idx, r=r, t=t, pauli=None))

    if best is None:
        return PathPlan(path.nodes, (), (), objective, (L,), feasible=False, time_s=math.inf)
    payload = best[1]
    idx, r, t = payload["idx"], payload["r"], payload["t"]
    if idx is None:
        pauli = payload["pauli"]
    else:
        k = len(idx) // 2 + 1
        if objective == FIDELITY and dephasing:
            bounds = np.concatenate([[0.0], cum[idx], [L]])
            t_links = link_times(np.diff(bounds).reshape(k, 2), params)
            pauli = dephased_chain(np.tile(links[r], (k, 1)), constraint - t_links * costs[r] / M, noise)
        else:
            pauli = chain_pauli(np.tile(links[r], (k, 1)), noise.f_swap_ion)
    state = BellDiagonalState.from_pauli(pauli)
    return _plan(path, idx, objective, rounds=r, rate=float(1.0 / t), fidelity=state.fidelity, time_s=float(t), state=state)


# --- evaluations ----------------------------------------------------------------------


def _point(graph: GeoGraph, node: int) -> GeoPoint:
    return graph.nodes[node].location


def satellite_time(graph: GeoGraph, a: int, b: int, sat: SatelliteParams, station: StationParams) -> float:
    return 1.0 / pair_rate(_point(graph, a), _point(graph, b), sat, station)


def _constraint(metric: str, target: float, budget_s: float | None) -> float:
    if metric == RATE:
        return target
    if metric == FIDELITY:
        if budget_s is None:
            raise ValueError("fidelity metric needs a time budget")
        return budget_s
    raise ValueError(f"unknown metric {metric!r}")


def fiber_only_eval(
    graph: GeoGraph,
    a: int,
    b: int,
    noise: NoiseParams = NoiseParams(),
    params: FiberParams = NETWORK_FIBER,
    metric: str = RATE,
    target: float = DEFAULT_TARGET,
    budget_s: float | None = None,
    path: Path | None = None,
) -> HybridResult:
    """Shortest fiber path with optimally placed repeaters."""
    if a == b:
        raise ValueError("end nodes must differ")
    if path is None:
        d = distances_from(graph, [a, b])
        path = path_from_distances(graph, a, b, d[0], d[1])
    plan = greedy_placement(path, metric, noise, params, _constraint(metric, target, budget_s))
    return HybridResult(
        pair=(a, b),
        geographic_distance_km=graph.distance_km(a, b),
        mode=FIBER_ONLY,
        metric=metric,
        rate_hz=plan.rate if plan.feasible else 0.0,
        fidelity=plan.fidelity if plan.feasible else 0.0,
        fiber_segments=(plan,),
    )


def satellite_only_eval(
    graph: GeoGraph, a: int, b: int, sat: SatelliteParams = SatelliteParams(), station: StationParams = StationParams(), metric: str = RATE
) -> HybridResult:
    """Both end nodes host a telescope; the satellite delivers the pair directly."""
    rate = pair_rate(_point(graph, a), _point(graph, b), sat, station)
    return HybridResult(
        pair=(a, b),
        geographic_distance_km=graph.distance_km(a, b),
        mode=SATELLITE_ONLY,
        metric=metric,
        rate_hz=rate,
        fidelity=sat.source_fidelity,
        stations_used=(a, b),
        satellite_rate_hz=rate,
    )


def fold_hybrid(
    seg_a: BellDiagonalState | None, sat_state: BellDiagonalState, seg_b: BellDiagonalState | None, f_swap_ion: float
) -> BellDiagonalState:
    """Swap the fiber segments onto the satellite pair at the two stations."""
    states = [s for s in (seg_a, sat_state, seg_b) if s is not None]
    return BellDiagonalState.from_pauli(chain_pauli(np.stack([s.pauli for s in states]), f_swap_ion))


@lru_cache(maxsize=256)
def segment_target(target: float, sat_state: BellDiagonalState, n_segments: int, f_swap_ion: float, tol: float = 1e-6) -> float | None:
    """Equal fiber-segment fidelity whose fold with the satellite pair just meets ``target``.

    Segments are modelled as Psi-/Psi+ mixtures; ``None`` when even perfect
    segments fall short.
    """
    if n_segments == 0:
        return 0.5 if sat_state.fidelity >= target else None

    def end_to_end(f: float) -> float:
        seg = BellDiagonalState.two_component(f)
        segs = [seg] * n_segments
        return fold_hybrid(segs[0], sat_state, segs[1] if n_segments > 1 else None, f_swap_ion).fidelity

    if end_to_end(1.0) < target:
        return None
    lo, hi = 0.5, 1.0
    if end_to_end(lo) >= target:
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if end_to_end(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class PairContext:
    """Shortest-path data shared by the fiber-only and hybrid evaluations of one pair."""

    graph: GeoGraph
    a: int
    b: int
    dist: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.dist = distances_from(self.graph, [self.a, self.b])

    def path(self) -> Path:
        return path_from_distances(self.graph, self.a, self.b, self.dist[0], self.dist[1])

    def station_path(self, index: StationIndex, which: int) -> tuple[int, Path]:
        node = self.a if which == 0 else self.b
        s, _ = index.nearest(node)
        if s == node:
            return s, Path((node,), 0.0, (0.0,))
        row = int(np.searchsorted(index.stations, s))
        return s, path_from_distances(self.graph, node, s, self.dist[which], index._dist[row])


def hybrid_route_eval(
    graph: GeoGraph,
    index: StationIndex,
    a: int,
    b: int,
    noise: NoiseParams = NoiseParams(),
    params: FiberParams = NETWORK_FIBER,
    sat: SatelliteParams = SatelliteParams(),
    station: StationParams = StationParams(),
    metric: str = RATE,
    target: float = DEFAULT_TARGET,
    allocation: str = DEFAULT_ALLOCATION,
    ctx: PairContext | None = None,
) -> HybridResult | None:
    """Fiber to the nearest stations plus a satellite bridge; ``None`` if both share a station.

    Rate metric: both legs get the same fidelity target, found by bisection
    so that folding legs and bridge through the two station DBSMs reaches
    ``target``. ``allocation="end_to_end"`` folds in the real satellite pair;
    ``"fiber_chain"`` folds in an ideal one, so the target constrains the
    fiber part of the route (the satellite pair alone already sits at the
    source fidelity); ``"segment"`` gives each leg ``target`` on its own.
    Fidelity metric: each leg maximises fidelity within the satellite pair
    time.
    """
    ctx = ctx or PairContext(graph, a, b)
    s1, pa = ctx.station_path(index, 0)
    s2, pb = ctx.station_path(index, 1)
    if s1 == s2:
        return None
    r_sat = pair_rate(_point(graph, s1), _point(graph, s2), sat, station)
    sat_state = sat.pair_state()
    legs = [p for p in (pa, pb) if len(p.nodes) > 1]

    if metric == RATE:
        if allocation == "segment":
            leg_target = target
        elif allocation == "end_to_end":
            leg_target = segment_target(target, sat_state, len(legs), noise.f_swap_ion)
        elif allocation == "fiber_chain":
            leg_target = segment_target(target, BellDiagonalState.psi_minus(), len(legs), noise.f_swap_ion)
        else:
            raise ValueError(f"unknown allocation {allocation!r}")
        if leg_target is None:
            plans = tuple(PathPlan(p.nodes, (), (), RATE, (p.length_km,), feasible=False) for p in legs)
        else:
            leg_target = min(max(leg_target, 0.5 + 1e-9), 1.0 - 1e-9)
            plans = tuple(greedy_placement(p, RATE, noise, params, leg_target) for p in legs)
    elif metric == FIDELITY:
        plans = tuple(greedy_placement(p, FIDELITY, noise, params, 1.0 / r_sat) for p in legs)
    else:
        raise ValueError(f"unknown metric {metric!r}")

    if all(p.feasible for p in plans):
        states = [p.state for p in plans]
        seg_a = states[0] if len(pa.nodes) > 1 else None
        seg_b = states[-1] if len(pb.nodes) > 1 else None
        fid = fold_hybrid(seg_a, sat_state, seg_b, noise.f_swap_ion).fidelity
        rate = min([r_sat] + [p.rate for p in plans])
    else:
        fid, rate = 0.0, 0.0
    return HybridResult(
        pair=(a, b),
        geographic_distance_km=graph.distance_km(a, b),
        mode=HYBRID if legs else SATELLITE_ONLY,
        metric=metric,
        rate_hz=rate,
        fidelity=fid,
        fiber_segments=plans,
        stations_used=(s1, s2),
        satellite_rate_hz=r_sat,
    )


def compare_pair(
    graph: GeoGraph,
    index: StationIndex,
    a: int,
    b: int,
    noise: NoiseParams = NoiseParams(),
    params: FiberParams = NETWORK_FIBER,
    sat: SatelliteParams = SatelliteParams(),
    station: StationParams = StationParams(),
    metric: str = RATE,
    target: float = DEFAULT_TARGET,
    allocation: str = DEFAULT_ALLOCATION,
) -> tuple[HybridResult, HybridResult | None]:
    """Fiber-only and hybrid results for one pair under the same metric."""
    ctx = PairContext(graph, a, b)
    budget = satellite_time(graph, a, b, sat, station) if metric == FIDELITY else None
    fiber = fiber_only_eval(graph, a, b, noise, params, metric, target, budget, path=ctx.path())
    hybrid = hybrid_route_eval(graph, index, a, b, noise, params, sat, station, metric, target, allocation, ctx)
    return fiber, hybrid


def select(fiber: HybridResult, hybrid: HybridResult | None) -> HybridResult:
    """Better of the two under their metric; ties keep the fiber-only route."""
    if hybrid is None or hybrid.value <= fiber.value:
        return fiber
    return hybrid


def hybrid_eval(
    graph: GeoGraph,
    index: StationIndex,
    a: int,
    b: int,
    noise: NoiseParams = NoiseParams(),
    params: FiberParams = NETWORK_FIBER,
    sat: SatelliteParams = SatelliteParams(),
    station: StationParams = StationParams(),
    metric: str = RATE,
    target: float = DEFAULT_TARGET,
    allocation: str = DEFAULT_ALLOCATION,
) -> HybridResult:
    return select(*compare_pair(graph, index, a, b, noise, params, sat, station, metric, target, allocation))


# --- crossover and scaling ------------------------------------------------------------------


def crossover_distance(
    samples: Iterable[tuple[HybridResult, HybridResult | None]], bin_km: float = CROSSOVER_BIN_KM
) -> float | None:
    """Distance beyond which the alternative route beats fiber-only.

    Pairs are binned by geographic distance; the per-bin median of
    ``alternative - fiber`` is fitted with a count-weighted increasing
    isotonic regression, and the zero crossing of that fit is interpolated
    between bin centres. Pairs without an alternative route (both ends share
    a station) carry no information about the crossing and are skipped.
    ``None`` when the fit never turns positive.
    """
    d, diff = [], []
    for fiber, alt in samples:
        if alt is None:
            continue
        d.append(fiber.geographic_distance_km)
        diff.append(alt.value - fiber.value)
    if not d:
        return None
    d = np.asarray(d)
    diff = np.asarray(diff)
    bins = np.floor(d / bin_km).astype(np.int64)
    uniq = np.unique(bins)
    med = np.array([np.median(diff[bins == u]) for u in uniq])
    counts = np.array([np.sum(bins == u) for u in uniq], dtype=float)
    centers = (uniq + 0.5) * bin_km
    fit = isotonic_regression(med, weights=counts, increasing=True).x
    pos = np.nonzero(fit > 0)[0]
    if pos.size == 0:
        return None
    i = int(pos[0])
    if i == 0:
        return float(centers[0])
    y0, y1 = fit[i - 1], fit[i]
    return float(centers[i - 1] + (0.0 - y0) / (y1 - y0) * (centers[i] - centers[i - 1]))


def crossover_distances(
    rate_samples: Sequence[tuple[HybridResult, HybridResult | None]],
    fidelity_samples: Sequence[tuple[HybridResult, HybridResult | None]],
    bin_km: float = CROSSOVER_BIN_KM,
) -> tuple[float | None, float | None]:
    """``(D*_R, D*_F)``."""
    return crossover_distance(rate_samples, bin_km), crossover_distance(fidelity_samples, bin_km)


def scale_result(r: HybridResult, factors: ScalingFactors) -> HybridResult:
    a, b = factors.alpha, factors.beta
    if r.metric == FIDELITY and a != b:
        raise ValueError("fidelity-within-budget results depend on alpha/beta; re-run with scaled parameters")
    if r.mode == FIBER_ONLY:
        rate = a * r.rate_hz
    else:
        legs = [a * p.rate if p.feasible else 0.0 for p in r.fiber_segments]
        rate = min([b * r.satellite_rate_hz] + legs) if r.rate_hz > 0 else 0.0
    segs = tuple(replace(p, rate=a * p.rate, time_s=p.time_s / a) for p in r.fiber_segments)
    sat_rate = None if r.satellite_rate_hz is None else b * r.satellite_rate_hz
    return replace(r, rate_hz=rate, fiber_segments=segs, satellite_rate_hz=sat_rate)


def scale(results: Sequence[HybridResult], factors: ScalingFactors) -> list[HybridResult]:
    """Rescale ion multiplexing by ``alpha`` and satellite pair rate by ``beta``.

    The chosen route of each result is kept; with ``alpha == beta`` that
    choice is unchanged anyway.
    """
    return [scale_result(r, factors) for r in results]


# --- pair sampling --------------------------------------------------------------------------


def sample_pairs(
    graph: GeoGraph, count: int, seed: int, max_distance_km: float | None = None, stratified: bool = False
) -> list[tuple[int, int]]:
    """Distinct endpoint pairs, deterministic for ``seed``.

    ``stratified`` draws a target distance uniformly in ``(0, max_distance_km]``
    and picks the partner whose distance is closest to it, which spreads
    samples evenly over distance instead of following the pair-distance
    distribution.
    """
    rng = np.random.default_rng(seed)
    ends = graph.endpoint_ids
    if len(ends) < 2:
        raise ValueError("need at least two endpoint nodes")
    lat, lon = graph.lat[ends], graph.lon[ends]
    from .topology import haversine_km

    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    tries = 0
    while len(pairs) < count:
        tries += 1
        if tries > 100 * count + 1000:
            raise RuntimeError("could not draw enough distinct pairs")
        i = int(rng.integers(len(ends)))
        d = haversine_km(lat[i], lon[i], lat, lon)
        d[i] = np.inf
        if stratified:
            if max_distance_km is None:
                raise ValueError("stratified sampling needs max_distance_km")
            goal = rng.uniform(0.0, max_distance_km)
            j = int(np.argmin(np.abs(d - goal)))
        else:
            ok = np.nonzero(d <= (max_distance_km if max_distance_km is not None else np.inf))[0]
            if ok.size == 0:
                continue
            j = int(ok[rng.integers(ok.size)])
        a, b = int(ends[i]), int(ends[j])
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        pairs.append((a, b))
    return pairs
