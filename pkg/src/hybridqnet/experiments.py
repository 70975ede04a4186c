"""Named experiment recipes producing plain data tables.

Each recipe returns a list of :class:`Table` objects (header, rows and a
summary dict); :mod:`hybridqnet.cli` writes them as CSV with JSON sidecars.
Pair evaluations are independent, so they can be spread over worker
processes; results are always assembled in pair order.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Sequence

import numpy as np

from .bellstate import NoiseParams, ParameterError
from .fiberlink import (
    NETWORK_FIBER,
    SINGLE_PAIR_FIBER,
    FiberParams,
    chain_fidelity_no_distill,
    optimal_repeater_count,
    time_direct,
)
from .protocol import (
    ALLOCATIONS,
    DEFAULT_ALLOCATION,
    FIDELITY,
    RATE,
    HybridResult,
    PairContext,
    ScalingFactors,
    crossover_distance,
    fiber_only_eval,
    hybrid_route_eval,
    sample_pairs,
    satellite_only_eval,
    satellite_time,
    scale,
    select,
)
from .satlink import GEO_ALTITUDE_M, GeoPoint, SatelliteParams, StationParams, optimal_geo_longitude
from .topology import GRID_ANCHOR, GeoGraph, StationIndex, build_network, place_station_grid, synth_nodes

FULL_SCALE_NODES = 83_047
DESK_NODES = 5_000
DESK_PAIRS = 2_000
TABLE1_SPACINGS = (700.0, 450.0, 240.0, 0.0)
RESULT_COLUMNS = ("pair_id", "a", "b", "D_km", "mode", "rate_hz", "fidelity", "stations", "n_photon", "n_ion")


@dataclass(frozen=True)
class Physics:
    noise: NoiseParams = NoiseParams()
    fiber: FiberParams = NETWORK_FIBER
    sat: SatelliteParams = SatelliteParams()
    station: StationParams = StationParams()
    target: float = 0.87
    allocation: str = DEFAULT_ALLOCATION

    _GROUPS = ("noise", "fiber", "sat", "station")

    @classmethod
    def field_owner(cls, name: str) -> str | None:
        for group in cls._GROUPS:
            if name in {f.name for f in fields(getattr(cls(), group))}:
                return group
        return None

    def with_overrides(self, overrides: dict[str, Any]) -> Physics:
        """Apply flat ``{field: value}`` overrides; each type re-validates itself."""
        groups: dict[str, dict[str, Any]] = {g: {} for g in self._GROUPS}
        top: dict[str, Any] = {}
        for name, value in overrides.items():
            if name in ("target", "allocation"):
                top[name] = value
                continue
            owner = self.field_owner(name)
            if owner is None:
                raise ParameterError(f"unknown physics parameter {name!r}")
            groups[owner][name] = coerce(name, value)
        kw = {g: replace(getattr(self, g), **v) for g, v in groups.items() if v}
        out = replace(self, **kw, **top)
        if out.allocation not in ALLOCATIONS:
            raise ParameterError(f"unknown allocation {out.allocation!r}")
        if not 0.5 < out.target < 1.0:
            raise ParameterError(f"target {out.target!r} outside (0.5, 1)")
        return out


def coerce(name: str, value: Any) -> Any:
    """Turn JSON-friendly values into parameter values ("inf", subsatellite dicts, ints)."""
    if name == "subsatellite":
        if isinstance(value, GeoPoint):
            return value
        if isinstance(value, dict):
            return GeoPoint(float(value["lat"]), float(value["lon"]))
        if isinstance(value, (list, tuple)) and len(value) == 2:
            return GeoPoint(float(value[0]), float(value[1]))
        raise ParameterError(f"subsatellite must be {{lat, lon}} or [lat, lon], got {value!r}")
    if name == "multiplex":
        if isinstance(value, bool) or float(value) != int(float(value)):
            raise ParameterError(f"multiplex must be an integer, got {value!r}")
        return int(float(value))
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ParameterError(f"{name} must be a number, got {value!r}")
    try:
        return float(value)
    except ValueError as exc:
        raise ParameterError(f"{name} must be a number, got {value!r}") from exc


def place_geo(physics: Physics, graph: GeoGraph) -> Physics:
    """Move a geostationary satellite to the equatorial longitude closest to the network."""
    if physics.sat.altitude_m != GEO_ALTITUDE_M or physics.sat.subsatellite.latitude_deg == 0.0:
        return physics
    ends = graph.endpoint_ids
    lon = optimal_geo_longitude(graph.lat[ends], graph.lon[ends], physics.sat.altitude_m)
    return replace(physics, sat=replace(physics.sat, subsatellite=GeoPoint(0.0, lon)))


@dataclass
class Table:
    name: str
    header: tuple[str, ...]
    rows: list[tuple]
    summary: dict[str, Any] = field(default_factory=dict)


# --- pair evaluation --------------------------------------------------------------------

_WORKER: dict[str, Any] = {}


@dataclass(frozen=True)
class PairOutcome:
    """Fiber-only results and, per grid spacing, hybrid-route results for one pair."""

    fiber_rate: HybridResult
    fiber_fidelity: HybridResult
    hybrid_rate: tuple[HybridResult | None, ...]
    hybrid_fidelity: tuple[HybridResult | None, ...]


def _evaluate(graph: GeoGraph, indexes: Sequence[StationIndex], physics: Physics, pair: tuple[int, int]) -> PairOutcome:
    a, b = pair
    p = physics
    ctx = PairContext(graph, a, b)
    path = ctx.path()
    budget = satellite_time(graph, a, b, p.sat, p.station)
    fr = fiber_only_eval(graph, a, b, p.noise, p.fiber, RATE, p.target, path=path)
    ff = fiber_only_eval(graph, a, b, p.noise, p.fiber, FIDELITY, p.target, budget, path=path)
    hr, hf = [], []
    for idx in indexes:
        hr.append(hybrid_route_eval(graph, idx, a, b, p.noise, p.fiber, p.sat, p.station, RATE, p.target, p.allocation, ctx))
        hf.append(hybrid_route_eval(graph, idx, a, b, p.noise, p.fiber, p.sat, p.station, FIDELITY, p.target, p.allocation, ctx))
    return PairOutcome(fr, ff, tuple(hr), tuple(hf))


def _init_worker(graph: GeoGraph, indexes: Sequence[StationIndex], physics: Physics) -> None:
    _WORKER.update(graph=graph, indexes=indexes, physics=physics)


def _evaluate_chunk(pairs: Sequence[tuple[int, int]]) -> list[PairOutcome]:
    return [_evaluate(_WORKER["graph"], _WORKER["indexes"], _WORKER["physics"], p) for p in pairs]


def thread_count() -> int:
    raw = os.environ.get("THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ParameterError(f"THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ParameterError("THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def evaluate_pairs(
    graph: GeoGraph,
    pairs: Sequence[tuple[int, int]],
    physics: Physics,
    spacings: Sequence[float] = (),
    anchor: GeoPoint = GRID_ANCHOR,
    workers: int | None = None,
) -> list[PairOutcome]:
    """Fiber-only plus hybrid evaluations for every pair and grid spacing, in pair order."""
    indexes = [StationIndex(graph, place_station_grid(graph, d, anchor)) for d in spacings]
    workers = thread_count() if workers is None else workers
    if workers <= 1 or len(pairs) < 2 * workers:
        return [_evaluate(graph, indexes, physics, p) for p in pairs]
    chunks = [list(c) for c in np.array_split(np.asarray(pairs, dtype=np.int64), 4 * workers) if len(c)]
    chunks = [[(int(a), int(b)) for a, b in c] for c in chunks]
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(graph, indexes, physics)) as ex:
        return [o for part in ex.map(_evaluate_chunk, chunks) for o in part]


def result_row(pair_id: int, r: HybridResult) -> tuple:
    return (
        pair_id,
        r.pair[0],
        r.pair[1],
        r.geographic_distance_km,
        r.mode,
        r.rate_hz,
        r.fidelity,
        " ".join(str(s) for s in r.stations_used),
        r.n_photon,
        r.n_ion,
    )


def crossover_pair(outcomes: Sequence[PairOutcome], i: int | None) -> tuple[float | None, float | None]:
    """``(D*_R, D*_F)`` against hybrid spacing ``i``."""
    rs = [(o.fiber_rate, o.hybrid_rate[i]) for o in outcomes]
    fs = [(o.fiber_fidelity, o.hybrid_fidelity[i]) for o in outcomes]
    return crossover_distance(rs), crossover_distance(fs)


def _fraction(part: int | None, whole: int | None) -> float | None:
    return part / whole if part is not None and whole else None


def _median(xs: Sequence[float]) -> float | None:
    return float(np.median(xs)) if len(xs) else None


# --- recipes -----------------------------------------------------------------------------------


def fig2(lengths_km: Sequence[float] | None = None, max_links: int = 40, noise: NoiseParams = NoiseParams(), fiber: FiberParams = SINGLE_PAIR_FIBER) -> list[Table]:
    """Direct vs optimally repeatered rate over fiber length, and fidelity vs link count."""
    lengths = np.arange(1.0, 1001.0, 1.0) if lengths_km is None else np.asarray(lengths_km, float)
    rows = []
    for L in lengths:
        best = optimal_repeater_count(float(L), fiber, noise=noise)
        rows.append((float(L), 1.0 / time_direct(float(L), fiber), best.rate, best.n_photon_repeaters))
    crossing = next((r[0] for r in rows if r[3] > 0), None)
    jump = next((r[3] for r in rows if r[3] > 0), None)
    a = Table("fig2a", ("L_km", "R_direct_hz", "R_repeatered_hz", "n_p_opt"), rows, {"crossover_L_km": crossing, "n_p_at_crossover": jump})
    frows = [(n, chain_fidelity_no_distill(n, noise).fidelity) for n in range(1, max_links + 1)]
    lost = next((n for n, f in frows if f < 0.5), None)
    b = Table("fig2b", ("n_p", "F_f"), frows, {"first_n_p_below_half": lost})
    return [a, b]


def fig3(graph: GeoGraph, pairs: Sequence[tuple[int, int]]) -> list[Table]:
    """Degree and link-length distributions, plus fiber path lengths of sampled pairs.

    Degrees are over endpoint nodes; inserted repeaters always have degree 2.
    """
    from .topology import shortest_path

    deg = graph.degrees()[graph.endpoint_ids]
    values, counts = np.unique(deg, return_counts=True)
    t_deg = Table("fig3_degrees", ("degree", "count"), [(int(v), int(c)) for v, c in zip(values, counts)],
                  {"min": int(deg.min()), "max": int(deg.max()), "mean": float(deg.mean())})
    lengths = [l.length_km for l in graph.links]
    t_links = Table("fig3_links", ("u", "v", "length_km"), [(l.u, l.v, l.length_km) for l in graph.links],
                    {"links": len(lengths), "median_km": _median(lengths),
                     "fraction_subdivided": _fraction(graph.meta.get("subdivided_links"), graph.meta.get("links_before_subdivision"))})
    prow = []
    for i, (a, b) in enumerate(pairs):
        p = shortest_path(graph, a, b)
        prow.append((i, a, b, graph.distance_km(a, b), p.length_km, len(p.nodes) - 2))
    t_paths = Table("fig3_paths", ("pair_id", "a", "b", "D_km", "path_km", "intermediate_nodes"), prow,
                    {"median_path_km": _median([r[4] for r in prow]),
                     "fraction_over_1000_km": float(np.mean([r[4] > 1000 for r in prow])) if prow else None})
    return [t_deg, t_links, t_paths]


def fig4(graph: GeoGraph, pairs: Sequence[tuple[int, int]], physics: Physics) -> list[Table]:
    """Fiber-only vs satellite-only for every pair (every end node a station)."""
    outs = evaluate_pairs(graph, pairs, physics, (0.0,))
    rows = []
    for i, o in enumerate(outs):
        sat = satellite_only_eval(graph, *o.fiber_rate.pair, physics.sat, physics.station)
        rows.append((i, *o.fiber_rate.pair, o.fiber_rate.geographic_distance_km, o.fiber_rate.rate_hz, sat.rate_hz,
                     o.fiber_fidelity.fidelity, sat.fidelity))
    d_r, d_f = crossover_pair(outs, 0)
    summary = {"D_star_R_km": d_r, "D_star_F_km": d_f,
               "median_satellite_rate_hz": _median([r[5] for r in rows])}
    header = ("pair_id", "a", "b", "D_km", "fiber_rate_hz", "satellite_rate_hz", "fiber_fidelity", "satellite_fidelity")
    return [Table("fig4", header, rows, summary)]


def table1(graph: GeoGraph, pairs: Sequence[tuple[int, int]], physics: Physics, spacings: Sequence[float] = TABLE1_SPACINGS,
           anchor: GeoPoint = GRID_ANCHOR, outcomes: list[PairOutcome] | None = None) -> list[Table]:
    """Crossover distances for each ground-station grid spacing."""
    outs = outcomes if outcomes is not None else evaluate_pairs(graph, pairs, physics, spacings, anchor)
    rows = []
    for i, d in enumerate(spacings):
        d_r, d_f = crossover_pair(outs, i)
        n_st = len(place_station_grid(graph, d, anchor).station_node_ids)
        rows.append((d, d / math.sqrt(2.0), d_f, d_r, n_st))
    return [Table("table1", ("d_km", "d_over_sqrt2_km", "D_star_F_km", "D_star_R_km", "stations"), rows,
                  {"pairs": len(pairs)})]


def fig6(graph: GeoGraph, pairs: Sequence[tuple[int, int]], physics: Physics, spacings: Sequence[float] = (700.0, 450.0, 240.0),
         anchor: GeoPoint = GRID_ANCHOR, factors: ScalingFactors = ScalingFactors()) -> list[Table]:
    """Per-pair best-of results for each grid spacing, by metric; ``factors`` rescale the rates."""
    outs = evaluate_pairs(graph, pairs, physics, spacings, anchor)
    tables = []
    for i, d in enumerate(spacings):
        for metric in (FIDELITY, RATE):
            sel = [select(o.fiber_fidelity, o.hybrid_fidelity[i]) if metric == FIDELITY else select(o.fiber_rate, o.hybrid_rate[i])
                   for o in outs]
            if metric == RATE:
                sel = scale(sel, factors)
            values = [r.fidelity if metric == FIDELITY else r.rate_hz for r in sel]
            summary = {"d_km": d, "metric": metric, "median": _median(values),
                       "hybrid_fraction": float(np.mean([r.mode != "fiber_only" for r in sel])) if sel else None}
            if metric == RATE:
                summary["variance"] = float(np.var(values)) if values else None
            tables.append(Table(f"fig6_d{int(d)}_{metric}", RESULT_COLUMNS, [result_row(j, r) for j, r in enumerate(sel)], summary))
    return tables


def fig7(graph: GeoGraph, pairs: Sequence[tuple[int, int]], physics: Physics, factors: Sequence[float] = (1.0, 10.0, 100.0),
         spacing: float = 0.0, anchor: GeoPoint = GRID_ANCHOR) -> list[Table]:
    """Rates with ion multiplexing and satellite source both scaled by the same factor."""
    outs = evaluate_pairs(graph, pairs, physics, (spacing,), anchor)
    base = [select(o.fiber_rate, o.hybrid_rate[0]) for o in outs]
    rows, summary = [], {}
    for k in factors:
        scaled = scale(base, ScalingFactors(k, k))
        rows.extend((k, *result_row(j, r)) for j, r in enumerate(scaled))
        summary[f"mean_rate_hz_x{k:g}"] = float(np.mean([r.rate_hz for r in scaled])) if scaled else None
    return [Table("fig7", ("factor",) + RESULT_COLUMNS, rows, summary)]


SWEEP_COLUMNS = ("value", "pair_id", "a", "b", "D_km", "fiber_rate_hz", "fiber_fidelity", "satellite_rate_hz",
                 "best_rate_hz", "best_fidelity")


def sweep(graph: GeoGraph, pairs: Sequence[tuple[int, int]], physics: Physics, parameter: str, values: Sequence[Any],
          spacing: float = 0.0, anchor: GeoPoint = GRID_ANCHOR) -> list[Table]:
    """Re-evaluate the same pair sample for each value of one physics parameter."""
    if Physics.field_owner(parameter) is None and parameter not in ("target",):
        raise ParameterError(f"unknown sweep parameter {parameter!r}")
    rows, summary = [], {}
    for v in values:
        ph = place_geo(physics.with_overrides({parameter: v}), graph)
        outs = evaluate_pairs(graph, pairs, ph, (spacing,), anchor)
        sat_rates, best_f, best_r = [], [], []
        label = v if isinstance(v, (int, float, str)) else str(v)
        for j, o in enumerate(outs):
            sat = satellite_only_eval(graph, *o.fiber_rate.pair, ph.sat, ph.station)
            br = select(o.fiber_rate, o.hybrid_rate[0])
            bf = select(o.fiber_fidelity, o.hybrid_fidelity[0])
            rows.append((label, j, *o.fiber_rate.pair, o.fiber_rate.geographic_distance_km, o.fiber_rate.rate_hz,
                         o.fiber_fidelity.fidelity, sat.rate_hz, br.rate_hz, bf.fidelity))
            sat_rates.append(sat.rate_hz)
            best_r.append(br.rate_hz)
            best_f.append(bf.fidelity)
        summary[str(label)] = {"median_satellite_rate_hz": _median(sat_rates), "median_best_rate_hz": _median(best_r),
                               "median_best_fidelity": _median(best_f)}
    return [Table(f"sweep_{parameter}", SWEEP_COLUMNS, rows, summary)]


# --- graph helpers ----------------------------------------------------------------------------


def synth_graph(seed: int = 7, count: int = DESK_NODES, k: int = 3) -> GeoGraph:
    if count > 20_000:
        warnings.warn(f"building a {count}-node network; expect long run times", RuntimeWarning, stacklevel=2)
    return build_network(synth_nodes(seed, count), k, meta={"seed": seed, "k": k, "count": count})


def stratified_pairs(graph: GeoGraph, count: int, seed: int, max_distance_km: float) -> list[tuple[int, int]]:
    return sample_pairs(graph, count, seed, max_distance_km=max_distance_km, stratified=True)


RECIPES: dict[str, Callable[..., list[Table]]] = {
    "fig2": fig2,
    "fig3": fig3,
    "fig4": fig4,
    "table1": table1,
    "fig6": fig6,
    "fig7": fig7,
}
