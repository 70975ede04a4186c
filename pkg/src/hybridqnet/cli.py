"""``hybridqnet`` command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 validation
failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .bellstate import BellDiagonalState, NoiseParams, ParameterError, distill, nested_distill, swap_dbsm
from .experiments import (
    DESK_NODES,
    DESK_PAIRS,
    FULL_SCALE_NODES,
    TABLE1_SPACINGS,
    Physics,
    Table,
    fig2,
    fig3,
    fig4,
    fig6,
    fig7,
    place_geo,
    sweep,
    synth_graph,
    table1,
)
from .fiberlink import SINGLE_PAIR_FIBER, chain_fidelity_no_distill, optimal_repeater_count
from .oracle import McConfig, dm_swap_oracle, expected_max_geometric, mc_distill_yield, mc_waiting_rounds
from .protocol import ScalingFactors, sample_pairs
from .satlink import MAP_CENTER, GeoPoint, SatelliteParams, StationParams, pair_rate
from .topology import (
    GRID_ANCHOR,
    GeoGraph,
    TopologyError,
    build_knn_graph,
    build_network,
    connect_components,
    load_nodes,
    place_station_grid,
    synth_nodes,
)

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- configuration -------------------------------------------------------------------------

_SECTIONS = {
    "experiment": None,
    "graph": {"file", "nodes", "synth", "full_scale"},
    "pairs": {"count", "seed", "max_distance_km", "stratified"},
    "physics": None,
    "grid": {"spacings_km", "anchor"},
    "scaling": {"alpha", "beta", "factors"},
    "output": {"directory", "formats"},
    "options": None,
}
_SYNTH_KEYS = {"seed", "count", "k"}
_EXPERIMENTS = ("fig2", "fig3", "fig4", "table1", "fig6", "fig7")
_FORMATS = {"csv", "json"}


@dataclass
class ExperimentConfig:
    experiment: str = "table1"
    graph: dict = field(default_factory=lambda: {"synth": {"seed": 7, "count": DESK_NODES, "k": 3}})
    pairs: dict = field(default_factory=lambda: {"count": DESK_PAIRS, "seed": 1, "max_distance_km": 1600.0, "stratified": True})
    physics: dict = field(default_factory=dict)
    grid: dict = field(default_factory=lambda: {"spacings_km": list(TABLE1_SPACINGS), "anchor": {"lat": GRID_ANCHOR.latitude_deg, "lon": GRID_ANCHOR.longitude_deg}})
    scaling: dict = field(default_factory=lambda: {"alpha": 1.0, "beta": 1.0, "factors": [1.0, 10.0, 100.0]})
    output: dict = field(default_factory=lambda: {"directory": "out", "formats": ["csv"]})
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        for key, allowed in _SECTIONS.items():
            if key not in doc:
                continue
            value = doc[key]
            if allowed is None:
                setattr(cfg, key, value)
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be an object")
            bad = set(value) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {key}: {sorted(bad)}")
            if key == "graph":
                cfg.graph = dict(value)
            else:
                getattr(cfg, key).update(value)
        cfg.check()
        return cfg

    def check(self) -> None:
        if self.experiment not in _EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(_EXPERIMENTS)}")
        sources = [k for k in ("file", "nodes", "synth") if k in self.graph]
        if len(sources) > 1:
            raise ConfigError("graph takes one of file, nodes or synth")
        if "synth" in self.graph:
            bad = set(self.graph["synth"]) - _SYNTH_KEYS
            if bad:
                raise ConfigError(f"unknown keys in graph.synth: {sorted(bad)}")
        if not isinstance(self.physics, dict):
            raise ConfigError("physics must be an object")
        if not isinstance(self.options, dict):
            raise ConfigError("options must be an object")
        if set(self.output.get("formats", [])) - _FORMATS:
            raise ConfigError(f"output formats must be among {sorted(_FORMATS)}")
        if int(self.pairs["count"]) < 1:
            raise ConfigError("pairs.count must be >= 1")
        for name in ("alpha", "beta"):
            if float(self.scaling[name]) < 1:
                raise ConfigError(f"scaling.{name} must be >= 1")
        self.resolve_physics()

    def resolve_physics(self) -> Physics:
        try:
            return Physics().with_overrides(self.physics)
        except (ParameterError, TypeError, KeyError) as exc:
            raise ConfigError(f"invalid physics: {exc}") from exc

    def anchor(self) -> GeoPoint:
        a = self.grid["anchor"]
        return GeoPoint(float(a["lat"]), float(a["lon"]))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _SECTIONS}


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(doc)


def _jsonable(x: Any) -> Any:
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    if isinstance(x, (np.floating, np.integer)):
        return _jsonable(x.item())
    if isinstance(x, GeoPoint):
        return {"lat": x.latitude_deg, "lon": x.longitude_deg}
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def resolved_config(cfg: ExperimentConfig, physics: Physics) -> dict:
    doc = cfg.to_dict()
    doc["physics"] = {
        "noise": asdict(physics.noise),
        "fiber": asdict(physics.fiber),
        "sat": {**asdict(physics.sat), "subsatellite": physics.sat.subsatellite},
        "station": asdict(physics.station),
        "target": physics.target,
        "allocation": physics.allocation,
    }
    doc["version"] = __version__
    return _jsonable(doc)


# --- outputs --------------------------------------------------------------------------------


def _cell(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def write_table(table: Table, out_dir: Path, config_doc: dict, formats: Sequence[str] = ("csv",)) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        path = out_dir / f"{table.name}.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.header)
            for row in table.rows:
                w.writerow([_cell(x) for x in row])
        written.append(path)
    if "json" in formats:
        path = out_dir / f"{table.name}.data.json"
        data = [dict(zip(table.header, (_jsonable(x.item() if isinstance(x, np.generic) else x) for x in row))) for row in table.rows]
        path.write_text(json.dumps(data, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
    side = out_dir / f"{table.name}.json"
    meta = {"table": table.name, "columns": list(table.header), "rows": len(table.rows), "summary": _jsonable(table.summary), "config": config_doc}
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(side)
    return written


# --- graph helpers ------------------------------------------------------------------------------


def graph_from_config(cfg: ExperimentConfig) -> GeoGraph:
    g = cfg.graph
    if "file" in g:
        try:
            return GeoGraph.load(g["file"])
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise OSError(f"{g['file']}: malformed graph document ({exc})") from exc
    if "nodes" in g:
        return build_network(load_nodes(g["nodes"]), 3, meta={"source": str(g["nodes"]), "k": 3})
    synth = dict(seed=7, count=DESK_NODES, k=3)
    synth.update(g.get("synth", {}))
    if g.get("full_scale"):
        synth["count"] = FULL_SCALE_NODES
    return synth_graph(int(synth["seed"]), int(synth["count"]), int(synth["k"]))


def pairs_from_config(cfg: ExperimentConfig, graph: GeoGraph) -> list[tuple[int, int]]:
    p = cfg.pairs
    return sample_pairs(graph, int(p["count"]), int(p["seed"]), p.get("max_distance_km"), bool(p.get("stratified", False)))


def _output_dir(cfg: ExperimentConfig, override: str | None) -> Path:
    return Path(override or os.environ.get("OUT_DIR") or cfg.output.get("directory", "out"))


def run_experiment(cfg: ExperimentConfig) -> tuple[list[Table], Physics]:
    """Tables for ``cfg`` and the physics actually used (GEO placement resolved)."""
    physics = cfg.resolve_physics()
    opts = cfg.options
    if cfg.experiment == "fig2":
        max_len = float(opts.get("max_length_km", 1000.0))
        step = float(opts.get("step_km", 1.0))
        # single ion pair per direction unless the config says otherwise
        fiber = physics.fiber if "multiplex" in cfg.physics else replace(physics.fiber, multiplex=1)
        physics = replace(physics, fiber=fiber)
        return fig2(np.arange(step, max_len + step / 2, step), int(opts.get("max_links", 40)), physics.noise, fiber), physics
    graph = graph_from_config(cfg)
    physics = place_geo(physics, graph)
    pairs = pairs_from_config(cfg, graph)
    spacings = [float(d) for d in cfg.grid["spacings_km"]]
    anchor = cfg.anchor()
    if cfg.experiment == "fig3":
        return fig3(graph, pairs), physics
    if cfg.experiment == "fig4":
        return fig4(graph, pairs, physics), physics
    if cfg.experiment == "table1":
        return table1(graph, pairs, physics, spacings, anchor), physics
    if cfg.experiment == "fig6":
        factors = ScalingFactors(float(cfg.scaling["alpha"]), float(cfg.scaling["beta"]))
        return fig6(graph, pairs, physics, [d for d in spacings if d > 0] or [700.0], anchor, factors), physics
    if cfg.experiment == "fig7":
        factors = [float(f) for f in cfg.scaling.get("factors", [1.0, 10.0, 100.0])]
        return fig7(graph, pairs, physics, factors, float(opts.get("spacing_km", 0.0)), anchor), physics
    raise ConfigError(f"unknown experiment {cfg.experiment!r}")


# --- validation -------------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def validation_checks(trials: int, seed: int, noise: NoiseParams = NoiseParams(), z: float = 4.0) -> list[Check]:
    """Oracle comparisons and invariant battery; ``z`` is the Monte Carlo tolerance in standard errors."""
    checks: list[Check] = []
    rng = np.random.default_rng(seed)

    worst = 0.0
    for _ in range(200):
        a = BellDiagonalState(*rng.dirichlet(np.ones(4)))
        b = BellDiagonalState(*rng.dirichlet(np.ones(4)))
        f = float(rng.uniform(0.25, 1.0))
        worst = max(worst, abs(swap_dbsm(a, b, f).fidelity - dm_swap_oracle(a, b, f).fidelity))
    checks.append(Check("swap_oracle", worst <= 1e-12, f"max |dF| = {worst:.2e} over 200 random pairs"))

    for n in (2, 4, 8, 16):
        for p in (0.01, 0.1, 0.5):
            est = mc_waiting_rounds(n, p, McConfig(seed, trials))
            exact = expected_max_geometric(n, p)
            approx = 1.5 ** math.log2(n) / p
            ok = abs(est.mean - exact) <= z * est.stderr
            checks.append(Check(f"mc_waiting n={n} p={p}", ok,
                                f"MC {est.mean:.4g} +- {est.stderr:.2g}, exact {exact:.4g}, (3/2)^nu/p {approx:.4g} ({(approx - exact) / exact:+.1%})"))

    for f0 in (0.7, 0.9):
        for rounds in (1, 2, 3):
            est, _ = mc_distill_yield(f0, rounds, McConfig(seed, trials))
            cost = nested_distill(f0, rounds)[1]
            checks.append(Check(f"mc_distill F={f0} r={rounds}", abs(est.mean - cost) <= z * est.stderr,
                                f"MC {est.mean:.4g} +- {est.stderr:.2g}, analytic {cost:.4g}"))

    grid = np.linspace(0.51, 0.99, 49)
    improves = all(distill(float(x), float(x))[0] > x for x in grid)
    fixed = distill(0.5, 0.5)[0] == 0.5 and distill(1.0, 1.0)[0] == 1.0
    checks.append(Check("distill_properties", improves and fixed, f"improves on grid: {improves}, fixed points exact: {fixed}"))

    lengths = np.arange(55.0, 70.0, 0.05)
    n_opt = [optimal_repeater_count(float(L), SINGLE_PAIR_FIBER, max_n=64, noise=noise).n_photon_repeaters for L in lengths]
    i = next((j for j, n in enumerate(n_opt) if n > 0), None)
    ok = i is not None and abs(lengths[i] - 61.7) <= 1.0 and abs(n_opt[i] - 7) <= 1
    checks.append(Check("fiber_crossover", ok, f"crossing at {lengths[i] if i is not None else None} km, n_p* = {n_opt[i] if i is not None else None}"))

    fids = [chain_fidelity_no_distill(n, noise).fidelity for n in range(1, 40)]
    lost = next((n for n, f in zip(range(1, 40), fids) if f < 0.5), None)
    checks.append(Check("fidelity_collapse", noise != NoiseParams() or (lost is not None and 24 <= lost <= 28), f"first n_p with F < 0.5: {lost}"))

    station = StationParams()
    meo = SatelliteParams()
    rates = [pair_rate(GeoPoint(MAP_CENTER.latitude_deg + dy, MAP_CENTER.longitude_deg - dx), GeoPoint(MAP_CENTER.latitude_deg - dy, MAP_CENTER.longitude_deg + dx), meo, station)
             for dx, dy in ((0.0, 0.0), (5.0, 2.0), (10.0, 4.0))]
    checks.append(Check("meo_rate", all(2.4 <= r <= 3.9 for r in rates), "R_s = " + ", ".join(f"{r:.3g}" for r in rates)))

    g = build_knn_graph(synth_nodes(seed, 600), 3)
    c0 = g.n_components()
    joined, added = connect_components(g)
    deg = joined.degrees()
    ok = joined.is_connected() and deg.min() >= 3 and len(added) == c0 - 1
    checks.append(Check("topology_invariants", ok, f"{c0} components, {len(added)} links added, degree {deg.min()}-{deg.max()}"))
    return checks


# --- commands ------------------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    tables, physics = run_experiment(cfg)
    doc = resolved_config(cfg, physics)
    out = _output_dir(cfg, args.out)
    for t in tables:
        for path in write_table(t, out, doc, cfg.output.get("formats", ["csv"])):
            print(f"wrote {path}")
        print(json.dumps({t.name: _jsonable(t.summary)}, sort_keys=True))
    return EXIT_OK


def _parse_values(raw: str) -> list[Any]:
    out = []
    for token in next(csv.reader([raw])):
        token = token.strip()
        if not token:
            continue
        if token.startswith("{") or token.startswith("["):
            out.append(json.loads(token))
            continue
        out.append(token)
    if not out:
        raise ConfigError("--values is empty")
    return out


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if Physics.field_owner(args.param) is None and args.param != "target":
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    values = _parse_values(args.values) if args.param != "subsatellite" else [json.loads(v) for v in args.values.split(";")]
    physics = cfg.resolve_physics()
    for v in values:  # reject bad values before doing any work
        try:
            physics.with_overrides({args.param: v})
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc
    graph = graph_from_config(cfg)
    pairs = pairs_from_config(cfg, graph)
    spacing = float(cfg.options.get("spacing_km", 0.0))
    tables = sweep(graph, pairs, physics, args.param, values, spacing, cfg.anchor())
    doc = resolved_config(cfg, physics)
    doc["sweep"] = {"parameter": args.param, "values": _jsonable(values)}
    out = _output_dir(cfg, args.out)
    for t in tables:
        for path in write_table(t, out, doc, cfg.output.get("formats", ["csv"])):
            print(f"wrote {path}")
        print(json.dumps({t.name: _jsonable(t.summary)}, sort_keys=True))
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    noise = NoiseParams()
    if args.config:
        noise = load_config(args.config).resolve_physics().noise
    checks = validation_checks(args.trials, args.seed, noise)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_VALIDATION if failed else EXIT_OK


def cmd_graph(args: argparse.Namespace) -> int:
    if args.action == "build":
        if args.nodes:
            g = build_network(load_nodes(args.nodes), args.k, meta={"source": args.nodes, "k": args.k})
        else:
            if args.count > 20_000:
                print(f"warning: building a {args.count}-node network", file=sys.stderr)
            g = build_network(synth_nodes(args.seed, args.count), args.k, meta={"seed": args.seed, "k": args.k, "count": args.count})
        if args.spacing is not None:
            g = g.with_stations(place_station_grid(g, args.spacing))
        g.save(args.file)
        print(f"wrote {args.file}: {len(g)} nodes, {len(g.links)} links")
        return EXIT_OK
    try:
        g = GeoGraph.load(args.file)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise OSError(f"{args.file}: malformed graph document ({exc})") from exc
    deg = g.degrees()
    lengths = g.edge_arrays[2]
    info = {
        "nodes": len(g),
        "endpoints": int(len(g.endpoint_ids)),
        "links": len(g.links),
        "components": g.n_components(),
        "degree_min": int(deg.min()) if len(deg) else None,
        "degree_max": int(deg.max()) if len(deg) else None,
        "degree_mean": float(deg.mean()) if len(deg) else None,
        "median_link_km": float(np.median(lengths)) if len(lengths) else None,
        "stations": sum(n.station for n in g.nodes),
        "meta": g.meta,
    }
    print(json.dumps(_jsonable(info), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hybridqnet", description="Hybrid satellite/fiber entanglement distribution experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a named experiment")
    r.add_argument("--config", help="JSON experiment config (defaults: desk-scale table1)")
    r.add_argument("--out", help="output directory (overrides OUT_DIR and the config)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="re-run one pair sample over values of a physics parameter")
    s.add_argument("--config")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated values (subsatellite: JSON points separated by ';')")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="run oracle comparisons and invariant checks")
    v.add_argument("--trials", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--config", help="optional config whose physics overrides are checked first")
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("graph", help="build or inspect a network file")
    g.add_argument("action", choices=("build", "info"))
    g.add_argument("file")
    g.add_argument("--nodes", help="node CSV (id,lat,lon); default is a synthetic cloud")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--count", type=int, default=DESK_NODES)
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--spacing", type=float, help="also place a station grid with this spacing (km)")
    g.set_defaults(func=cmd_graph)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TopologyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
