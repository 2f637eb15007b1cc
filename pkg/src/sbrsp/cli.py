"""Command-line entry point.

Exit codes: 0 success, 1 domain error (with a machine-readable JSON
payload on stderr), 2 usage error. All artifacts are JSON/CSV/GeoJSON
files that the corresponding loaders read back unchanged.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, fields, replace
from functools import wraps
from pathlib import Path

import click

from . import geo
from .clustering import ClusterOptions, cluster_from_dict, cluster_students, cluster_to_dict
from .errors import SbrspError
from .experiments import (
    STANDARD_CONFIGS,
    ablation_csv,
    run_ablation,
    run_fleet_sweep,
    run_walk_sweep,
    sweep_csv,
)
from .formulations import build_fleet_routing_model
from .instance import GeneratorSpec, Instance, generate_synthetic, load_instance, save_instance
from .metrics import compute_metrics, report_csv, report_json
from .milp import set_default_backend
from .modechoice import FixedPointOptions, run_fixed_point
from .network import build_travel_matrix
from .routing import (
    RouteSolution,
    RoutingOptions,
    make_fleet_case,
    route_all_clusters,
    solve_fleet_routing,
)

PIPELINES = ("two-phase", "full-milo")


@dataclass
class RunConfig:
    """File-loadable defaults shared by all subcommands."""

    seed: int = 0
    jobs: int = 1
    solver: str | None = None
    time_limit_cluster_s: float | None = None
    time_limit_reduced_s: float | None = None
    time_limit_full_s: float | None = None
    mip_gap: float | None = None
    pipeline: str = "two-phase"
    max_iterations: int = 20

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        raw = Path(path).read_bytes()
        if path.endswith(".toml"):
            try:
                import tomllib  # type: ignore[import-not-found]
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(raw.decode())
        else:
            data = json.loads(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SbrspError(f"unknown run-config keys: {sorted(unknown)}")
        return cls(**data)

    def merge_flags(self, **flags) -> "RunConfig":
        updates = {k: v for k, v in flags.items() if v is not None}
        return replace(self, **updates)


def _domain_errors(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SbrspError as exc:
            sys.stderr.write(json.dumps(exc.payload()) + "\n")
            raise SystemExit(1)

    return wrapper


def _routing_options(instance: Instance, cfg: RunConfig) -> RoutingOptions:
    overrides = {}
    if cfg.time_limit_reduced_s is not None:
        overrides["time_limit_reduced_s"] = cfg.time_limit_reduced_s
    if cfg.time_limit_full_s is not None:
        overrides["time_limit_full_s"] = cfg.time_limit_full_s
    if cfg.mip_gap is not None:
        overrides["mip_gap"] = cfg.mip_gap
    overrides["jobs"] = cfg.jobs
    return RoutingOptions.from_instance(instance, **overrides)


def _cluster_options(instance: Instance, cfg: RunConfig) -> ClusterOptions:
    opts = ClusterOptions(mip_gap=instance.params.mip_gap)
    if cfg.time_limit_cluster_s is not None:
        opts = replace(opts, time_limit_s=cfg.time_limit_cluster_s)
    else:
        opts = replace(opts, time_limit_s=instance.params.time_limit_cluster_s)
    if cfg.mip_gap is not None:
        opts = replace(opts, mip_gap=cfg.mip_gap)
    return opts


def _write(path: str | Path, text: str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    click.echo(f"wrote {p}")


_shared_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="TOML/JSON run-config file."),
    click.option("--seed", type=int, default=None, help="Deterministic seed."),
    click.option("--jobs", type=int, default=None, help="Parallel cluster solves."),
    click.option("--solver", type=str, default=None, help="Registered solver backend id."),
    click.option("--time-limit-cluster", "time_limit_cluster_s", type=float, default=None),
    click.option("--time-limit-reduced", "time_limit_reduced_s", type=float, default=None),
    click.option("--time-limit-full", "time_limit_full_s", type=float, default=None),
    click.option("--mip-gap", "mip_gap", type=float, default=None),
]


def shared_options(fn):
    for opt in reversed(_shared_options):
        fn = opt(fn)
    return fn


def _config(config_path, **flags) -> RunConfig:
    cfg = RunConfig.load(config_path).merge_flags(**flags)
    if cfg.solver is not None:
        set_default_backend(cfg.solver)
    return cfg


@click.group()
def main() -> None:
    """Rural school bus routing and scheduling toolkit."""


@main.command()
@click.argument("instance_path", type=click.Path(exists=True))
@_domain_errors
def validate(instance_path: str) -> None:
    """Validate an instance file."""
    inst = load_instance(instance_path)
    click.echo(
        f"ok: {len(inst.students)} students, {len(inst.stops)} stops, "
        f"{len(inst.schools)} schools, {len(inst.buses)} buses"
    )


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True), default=None,
              help="Generator spec JSON; defaults apply when omitted.")
@click.option("--seed", type=int, default=0)
@click.option("-o", "--out", "out_path", type=click.Path(), required=True)
@_domain_errors
def generate(spec_path: str | None, seed: int, out_path: str) -> None:
    """Generate a seeded synthetic instance."""
    spec = GeneratorSpec() if spec_path is None else GeneratorSpec.from_dict(
        json.loads(Path(spec_path).read_text())
    )
    inst = generate_synthetic(spec, seed)
    save_instance(inst, out_path)
    click.echo(f"wrote {out_path}")


@main.command()
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("-o", "--out", "out_path", type=click.Path(), required=True)
@click.option("--regions", "regions_path", type=click.Path(), default=None,
              help="Also export service regions as GeoJSON.")
@shared_options
@_domain_errors
def cluster(instance_path, out_path, regions_path, config_path, **flags) -> None:
    """Partition students into per-bus service regions."""
    cfg = _config(config_path, **flags)
    inst = load_instance(instance_path)
    clusters = cluster_students(inst, cfg.seed, options=_cluster_options(inst, cfg))
    _write(out_path, json.dumps(cluster_to_dict(clusters), indent=2, sort_keys=True))
    if regions_path:
        _write(regions_path, geo.dumps(geo.regions_collection(inst, clusters)))


@main.command()
@click.argument("instance_path", type=click.Path(exists=True))
@click.argument("clusters_path", type=click.Path(exists=True))
@click.option("-o", "--out", "out_path", type=click.Path(), required=True)
@click.option("--routes-geojson", "routes_path", type=click.Path(), default=None)
@shared_options
@_domain_errors
def route(instance_path, clusters_path, out_path, routes_path, config_path, **flags) -> None:
    """Route every cluster of a saved partition."""
    cfg = _config(config_path, **flags)
    inst = load_instance(instance_path)
    clusters = cluster_from_dict(json.loads(Path(clusters_path).read_text()))
    ttm = build_travel_matrix(inst.drive_engine, inst.stop_locs, inst.school_locs)
    solution = route_all_clusters(clusters, inst, ttm, _routing_options(inst, cfg))
    _write(out_path, json.dumps(solution.to_dict(), indent=2, sort_keys=True))
    if routes_path:
        _write(routes_path, geo.dumps(geo.routes_collection(inst, solution)))


@main.command(name="solve")
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("--pipeline", type=click.Choice(PIPELINES), default="two-phase")
@click.option("--time-limit", "time_limit_s", type=float, default=None,
              help="Overall limit for the full-milo pipeline.")
@click.option("-o", "--out", "out_dir", type=click.Path(), required=True)
@shared_options
@_domain_errors
def solve_cmd(instance_path, pipeline, time_limit_s, out_dir, config_path, **flags) -> None:
    """Solve an instance end to end and emit solution plus metrics."""
    cfg = _config(config_path, **flags).merge_flags(pipeline=pipeline)
    inst = load_instance(instance_path)
    ttm = build_travel_matrix(inst.drive_engine, inst.stop_locs, inst.school_locs)
    if cfg.pipeline == "full-milo":
        solution = solve_fleet_routing(
            inst, ttm, time_limit_s=time_limit_s or 300.0, mip_gap=cfg.mip_gap or 0.0
        )
    else:
        clusters = cluster_students(inst, cfg.seed, options=_cluster_options(inst, cfg))
        solution = route_all_clusters(clusters, inst, ttm, _routing_options(inst, cfg))
    out = Path(out_dir)
    _write(out / "solution.json", json.dumps(solution.to_dict(), indent=2, sort_keys=True))
    rep = compute_metrics(solution, inst, ttm=ttm, scenario=cfg.pipeline)
    _write(out / "metrics.json", report_json(rep))
    _write(out / "metrics.csv", report_csv([rep]))


@main.command()
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("-o", "--out", "out_path", type=click.Path(), required=True)
@click.option("--max-iterations", type=int, default=None)
@shared_options
@_domain_errors
def iterate(instance_path, out_path, max_iterations, config_path, **flags) -> None:
    """Run the ridership/congestion fixed point and emit per-iteration rows."""
    cfg = _config(config_path, **flags)
    if max_iterations is not None:
        cfg = replace(cfg, max_iterations=max_iterations)
    inst = load_instance(instance_path)
    opts = FixedPointOptions(
        max_iterations=cfg.max_iterations,
        seed=cfg.seed,
        cluster=_cluster_options(inst, cfg),
        routing=_routing_options(inst, cfg),
    )
    result = run_fixed_point(inst, opts)
    payload = {
        "converged": result.converged,
        "iterations": result.iterations,
        "states": [
            {
                "iteration": st.iteration,
                "coefficient": st.coefficient,
                "residual": st.residual,
                "riders": sorted(st.riders),
                "cutoff": st.cutoff,
                "total_ride_s": st.total_ride_s,
            }
            for st in result.states
        ],
        "solution": result.solution.to_dict(),
    }
    _write(out_path, json.dumps(payload, indent=2, sort_keys=True))


@main.command()
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("-o", "--out", "out_path", type=click.Path(), required=True)
@shared_options
@_domain_errors
def ablate(instance_path, out_path, config_path, **flags) -> None:
    """Run the standard ablation matrix."""
    cfg = _config(config_path, **flags)
    inst = load_instance(instance_path)
    rows = run_ablation(
        inst, STANDARD_CONFIGS, seed=cfg.seed,
        cluster_options=_cluster_options(inst, cfg),
        routing_options=_routing_options(inst, cfg),
    )
    _write(out_path, ablation_csv(rows))


@main.command(name="sweep-fleet")
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("--sizes", required=True, help="Comma-separated fleet sizes, e.g. 2,3,4.")
@click.option("--no-route-time-limit", is_flag=True, default=False)
@click.option("-o", "--out", "out_path", type=click.Path(), required=True)
@shared_options
@_domain_errors
def sweep_fleet(instance_path, sizes, no_route_time_limit, out_path, config_path, **flags) -> None:
    """Sweep the fleet size."""
    cfg = _config(config_path, **flags)
    inst = load_instance(instance_path)
    size_list = [int(x) for x in sizes.split(",")]
    rows = run_fleet_sweep(
        inst, size_list, enforce_route_time_limit=not no_route_time_limit, seed=cfg.seed,
        cluster_options=_cluster_options(inst, cfg),
    )
    _write(out_path, sweep_csv(rows, "fleet_size"))


@main.command(name="sweep-walk")
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("--distances", required=True, help="Comma-separated walk limits in meters, ascending.")
@click.option("-o", "--out", "out_path", type=click.Path(), required=True)
@shared_options
@_domain_errors
def sweep_walk(instance_path, distances, out_path, config_path, **flags) -> None:
    """Sweep the maximum allowed walking distance."""
    cfg = _config(config_path, **flags)
    inst = load_instance(instance_path)
    dist_list = [float(x) for x in distances.split(",")]
    rows = run_walk_sweep(
        inst, dist_list, seed=cfg.seed, cluster_options=_cluster_options(inst, cfg)
    )
    _write(out_path, sweep_csv(rows, "max_walk_m"))


@main.command()
@click.argument("solution_path", type=click.Path(exists=True))
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("-o", "--out", "out_path", type=click.Path(), required=True)
@_domain_errors
def report(solution_path, instance_path, out_path) -> None:
    """Compute the metrics report for a saved solution."""
    inst = load_instance(instance_path)
    solution = RouteSolution.from_dict(json.loads(Path(solution_path).read_text()))
    ttm = build_travel_matrix(inst.drive_engine, inst.stop_locs, inst.school_locs)
    _write(out_path, report_json(compute_metrics(solution, inst, ttm=ttm)))


@main.command(name="export-regions")
@click.argument("instance_path", type=click.Path(exists=True))
@click.argument("clusters_path", type=click.Path(exists=True))
@click.option("-o", "--out", "out_path", type=click.Path(), required=True)
@click.option("--include-network", is_flag=True, default=False)
@_domain_errors
def export_regions(instance_path, clusters_path, out_path, include_network) -> None:
    """Export service regions (and optionally the road network) as GeoJSON."""
    inst = load_instance(instance_path)
    clusters = cluster_from_dict(json.loads(Path(clusters_path).read_text()))
    _write(out_path, geo.dumps(geo.regions_collection(inst, clusters, include_network)))


@main.command(name="dump-model")
@click.argument("instance_path", type=click.Path(exists=True))
@click.option("-o", "--out", "out_path", type=click.Path(), required=True)
@_domain_errors
def dump_model(instance_path, out_path) -> None:
    """Write the complete fleet model in LP format."""
    inst = load_instance(instance_path)
    ttm = build_travel_matrix(inst.drive_engine, inst.stop_locs, inst.school_locs)
    fleet = make_fleet_case(inst, ttm, [s.id for s in inst.students])
    _write(out_path, build_fleet_routing_model(fleet).to_lp())


if __name__ == "__main__":
    main()
