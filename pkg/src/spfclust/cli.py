"""Command-line front end: ``spfclust {ingest,fit,simulate,score}``.

Exit codes: 0 success, 1 validation/configuration error, 2 a fit stopped
at ``fit.max_iter`` without converging (outputs are still written).
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .config import RunConfig
from .curves import Dataset, build_dataset, filter_complete_sites, ingest_records, missing_fraction
from .errors import SpfclustError, ValidationError
from .fit import FitConfig, fit, select_C
from .graph import build_site_graph
from .metrics import adjusted_rand_index, contingency_table
from .model import CovParams, ModelParams
from .mrf import MrfParams
from .simulate import SimSpec, simulate

logger = logging.getLogger("spfclust")

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2


def _provenance(cfg: RunConfig, seed) -> str:
    return f"# spfclust {__version__} config_sha256={cfg.digest()} seed={seed}\n"


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg, key):
    value = cfg[key]
    if not value:
        raise ValidationError(f"missing input: set {key}")
    return value


def cmd_ingest(cfg: RunConfig) -> int:
    obs_path = _require(cfg, "input.observations")
    geom_path = _require(cfg, "input.geometry")
    records = ingest_records(fio.read_observations_csv(obs_path, cfg["curves.allow_negative"]))
    geometry = fio.read_geometry_csv(geom_path)
    frac = missing_fraction(records)
    kept = filter_complete_sites(
        records, cfg["curves.min_complete_years"], cfg["curves.max_missing_days_per_year"]
    )
    y0, y1 = cfg["curves.year_start"], cfg["curves.year_end"]
    year_range = None
    if y0 is not None or y1 is not None:
        year_range = (y0 if y0 is not None else -10**6, y1 if y1 is not None else 10**6)
    dataset = build_dataset(kept, geometry, year_range)

    out = _out_dir(cfg)
    header = _provenance(cfg, "-")
    fio.write_curves_csv(out / "curves.csv", dataset.curves, header)
    fio.write_geometry_csv(out / "geometry.csv", dataset.geometry, header)
    lines = [
        header.rstrip("\n"),
        f"sites_in = {len(records)}",
        f"sites_retained = {len(kept)}",
        f"sites_dropped = {len(records) - len(kept)}",
        f"missing_days = {100.0 * frac:.2f}%",
        f"rule = >= {cfg['curves.min_complete_years']} years with <= "
        f"{cfg['curves.max_missing_days_per_year']} missing days",
    ]
    if not kept:
        lines.append("note = no site met the completeness rule; output is empty")
    report = "\n".join(lines) + "\n"
    (out / "ingest_report.txt").write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return EXIT_OK


def _load_dataset(cfg: RunConfig) -> Dataset:
    curves = fio.read_curves_csv(_require(cfg, "input.curves"))
    geometry = fio.read_geometry_csv(_require(cfg, "input.geometry"))
    geo_ids = {g.site_id for g in geometry}
    orphans = [c.site_id for c in curves if c.site_id not in geo_ids]
    if orphans:
        raise ValidationError(f"curves without geometry: {', '.join(orphans[:20])}")
    if not curves:
        raise ValidationError("no curves to fit")
    ids = {c.site_id for c in curves}
    return Dataset(curves, [g for g in geometry if g.site_id in ids])


def _fit_config(cfg: RunConfig) -> FitConfig:
    clusters = cfg["fit.clusters"]
    return FitConfig(
        n_clusters=clusters[0] if len(clusters) == 1 else clusters,
        max_iter=cfg["fit.max_iter"],
        icm_sweeps_per_iter=cfg["fit.icm_sweeps_per_iter"],
        tol=cfg["fit.tol"],
        seed=cfg["fit.seed"],
        restarts=cfg["fit.restarts"],
        basis=cfg.basis(),
        lattice_size=cfg["basis.lattice_size"],
        theta_init=cfg["mrf.theta_init"],
        theta_bounds=tuple(cfg["mrf.theta_bounds"]),
        estimate_theta=cfg["mrf.estimate_theta"],
        random_effects=cfg["fit.random_effects"],
        scan_order=cfg["mrf.scan_order"],
    )


def cmd_fit(cfg: RunConfig) -> int:
    dataset = _load_dataset(cfg)
    graph = build_site_graph(
        dataset.geometry,
        k=cfg["graph.k"],
        elevation_cutoff_m=cfg["graph.elevation_cutoff_m"],
        weight_scheme=cfg["graph.weight_scheme"],
        exp_decay_h_m=cfg["graph.exp_decay_h_m"],
    )
    fc = _fit_config(cfg)
    out = _out_dir(cfg)
    header = _provenance(cfg, fc.seed)
    if len(fc.candidates) > 1:
        best_C, results = select_C(dataset, graph, fc)
        result = results[best_C]
        with open(out / "selection.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header)
            fh.write("clusters,pseudo_bic,objective,converged,selected\n")
            for C in sorted(results):
                r = results[C]
                fh.write(f"{C},{r.pseudo_bic!r},{r.objective!r},{int(r.converged)},{int(C == best_C)}\n")
        sys.stdout.write(f"selected clusters = {best_C}\n")
    else:
        result = fit(dataset, graph, fc)

    ids = dataset.site_ids
    post = result.conditional_posteriors
    fio.write_assignments_csv(out / "assignments.csv", ids, result.labels, post, header)
    fio.write_geojson(
        out / "clusters.geojson", dataset.geometry, result.labels, post,
        provenance={"config_sha256": cfg.digest(), "seed": fc.seed},
    )
    fio.write_params(out / "params.txt", result.params, header)
    fio.write_trace_csv(out / "trace.csv", result.objective_trace, header)
    if cfg["graph.export_edges"]:
        fio.write_edge_list_csv(out / "edges.csv", graph, ids, header)
    sys.stdout.write(
        f"clusters = {result.n_clusters}\nobjective = {result.objective:.6f}\n"
        f"theta = {result.params.mrf.theta:.6f}\niterations = {result.iterations}\n"
        f"converged = {result.converged}\n"
    )
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_simulate(cfg: RunConfig) -> int:
    basis = cfg.basis()
    spec = SimSpec(
        n_sites=cfg["sim.n_sites"],
        n_clusters=cfg["sim.clusters"],
        theta=cfg["sim.theta"],
        sigma2=cfg["sim.sigma2"],
        gamma_scale=cfg["sim.gamma_scale"],
        separation=cfg["sim.separation"],
        baseline=cfg["sim.baseline"],
        basis=basis,
        burn_in=cfg["sim.burn_in"],
        k=cfg["graph.k"],
        elevation_cutoff_m=cfg["graph.elevation_cutoff_m"],
        elevation_range=(0.0, cfg["sim.elevation_max_m"]),
        seed=cfg["sim.seed"],
    )
    sim = simulate(spec)
    out = _out_dir(cfg)
    header = _provenance(cfg, spec.seed)
    ds = sim.dataset
    fio.write_observations_csv(out / "observations.csv", ds.curves, cfg["sim.year"], header)
    fio.write_geometry_csv(out / "geometry.csv", ds.geometry, header)
    fio.write_curves_csv(out / "curves.csv", ds.curves, header)
    fio.write_labels_csv(out / "truth_labels.csv", ds.site_ids, sim.labels, header)
    q = basis.q
    truth = ModelParams(
        alpha=sim.alpha,
        cov=CovParams(sim.gamma, max(sim.sigma2, 1e-300)),
        mrf=MrfParams(spec.theta, spec.n_clusters, allow_repulsive=True),
        basis=basis,
        transform=np.eye(q),
    )
    fio.write_params(out / "truth_params.txt", truth, header)
    n_neg = int(sum(np.sum(c.values < 0) for c in ds.curves))
    sys.stdout.write(
        f"sites = {ds.n_sites}\nedges = {sim.graph.n_edges}\n"
        f"cluster_sizes = {np.bincount(sim.labels, minlength=spec.n_clusters).tolist()}\n"
        f"burn_in_stable = {sim.burn_in_stable}\nnegative_values = {n_neg}\n"
    )
    if n_neg:
        sys.stdout.write("note = set curves.allow_negative=true to ingest observations.csv\n")
    return EXIT_OK


def cmd_score(cfg: RunConfig, assignments, truth) -> int:
    pred = fio.read_labels_csv(assignments)
    true = fio.read_labels_csv(truth)
    if set(pred) != set(true):
        only_p = sorted(set(pred) - set(true))[:10]
        only_t = sorted(set(true) - set(pred))[:10]
        raise ValidationError(f"site ids differ; only in assignments: {only_p}, only in truth: {only_t}")
    ids = sorted(true)
    a = np.array([true[s] for s in ids])
    b = np.array([pred[s] for s in ids])
    ari = adjusted_rand_index(a, b)
    table, la, lb = contingency_table(a, b)
    lines = [f"sites = {len(ids)}", f"ari = {ari:.6f}", "confusion (rows: truth, columns: assigned)"]
    lines.append("truth\\assigned," + ",".join(str(x) for x in lb))
    for lab, row in zip(la, table):
        lines.append(f"{lab}," + ",".join(str(int(x)) for x in row))
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    if cfg.raw.get("output.dir", ".") != ".":
        (_out_dir(cfg) / "score_report.txt").write_text(report, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spfclust", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat 'key = value' configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
        p.add_argument("--out-dir", help="output directory (output.dir)")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("ingest", help="daily observations -> mean annual curves")
    common(p)
    p.add_argument("--observations", help="observation CSV (input.observations)")
    p.add_argument("--geometry", help="geometry CSV (input.geometry)")

    p = sub.add_parser("fit", help="cluster curves; select C when several are given")
    common(p)
    p.add_argument("--curves", help="curve CSV (input.curves)")
    p.add_argument("--geometry", help="geometry CSV (input.geometry)")
    p.add_argument("--clusters", help="cluster count or comma list (fit.clusters)")
    p.add_argument("--seed", type=int, help="fit.seed")

    p = sub.add_parser("simulate", help="write a synthetic dataset with ground truth")
    common(p)
    p.add_argument("--clusters", type=int, help="sim.clusters")
    p.add_argument("--seed", type=int, help="sim.seed")

    p = sub.add_parser("score", help="ARI and confusion table against truth")
    common(p)
    p.add_argument("--assignments", required=True)
    p.add_argument("--truth", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = list(args.set)
    if args.out_dir:
        overrides.append(f"output.dir={args.out_dir}")
    flag_keys = {
        "observations": "input.observations",
        "geometry": "input.geometry",
        "curves": "input.curves",
    }
    for attr, key in flag_keys.items():
        if getattr(args, attr, None):
            overrides.append(f"{key}={getattr(args, attr)}")
    prefix = "sim" if args.command == "simulate" else "fit"
    if getattr(args, "seed", None) is not None:
        overrides.append(f"{prefix}.seed={args.seed}")
    if getattr(args, "clusters", None) is not None:
        overrides.append(f"{prefix}.clusters={args.clusters}")
    try:
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_score(cfg, args.assignments, args.truth)
    except (SpfclustError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
