"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 sweep finished with failed realizations.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .lattice import LatticeError, dump_edge_list, sample_couplings
from .observables import (
    RealizationEnsembleResult,
    correlation_error,
    fit_r2_epsilon,
    load_correlations,
)
from .runner import (
    ConfigError,
    LatticeSpec,
    RunConfig,
    RunRecord,
    benchmark_scaling,
    build_lattice,
    derive_seed,
    load_config,
    output_root,
    run_anneal,
    run_sweep,
    worker_count,
)

logger = logging.getLogger("tvmc_anneal")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def _parse_value(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def _add_lattice_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("lattice")
    g.add_argument("--n-sites", type=int, help="diamond size from the shipped series")
    g.add_argument("--nx", type=int)
    g.add_argument("--ny", type=int)
    g.add_argument("--nz-cells", type=int)
    g.add_argument("--edge-list", help="edge-list file (optionally with a coupling column)")


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON run configuration")
    _add_lattice_args(p)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--realizations", type=int)
    p.add_argument("--orders", type=lambda s: tuple(int(x) for x in s.split(",")),
                   help="comma-separated Jastrow orders, e.g. 1,2,4")
    p.add_argument("--schedule", help="schedule family")
    p.add_argument("--schedule-param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--total-time", type=float)
    p.add_argument("--n-steps", type=int)
    p.add_argument("--integrator", choices=["heun", "rk4", "euler"])
    p.add_argument("--validation-every", type=int)
    p.add_argument("--factor-init-scale", type=float)
    p.add_argument("--sampler", choices=["standard", "pt", "exhaustive"])
    p.add_argument("--n-chains", type=int)
    p.add_argument("--samples-per-chain", type=int)
    p.add_argument("--warm-sweeps", type=int, help="sweeps between time steps")
    p.add_argument("--n-replicas", type=int)
    p.add_argument("--rcond", type=float)
    p.add_argument("--shift", type=float)
    p.add_argument("--exact-steps", type=int)
    p.add_argument("--e-res-every", type=int)
    p.add_argument("--mode", choices=["tvmc", "exact", "both"])
    p.add_argument("--output-dir")
    p.add_argument("--resume", action="store_true", help="reuse finished realizations")


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Config file (if any) overridden by explicit flags."""
    config = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    doc = config.to_dict()
    lat = doc["lattice"]
    if args.edge_list:
        lat.update(kind="edgelist", path=args.edge_list)
    if args.n_sites is not None:
        lat.update(kind="diamond", n_sites=args.n_sites, nx=None, ny=None)
    if args.nx is not None or args.ny is not None:
        lat.update(kind="diamond", nx=args.nx, ny=args.ny)
    if args.nz_cells is not None:
        lat["nz_cells"] = args.nz_cells
    simple = {"master_seed": "master_seed", "realizations": "realizations", "orders": "orders",
              "total_time": "total_time", "n_steps": "n_steps", "integrator": "integrator",
              "validation_every": "validation_every", "factor_init_scale": "factor_init_scale",
              "exact_steps": "exact_steps", "e_res_every": "e_res_every", "mode": "mode",
              "output_dir": "output_dir"}
    for attr, key in simple.items():
        value = getattr(args, attr, None)
        if value is not None:
            doc[key] = list(value) if attr == "orders" else value
    if args.schedule:
        if args.schedule != doc["schedule"]["family"]:
            doc["schedule"]["params"] = {}
        doc["schedule"]["family"] = args.schedule
    for item in args.schedule_param:
        if "=" not in item:
            raise ConfigError(f"--schedule-param expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        doc["schedule"]["params"][key] = _parse_value(value)
    for attr, key in (("sampler", "kind"), ("n_chains", "n_chains"),
                      ("samples_per_chain", "samples_per_chain"), ("warm_sweeps", "warm_sweeps"),
                      ("n_replicas", "n_replicas")):
        value = getattr(args, attr, None)
        if value is not None:
            doc["sampler"][key] = value
    for attr in ("rcond", "shift"):
        value = getattr(args, attr, None)
        if value is not None:
            doc["solver"][attr] = value
    config = RunConfig.from_dict(doc)
    if config.lattice.kind == "diamond" and config.lattice.n_sites is None and config.lattice.nx is None:
        raise ConfigError("no lattice given (use --n-sites, --nx/--ny or --edge-list)")
    if config.output_dir is None:
        config.output_dir = str(output_root() / config.config_hash())
    return config.validate()


# -- verbs -------------------------------------------------------------------


def cmd_generate_lattice(args) -> int:
    spec = _lattice_spec(args)
    lattice = build_lattice(spec)
    _emit(dump_edge_list(lattice), args.output)
    return EXIT_OK


def cmd_sample_couplings(args) -> int:
    lattice = build_lattice(_lattice_spec(args))
    seed = args.seed if args.seed is not None else derive_seed(args.master_seed, "couplings", args.index)
    real = sample_couplings(lattice, seed)
    if args.json:
        _emit(json.dumps(real.to_dict(), indent=1), args.output)
    else:
        text = f"# seed={seed} generator={real.generator}\n" + dump_edge_list(lattice, real.couplings)
        _emit(text, args.output)
    return EXIT_OK


def cmd_run(args) -> int:
    config = config_from_args(args)
    record = run_anneal(config, args.index, resume=args.resume,
                        oracle_cache=Path(config.output_dir) / "oracle-cache")
    print(json.dumps(_brief(record), indent=1))
    return EXIT_OK if record.status == "ok" else EXIT_NUMERICAL


def cmd_oracle(args) -> int:
    args.mode = "exact"
    return cmd_run(args)


def cmd_sweep(args) -> int:
    config = config_from_args(args)
    ensemble, _ = run_sweep(config, n_workers=worker_count(args.workers or 1),
                            resume=args.resume, label=args.label or "")
    print(json.dumps(ensemble.summary(), indent=1))
    if ensemble.partial:
        return EXIT_PARTIAL if ensemble.ok_records else EXIT_NUMERICAL
    return EXIT_OK


def cmd_compare(args) -> int:
    a = load_correlations(args.tested)
    b = load_correlations(args.reference)
    eps = correlation_error(a, b)
    print(json.dumps({"epsilon_c": eps, "tested": args.tested, "reference": args.reference}))
    return EXIT_OK


def cmd_bench(args) -> int:
    args.n_sites = args.n_sites or args.sizes[0]
    template = config_from_args(args)
    result = benchmark_scaling(args.sizes, template, repeats=args.repeats, n_timed=args.timed_steps)
    doc = result.to_dict()
    text = json.dumps(doc, indent=1)
    if args.output:
        Path(args.output).write_text(text)
    print(text)
    return EXIT_OK


def cmd_report(args) -> int:
    """Tabular files for plotting from one or more sweep directories."""
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rows_eps, rows_eres, ensembles = [], [], []
    for d in args.sweeps:
        d = Path(d)
        doc = json.loads((d / "ensemble.json").read_text())
        ens = RealizationEnsembleResult.from_dict(doc)
        cfg = doc.get("config", {})
        label = doc["summary"].get("label") or d.name
        sampler = cfg.get("sampler", {}).get("kind", "")
        orders = "".join(str(k) for k in cfg.get("orders", []))
        rows_eps.append([label, ens.n_sites, orders, sampler, ens.epsilon_mean, ens.epsilon_rms,
                         ens.r2_mean, ens.r2_rms, len(ens.ok_records)])
        ensembles.append(ens)
        for rec in ens.ok_records:
            for t, e, err in zip(rec.e_res_times, rec.e_res, rec.e_res_errors):
                rows_eres.append([label, rec.seed, t, e, err])
    _tsv(out / "epsilon_by_ensemble.tsv",
         ["label", "n_sites", "orders", "sampler", "epsilon_mean", "epsilon_rms", "r2_mean",
          "r2_rms", "n_ok"], rows_eps)
    if rows_eres:
        _tsv(out / "residual_energy.tsv", ["label", "seed", "t", "e_res", "e_res_error"], rows_eres)
    fit_doc = None
    finite = [e for e in ensembles if np.isfinite(e.r2_mean) and np.isfinite(e.epsilon_mean)]
    if len(finite) >= 2:
        try:
            fit = fit_r2_epsilon(finite)
            fit_doc = {"slope": fit.slope, "intercept": fit.intercept, "pearson_r": fit.pearson_r}
        except ValueError as exc:
            fit_doc = {"error": str(exc)}
        (out / "r2_epsilon_fit.json").write_text(json.dumps(fit_doc, indent=1))
    print(json.dumps({"written": sorted(p.name for p in out.iterdir()), "fit": fit_doc}, indent=1))
    return EXIT_OK


# -- helpers -----------------------------------------------------------------


def _lattice_spec(args) -> LatticeSpec:
    if args.edge_list:
        return LatticeSpec(kind="edgelist", path=args.edge_list)
    if args.nx is not None or args.ny is not None:
        return LatticeSpec(kind="diamond", nx=args.nx, ny=args.ny, nz_cells=args.nz_cells or 2)
    if args.n_sites is not None:
        return LatticeSpec(kind="diamond", n_sites=args.n_sites)
    raise ConfigError("no lattice given (use --n-sites, --nx/--ny or --edge-list)")


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _tsv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = ["\t".join(header)] + ["\t".join(str(x) for x in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _brief(record: RunRecord) -> dict:
    return {
        "status": record.status,
        "index": record.index,
        "n_sites": record.n_sites,
        "epsilon_c": record.epsilon_c,
        "r2_integrated": record.r2_integrated,
        "final_energy": record.final_energy,
        "directory": record.directory,
        "error": record.error,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvmc-anneal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate-lattice", help="write a lattice as an edge list")
    _add_lattice_args(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_generate_lattice)

    p = sub.add_parser("sample-couplings", help="draw J_ij ~ U(-1, 1) for a lattice")
    _add_lattice_args(p)
    p.add_argument("--seed", type=int, help="explicit coupling seed")
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--index", type=int, default=0, help="realization index under the master seed")
    p.add_argument("--json", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sample_couplings)

    for name, func, text in (("run", cmd_run, "single annealing run"),
                             ("oracle", cmd_oracle, "dense-state reference run")):
        p = sub.add_parser(name, help=text)
        _add_run_args(p)
        p.add_argument("--index", type=int, default=0, help="realization index")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", help="all realizations of a configuration")
    _add_run_args(p)
    p.add_argument("--workers", type=int, help="processes (overridden by TVMC_WORKERS)")
    p.add_argument("--label")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="correlation error between two correlation files")
    p.add_argument("tested")
    p.add_argument("reference")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="per-step wall time versus N and log-log slope")
    _add_run_args(p)
    p.add_argument("--sizes", type=int, nargs="+", required=True)
    p.add_argument("--repeats", type=int, default=2)
    p.add_argument("--timed-steps", type=int, default=2)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="tabular summaries of sweep directories")
    p.add_argument("sweeps", nargs="+")
    p.add_argument("-o", "--output", default="report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, LatticeError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
