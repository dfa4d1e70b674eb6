"""Command-line front end.

Subcommands: ``simulate`` (write a benchmark dataset plus its truth file),
``fit`` (fit and serialize an instrument ensemble), ``evaluate`` (score
methods from a saved ensemble), and ``reproduce`` (run a full benchmark
sweep, emitting per-seed results, plot-data CSVs and rendered figures).

All randomness is seeded through flags, so repeated runs are byte-identical;
outputs are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import experiments, plots
from .data import SplitSpec, load_csv, save_csv, schema_from_header, split
from .errors import ModeIVError
from .estimators import (
    EnsembleFitConfig,
    EstimatorSpec,
    FittedEstimator,
    fit_ensemble,
)
from .evaluation import (
    GridSpec,
    build_report,
    evaluate_methods,
    normalize_method,
    sensitivity_sweep,
    truth_metadata,
    write_plot_csv,
    write_report_csv,
    write_results_csv,
)
from .modal import AggregationConfig, EnsemblePredictor, default_v, modal_rows, write_modal_diagnostics
from .simulate import (
    MRConfig,
    demand_config,
    demand_config_from_doc,
    generate_demand,
    generate_mr,
    mr_config_from_doc,
    truth_from_doc,
)

log = logging.getLogger("modeiv")


def _atomic(path: Path, write_fn) -> None:
    """Write via a sibling temp file and rename, so outputs are all-or-nothing."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, doc) -> None:
    _atomic(path, lambda tmp: Path(tmp).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8"))


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip() != ""]


def _parse_float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _parse_range(text: str) -> list[int]:
    """Accept '2:8' (inclusive) or a comma list."""
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return _parse_int_list(text)


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Pre-scan for --config and fold its keys into the parser defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        doc = json.loads(Path(known.config).read_text(encoding="utf-8"))
        valid = {a.dest for a in parser._actions}
        unknown = [k for k in doc if k not in valid]
        if unknown:
            parser.error(f"--config: unknown keys {unknown}")
        parser.set_defaults(**doc)
    return argv


def _estimator_spec(args) -> EstimatorSpec:
    return EstimatorSpec(
        kind=args.estimator,
        degree=args.degree,
        n_bumps=args.bumps,
        ridge_lambda=args.ridge,
        weak_instrument_threshold=args.f_threshold,
    )


def _add_estimator_flags(parser, kind="cond_linear", degree=1, bumps=0):
    parser.add_argument("--estimator", choices=("linear_tsls", "cond_linear", "sieve"),
                        default=kind, help="estimator kind (default: %(default)s)")
    parser.add_argument("--degree", type=int, default=degree,
                        help="polynomial basis degree (default: %(default)s)")
    parser.add_argument("--bumps", type=int, default=bumps,
                        help="radial bump count (default: %(default)s)")
    parser.add_argument("--ridge", type=float, default=None,
                        help="ridge penalty; default 0 for linear, 1e-6*n otherwise")
    parser.add_argument("--f-threshold", type=float, default=10.0,
                        help="weak-instrument F threshold, <=0 disables (default: %(default)s)")
    parser.add_argument("--conditioning", choices=("independent", "leave_one_out"),
                        default="independent",
                        help="treat the other instruments as covariates (default: %(default)s)")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    outdir = Path(args.outdir)
    if args.dgp == "demand":
        if not (0 <= args.n_invalid < args.k):
            raise ModeIVError(f"--n-invalid {args.n_invalid} must lie in [0, k-1] for --k {args.k}")
        config = demand_config(
            k=args.k,
            n_invalid=args.n_invalid,
            gamma=args.gamma,
            rho=args.rho,
            n=args.n,
            param_seed=args.param_seed if args.param_seed is not None else args.seed,
            noise_seed=args.noise_seed if args.noise_seed is not None else args.seed + 1,
        )
        dataset, truth = generate_demand(config)
    else:
        if args.n_valid > args.k:
            raise ModeIVError(f"--n-valid {args.n_valid} cannot exceed --k {args.k}")
        config = MRConfig(
            K=args.k,
            n_valid=args.n_valid,
            rho=args.rho,
            n=args.n,
            param_seed=args.param_seed if args.param_seed is not None else args.seed,
            noise_seed=args.noise_seed if args.noise_seed is not None else args.seed + 1,
        )
        dataset, truth = generate_mr(config)
    _atomic(outdir / "dataset.csv", lambda tmp: save_csv(dataset, tmp))
    _write_json(outdir / "truth.json", truth.to_doc())
    log.info("wrote %s rows to %s", dataset.n, outdir / "dataset.csv")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _load_dataset(path: str):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    return load_csv(path, schema_from_header(header))


def cmd_fit(args) -> int:
    dataset = _load_dataset(args.data)
    train, _, _ = split(dataset, SplitSpec(0.9, 0.1, args.split_seed))
    spec = _estimator_spec(args)
    instruments = tuple(_parse_int_list(args.instruments)) if args.instruments else None
    config = EnsembleFitConfig(
        spec=spec,
        instruments=instruments,
        conditioning=args.conditioning,
        skip_failed=args.skip_failed,
    )
    estimators = fit_ensemble(train, config)
    outdir = Path(args.outdir)
    requested = instruments if instruments is not None else tuple(range(dataset.k))
    fitted_set = {e.instrument_index for e in estimators}
    for est in estimators:
        _write_json(outdir / f"estimator_{est.instrument_index:02d}.json", est.to_doc())

    def write_diag(tmp):
        import csv as _csv

        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["instrument", "status", "first_stage_f", "stage1_resid_var",
                 "stage2_resid_var", "stage1_columns", "stage2_columns", "n_train"]
            )
            by_index = {e.instrument_index: e for e in estimators}
            for j in requested:
                if j in by_index:
                    d = by_index[j].diagnostics
                    writer.writerow(
                        [j, "fitted", f"{d['first_stage_f']:.17g}",
                         f"{d['stage1_resid_var']:.17g}", f"{d['stage2_resid_var']:.17g}",
                         d["stage1_columns"], d["stage2_columns"], d["n_train"]]
                    )
                else:
                    writer.writerow([j, "skipped", "", "", "", "", "", ""])

    _atomic(outdir / "diagnostics.csv", write_diag)
    skipped = [j for j in requested if j not in fitted_set]
    if skipped:
        log.warning("skipped instruments: %s", skipped)
    log.info("wrote %d estimator files to %s", len(estimators), outdir)
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _load_ensemble(ensemble_dir: str) -> list[FittedEstimator]:
    paths = sorted(Path(ensemble_dir).glob("estimator_*.json"))
    if not paths:
        raise ModeIVError(f"no estimator_*.json files in {ensemble_dir}")
    return [FittedEstimator.from_doc(json.loads(p.read_text(encoding="utf-8"))) for p in paths]


def cmd_evaluate(args) -> int:
    dataset = _load_dataset(args.data)
    truth = truth_from_doc(json.loads(Path(args.truth).read_text(encoding="utf-8")))
    ensemble = _load_ensemble(args.ensemble)
    spec = ensemble[0].spec
    grid = GridSpec(n_points=args.grid_points, x_sample=args.x_sample)
    methods = [normalize_method(m) for m in args.methods.split(",")]
    v = args.v if args.v is not None else default_v(dataset.k)

    train, heldout, _ = split(dataset, SplitSpec(0.9, 0.1, args.seed))
    results = evaluate_methods(
        train, heldout, truth, methods, grid, args.seed,
        spec=spec, v=v, conditioning=args.conditioning, ensemble=ensemble,
    )
    if args.v_sweep:
        results += sensitivity_sweep(
            dataset, truth, _parse_range(args.v_sweep), grid, args.seed,
            spec=spec, conditioning=args.conditioning, ensemble=ensemble,
        )
    outdir = Path(args.outdir)
    meta = truth_metadata(truth)
    _atomic(outdir / "results.csv", lambda tmp: write_results_csv(tmp, results, meta))
    _atomic(outdir / "report.csv", lambda tmp: write_report_csv(tmp, build_report(results)))

    if args.modal_dump:
        bounds = np.percentile(train.t, [grid.p_lo, grid.p_hi])
        t_grid = np.linspace(bounds[0], bounds[1], grid.n_points)
        x_row = heldout.x[0]
        x_rows = np.tile(x_row, (len(t_grid), 1))
        predictor = EnsemblePredictor(tuple(ensemble), AggregationConfig(V=v))
        matrix = predictor.estimate_matrix(t_grid, x_rows)
        values, lowers, uppers, mask = modal_rows(matrix, v)
        from .modal import ModalInterval

        dump = [
            (float(values[i]),
             ModalInterval(float(lowers[i]), float(uppers[i]),
                           tuple(int(j) for j in np.flatnonzero(mask[i]))))
            for i in range(len(t_grid))
        ]
        _atomic(outdir / "modal_diagnostics.csv",
                lambda tmp: write_modal_diagnostics(tmp, t_grid, x_rows, dump))
    log.info("wrote evaluation outputs to %s", outdir)
    return 0


# ---------------------------------------------------------------------------
# reproduce
# ---------------------------------------------------------------------------


def _write_seed_results(exp_dir: Path, rows: list[dict]) -> None:
    import csv as _csv

    seeds = sorted({row["seed"] for row in rows})
    columns = ["method", "V", "seed", "gamma", "n_invalid", "valid_frac",
               "mse", "cate_abs_bias", "runtime_s"]
    for seed in seeds:
        seed_rows = [r for r in rows if r["seed"] == seed]

        def write(tmp, seed_rows=seed_rows):
            with open(tmp, "w", newline="", encoding="utf-8") as fh:
                writer = _csv.writer(fh, lineterminator="\n")
                writer.writerow(columns)
                for r in seed_rows:
                    writer.writerow([
                        r["method"],
                        "" if r.get("V") is None else r["V"],
                        r["seed"],
                        r.get("gamma", ""),
                        r.get("n_invalid", ""),
                        r.get("valid_frac", ""),
                        f"{r['mse']:.17g}",
                        f"{r['cate_abs_bias']:.17g}",
                        f"{r['runtime_s']:.17g}",
                    ])

        _atomic(exp_dir / str(seed) / "results.csv", write)


def cmd_reproduce(args) -> int:
    exp = args.experiment
    exp_dir = Path(args.outdir) / exp
    grid = GridSpec(n_points=args.grid_points, x_sample=args.x_sample)

    if exp == "demand-bias":
        spec = experiments.DEMAND_SPEC
        rows = experiments.demand_bias_experiment(
            gammas=tuple(_parse_float_list(args.gammas)),
            n_invalid_list=tuple(_parse_int_list(args.n_invalid_list)),
            n_seeds=args.seeds, n=args.n, k=args.k, spec=spec, grid=grid,
            base_seed=args.seed, jobs=args.jobs,
        )
        _write_seed_results(exp_dir, rows)
        for n_invalid in sorted({r["n_invalid"] for r in rows}):
            subset = [r for r in rows if r["n_invalid"] == n_invalid]
            points = experiments.aggregate_curve(subset, "gamma")
            _atomic(exp_dir / f"plot_gamma_invalid{n_invalid}.csv",
                    lambda tmp, p=points: write_plot_csv(tmp, p))
            if not args.no_figures:
                _atomic(exp_dir / f"figure_gamma_invalid{n_invalid}.png",
                        lambda tmp, p=points, m=n_invalid: plots.plot_demand_bias(p, tmp, m))
    elif exp == "mr-table":
        rows = experiments.mr_table_experiment(
            valid_fracs=tuple(_parse_float_list(args.valid_fracs)),
            n_seeds=args.seeds, n=args.n, K=args.k, grid=grid,
            base_seed=args.seed, jobs=args.jobs,
        )
        _write_seed_results(exp_dir, rows)
        points = experiments.aggregate_curve(rows, "valid_frac")
        _atomic(exp_dir / "plot_valid_frac.csv", lambda tmp: write_plot_csv(tmp, points))
        if not args.no_figures:
            _atomic(exp_dir / "figure_valid_frac.png",
                    lambda tmp: plots.plot_mr_table(points, tmp))
    elif exp == "v-sensitivity":
        rows = experiments.v_sensitivity_experiment(
            n_invalid_list=tuple(_parse_int_list(args.n_invalid_list)),
            v_range=_parse_range(args.v_range) if args.v_range else None,
            n_seeds=args.seeds, gamma=args.gamma, n=args.n, k=args.k, grid=grid,
            base_seed=args.seed, jobs=args.jobs,
        )
        _write_seed_results(exp_dir, rows)
        points = experiments.aggregate_curve(rows, "V", label_key="n_invalid")
        _atomic(exp_dir / "plot_v.csv", lambda tmp: write_plot_csv(tmp, points))
        if not args.no_figures:
            _atomic(exp_dir / "figure_v.png", lambda tmp: plots.plot_v_sensitivity(points, tmp))
    else:  # theorem
        rows = experiments.theorem_experiment(
            n_values=tuple(_parse_float_list(args.n_values)),
            replicates=args.replicates, seed=args.seed,
        )

        def write_theorem(tmp):
            import csv as _csv

            with open(tmp, "w", newline="", encoding="utf-8") as fh:
                writer = _csv.writer(fh, lineterminator="\n")
                writer.writerow(["n", "replicates", "mean", "ci", "variance"])
                for r in rows:
                    writer.writerow([f"{r['n']:.17g}", r["replicates"],
                                     f"{r['mean']:.17g}", f"{r['ci']:.17g}",
                                     f"{r['variance']:.17g}"])

        _atomic(exp_dir / "theorem.csv", write_theorem)
        if not args.no_figures:
            _atomic(exp_dir / "figure_theorem.png", lambda tmp: plots.plot_theorem(rows, tmp))
    log.info("experiment %s written to %s", exp, exp_dir)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modeiv",
        description="Robust IV effect estimation via modal aggregation: "
        "simulate benchmarks, fit ensembles, evaluate methods, reproduce sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a benchmark dataset plus truth file")
    sim.add_argument("dgp", choices=("demand", "mr"))
    sim.add_argument("--n", type=int, default=10_000, help="sample count (default: %(default)s)")
    sim.add_argument("--k", type=int, default=8, help="instrument count (default: %(default)s)")
    sim.add_argument("--n-invalid", type=int, default=0,
                     help="demand: leaking instruments, taken from the end (default: %(default)s)")
    sim.add_argument("--n-valid", type=int, default=10,
                     help="mr: leading valid instruments (default: %(default)s)")
    sim.add_argument("--gamma", type=float, default=1.0,
                     help="demand: direct-effect scale (default: %(default)s)")
    sim.add_argument("--rho", type=float, default=0.5,
                     help="confounding strength (default: %(default)s)")
    sim.add_argument("--seed", type=int, default=0,
                     help="base seed; parameters use it, noise uses seed+1 (default: %(default)s)")
    sim.add_argument("--param-seed", type=int, default=None, help="override the parameter seed")
    sim.add_argument("--noise-seed", type=int, default=None, help="override the noise seed")
    sim.add_argument("--config", default=None, help="JSON config file; flags override its keys")
    sim.add_argument("--outdir", default="out/simulate", help="output directory (default: %(default)s)")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit a per-instrument ensemble and serialize it")
    fit.add_argument("--data", required=True, help="dataset CSV (canonical header)")
    _add_estimator_flags(fit)
    fit.add_argument("--instruments", default=None,
                     help="comma list of instrument columns (default: all)")
    fit.add_argument("--split-seed", type=int, default=0,
                     help="seed of the 90/10 train split; match evaluate's --seed "
                     "(default: %(default)s)")
    fit.add_argument("--skip-failed", action="store_true",
                     help="skip instruments that fail instead of aborting")
    fit.add_argument("--outdir", default="out/fit", help="output directory (default: %(default)s)")
    fit.set_defaults(func=cmd_fit)

    ev = sub.add_parser("evaluate", help="score methods from a saved ensemble")
    ev.add_argument("--data", required=True)
    ev.add_argument("--ensemble", required=True, help="directory with estimator_*.json files")
    ev.add_argument("--truth", required=True, help="truth JSON from simulate")
    ev.add_argument("--methods", default="modeiv,mean,naive,oracle",
                    help="comma list (default: %(default)s)")
    ev.add_argument("--v", type=int, default=None,
                    help="modal lower bound V (default: half the instruments)")
    ev.add_argument("--v-sweep", default=None, help="V range like 2:8 for a sensitivity sweep")
    ev.add_argument("--conditioning", choices=("independent", "leave_one_out"),
                    default="independent")
    ev.add_argument("--grid-points", type=int, default=1000)
    ev.add_argument("--x-sample", type=int, default=200)
    ev.add_argument("--seed", type=int, default=0, help="train/held-out split seed")
    ev.add_argument("--modal-dump", action="store_true",
                    help="write per-point modal diagnostics over the grid")
    ev.add_argument("--outdir", default="out/evaluate")
    ev.set_defaults(func=cmd_evaluate)

    rep = sub.add_parser("reproduce", help="run a full benchmark sweep")
    rep.add_argument("experiment", choices=experiments.EXPERIMENTS)
    rep.add_argument("--seeds", type=int, default=5, help="replicate count (default: %(default)s)")
    rep.add_argument("--seed", type=int, default=0, help="base seed (default: %(default)s)")
    rep.add_argument("--jobs", type=int, default=1, help="parallel replicates (default: %(default)s)")
    rep.add_argument("--n", type=int, default=None,
                     help="sample count (default: 10000 demand, 50000 mr)")
    rep.add_argument("--k", type=int, default=None,
                     help="instrument count (default: 8 demand, 20 mr)")
    rep.add_argument("--gammas", default="0,0.5,1,2", help="demand-bias gamma grid")
    rep.add_argument("--n-invalid-list", default="1,3", help="invalid-count curves")
    rep.add_argument("--gamma", type=float, default=1.0, help="v-sensitivity gamma")
    rep.add_argument("--v-range", default=None, help="v-sensitivity V range like 2:8")
    rep.add_argument("--valid-fracs", default="0.5,0.6,0.7,0.8,0.9,1.0",
                     help="mr-table valid fractions")
    rep.add_argument("--n-values", default="100,1000,10000,100000,1000000",
                     help="theorem sample sizes")
    rep.add_argument("--replicates", type=int, default=500, help="theorem replicates")
    rep.add_argument("--grid-points", type=int, default=1000)
    rep.add_argument("--x-sample", type=int, default=200)
    rep.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    rep.add_argument("--config", default=None, help="JSON config file; flags override its keys")
    rep.add_argument("--outdir", default="out", help="output root (default: %(default)s)")
    rep.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # fold --config defaults into the relevant subparser before parsing
    if argv and argv[0] in ("simulate", "reproduce") and "--config" in argv:
        subparser = {a.dest: a for a in parser._subparsers._group_actions}["command"].choices[argv[0]]
        _apply_config_file(subparser, argv[1:])
    args = parser.parse_args(argv)
    if args.command == "reproduce":
        if args.n is None:
            args.n = 50_000 if args.experiment == "mr-table" else 10_000
        if args.k is None:
            args.k = 20 if args.experiment == "mr-table" else 8
    try:
        return args.func(args)
    except (ModeIVError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
