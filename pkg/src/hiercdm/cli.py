"""Command-line interface: simulate, fit, tune, recover, evaluate, pipeline.

Exit codes: 0 ok, 2 usage, 3 data error, 4 recovery failed, 5 no
convergence (only with ``--strict``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .core import DimensionError, HierCdmError, hierarchy_template, HIERARCHY_TEMPLATES
from .estimator import EmConfig, random_init, spectral_init
from .evaluate import aggregate, score
from .harness import ReplicationJob, StochasticFitter, auto_fit, default_t, run_replication
from .recovery import DEFAULT_EPS_GAMMA, RecoveryFailedError, recover
from .selection import BIC_COLUMNS, TuningGrid, bic, two_stage_search
from .simulate import MODELS, InfeasibleDesignError, SimSpec, apply_missingness, make_rng, simulate

logger = logging.getLogger("hiercdm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RECOVERY, EXIT_NONCONVERGED = 0, 2, 3, 4, 5
METRIC_COLUMNS = ("hierarchy", "N", "r", "method", "acc_m", "acc_p", "acc_e", "mse_theta", "acc_q")


class UsageError(HierCdmError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_shared(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (across grid points or replications)")
    p.add_argument("--config", help="JSON file whose keys override command-line flags")
    p.add_argument("--strict", action="store_true", help="exit 5 when the EM does not converge")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_sim(p):
    p.add_argument("--model", choices=MODELS, default="dina")
    p.add_argument("--hierarchy", choices=sorted(HIERARCHY_TEMPLATES), default="linear")
    p.add_argument("--n-items", type=int, default=30)
    p.add_argument("--n-subjects", type=int, default=1000)
    p.add_argument("--noise", type=float, default=0.1, help="r: theta_high = 1 - r, theta_low = r")
    p.add_argument("--missing-rate", type=float, default=0.0)


def _add_em(p):
    d = EmConfig()
    p.add_argument("--init", choices=("spectral", "random"), default="spectral")
    p.add_argument("--m-upper", type=int, default=d.m_upper)
    p.add_argument("--rho", type=float, default=d.rho)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--max-iters", type=int, default=d.max_outer_iters)
    p.add_argument("--tol", type=float, default=d.outer_tol)
    p.add_argument("--merge-tol", type=float, default=d.merge_tol)
    p.add_argument("--stochastic", action="store_true", help="use the stochastic EM variant")
    p.add_argument("--warmup-iters", type=int, default=100,
                   help="unpenalized EM iterations applied to the initial values")


def _add_grid(p):
    g = TuningGrid()
    join = lambda xs: ",".join(repr(x) for x in xs)  # noqa: E731
    p.add_argument("--stage1-lambda1", type=_floats, default=g.stage1_lambda1, metavar=join(g.stage1_lambda1))
    p.add_argument("--stage1-lambda2", type=_floats, default=g.stage1_lambda2, metavar=join(g.stage1_lambda2))
    p.add_argument("--stage1-tau", type=float, default=g.stage1_tau)
    p.add_argument("--stage2-log-lambda2", type=_floats, default=g.stage2_log_lambda2,
                   metavar=join(g.stage2_log_lambda2))
    p.add_argument("--stage2-tau", type=_floats, default=g.stage2_tau, metavar=join(g.stage2_tau))


def _add_recovery(p):
    p.add_argument("--t", type=float, default=None,
                   help="domination tolerance (default 0.05, or 0.10 when --noise >= 0.2)")
    p.add_argument("--eps-gamma", type=float, default=DEFAULT_EPS_GAMMA)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiercdm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a ground truth and responses")
    _add_shared(p)
    _add_sim(p)

    p = sub.add_parser("fit", help="penalized EM at fixed penalties")
    _add_shared(p)
    p.add_argument("--data", required=True, help="responses CSV")
    _add_em(p)
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=EmConfig().tau)
    p.add_argument("--posterior", action="store_true", help="also write posterior.csv")

    p = sub.add_parser("tune", help="two-stage BIC search")
    _add_shared(p)
    p.add_argument("--data", required=True)
    _add_em(p)
    _add_grid(p)
    p.add_argument("--resume", action="store_true", help="reuse grid fits checkpointed in --out")
    p.add_argument("--posterior", action="store_true")

    p = sub.add_parser("recover", help="profiles, hierarchy and Q from a fit")
    _add_shared(p)
    p.add_argument("--fit", required=True, help="fit.json")
    _add_recovery(p)
    p.add_argument("--dot", action="store_true", help="also write hierarchy.dot")
    p.add_argument("--profiles", help="file of bit-string profiles (one per active class) to use instead")

    p = sub.add_parser("evaluate", help="score a recovery against truth.json")
    _add_shared(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--recovery", required=True)
    p.add_argument("--method", default="em")

    p = sub.add_parser("pipeline", help="simulate, tune, recover and evaluate over replications")
    _add_shared(p)
    _add_sim(p)
    _add_em(p)
    _add_grid(p)
    _add_recovery(p)
    p.add_argument("--reps", type=int, default=None, help="replications per cell (default 10, 50 with --tables)")
    p.add_argument("--hierarchies", type=lambda s: s.split(","), default=None,
                   help="comma-separated templates; overrides --hierarchy")
    p.add_argument("--sizes", type=lambda s: [int(v) for v in s.split(",")], default=None,
                   help="comma-separated sample sizes; overrides --n-subjects")
    p.add_argument("--noises", type=_floats, default=None, help="comma-separated r values; overrides --noise")
    p.add_argument("--tables", action="store_true",
                   help="full-scale table cells for --model: all four hierarchies, r in {0.1,0.2}, "
                        "N in {500,1000} ({1000,2000} for gdina)")
    return parser


def _apply_config_file(args, parser):
    if not args.config:
        return args
    try:
        overrides = io.read_json(args.config)
    except io.DataFormatError as exc:
        raise UsageError(str(exc)) from exc
    if not isinstance(overrides, dict):
        raise UsageError("--config must hold a JSON object")
    known = vars(args)
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("command", "config"):
            raise UsageError(f"unknown config key {key!r}")
        setattr(args, dest, value)
    return args


def _em_config(args, **kw) -> EmConfig:
    try:
        return EmConfig(m_upper=args.m_upper, rho=args.rho, gamma=args.gamma,
                        max_outer_iters=args.max_iters, outer_tol=args.tol,
                        merge_tol=args.merge_tol, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _grid(args) -> TuningGrid:
    try:
        return TuningGrid(list(args.stage1_lambda1), list(args.stage1_lambda2), args.stage1_tau,
                          list(args.stage2_log_lambda2), list(args.stage2_tau))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _initial(data, args, seed):
    if args.init == "spectral":
        return spectral_init(data, args.m_upper, seed=seed)
    return random_init(data, args.m_upper, make_rng(seed, 1))


def _fitter(stochastic: bool, seed: int):
    return StochasticFitter(seed) if stochastic else auto_fit


class _CheckpointFitter:
    """Cache grid fits on disk, keyed by the config and the initial values."""

    def __init__(self, inner, directory: Path, resume: bool):
        self.inner = inner
        self.directory = directory
        self.resume = resume

    def _key(self, config, init) -> str:
        h = hashlib.sha256(json.dumps(asdict(config), sort_keys=True).encode())
        h.update(np.ascontiguousarray(init.proportions).tobytes())
        h.update(np.ascontiguousarray(init.item_params).tobytes())
        return h.hexdigest()[:20]

    def __call__(self, data, config, init):
        path = self.directory / f"{self._key(config, init)}.json"
        if self.resume and path.exists():
            return io.fit_from_dict(io.read_json(path), data)
        res = self.inner(data, config, init)
        io.write_json(io.fit_to_dict(res), path)
        return res


def _pool_map(jobs):
    if jobs <= 1:
        return map, None
    pool = ProcessPoolExecutor(max_workers=jobs)
    return pool.map, pool


def cmd_simulate(args) -> int:
    out = io.ensure_dir(args.out)
    try:
        spec = SimSpec.from_noise(args.model, hierarchy_template(args.hierarchy), args.noise,
                                  n_items=args.n_items, n_subjects=args.n_subjects, seed=args.seed)
        truth, data = simulate(spec)
    except InfeasibleDesignError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.missing_rate > 0:
        data = apply_missingness(data, args.missing_rate, make_rng(args.seed, 2))
    io.write_responses(data, out / "responses.csv")
    io.write_json(io.truth_to_dict(truth), out / "truth.json")
    meta = {"schema_version": io.SCHEMA_VERSION, "seed": args.seed, "model": args.model,
            "hierarchy": args.hierarchy, "n_items": args.n_items, "n_subjects": args.n_subjects,
            "noise": args.noise, "theta_high": spec.theta_high, "theta_low": spec.theta_low,
            "missing_rate": args.missing_rate}
    io.write_json(meta, out / "meta.json")
    return EXIT_OK


def _finish_fit(res, data, out, args, extra):
    value = bic(res, data)
    io.write_json(io.fit_to_dict(res, value, extra), out / "fit.json")
    if args.posterior:
        io.write_posterior(res, out / "posterior.csv")
    if args.strict and not res.converged:
        logger.error("EM did not converge")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_fit(args) -> int:
    data = io.read_responses(args.data)
    out = io.ensure_dir(args.out)
    config = _em_config(args, lambda1=args.lambda1, lambda2=args.lambda2, tau=args.tau)
    init = _initial(data, args, args.seed)
    if args.warmup_iters > 0 and (config.lambda1 > 0 or config.lambda2 > 0):
        from .selection import warm_start

        init = warm_start(data, init, config, args.warmup_iters)
    res = _fitter(args.stochastic, args.seed)(data, config, init)
    extra = {"init": args.init, "seed": args.seed, "data": str(args.data)}
    return _finish_fit(res, data, out, args, extra)


def cmd_tune(args) -> int:
    data = io.read_responses(args.data)
    out = io.ensure_dir(args.out)
    config = _em_config(args)
    grid = _grid(args)
    init = _initial(data, args, args.seed)
    ckpt = io.ensure_dir(out / "checkpoints")
    fitter = _CheckpointFitter(_fitter(args.stochastic, args.seed), ckpt, args.resume)
    map_fn, pool = _pool_map(args.jobs)
    try:
        result = two_stage_search(data, grid, config, init, warmup_iters=args.warmup_iters,
                                  fitter=fitter, map_fn=map_fn)
    finally:
        if pool is not None:
            pool.shutdown()
    io.write_csv(out / "bic_table.csv", BIC_COLUMNS, ([r[c] for c in BIC_COLUMNS] for r in result.table))
    extra = {"init": args.init, "seed": args.seed, "data": str(args.data),
             "selected": result.hyperparameters, "grid": asdict(grid)}
    status = _finish_fit(result.fit, data, out, args, extra)
    if args.strict and not result.converged:
        return EXIT_NONCONVERGED
    return status


def _read_profiles(path, n_classes):
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or len({len(s) for s in lines}) != 1 or any(set(s) - {"0", "1"} for s in lines):
        raise io.DataFormatError("profiles must be equal-length bit strings", path)
    if len(lines) != n_classes:
        raise io.DataFormatError(f"expected {n_classes} profiles, found {len(lines)}", path)
    return io.profiles_from_bits(lines, len(lines[0]))


def cmd_recover(args) -> int:
    fd = io.read_json(args.fit)
    res = io.fit_from_dict(fd)
    t = default_t(None) if args.t is None else args.t
    override = None
    if args.profiles:
        override = _read_profiles(args.profiles, res.n_selected)
    rec = recover(res.params, res.config.rho, args.eps_gamma, t, profiles_override=override)
    out = io.ensure_dir(args.out)
    extra = {"config": {"t": t, "eps_gamma": args.eps_gamma, "rho": res.config.rho,
                        "fit": str(args.fit)}}
    io.write_json(io.recovery_to_dict(rec, extra), out / "recovery.json")
    if args.dot:
        (out / "hierarchy.dot").write_text(io.hierarchy_to_dot(rec.hierarchy))
    return EXIT_OK


def _metrics_row(hier, n, r, method, m: dict):
    return [hier, n, r, method] + [m[c] for c in METRIC_COLUMNS[4:]]


def cmd_evaluate(args) -> int:
    truth = io.truth_from_dict(io.read_json(args.truth))
    res = io.fit_from_dict(io.read_json(args.fit))
    rec = io.recovery_from_dict(io.read_json(args.recovery))
    if res.params.n_items != truth.theta.shape[0] or rec.gamma.shape[0] != truth.theta.shape[0]:
        raise DimensionError("truth and estimate cover different numbers of items")
    meta_path = Path(args.truth).with_name("meta.json")
    meta = io.read_json(meta_path) if meta_path.exists() else {}
    metrics = score(rec, res, truth)
    out = io.ensure_dir(args.out)
    row = _metrics_row(meta.get("hierarchy", ""), meta.get("n_subjects", ""),
                       meta.get("noise", ""), args.method, metrics.as_dict())
    io.write_csv(out / "metrics.csv", METRIC_COLUMNS, [row])
    io.write_json({"schema_version": io.SCHEMA_VERSION, **metrics.as_dict(),
                   "config": {"truth": str(args.truth), "fit": str(args.fit),
                              "recovery": str(args.recovery)}}, out / "metrics.json")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    out = io.ensure_dir(args.out)
    reps = args.reps if args.reps is not None else (50 if args.tables else 10)
    if reps < 1:
        raise UsageError("--reps must be positive")
    if args.tables:
        hierarchies, noises = list(HIERARCHY_TEMPLATES), [0.1, 0.2]
        sizes = [1000, 2000] if args.model == "gdina" else [500, 1000]
    else:
        hierarchies = args.hierarchies or [args.hierarchy]
        sizes = args.sizes or [args.n_subjects]
        noises = args.noises or [args.noise]
    for h in hierarchies:
        if h not in HIERARCHY_TEMPLATES:
            raise UsageError(f"unknown hierarchy {h!r}")
    config = _em_config(args)
    grid = _grid(args)
    method = "stochastic" if args.stochastic else "em"
    cells, jobs = [], []
    for h in hierarchies:
        for n in sizes:
            for r in noises:
                cell = len(cells)
                cells.append((h, n, r))
                t = default_t(r) if args.t is None else args.t
                for rep in range(reps):
                    jobs.append(ReplicationJob(
                        model=args.model, hierarchy=h, noise=r, n_subjects=n,
                        n_items=args.n_items, missing_rate=args.missing_rate, seed=args.seed,
                        cell=cell, rep=rep, em=config, grid=grid, init=args.init,
                        stochastic=args.stochastic, warmup_iters=args.warmup_iters,
                        eps_gamma=args.eps_gamma, t=t))
    # validate the design once before any compute
    try:
        SimSpec.from_noise(args.model, hierarchy_template(hierarchies[0]), noises[0],
                           n_items=args.n_items, n_subjects=sizes[0])
    except InfeasibleDesignError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    map_fn, pool = _pool_map(args.jobs)
    try:
        results = list(map_fn(run_replication, jobs))
    finally:
        if pool is not None:
            pool.shutdown()
    rep_rows, cell_rows = [], []
    for cell, (h, n, r) in enumerate(cells):
        mine = [res for res in results if res.job.cell == cell]
        for res in mine:
            failure = (res.failure or "").replace(",", ";")
            rep_rows.append([h, n, r, method, res.job.rep, res.m_hat, failure]
                            + [res.metrics.as_dict()[c] for c in METRIC_COLUMNS[4:]])
        cell_rows.append(_metrics_row(h, n, r, method, aggregate([res.metrics for res in mine])))
    io.write_csv(out / "metrics.csv", METRIC_COLUMNS, cell_rows)
    io.write_csv(out / "replications.csv",
                 ("hierarchy", "N", "r", "method", "rep", "m_hat", "failure") + METRIC_COLUMNS[4:],
                 rep_rows)
    run = {"schema_version": io.SCHEMA_VERSION, "config": {k: v for k, v in vars(args).items()
                                                          if k not in ("func",)},
           "em": asdict(config), "grid": asdict(grid)}
    io.write_json(run, out / "run.json")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "tune": cmd_tune, "recover": cmd_recover,
            "evaluate": cmd_evaluate, "pipeline": cmd_pipeline}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _apply_config_file(args, parser)
        return COMMANDS[args.command](args)
    except (UsageError, InfeasibleDesignError) as exc:
        print(f"hiercdm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RecoveryFailedError as exc:
        detail = f" (cycle: {exc.cycle})" if exc.cycle else ""
        print(f"hiercdm: recovery failed: {exc}{detail}", file=sys.stderr)
        return EXIT_RECOVERY
    except (io.DataFormatError, DimensionError, KeyError, ValueError) as exc:
        print(f"hiercdm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
