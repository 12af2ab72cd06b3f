import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple, Type

import numpy as np
from pydantic import BaseModel, ValidationError

# Ensure src is in pythonpath
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "../..")))

from src.cli.run_config import GenerateConfig, RunConfig, load_config_file, merge
from src.config import settings
from src.engine import diagnostics, em_baseline, estimation, geometry, ingest, model, report, sampler, synthetic
from src.engine.errors import InputValidationError
from src.engine.model import Configuration, Hyperparams, PoseParams

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _one_line(exc: Exception) -> str:
    if isinstance(exc, ValidationError):
        return "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors()
        )
    return " ".join(str(exc).split())


def _config_from_args(args: argparse.Namespace, schema: Type[BaseModel]):
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {name: getattr(args, name, None) for name in schema.model_fields}
    return schema.model_validate(merge(file_values, overrides))


# ---------- INPUTS ----------

def _load_inputs(cfg: RunConfig) -> Tuple[Configuration, Configuration, Hyperparams, Optional[np.ndarray], Optional[ingest.Truth]]:
    x = ingest.parse_points(cfg.x_file, cfg.colour_groups, cfg.point_dim)
    y = ingest.parse_points(cfg.y_file, cfg.colour_groups, cfg.point_dim)
    if x.dim != y.dim:
        raise InputValidationError(f"{cfg.x_file} is {x.dim}D but {cfg.y_file} is {y.dim}D")
    hyper = cfg.hyperparams(x.size, y.size, x.dim)
    fixed_A = ingest.read_matrix(cfg.a_file, x.dim) if cfg.a_file else None
    truth = ingest.read_truth(cfg.truth_file) if cfg.truth_file else None
    if truth is not None:
        ingest.check_pairs(truth.pairs, x.size, y.size)
    ingest.check_pairs(cfg.pinned(), x.size, y.size)
    return x, y, hyper, fixed_A, truth


def _estimated_A(summary: estimation.PosteriorSummary, trace: sampler.Trace) -> np.ndarray:
    return summary.A_hat if summary.A_hat is not None else trace.final_state.pose.A


def _procrustes(
    x: Configuration,
    y: Configuration,
    matching: model.MatchingMatrix,
    A_hat: np.ndarray,
    rotation_sampled: bool,
) -> Optional[report.ProcrustesRecord]:
    pairs = matching.pairs()
    if len(pairs) < x.dim:
        return None
    js, ks = zip(*pairs)
    A_p, tau_p = geometry.procrustes_rotation(x.points[list(js)], y.points[list(ks)])
    return report.ProcrustesRecord(
        A=A_p.tolist(),
        tau=tau_p.tolist(),
        angle_to_estimate=geometry.rotation_distance(A_p, A_hat) if rotation_sampled else None,
    )


def _write_outputs(
    cfg: RunConfig,
    command: str,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    trace: sampler.Trace,
    truth: Optional[ingest.Truth],
    multistart_info: Optional[Dict] = None,
) -> report.RunSummary:
    out = report.ensure_dir(cfg.output_dir)
    table = estimation.match_probabilities(trace)
    post = estimation.summarize(trace)
    intervals = estimation.optimal_matchings(table, cfg.k_values)

    accuracy = None
    if truth is not None:
        accuracy = {item.K: estimation.precision_recall(item.matching, truth.pairs) for item in intervals}

    A_hat = _estimated_A(post, trace)
    L_prior = None
    if hyper.prior_count_ratio is not None:
        L_prior = report.PriorCountRecord(**estimation.prior_count_summary(x.size, y.size, hyper.prior_count_ratio))

    summary = report.RunSummary(
        command=command,
        mode=cfg.mode,
        seed=trace.seed,
        m=x.size,
        n=y.size,
        d=x.dim,
        sample_count=post.sample_count,
        tau_mean=post.tau_mean.tolist(),
        tau_cov=post.tau_cov.tolist(),
        sigma_mean=post.sigma_mean,
        sigma_var=post.sigma_var,
        A_hat=A_hat.tolist(),
        A_fixed=not trace.rotation_sampled,
        L_pmf=post.L_pmf.tolist(),
        L_prior=L_prior,
        acceptance=trace.acceptance,
        optimal=report.optimal_records(intervals, accuracy),
        procrustes=_procrustes(x, y, intervals[0].matching, A_hat, trace.rotation_sampled) if intervals else None,
        multistart=multistart_info,
        config=cfg.model_dump(),
    )

    report.write_matches_csv(os.path.join(out, "matches.csv"), table)
    report.write_summary_json(os.path.join(out, "summary.json"), summary)
    report.write_trace_csv(os.path.join(out, "trace.csv"), trace.to_frame())
    if cfg.plot and intervals:
        pose = PoseParams(A_hat, post.tau_mean, post.sigma_mean)
        report.plot_matches_svg(os.path.join(out, "matches.svg"), x, y, pose, intervals[0].matching)

    for line in report.report_lines(intervals, estimation.breakpoints(table), accuracy, len(truth.pairs) if truth else 0):
        print(line)
    print(f"Results written to {out}")
    return summary


# ---------- COMMANDS ----------

def align_command(cfg: RunConfig) -> int:
    x, y, hyper, fixed_A, truth = _load_inputs(cfg)
    trace = sampler.run_chain(
        x, y, hyper, cfg.schedule(),
        fixed_transform=fixed_A,
        pinned_pairs=cfg.pinned(),
        initial_rotation=cfg.start_rotation(x.dim),
    )
    _write_outputs(cfg, "align", x, y, hyper, trace, truth)
    return EXIT_OK


def multistart_command(cfg: RunConfig) -> int:
    x, y, hyper, fixed_A, truth = _load_inputs(cfg)
    short = cfg.schedule(sweeps=cfg.short_sweeps, burn_in=min(cfg.burn_in, cfg.short_sweeps))
    long = cfg.schedule(burn_in=0)

    threshold = cfg.log_post_threshold
    if threshold is None:
        pilots = [
            sampler.run_chain(
                x, y, hyper, cfg.schedule(sweeps=short.sweeps, burn_in=short.burn_in, seed=cfg.seed + 10_000 + i),
                fixed_transform=fixed_A, pinned_pairs=cfg.pinned(),
            )
            for i in range(cfg.pilot_runs)
        ]
        threshold = diagnostics.pilot_threshold(pilots, cfg.pilot_quantile)
        logger.info("Pilot threshold from %d runs: %.3f", len(pilots), threshold)

    result = diagnostics.multistart(
        x, y, hyper, short, long, cfg.n_starts, threshold,
        max_workers=cfg.max_workers, fixed_transform=fixed_A, pinned_pairs=cfg.pinned(),
    )
    info = {
        "n_starts": result.n_starts,
        "passed": result.passed,
        "threshold": result.threshold,
        "final_log_joint": result.final_log_joint,
        "consensus": result.consensus,
        "top_L": result.top_L,
        "reference_pairs": sorted((j + 1, k + 1) for j, k in result.reference_pairs),
        "best_start": result.best_start,
        "disagreeing_starts": result.disagreeing_starts,
    }
    out = report.ensure_dir(cfg.output_dir)
    with open(os.path.join(out, "multistart.json"), "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2)

    print(f"{result.passed} of {result.n_starts} starts passed the threshold {threshold:.3f}")
    if result.no_survivors:
        print("No surviving chains; nothing further to report.")
        return EXIT_OK
    print(f"Consensus on the top {result.top_L} matches: {'yes' if result.consensus else 'no'}")

    best = result.survivor_traces().get(result.best_start)
    if best is not None and not best.is_empty:
        _write_outputs(cfg, "multistart", x, y, hyper, best, truth, multistart_info=info)
    return EXIT_OK


class EMSummary(BaseModel):
    iterations: int
    converged: bool
    warnings: int
    objective_trace: List[float]
    A: List[List[float]]
    tau: List[float]
    sigma: float
    matches: List[Tuple[int, int]]
    config: Dict


def em_command(cfg: RunConfig) -> int:
    x, y, hyper, fixed_A, truth = _load_inputs(cfg)
    d = x.dim
    rng = np.random.default_rng(cfg.seed)
    init = sampler.initial_state(
        x, y, hyper, cfg.schedule(), rng, fixed_transform=fixed_A, rotation=cfg.start_rotation(d),
    )
    result = em_baseline.run_em(
        x, y, hyper, init.pose, cfg.em_max_iters,
        sample_rotation=cfg.sample_rotation, fix_sigma=cfg.em_fix_sigma,
    )
    table = estimation.MatchProbabilityTable(result.table.p, 0)
    matching = estimation.optimal_matching(table, cfg.k_values[0])

    out = report.ensure_dir(cfg.output_dir)
    summary = EMSummary(
        iterations=result.iterations,
        converged=result.converged,
        warnings=result.warnings,
        objective_trace=result.objective_trace,
        A=result.pose.A.tolist(),
        tau=result.pose.tau.tolist(),
        sigma=result.pose.sigma,
        matches=[(j + 1, k + 1) for j, k in matching.pairs()],
        config=cfg.model_dump(),
    )
    with open(os.path.join(out, "em_summary.json"), "w", encoding="utf-8") as fh:
        fh.write(summary.model_dump_json(indent=2))
    report.write_matches_csv(os.path.join(out, "em_matches.csv"), table)

    print(f"EM: {result.iterations} iterations, converged={result.converged}, objective {result.objective_trace[-1]:.4f}")
    print(f"tau = {np.array2string(result.pose.tau, precision=4)}, sigma = {result.pose.sigma:.4f}")
    print(f"{matching.L} matches with responsibility above K={cfg.k_values[0]}")
    if truth is not None:
        precision, recall = estimation.precision_recall(matching, truth.pairs)
        print(f"precision {precision:.3f}, recall {recall:.3f}")
    return EXIT_OK


def generate_command(cfg: GenerateConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dim
    A = cfg.rotation_matrix(rng)
    tau = np.zeros(d) if cfg.tau is None else np.array(cfg.tau, dtype=float)
    spec = synthetic.GenerativeSpec(
        lambda_rate=cfg.lambda_rate,
        region_low=cfg.region_low,
        region_high=cfg.region_high,
        p_x=cfg.p_x,
        p_y=cfg.p_y,
        rho=cfg.rho,
        pose=PoseParams(A, tau, cfg.sigma),
        colour_labels=cfg.colour_labels,
        colour_probs=cfg.colour_probs,
        gamma=cfg.gamma,
        delta=cfg.delta,
        min_spacing=cfg.min_spacing,
    )
    instance = synthetic.generate(spec, rng)

    out = report.ensure_dir(cfg.output_dir)
    ingest.write_points(os.path.join(out, "x.txt"), instance.x)
    ingest.write_points(os.path.join(out, "y.txt"), instance.y)
    ingest.write_truth(os.path.join(out, "truth.json"), instance.truth, spec.pose)
    np.savetxt(os.path.join(out, "A.txt"), A)

    print(f"Generated m={instance.x.size}, n={instance.y.size}, true matches L={instance.truth.L}")
    print(f"kappa_match implied by the generator: {spec.kappa_match:.6g}")
    print(f"Files written to {out}")
    return EXIT_OK


def report_command(args: argparse.Namespace) -> int:
    frame = report.read_matches_csv(args.matches)
    truth = ingest.read_truth(args.truth) if args.truth else None
    m = max([int(frame["j"].max()) if len(frame) else 0] + [j + 1 for j, _ in (truth.pairs if truth else [])])
    n = max([int(frame["k"].max()) if len(frame) else 0] + [k + 1 for _, k in (truth.pairs if truth else [])])
    table = estimation.MatchProbabilityTable.from_ranked(frame, m, n)

    k_values = [float(v) for v in args.k.split(",")] if args.k else list(settings.default_k_values)
    intervals = estimation.optimal_matchings(table, k_values)
    accuracy = None
    if truth is not None:
        accuracy = {item.K: estimation.precision_recall(item.matching, truth.pairs) for item in intervals}
    for line in report.report_lines(intervals, estimation.breakpoints(table), accuracy, len(truth.pairs) if truth else 0):
        print(line)
    return EXIT_OK


# ---------- PARSER ----------

def _add_schema_flags(parser: argparse.ArgumentParser, schema: Type[BaseModel]) -> None:
    parser.add_argument("--config", help="key = value configuration file; flags override it")
    for name, info in schema.model_fields.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, help=info.description)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="align",
        description="Bayesian alignment of two unlabelled point configurations",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, handler, help_text in (
        ("align", align_command, "run the MCMC sampler and report the optimal matches"),
        ("multistart", multistart_command, "screen chains from random starting rotations"),
        ("em", em_command, "run the approximate EM baseline"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        _add_schema_flags(cmd, RunConfig)
        cmd.set_defaults(handler=lambda args, h=handler: h(_config_from_args(args, RunConfig)))

    gen = sub.add_parser("generate", help="simulate an instance from the generative model")
    _add_schema_flags(gen, GenerateConfig)
    gen.set_defaults(handler=lambda args: generate_command(_config_from_args(args, GenerateConfig)))

    rep = sub.add_parser("report", help="optimal matchings for a list of K from a matches.csv")
    rep.add_argument("matches", help="matches.csv written by align")
    rep.add_argument("--k", help="comma-separated cost ratios")
    rep.add_argument("--truth", help="truth JSON for precision and recall")
    rep.set_defaults(handler=report_command)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = settings.log_level
    if args.verbose:
        level = "DEBUG"
    elif args.quiet:
        level = "WARNING"
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    try:
        return args.handler(args)
    except (InputValidationError, ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception:
        logger.exception("Unhandled error in %s", args.command)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
