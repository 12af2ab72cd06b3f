"""
Multimodality screening: many chains from independent random rotations, a
short run each, a log-posterior threshold, continuation of the survivors and
a check that they agree on the most probable matches.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyTraceError, InputValidationError
from .estimation import match_probabilities
from .model import Configuration, Hyperparams
from .sampler import SweepSchedule, Trace, run_chain

logger = logging.getLogger(__name__)

DEFAULT_PILOT_QUANTILE = 0.25


@dataclass
class StartResult:
    start: int
    short_seed: int
    long_seed: int
    final_log_joint: float
    passed: bool
    trace: Optional[Trace] = None


@dataclass
class MultistartReport:
    n_starts: int
    passed: int
    threshold: float
    results: List[StartResult]
    consensus: bool
    top_L: int
    reference_pairs: FrozenSet[Tuple[int, int]] = frozenset()
    best_start: Optional[int] = None
    disagreeing_starts: List[int] = field(default_factory=list)

    @property
    def final_log_joint(self) -> List[float]:
        return [r.final_log_joint for r in self.results]

    @property
    def no_survivors(self) -> bool:
        return self.passed == 0

    def survivor_traces(self) -> Dict[int, Trace]:
        return {r.start: r.trace for r in self.results if r.passed and r.trace is not None}


def top_match_set(trace: Trace, L: int) -> FrozenSet[Tuple[int, int]]:
    """The L most probable (j, k) pairs of a trace, ties broken by (j, k)."""
    if L <= 0 or trace.is_empty:
        return frozenset()
    ranked = match_probabilities(trace).ranked()
    top = ranked.head(L)
    return frozenset(zip((top["j"] - 1).tolist(), (top["k"] - 1).tolist()))


def modal_match_count(trace: Trace) -> int:
    counts = trace.match_counts()
    if len(counts) == 0:
        return 0
    return int(np.argmax(np.bincount(counts)))


def _run_start(
    start: int,
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    schedule_short: SweepSchedule,
    schedule_long: SweepSchedule,
    threshold: float,
    fixed_transform: Optional[np.ndarray],
    pinned_pairs: Sequence[Tuple[int, int]],
) -> StartResult:
    short = replace(schedule_short, seed=schedule_short.seed + start)
    trace = run_chain(x, y, hyper, short, fixed_transform=fixed_transform, pinned_pairs=pinned_pairs)
    final = trace.final_state.log_joint
    result = StartResult(start, short.seed, schedule_long.seed + start, final, passed=final >= threshold)
    if not result.passed:
        return result

    long = replace(schedule_long, seed=result.long_seed)
    if long.sweeps > 0:
        trace = run_chain(x, y, hyper, long, init=trace.final_state)
        result.final_log_joint = trace.final_state.log_joint
    result.trace = trace
    return result


def multistart(
    x: Configuration,
    y: Configuration,
    hyper: Hyperparams,
    schedule_short: SweepSchedule,
    schedule_long: SweepSchedule,
    n_starts: int,
    log_post_threshold: float,
    max_workers: int = 1,
    fixed_transform: Optional[np.ndarray] = None,
    pinned_pairs: Sequence[Tuple[int, int]] = (),
) -> MultistartReport:
    """
    Start i runs the short schedule with seed schedule_short.seed + i, so a
    single start with threshold -inf replays run_chain exactly. Survivors
    continue from their final state with seed schedule_long.seed + i.
    """
    if n_starts < 1:
        raise InputValidationError("n_starts must be at least 1")
    if math.isnan(log_post_threshold):
        raise InputValidationError("log_post_threshold must not be NaN")
    if schedule_short.sample_rotation != schedule_long.sample_rotation:
        raise InputValidationError("short and long schedules disagree on rotation sampling")

    args = (x, y, hyper, schedule_short, schedule_long, log_post_threshold, fixed_transform, tuple(pinned_pairs))
    if max_workers > 1 and n_starts > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(_run_start, i, *args) for i in range(n_starts)]
            results = [f.result() for f in futures]
    else:
        results = [_run_start(i, *args) for i in range(n_starts)]

    for r in results:
        logger.info(
            "start %d (seed %d): final log_joint %.3f %s",
            r.start, r.short_seed, r.final_log_joint, "passed" if r.passed else "abandoned",
        )

    survivors = [r for r in results if r.passed]
    if not survivors:
        logger.warning("No start exceeded the threshold %.3f", log_post_threshold)
        return MultistartReport(n_starts, 0, log_post_threshold, results, consensus=False, top_L=0)

    scored = [r for r in survivors if not r.trace.is_empty]
    if not scored:
        return MultistartReport(
            n_starts, len(survivors), log_post_threshold, results, consensus=False, top_L=0,
            best_start=survivors[0].start,
        )

    best = max(scored, key=lambda r: float(r.trace.log_joint.mean()))
    top_L = modal_match_count(best.trace)
    reference = top_match_set(best.trace, top_L)
    disagreeing = [r.start for r in scored if top_match_set(r.trace, top_L) != reference]

    return MultistartReport(
        n_starts=n_starts,
        passed=len(survivors),
        threshold=log_post_threshold,
        results=results,
        consensus=not disagreeing,
        top_L=top_L,
        reference_pairs=reference,
        best_start=best.start,
        disagreeing_starts=disagreeing,
    )


def pilot_threshold(traces: Sequence[Trace], quantile: float = DEFAULT_PILOT_QUANTILE) -> float:
    """A quantile of the retained log_joint values of the pilot chain with the highest mean."""
    if not 0.0 <= quantile <= 1.0:
        raise ValueError(f"quantile must lie in [0, 1], got {quantile}")
    usable = [t for t in traces if not t.is_empty]
    if not usable:
        raise EmptyTraceError("pilot_threshold needs at least one nonempty pilot trace")
    best = max(usable, key=lambda t: float(t.log_joint.mean()))
    return float(np.quantile(best.log_joint, quantile))
