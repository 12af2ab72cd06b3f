import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from .errors import EmptyTraceError, InputValidationError
from .geometry import polar_rotation_mean
from .model import LossSpec, MatchingMatrix, prior_match_count_pmf
from .sampler import Trace

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class MatchProbabilityTable:
    """p[j, k] = fraction of retained samples with x_j matched to y_k (0-based)."""
    p: np.ndarray
    sample_count: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.p.shape

    def ranked(self) -> pd.DataFrame:
        """Nonzero entries, most probable first, with 1-based indices (the matches.csv layout)."""
        j, k = np.nonzero(self.p > 0)
        frame = pd.DataFrame({"j": j + 1, "k": k + 1, "p": self.p[j, k]})
        frame = frame.sort_values(["p", "j", "k"], ascending=[False, True, True]).reset_index(drop=True)
        frame.insert(0, "rank", np.arange(1, len(frame) + 1))
        return frame

    @classmethod
    def from_ranked(cls, frame: pd.DataFrame, m: int, n: int, sample_count: int = 0) -> "MatchProbabilityTable":
        p = np.zeros((m, n))
        if len(frame):
            p[frame["j"].to_numpy(dtype=int) - 1, frame["k"].to_numpy(dtype=int) - 1] = frame["p"].to_numpy(dtype=float)
        return cls(p, sample_count)


@dataclass(eq=False)
class PosteriorSummary:
    tau_mean: np.ndarray
    tau_cov: np.ndarray
    sigma_mean: float
    sigma_var: float
    # polar mean of the sampled rotations; None when A was held fixed
    A_hat: Optional[np.ndarray]
    L_pmf: np.ndarray
    sample_count: int


@dataclass
class KInterval:
    """Optimal matching at K and the interval [lower, upper) of cost ratios sharing its candidate set."""
    K: float
    matching: MatchingMatrix
    lower: float
    upper: float


def match_probabilities(trace: Trace) -> MatchProbabilityTable:
    if trace.is_empty:
        raise EmptyTraceError()
    counts = trace.match_frame().groupby(["j", "k"]).size()
    p = np.zeros((trace.m, trace.n))
    if len(counts):
        j = counts.index.get_level_values("j").to_numpy(dtype=int)
        k = counts.index.get_level_values("k").to_numpy(dtype=int)
        p[j, k] = counts.to_numpy() / trace.size
    return MatchProbabilityTable(p, trace.size)


def _as_K(loss: Union[LossSpec, float]) -> float:
    return loss.K if isinstance(loss, LossSpec) else LossSpec(float(loss)).K


def optimal_matching(table: MatchProbabilityTable, loss: Union[LossSpec, float]) -> MatchingMatrix:
    """
    Maximises sum over declared matches of (p_jk - K). Only pairs with p_jk > K
    can contribute; when those pairs share no index they are the answer,
    otherwise a maximum-weight bipartite matching decides.
    """
    K = _as_K(loss)
    m, n = table.shape
    j_idx, k_idx = np.nonzero(table.p > K)
    if len(j_idx) == 0:
        return MatchingMatrix.empty(m, n)

    if len(set(j_idx)) == len(j_idx) and len(set(k_idx)) == len(k_idx):
        return MatchingMatrix.from_pairs(list(zip(j_idx.tolist(), k_idx.tolist())), m, n)

    weights = np.where(table.p > K, table.p - K, 0.0)
    rows, cols = linear_sum_assignment(weights, maximize=True)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if table.p[r, c] > K]
    return MatchingMatrix.from_pairs(sorted(pairs), m, n)


def matching_objective(M: MatchingMatrix, table: MatchProbabilityTable, K: float) -> float:
    return float(sum(table.p[j, k] - K for j, k in M.pairs()))


def expected_loss(
    M_hat: MatchingMatrix,
    table: MatchProbabilityTable,
    losses: Union[LossSpec, Sequence[float]],
) -> float:
    """
    Posterior expected loss of declaring M_hat, without the additive constant
    that does not depend on M_hat: -(l10 + l01 - l11 - l00) * sum (p_jk - K).
    """
    spec = losses if isinstance(losses, LossSpec) else LossSpec.from_losses(*losses)
    if spec.losses is None:
        raise InputValidationError("expected_loss needs the four losses, not only K")
    l00, l01, l10, l11 = spec.losses
    return -(l10 + l01 - l11 - l00) * matching_objective(M_hat, table, spec.K)


def summarize(trace: Trace) -> PosteriorSummary:
    if trace.is_empty:
        raise EmptyTraceError()
    S = trace.size
    d = trace.d
    tau_cov = np.cov(trace.tau, rowvar=False).reshape(d, d) if S > 1 else np.zeros((d, d))
    sigma_var = float(np.var(trace.sigma, ddof=1)) if S > 1 else 0.0
    A_hat = polar_rotation_mean(trace.rotations) if trace.rotation_sampled else None
    L_pmf = np.bincount(trace.match_counts(), minlength=min(trace.m, trace.n) + 1) / S
    return PosteriorSummary(
        tau_mean=trace.tau.mean(axis=0),
        tau_cov=tau_cov,
        sigma_mean=float(trace.sigma.mean()),
        sigma_var=sigma_var,
        A_hat=A_hat,
        L_pmf=L_pmf,
        sample_count=S,
    )


def breakpoints(table: MatchProbabilityTable) -> np.ndarray:
    """Distinct match probabilities strictly inside (0, 1), ascending."""
    values = np.unique(table.p)
    return values[(values > 0.0) & (values < 1.0)]


def k_interval(table: MatchProbabilityTable, K: float) -> KInterval:
    values = np.unique(np.concatenate([[0.0, 1.0], table.p.ravel()]))
    lower = float(values[values <= K].max())
    above = values[values > K]
    upper = float(above.min()) if len(above) else 1.0
    return KInterval(K=K, matching=optimal_matching(table, K), lower=lower, upper=upper)


def optimal_matchings(table: MatchProbabilityTable, k_values: Iterable[float]) -> List[KInterval]:
    return [k_interval(table, float(K)) for K in k_values]


def precision_recall(M_hat: MatchingMatrix, truth: Iterable[Tuple[int, int]]) -> Tuple[float, float]:
    """Precision and recall of the declared pairs against true pairs (both 0-based). Empty sets score 1."""
    declared = set(M_hat.pairs())
    actual = {(int(j), int(k)) for j, k in truth}
    hits = len(declared & actual)
    precision = hits / len(declared) if declared else 1.0
    recall = hits / len(actual) if actual else 1.0
    return precision, recall


def prior_count_summary(m: int, n: int, d_ratio: float) -> Dict[str, object]:
    """Prior pmf of L with its mean and median, for comparison with the posterior pmf."""
    pmf = prior_match_count_pmf(m, n, d_ratio)
    L = np.arange(len(pmf))
    median = int(np.searchsorted(np.cumsum(pmf), 0.5))
    return {
        "pmf": pmf.tolist(),
        "mean": float(L @ pmf),
        "median": min(median, len(pmf) - 1),
        "mode": int(np.argmax(pmf)),
    }
