"""
Run outputs: matches.csv, summary.json, trace.csv, matches.svg and the
plain-text K report.
"""
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from sklearn.decomposition import PCA

from .errors import InputValidationError
from .estimation import KInterval, MatchProbabilityTable
from .model import Configuration, MatchingMatrix, PoseParams

logger = logging.getLogger(__name__)

MATCHES_COLUMNS = ["rank", "j", "k", "p"]

TEMPLATES = {
    "k_line": "K={K:.4f}: {count} matches declared; same candidate set for K in [{lower:.4f}, {upper:.4f})",
    "accuracy": "K={K:.4f}: precision {precision:.3f}, recall {recall:.3f} against {truth_count} true matches",
    "breakpoints": "breakpoints: {values}",
    "empty": "no match has posterior probability above any requested K",
}


class OptimalMatchRecord(BaseModel):
    K: float
    lower: float = Field(description="Smallest p_jk at or below K (0 if none).")
    upper: float = Field(description="Smallest p_jk above K (1 if none).")
    matches: List[Tuple[int, int]] = Field(description="Declared matches, 1-based (j, k).")
    precision: Optional[float] = None
    recall: Optional[float] = None


class ProcrustesRecord(BaseModel):
    A: List[List[float]]
    tau: List[float]
    angle_to_estimate: Optional[float] = Field(
        default=None, description="Geodesic angle between the Procrustes rotation and A_hat (radians)."
    )


class PriorCountRecord(BaseModel):
    pmf: List[float]
    mean: float
    median: int
    mode: int


class RunSummary(BaseModel):
    command: str
    mode: str
    seed: int
    m: int
    n: int
    d: int
    sample_count: int
    tau_mean: List[float]
    tau_cov: List[List[float]]
    sigma_mean: float
    sigma_var: float
    A_hat: List[List[float]] = Field(description="Polar posterior mean rotation, or the fixed transformation.")
    A_fixed: bool
    L_pmf: List[float]
    L_prior: Optional[PriorCountRecord] = None
    acceptance: Dict[str, Any]
    optimal: List[OptimalMatchRecord] = Field(default_factory=list)
    procrustes: Optional[ProcrustesRecord] = None
    multistart: Optional[Dict[str, Any]] = None
    config: Dict[str, Any] = Field(description="Full run configuration, enough to replay the run.")


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_matches_csv(path: str, table: MatchProbabilityTable) -> pd.DataFrame:
    frame = table.ranked()
    frame.to_csv(path, index=False, float_format="%.6g")
    return frame


def read_matches_csv(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(f"matches file not found: {path}")
    frame = pd.read_csv(path)
    missing = [c for c in MATCHES_COLUMNS if c not in frame.columns]
    if missing:
        raise InputValidationError(f"{path}: missing columns {missing}")
    if len(frame) and ((frame["p"] < 0) | (frame["p"] > 1)).any():
        raise InputValidationError(f"{path}: probabilities must lie in [0, 1]")
    return frame


def write_trace_csv(path: str, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, float_format="%.10g")


def write_summary_json(path: str, summary: RunSummary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(summary.model_dump_json(indent=2))


def _project(points: np.ndarray, pca: Optional[PCA]) -> np.ndarray:
    if pca is None or len(points) == 0:
        return points[:, :2]
    return pca.transform(points)


def plot_matches_svg(
    path: str,
    x: Configuration,
    y: Configuration,
    pose: PoseParams,
    matching: MatchingMatrix,
    title: Optional[str] = None,
) -> None:
    """
    x as '+', transformed y (A y + tau) as 'o', one segment per declared match.
    3D configurations are drawn in their first two principal axes.
    """
    y_moved = y.points @ pose.A.T + pose.tau
    pca = None
    if x.dim == 3:
        combined = np.vstack([x.points, y_moved])
        if len(combined) >= 2:
            pca = PCA(n_components=2).fit(combined)
    px = _project(x.points, pca)
    py = _project(y_moved, pca)

    fig, ax = plt.subplots(figsize=(7, 7))
    ax.scatter(px[:, 0], px[:, 1], marker="+", color="black", s=40, label="x")
    ax.scatter(py[:, 0], py[:, 1], marker="o", facecolors="none", edgecolors="tab:blue", s=30, label="A y + tau")
    for j, k in matching.pairs():
        ax.plot([px[j, 0], py[k, 0]], [px[j, 1], py[k, 1]], color="tab:red", linewidth=1.0)
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best")
    ax.set_title(title or f"{matching.L} declared matches")
    if pca is not None:
        ax.set_xlabel("principal axis 1")
        ax.set_ylabel("principal axis 2")
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def optimal_records(
    intervals: Sequence[KInterval],
    accuracy: Optional[Dict[float, Tuple[float, float]]] = None,
) -> List[OptimalMatchRecord]:
    records = []
    for item in intervals:
        precision, recall = (accuracy or {}).get(item.K, (None, None))
        records.append(OptimalMatchRecord(
            K=item.K,
            lower=item.lower,
            upper=item.upper,
            matches=[(j + 1, k + 1) for j, k in item.matching.pairs()],
            precision=precision,
            recall=recall,
        ))
    return records


def report_lines(
    intervals: Sequence[KInterval],
    breakpoint_values: Sequence[float],
    accuracy: Optional[Dict[float, Tuple[float, float]]] = None,
    truth_count: int = 0,
) -> List[str]:
    lines = []
    for item in intervals:
        lines.append(TEMPLATES["k_line"].format(
            K=item.K, count=item.matching.L, lower=item.lower, upper=item.upper,
        ))
        for j, k in item.matching.pairs():
            lines.append(f"    {j + 1} <-> {k + 1}")
        if accuracy and item.K in accuracy:
            precision, recall = accuracy[item.K]
            lines.append(TEMPLATES["accuracy"].format(
                K=item.K, precision=precision, recall=recall, truth_count=truth_count,
            ))
    if intervals and all(item.matching.L == 0 for item in intervals):
        lines.append(TEMPLATES["empty"])
    lines.append(TEMPLATES["breakpoints"].format(
        values=", ".join(f"{v:.4f}" for v in breakpoint_values) or "none",
    ))
    return lines
