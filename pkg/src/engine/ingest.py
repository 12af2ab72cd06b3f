import json
import os
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, field_validator

from .errors import InputValidationError, PointFileError
from .model import Configuration, MatchingMatrix, PoseParams

# fields may be separated by commas, whitespace or both
FIELD_SPLIT = re.compile(r"[\s,]+")

COLOUR_SCHEMES = ("none", "amino-acid")

# Residue -> group. Three-letter and one-letter codes.
AMINO_ACID_GROUPS = {
    "ALA": "hydrophobic", "VAL": "hydrophobic", "LEU": "hydrophobic", "ILE": "hydrophobic",
    "MET": "hydrophobic", "PHE": "hydrophobic", "TRP": "hydrophobic", "PRO": "hydrophobic",
    "CYS": "hydrophobic",
    "ASP": "charged", "GLU": "charged", "LYS": "charged", "ARG": "charged", "HIS": "charged",
    "SER": "polar", "THR": "polar", "ASN": "polar", "GLN": "polar", "TYR": "polar",
    "GLY": "glycine",
}
ONE_LETTER_CODES = {
    "A": "ALA", "V": "VAL", "L": "LEU", "I": "ILE", "M": "MET", "F": "PHE", "W": "TRP",
    "P": "PRO", "C": "CYS", "D": "ASP", "E": "GLU", "K": "LYS", "R": "ARG", "H": "HIS",
    "S": "SER", "T": "THR", "N": "ASN", "Q": "GLN", "Y": "TYR", "G": "GLY",
}
AMINO_ACID_GROUP_NAMES = ("hydrophobic", "charged", "polar", "glycine")


def amino_acid_group(label: str) -> str:
    key = label.strip().upper()
    key = ONE_LETTER_CODES.get(key, key)
    if key in AMINO_ACID_GROUPS:
        return AMINO_ACID_GROUPS[key]
    if key.lower() in AMINO_ACID_GROUP_NAMES:
        return key.lower()
    raise ValueError(f"unknown amino acid '{label}'")


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def parse_points(path: str, colour_scheme: str = "none", dim: Optional[int] = None) -> Configuration:
    """
    One point per line: id, d coordinates, optional colour label. Lines
    starting with '#' and blank lines are skipped.

    Without dim, a trailing field is a colour only when it is not a number,
    and d comes from the first record. With dim, any field after the d
    coordinates is the colour, so numeric group codes are read as labels.
    """
    if dim is not None and dim not in (2, 3):
        raise InputValidationError(f"dim must be 2 or 3, got {dim}")
    if colour_scheme not in COLOUR_SCHEMES:
        raise InputValidationError(f"unknown colour scheme '{colour_scheme}', expected one of {COLOUR_SCHEMES}")
    if not os.path.exists(path):
        raise FileNotFoundError(f"point file not found: {path}")

    ids: List[str] = []
    coords: List[List[float]] = []
    colours: List[Optional[str]] = []
    seen: Dict[str, int] = {}
    d: Optional[int] = None

    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f for f in FIELD_SPLIT.split(line) if f]
            if len(fields) < 3:
                raise PointFileError(path, f"expected an id and at least 2 coordinates, got {len(fields)} fields", line_no)

            point_id, rest = fields[0], fields[1:]
            colour = None
            if dim is not None:
                if len(rest) == dim + 1:
                    colour, rest = rest[-1], rest[:-1]
                d = dim
            elif not _is_number(rest[-1]):
                colour, rest = rest[-1], rest[:-1]

            if d is None:
                d = len(rest)
                if d not in (2, 3):
                    raise PointFileError(path, f"points must have 2 or 3 coordinates, got {d}", line_no)
            elif len(rest) != d:
                raise PointFileError(path, f"expected {d} coordinates, got {len(rest)}", line_no)

            try:
                values = [float(v) for v in rest]
            except ValueError:
                bad = next(v for v in rest if not _is_number(v))
                raise PointFileError(path, f"non-numeric coordinate '{bad}'", line_no)
            if not all(np.isfinite(values)):
                raise PointFileError(path, "coordinates must be finite", line_no)

            if point_id in seen:
                raise PointFileError(path, f"duplicate id '{point_id}' (first seen on line {seen[point_id]})", line_no)
            seen[point_id] = line_no

            if colour is not None and colour_scheme == "amino-acid":
                try:
                    colour = amino_acid_group(colour)
                except ValueError as exc:
                    raise PointFileError(path, str(exc), line_no)

            ids.append(point_id)
            coords.append(values)
            colours.append(colour)

    if d is None:
        raise PointFileError(path, "no points found")
    points = np.array(coords, dtype=float).reshape(-1, d)
    has_colour = any(c is not None for c in colours)
    return Configuration(points, tuple(colours) if has_colour else None, tuple(ids))


def write_points(path: str, config: Configuration) -> None:
    ids = config.ids or tuple(str(i + 1) for i in range(config.size))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# id {' '.join(f'x{i + 1}' for i in range(config.dim))}{' colour' if config.has_colours else ''}\n")
        for i in range(config.size):
            fields = [ids[i]] + [repr(float(v)) for v in config.points[i]]
            if config.has_colours and config.colours[i] is not None:
                fields.append(config.colours[i])
            fh.write(" ".join(fields) + "\n")


class TruthRecord(BaseModel):
    pairs: List[Tuple[int, int]] = Field(default_factory=list, description="True matches as 1-based (j, k).")
    A: Optional[List[List[float]]] = Field(default=None, description="True transformation matrix.")
    tau: Optional[List[float]] = Field(default=None, description="True translation.")
    sigma: Optional[float] = Field(default=None, description="True noise scale.")

    @field_validator("pairs")
    @classmethod
    def _one_based(cls, pairs):
        for j, k in pairs:
            if j < 1 or k < 1:
                raise ValueError("truth pairs are 1-based")
        return pairs


@dataclass(eq=False)
class Truth:
    """Parsed truth sidecar; pairs are 0-based."""
    pairs: List[Tuple[int, int]]
    A: Optional[np.ndarray] = None
    tau: Optional[np.ndarray] = None
    sigma: Optional[float] = None

    def matching(self, m: int, n: int) -> MatchingMatrix:
        return MatchingMatrix.from_pairs(self.pairs, m, n)


def read_truth(path: str) -> Truth:
    if not os.path.exists(path):
        raise FileNotFoundError(f"truth file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PointFileError(path, f"invalid JSON: {exc.msg}", exc.lineno)
    try:
        record = TruthRecord.model_validate(payload)
    except ValidationError as exc:
        raise PointFileError(path, f"invalid truth record: {exc.errors()[0]['msg']}")
    return Truth(
        pairs=[(j - 1, k - 1) for j, k in record.pairs],
        A=None if record.A is None else np.array(record.A, dtype=float),
        tau=None if record.tau is None else np.array(record.tau, dtype=float),
        sigma=record.sigma,
    )


def write_truth(path: str, truth: MatchingMatrix, pose: Optional[PoseParams] = None) -> None:
    record = TruthRecord(pairs=[(j + 1, k + 1) for j, k in truth.pairs()])
    if pose is not None:
        record.A = pose.A.tolist()
        record.tau = pose.tau.tolist()
        record.sigma = pose.sigma
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(record.model_dump_json(indent=2))


def read_matrix(path: str, d: Optional[int] = None) -> np.ndarray:
    """A square matrix, one row per line, comma or whitespace separated."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"matrix file not found: {path}")
    try:
        frame = pd.read_csv(path, sep=r"[\s,]+", header=None, comment="#", engine="python")
        A = frame.to_numpy(dtype=float)
    except (ValueError, pd.errors.ParserError) as exc:
        raise PointFileError(path, f"could not read matrix: {exc}")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise PointFileError(path, f"matrix must be square, got shape {A.shape}")
    if d is not None and A.shape[0] != d:
        raise PointFileError(path, f"matrix must be {d}x{d} for {d}D points, got {A.shape[0]}x{A.shape[1]}")
    return A


def parse_pairs(text: str) -> List[Tuple[int, int]]:
    """'1:1, 2:5' -> [(0, 0), (1, 4)]."""
    pairs = []
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        try:
            j, k = (int(v) for v in item.split(":"))
        except ValueError:
            raise InputValidationError(f"pair '{item}' is not of the form j:k")
        if j < 1 or k < 1:
            raise InputValidationError(f"pair '{item}' must use 1-based indices")
        pairs.append((j - 1, k - 1))
    return pairs


def check_pairs(pairs: Sequence[Tuple[int, int]], m: int, n: int) -> None:
    for j, k in pairs:
        if not (0 <= j < m and 0 <= k < n):
            raise InputValidationError(f"pair {j + 1}:{k + 1} is outside the {m} x {n} problem")
    MatchingMatrix.from_pairs(list(pairs), m, n)
