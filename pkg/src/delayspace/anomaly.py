"""Inflation filters over a decomposition, and candidate ranking."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, TagDataError
from .matrix import MISSING
from .rpca import Decomposition, decompose

RATIO = "ratio"
ABSOLUTE = "absolute"


@dataclass(frozen=True)
class FilterConfig:
    tau: float = 1.0
    severity_floor_ms: float = 10.0
    cross_continent_abs_ms: float = 30.0
    expected_floor_ms: float = 0.1
    abs_all: bool = False

    def __post_init__(self):
        for name in ("tau", "cross_continent_abs_ms", "expected_floor_ms"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.severity_floor_ms >= 0:
            raise InvalidInputError(f"severity_floor_ms must be >= 0, got {self.severity_floor_ms}")

    def to_dict(self):
        return asdict(self)


@dataclass
class AnomalyCandidate:
    row_id: str
    col_id: str
    measured_ms: float
    expected_ms: float
    inflation_ms: float
    ratio: float
    filters: frozenset
    interpolated: bool = False
    severity_rank: int = 0
    below_floor: bool = False
    row_index: int = field(default=-1, repr=False)
    col_index: int = field(default=-1, repr=False)

    @property
    def cell(self):
        return (self.row_index, self.col_index)

    def to_dict(self):
        d = asdict(self)
        d["filters"] = sorted(self.filters)
        return d


class Detection(NamedTuple):
    candidates: list
    decomposition: Decomposition


def _check_dims(D, X):
    if D.L.shape != X.shape or D.S.shape != X.shape:
        raise InvalidInputError(f"decomposition {D.L.shape} does not match matrix {X.shape}")


def ratio_of(inflation, expected, floor):
    return inflation / np.maximum(expected, floor)


def _candidates(cells, D, X, cfg, tag):
    out = []
    for i, j in zip(*cells):
        L = float(D.L[i, j])
        S = float(D.S[i, j])
        out.append(AnomalyCandidate(
            row_id=X.row_ids[i], col_id=X.col_ids[j],
            measured_ms=float(X.values[i, j]), expected_ms=L, inflation_ms=S,
            ratio=float(ratio_of(S, L, cfg.expected_floor_ms)),
            filters=frozenset({tag}), interpolated=bool(X.interpolated_mask[i, j]),
            row_index=int(i), col_index=int(j),
        ))
    return out


def ratio_filter(D, X, cfg=None):
    """Cells with S > 0 and S / max(L, expected_floor_ms) > tau."""
    cfg = cfg or FilterConfig()
    _check_dims(D, X)
    S = D.S
    hit = (S > 0) & (ratio_of(S, D.L, cfg.expected_floor_ms) > cfg.tau) & (X.state != MISSING)
    return _candidates(np.nonzero(hit), D, X, cfg, RATIO)


def absolute_filter(D, X, cfg=None, row_tags=None, col_tags=None):
    """Cells with S > cross_continent_abs_ms on inter-continent paths.

    With ``cfg.abs_all`` every cell is eligible and tags are not needed.
    """
    cfg = cfg or FilterConfig()
    _check_dims(D, X)
    hit = (D.S > cfg.cross_continent_abs_ms) & (X.state != MISSING)
    if not cfg.abs_all:
        row_tags = X.row_tags if row_tags is None else row_tags
        col_tags = X.col_tags if col_tags is None else col_tags
        bad = [rid for rid, t in zip(X.row_ids, row_tags) if t is None]
        bad += [cid for cid, t in zip(X.col_ids, col_tags) if t is None]
        if bad:
            raise TagDataError(f"continent tags missing for: {', '.join(bad)}", bad)
        rc = np.array([t.continent for t in row_tags], dtype=object)
        cc = np.array([t.continent for t in col_tags], dtype=object)
        hit &= rc[:, None] != cc[None, :]
    return _candidates(np.nonzero(hit), D, X, cfg, ABSOLUTE)


def merge_candidates(*groups):
    """Union by cell, merging the ``filters`` sets."""
    merged = {}
    for group in groups:
        for c in group:
            prev = merged.get(c.cell)
            if prev is None:
                merged[c.cell] = replace(c)
            else:
                prev.filters = prev.filters | c.filters
    return list(merged.values())


def rank_candidates(candidates, cfg=None):
    """Order by inflation, then ratio (both descending), then (row_id, col_id).

    Candidates under ``severity_floor_ms`` stay in the list, flagged
    ``below_floor``.  Returns new objects with ``severity_rank`` 1..k.
    """
    cfg = cfg or FilterConfig()
    ordered = sorted(candidates, key=lambda c: (-c.inflation_ms, -c.ratio, c.row_id, c.col_id))
    return [
        replace(c, severity_rank=k, below_floor=c.inflation_ms < cfg.severity_floor_ms)
        for k, c in enumerate(ordered, start=1)
    ]


def detect(X, opts=None, cfg=None, absolute=True):
    """Decompose ``X`` and return ranked ratio/absolute candidates.

    The absolute filter is skipped when ``absolute`` is False; it needs
    continent tags unless ``cfg.abs_all`` is set.
    """
    cfg = cfg or FilterConfig()
    D = decompose(X, opts)
    groups = [ratio_filter(D, X, cfg)]
    if absolute:
        groups.append(absolute_filter(D, X, cfg))
    return Detection(rank_candidates(merge_candidates(*groups), cfg), D)


CANDIDATE_FIELDS = [
    "matrix_id", "severity_rank", "row_id", "col_id", "measured_ms", "expected_ms",
    "inflation_ms", "ratio", "filters", "interpolated", "below_floor",
]


def write_candidates_json(path, candidates, matrix_id, cfg):
    rows = []
    for c in candidates:
        d = c.to_dict()
        d.pop("row_index")
        d.pop("col_index")
        rows.append({"matrix_id": matrix_id, **d, "config": cfg.to_dict()})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")


def write_candidates_csv(path, candidates, matrix_id, cfg):
    cfg_cols = list(cfg.to_dict())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANDIDATE_FIELDS + cfg_cols)
        for c in candidates:
            w.writerow([
                matrix_id, c.severity_rank, c.row_id, c.col_id, repr(c.measured_ms),
                repr(c.expected_ms), repr(c.inflation_ms), repr(c.ratio),
                "|".join(sorted(c.filters)), c.interpolated, c.below_floor,
                *cfg.to_dict().values(),
            ])
