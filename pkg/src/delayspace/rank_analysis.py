"""Delay-space dimensionality: rank of L against endpoint feature counts."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DelaySpaceError, InvalidInputError
from .rpca import decompose


class FeatureCount(NamedTuple):
    unique_geos: int
    unique_asns: int
    unique_geo_asn_pairs: int


def unique_feature_counts(tags, geo="city"):
    """Distinct locations, ASNs and (location, ASN) pairs among ``tags``.

    ``geo`` picks the location field: ``"city"`` (default) or ``"country"``.
    ``None`` entries are ignored.
    """
    if geo not in ("city", "country"):
        raise InvalidInputError(f"geo must be 'city' or 'country', got {geo!r}")
    tags = [t for t in tags if t is not None]
    geos = {getattr(t, geo) for t in tags}
    asns = {t.asn for t in tags}
    pairs = {(getattr(t, geo), t.asn) for t in tags}
    return FeatureCount(len(geos), len(asns), len(pairs))


def submatrix_sample(X, count, min_dim=5, seed=0):
    """Draw ``count`` random submatrices of random sizes.

    Row count is uniform in [min_dim, m], column count uniform in
    [min_dim, n]; rows and columns are then picked without replacement and
    kept in their original order.
    """
    m, n = X.shape
    if int(count) != count or count < 1:
        raise InvalidInputError(f"count must be a positive integer, got {count}")
    if min_dim < 1 or m < min_dim or n < min_dim:
        raise InvalidInputError(f"matrix {m}x{n} is smaller than min_dim={min_dim}")
    rng = np.random.default_rng(seed)
    width = len(str(count - 1))
    out = []
    for k in range(count):
        r = int(rng.integers(min_dim, m + 1))
        c = int(rng.integers(min_dim, n + 1))
        rows = np.sort(rng.choice(m, r, replace=False))
        cols = np.sort(rng.choice(n, c, replace=False))
        out.append(X.submatrix(rows, cols, name=f"sub{k:0{width}d}"))
    return out


@dataclass(frozen=True)
class RankRow:
    matrix_id: str
    rows: int
    cols: int
    rank_L: int
    row_features: FeatureCount
    col_features: FeatureCount

    @property
    def min_pairs(self):
        return min(self.row_features.unique_geo_asn_pairs, self.col_features.unique_geo_asn_pairs)

    def flat(self):
        rf, cf = self.row_features, self.col_features
        return {
            "matrix_id": self.matrix_id, "rows": self.rows, "cols": self.cols, "rank_L": self.rank_L,
            "row_geos": rf.unique_geos, "row_asns": rf.unique_asns, "row_pairs": rf.unique_geo_asn_pairs,
            "col_geos": cf.unique_geos, "col_asns": cf.unique_asns, "col_pairs": cf.unique_geo_asn_pairs,
            "min_pairs": self.min_pairs,
        }


REPORT_HEADER = ["matrix_id", "rows", "cols", "rank_L", "row_geos", "row_asns", "row_pairs",
                 "col_geos", "col_asns", "col_pairs", "min_pairs"]
SCATTER_HEADER = ["matrix_id", "rank_L", "min_geos", "min_asns", "min_pairs"]


@dataclass
class RankReport:
    rows: list
    failures: list = field(default_factory=list)

    def scatter(self):
        """(rank, min geos, min asns, min pairs) per matrix, minima over both axes."""
        return [
            {
                "matrix_id": r.matrix_id,
                "rank_L": r.rank_L,
                "min_geos": min(r.row_features.unique_geos, r.col_features.unique_geos),
                "min_asns": min(r.row_features.unique_asns, r.col_features.unique_asns),
                "min_pairs": r.min_pairs,
            }
            for r in self.rows
        ]

    def correlations(self):
        """Pearson r between rank_L and each min feature count (None if undefined)."""
        pts = self.scatter()
        out = {}
        if len(pts) < 2:
            return {k: None for k in ("min_geos", "min_asns", "min_pairs")}
        rank = np.array([p["rank_L"] for p in pts], dtype=float)
        for key in ("min_geos", "min_asns", "min_pairs"):
            feat = np.array([p[key] for p in pts], dtype=float)
            if rank.std() == 0 or feat.std() == 0:
                out[key] = None
            else:
                out[key] = float(np.corrcoef(rank, feat)[0, 1])
        return out

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, REPORT_HEADER, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow(r.flat())

    def write_scatter(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, SCATTER_HEADER, lineterminator="\n")
            w.writeheader()
            w.writerows(self.scatter())

    def to_json(self):
        return {
            "rows": [r.flat() for r in self.rows],
            "failures": [{"matrix_id": mid, "error": err} for mid, err in self.failures],
            "pearson_r": self.correlations(),
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def rank_feature_report(matrices, opts=None, geo="city"):
    """Decompose every matrix and tabulate rank_L against feature counts.

    ``matrices`` is a mapping id -> LatencyMatrix, or a sequence whose items
    supply their own ``name`` (falling back to ``m0000``...).  A matrix whose
    decomposition raises is listed in ``failures`` and the batch continues.
    """
    if hasattr(matrices, "items"):
        items = list(matrices.items())
    else:
        items = [(X.name or f"m{k:04d}", X) for k, X in enumerate(matrices)]
    rows, failures = [], []
    for mid, X in sorted(items, key=lambda kv: kv[0]):
        try:
            D = decompose(X, opts)
        except DelaySpaceError as exc:
            failures.append((mid, str(exc)))
            continue
        m, n = X.shape
        rows.append(RankRow(mid, m, n, D.rank_L,
                            unique_feature_counts(X.row_tags, geo),
                            unique_feature_counts(X.col_tags, geo)))
    return RankReport(rows, failures)
