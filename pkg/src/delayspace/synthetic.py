"""Planted delay spaces and detector scoring.

A synthetic delay space is block structured: every source belongs to one
(asn, city) row cluster, every prefix to one column cluster, and the
expected RTT of a cell is the mean of its cluster pair plus a little
uniform jitter.  Detours are added on top as positive inflations.
"""

from __future__ import annotations

import csv
import ipaddress
import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .anomaly import AnomalyCandidate, FilterConfig, absolute_filter, detect, merge_candidates, rank_candidates, ratio_filter
from .errors import InvalidInputError, InvalidSpecError, SVDFailureError
from .matrix import MISSING, OBSERVED, LatencyMatrix, interpolate_missing
from .measurements import HEADER as MEASUREMENT_HEADER, MeasurementRecord
from .rpca import Decomposition, SolverOptions, numerical_rank
from .tags import EndpointTag

TWO_SIGMA = "two_sigma"
DETECTORS = ("rpca", "two_sigma", "pca")


@dataclass(frozen=True)
class Cluster:
    asn: int
    city: str
    country: str
    continent: str
    members: int

    @property
    def tag(self):
        return EndpointTag(self.asn, self.city, self.country, self.continent)


@dataclass(frozen=True)
class RandomAnomalies:
    """Draw ``count`` detours at random cells.

    Each gets ``max(min_inflation_ms, min_ratio * L0) + U(extra_ms)`` so every
    planted cell satisfies both S0 >= min_inflation_ms and S0/L0 >= min_ratio.
    """

    count: int = 10
    min_ratio: float = 1.5
    min_inflation_ms: float = 10.0
    extra_ms: tuple = (10.0, 30.0)


@dataclass
class SyntheticSpec:
    n_sources: int
    n_prefixes: int
    row_clusters: list
    col_clusters: list
    mean_low_ms: float = 2.0
    mean_high_ms: float = 40.0
    cluster_means: Optional[list] = None
    jitter_ms: float = 0.5
    anomalies: list = field(default_factory=list)
    random_anomalies: Optional[RandomAnomalies] = None
    missing_fraction: float = 0.0
    missing_avoids_anomalies: bool = True
    seed: int = 0

    def __post_init__(self):
        self.row_clusters = [c if isinstance(c, Cluster) else Cluster(**c) for c in self.row_clusters]
        self.col_clusters = [c if isinstance(c, Cluster) else Cluster(**c) for c in self.col_clusters]
        if isinstance(self.random_anomalies, dict):
            ra = dict(self.random_anomalies)
            if "extra_ms" in ra:
                ra["extra_ms"] = tuple(ra["extra_ms"])
            self.random_anomalies = RandomAnomalies(**ra)
        self.anomalies = [tuple(a) for a in self.anomalies]
        self.validate()

    def validate(self):
        p = []
        if self.n_sources < 1 or self.n_prefixes < 1:
            p.append("n_sources and n_prefixes must be positive")
        if not self.row_clusters or not self.col_clusters:
            p.append("need at least one row and one column cluster")
        if sum(c.members for c in self.row_clusters) != self.n_sources:
            p.append("row cluster member counts do not sum to n_sources")
        if sum(c.members for c in self.col_clusters) != self.n_prefixes:
            p.append("column cluster member counts do not sum to n_prefixes")
        if any(c.members < 1 for c in self.row_clusters + self.col_clusters):
            p.append("every cluster needs at least one member")
        for c in self.row_clusters + self.col_clusters:
            try:
                c.tag
            except ValueError as exc:
                p.append(f"cluster {c}: {exc}")
        if self.jitter_ms < 0:
            p.append("jitter_ms must be >= 0")
        if self.cluster_means is not None:
            means = np.asarray(self.cluster_means, dtype=float)
            if means.shape != (len(self.row_clusters), len(self.col_clusters)):
                p.append(f"cluster_means must be {len(self.row_clusters)}x{len(self.col_clusters)}")
            elif not np.all(means > self.jitter_ms):
                p.append("cluster means must exceed jitter_ms so every RTT stays positive")
        elif not (self.mean_high_ms >= self.mean_low_ms > self.jitter_ms):
            p.append("need mean_high_ms >= mean_low_ms > jitter_ms")
        for a in self.anomalies:
            if len(a) != 3:
                p.append(f"anomaly {a} must be (row, col, inflation_ms)")
                continue
            i, j, v = a
            if not (0 <= i < self.n_sources and 0 <= j < self.n_prefixes):
                p.append(f"anomaly cell ({i}, {j}) outside the matrix")
            if not v > 0:
                p.append(f"anomaly at ({i}, {j}) must have positive inflation")
        ra = self.random_anomalies
        if ra is not None:
            if ra.count < 0 or ra.min_ratio < 0 or ra.min_inflation_ms < 0:
                p.append("random_anomalies fields must be non-negative")
            if len(ra.extra_ms) != 2 or ra.extra_ms[0] > ra.extra_ms[1] or ra.extra_ms[0] < 0:
                p.append("random_anomalies.extra_ms must be [low, high] with 0 <= low <= high")
            if ra.min_inflation_ms + ra.extra_ms[0] <= 0:
                p.append("random anomalies must have positive inflation")
        if not 0 <= self.missing_fraction < 1:
            p.append("missing_fraction must be in [0, 1)")
        if p:
            raise InvalidSpecError("; ".join(p))

    def to_dict(self):
        d = asdict(self)
        d["anomalies"] = [list(a) for a in self.anomalies]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("sweep", None)
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpecError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise InvalidSpecError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class GroundTruth:
    L0: np.ndarray
    S0: np.ndarray
    anomalies: frozenset
    mask0: np.ndarray
    planted_rank: int


class DetectionScore(NamedTuple):
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float


def split_evenly(total, k):
    sizes = [total // k] * k
    for i in range(total % k):
        sizes[i] += 1
    return sizes


_FR_CITIES = ["Paris", "Aubervilliers", "Lyon", "Marseille", "Toulouse", "Lille", "Bordeaux",
              "Nantes", "Strasbourg", "Rennes", "Nice", "Grenoble", "Montpellier"]
_FR_ASNS = [3215, 5511, 12322, 13193, 20940, 34164, 15557, 21502, 8228, 12876, 16276, 29075]


def fr_clusters(k, total, asn_offset=0):
    """``k`` distinct French (asn, city) clusters splitting ``total`` members."""
    out = []
    for c, size in enumerate(split_evenly(total, k)):
        city = _FR_CITIES[c % len(_FR_CITIES)]
        asn = _FR_ASNS[(c // len(_FR_CITIES) + asn_offset) % len(_FR_ASNS)]
        out.append(Cluster(asn, city, "FR", "EU", size))
    return out


def fr_like_spec(seed=0, n_sources=47, n_prefixes=80, row_clusters=26, col_clusters=26,
                 n_anomalies=10, jitter_ms=0.5, missing_fraction=0.0, **kw):
    """A country-level delay space shaped like a 47-server x 80-prefix matrix."""
    return SyntheticSpec(
        n_sources=n_sources, n_prefixes=n_prefixes,
        row_clusters=fr_clusters(row_clusters, n_sources),
        col_clusters=fr_clusters(col_clusters, n_prefixes, asn_offset=5),
        jitter_ms=jitter_ms,
        random_anomalies=RandomAnomalies(count=n_anomalies) if n_anomalies else None,
        missing_fraction=missing_fraction, seed=seed, **kw,
    )


def _prefix_id(j):
    return f"10.{j // 256}.{j % 256}.0/24"


def generate(spec):
    """Draw a (LatencyMatrix, GroundTruth) pair; fully determined by ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    kr, kc = len(spec.row_clusters), len(spec.col_clusters)
    m, n = spec.n_sources, spec.n_prefixes
    if spec.cluster_means is not None:
        means = np.asarray(spec.cluster_means, dtype=float)
    else:
        means = rng.uniform(spec.mean_low_ms, spec.mean_high_ms, (kr, kc))
    r = np.repeat(np.arange(kr), [c.members for c in spec.row_clusters])
    c = np.repeat(np.arange(kc), [cl.members for cl in spec.col_clusters])
    base = means[r][:, c]
    L0 = base + rng.uniform(-spec.jitter_ms, spec.jitter_ms, (m, n))

    S0 = np.zeros((m, n))
    for i, j, v in spec.anomalies:
        if S0[i, j] == 0:
            S0[i, j] = v
    ra = spec.random_anomalies
    if ra is not None and ra.count:
        free = np.flatnonzero(S0.ravel() == 0)
        if ra.count > free.size:
            raise InvalidSpecError("more random anomalies than free cells")
        cells = rng.choice(free, ra.count, replace=False)
        lo, hi = ra.extra_ms
        for f in cells:
            S0.flat[f] = max(ra.min_inflation_ms, ra.min_ratio * L0.flat[f]) + rng.uniform(lo, hi)

    eligible = np.flatnonzero(S0.ravel() == 0) if spec.missing_avoids_anomalies else np.arange(m * n)
    n_missing = int(round(spec.missing_fraction * m * n))
    if n_missing > eligible.size:
        raise InvalidSpecError("missing_fraction too large for the cells left after anomalies")
    mask0 = np.ones((m, n), dtype=bool)
    if n_missing:
        mask0.flat[rng.choice(eligible, n_missing, replace=False)] = False

    X = L0 + S0
    row_ids = [f"s{i + 1:02d}" for i in range(m)]
    col_ids = [_prefix_id(j) for j in range(n)]
    row_tags = [spec.row_clusters[k].tag for k in r]
    col_tags = [spec.col_clusters[k].tag for k in c]
    matrix = LatencyMatrix(np.where(mask0, X, 0.0), np.where(mask0, OBSERVED, MISSING),
                           row_ids, col_ids, row_tags, col_tags, "prefix", f"synth-{spec.seed}")
    anomalies = frozenset(zip(*map(lambda a: a.tolist(), np.nonzero(S0 > 0))))
    truth = GroundTruth(L0, S0, anomalies, mask0, numerical_rank(base))
    return matrix, truth


def score_detection(candidates, truth, min_inflation_ms=0.0):
    """Precision/recall of flagged cells against planted anomalies.

    Only anomalies with S0 >= ``min_inflation_ms`` must be found; flagging a
    smaller planted anomaly is neither a hit nor a false alarm.  Empty
    ratios (0/0) count as 1.
    """
    flagged = {(c.row_index, c.col_index) if hasattr(c, "row_index") else tuple(c) for c in candidates}
    qualifying = {a for a in truth.anomalies if truth.S0[a] >= min_inflation_ms}
    tp = len(flagged & qualifying)
    fp = len(flagged - truth.anomalies)
    fn = len(qualifying - flagged)
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return DetectionScore(tp, fp, fn, precision, recall)


def baseline_two_sigma(X, scope="column"):
    """Flag cells more than two standard deviations above their peers.

    Peers are the other filled cells of the same column (same prefix, other
    sources) or, with ``scope="row"``, of the same row.  The cell itself is
    left out of its peers' mean and deviation.  Scopes with fewer than three
    filled cells are skipped.
    """
    if scope not in ("row", "column"):
        raise InvalidInputError(f"scope must be 'row' or 'column', got {scope!r}")
    values = np.ascontiguousarray(X.values)
    filled = np.ascontiguousarray(X.filled_mask)
    if scope == "row":
        flags = _kernels.loo_two_sigma(np.ascontiguousarray(values.T), np.ascontiguousarray(filled.T), 3).T
    else:
        flags = _kernels.loo_two_sigma(values, filled, 3)
    cands = []
    for i, j in zip(*np.nonzero(flags)):
        if scope == "row":
            peers, keep = X.values[i, :], filled[i, :].copy()
            keep[j] = False
        else:
            peers, keep = X.values[:, j], filled[:, j].copy()
            keep[i] = False
        mean = float(peers[keep].mean())
        x = float(X.values[i, j])
        cands.append(AnomalyCandidate(
            X.row_ids[i], X.col_ids[j], x, mean, x - mean, (x - mean) / max(mean, 0.1),
            frozenset({TWO_SIGMA}), bool(X.interpolated_mask[i, j]),
            row_index=int(i), col_index=int(j),
        ))
    return rank_candidates(cands, FilterConfig())


def energy_rank(X, energy=0.9):
    """Smallest k whose leading singular values hold ``energy`` of the total."""
    s = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
    total = np.sum(s ** 2)
    if total == 0:
        return 1
    return int(np.searchsorted(np.cumsum(s ** 2) / total, energy) + 1)


def baseline_pca(X, rank_k=None, cfg=None, absolute=False):
    """Plain PCA in place of RPCA: best rank-k fit, residual as inflation.

    ``rank_k`` defaults to the 90%-energy elbow.  The same ratio (and,
    optionally, absolute) filters are applied to the residual.
    """
    cfg = cfg or FilterConfig()
    values = np.asarray(X.values, dtype=float)
    m, n = values.shape
    if rank_k is None:
        rank_k = min(energy_rank(values), min(m, n) - 1)
    if not 1 <= rank_k < min(m, n):
        raise InvalidInputError(f"rank_k must be in [1, {min(m, n) - 1}], got {rank_k}")
    try:
        U, s, Vt = np.linalg.svd(values, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SVDFailureError(f"SVD did not converge: {exc}") from exc
    L = (U[:, :rank_k] * s[:rank_k]) @ Vt[:rank_k]
    S = values - L
    D = Decomposition(L, S, int(rank_k), 0, 0.0, 0.0, True)
    groups = [ratio_filter(D, X, cfg)]
    if absolute:
        groups.append(absolute_filter(D, X, cfg))
    return rank_candidates(merge_candidates(*groups), cfg)


class ScoreRow(NamedTuple):
    seed: int
    detector: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float


def run_detectors(matrix, truth, opts=None, cfg=None, interpolate=True, min_inflation_ms=0.0,
                  pca_rank=None):
    """Score the RPCA pipeline and both baselines on one planted matrix."""
    cfg = cfg or FilterConfig()
    X = interpolate_missing(matrix) if interpolate else matrix
    has_tags = all(t is not None for t in X.row_tags + X.col_tags)
    rpca_c = detect(X, opts, cfg, absolute=has_tags or cfg.abs_all).candidates
    sigma_c = baseline_two_sigma(X, "column")
    k = pca_rank if pca_rank is not None else truth.planted_rank
    k = max(1, min(k, min(X.shape) - 1))
    pca_c = baseline_pca(X, k, cfg, absolute=has_tags or cfg.abs_all)
    return {
        "rpca": score_detection(rpca_c, truth, min_inflation_ms),
        "two_sigma": score_detection(sigma_c, truth, min_inflation_ms),
        "pca": score_detection(pca_c, truth, min_inflation_ms),
    }


def run_benchmark(spec, seeds, opts=None, cfg=None, interpolate=True, min_inflation_ms=0.0):
    """Score all three detectors on ``spec`` regenerated under every seed."""
    rows = []
    base = spec.to_dict()
    for seed in seeds:
        s = SyntheticSpec.from_dict({**base, "seed": int(seed)})
        matrix, truth = generate(s)
        scores = run_detectors(matrix, truth, opts, cfg, interpolate, min_inflation_ms)
        for name in DETECTORS:
            rows.append(ScoreRow(int(seed), name, *scores[name]))
    return rows


SCORE_HEADER = ["seed", "detector", "tp", "fp", "fn", "precision", "recall"]


def write_scores(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_HEADER)
        for r in rows:
            w.writerow([r.seed, r.detector, r.tp, r.fp, r.fn, repr(r.precision), repr(r.recall)])


def to_measurements(matrix, ips_per_prefix=10, probes=3, seed=0):
    """Expand a prefix-level matrix into raw probes that aggregate back to it.

    Every measured cell gets ``ips_per_prefix`` destination IPs inside the
    column's prefix with ``probes`` probes each.  Exactly one probe of one IP
    carries the cell value; all others are slower.
    """
    rng = np.random.default_rng(seed)
    records = []
    for j, col in enumerate(matrix.col_ids):
        net = ipaddress.IPv4Network(col)
        hosts = [net.network_address + k + 1 for k in range(ips_per_prefix)]
        for i, src in enumerate(matrix.row_ids):
            if not matrix.mask[i, j]:
                continue
            v = float(matrix.values[i, j])
            fastest = rng.integers(ips_per_prefix)
            for h, ip in enumerate(hosts):
                base = v if h == fastest else v + rng.uniform(0.5, 5.0)
                exact = rng.integers(probes)
                for p in range(probes):
                    rtt = base if p == exact else base + rng.uniform(0.1, 3.0)
                    records.append(MeasurementRecord(src, ip, rtt, p + 1, True))
    return records


def write_measurements(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_HEADER)
        for r in records:
            rtt = "" if r.rtt_ms != r.rtt_ms else repr(r.rtt_ms)
            w.writerow([r.source_id, str(r.destination_ip), rtt, r.probe_index,
                        "true" if r.complete else "false"])
