"""Latency matrices: construction from probes, donor interpolation, CSV I/O."""

from __future__ import annotations

import csv
import ipaddress
import math
import os
import re
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyMatrixError, FormatError, InvalidInputError

MISSING, OBSERVED, INTERPOLATED = 0, 1, 2
STATE_CODES = {MISSING: "M", OBSERVED: "O", INTERPOLATED: "I"}
_CODE_STATES = {v: k for k, v in STATE_CODES.items()}


def natural_key(s):
    """Sort key that orders ``s2`` before ``s10``."""
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", str(s))]


@dataclass(frozen=True, eq=False)
class LatencyMatrix:
    """Dense RTT grid (ms) with a per-cell state and per-axis metadata.

    ``state`` holds MISSING / OBSERVED / INTERPOLATED codes.  Missing cells
    carry 0.0 in ``values`` and must never be read as data.  Arrays are
    stored read-only.
    """

    values: np.ndarray
    state: np.ndarray
    row_ids: tuple
    col_ids: tuple
    row_tags: tuple = None
    col_tags: tuple = None
    level: str = "prefix"
    name: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        state = np.array(self.state, dtype=np.int8)
        if values.ndim != 2 or values.shape != state.shape:
            raise InvalidInputError(f"values {values.shape} and state {state.shape} disagree")
        m, n = values.shape
        row_ids = tuple(self.row_ids)
        col_ids = tuple(self.col_ids)
        row_tags = tuple(self.row_tags) if self.row_tags is not None else (None,) * m
        col_tags = tuple(self.col_tags) if self.col_tags is not None else (None,) * n
        if not (len(row_ids) == len(row_tags) == m and len(col_ids) == len(col_tags) == n):
            raise InvalidInputError("row/column id or tag lists do not match the matrix shape")
        if not np.isin(state, (MISSING, OBSERVED, INTERPOLATED)).all():
            raise InvalidInputError("unknown cell state code")
        filled = state != MISSING
        if not np.all(np.isfinite(values[filled])):
            raise InvalidInputError("non-finite value in an observed cell")
        if self.level not in ("ip", "prefix"):
            raise InvalidInputError(f"level must be 'ip' or 'prefix', got {self.level!r}")
        values[~filled] = 0.0
        values.setflags(write=False)
        state.setflags(write=False)
        set_ = object.__setattr__
        set_(self, "values", values)
        set_(self, "state", state)
        set_(self, "row_ids", row_ids)
        set_(self, "col_ids", col_ids)
        set_(self, "row_tags", row_tags)
        set_(self, "col_tags", col_tags)

    @classmethod
    def from_array(cls, values, mask=None, row_ids=None, col_ids=None, **kw):
        """Wrap a plain array; ``mask`` (True = observed) defaults to all-observed."""
        values = np.asarray(values, dtype=np.float64)
        m, n = values.shape
        if mask is None:
            mask = np.ones((m, n), dtype=bool)
        state = np.where(np.asarray(mask, dtype=bool), OBSERVED, MISSING)
        if row_ids is None:
            row_ids = [f"r{i}" for i in range(m)]
        if col_ids is None:
            col_ids = [f"c{j}" for j in range(n)]
        return cls(np.where(state == OBSERVED, values, 0.0), state, row_ids, col_ids, **kw)

    @property
    def shape(self):
        return self.values.shape

    @property
    def mask(self):
        """True where the cell was measured."""
        return self.state == OBSERVED

    @property
    def filled_mask(self):
        """True where the cell holds usable data (measured or interpolated)."""
        return self.state != MISSING

    @property
    def interpolated_mask(self):
        return self.state == INTERPOLATED

    @property
    def missing_fraction(self):
        return float(np.mean(self.state == MISSING)) if self.values.size else 0.0

    def missing_cells(self):
        ii, jj = np.nonzero(self.state == MISSING)
        return [(self.row_ids[i], self.col_ids[j]) for i, j in zip(ii, jj)]

    def submatrix(self, rows, cols, name=""):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        return LatencyMatrix(
            self.values[np.ix_(rows, cols)],
            self.state[np.ix_(rows, cols)],
            [self.row_ids[i] for i in rows],
            [self.col_ids[j] for j in cols],
            [self.row_tags[i] for i in rows],
            [self.col_tags[j] for j in cols],
            self.level,
            name,
        )

    def renamed(self, name):
        return LatencyMatrix(self.values, self.state, self.row_ids, self.col_ids,
                             self.row_tags, self.col_tags, self.level, name)

    def with_tags(self, row_tags=None, col_tags=None):
        return LatencyMatrix(self.values, self.state, self.row_ids, self.col_ids,
                             row_tags if row_tags is not None else self.row_tags,
                             col_tags if col_tags is not None else self.col_tags,
                             self.level, self.name)


# --------------------------------------------------------------------------
# construction


def _scatter(records, row_index, col_of, m, n):
    rows, cols, vals = [], [], []
    for r in records:
        j = col_of(r)
        i = row_index.get(r.source_id)
        if j is None or i is None:
            continue
        rows.append(i)
        cols.append(j)
        vals.append(r.rtt_ms)
    grid = _kernels.group_min(
        np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64),
        np.asarray(vals, dtype=np.float64), m, n,
    )
    seen = np.isfinite(grid)
    return np.where(seen, grid, 0.0), np.where(seen, OBSERVED, MISSING)


def _ip_ints(records):
    return np.fromiter((int(r.destination_ip) for r in records), dtype=np.uint32, count=len(records))


def build_ip_matrix(records, prefix, table, source_tags=None, dest_tags=None):
    """Sources x individual destination IPs inside ``prefix``.

    Columns are the distinct IPs whose longest match in ``table`` is
    ``prefix``; sources with no measurement to any of them are left out.
    """
    prefix = ipaddress.IPv4Network(prefix, strict=False)
    records = [r for r in records if r.complete and math.isfinite(r.rtt_ms)]
    if prefix not in table:
        raise InvalidInputError(f"{prefix} is not in the prefix table")
    hit = table.lookup_many(_ip_ints(records)) if records else np.empty(0, dtype=np.int64)
    target = table._index[prefix]
    mine = [r for r, k in zip(records, hit) if k == target]
    if not mine:
        raise EmptyMatrixError(f"no measured destination IP maps to {prefix}")
    ips = sorted({r.destination_ip for r in mine})
    sources = sorted({r.source_id for r in mine}, key=natural_key)
    col_index = {ip: j for j, ip in enumerate(ips)}
    row_index = {s: i for i, s in enumerate(sources)}
    values, state = _scatter(mine, row_index, lambda r: col_index[r.destination_ip],
                             len(sources), len(ips))
    source_tags = source_tags or {}
    dest_tags = dest_tags or {}
    col_tags = [dest_tags.get(str(ip), dest_tags.get(str(prefix))) for ip in ips]
    return LatencyMatrix(values, state, sources, [str(ip) for ip in ips],
                         [source_tags.get(s) for s in sources], col_tags, "ip", str(prefix))


def aggregate_to_prefix(records, table, source_tags=None, dest_tags=None, min_ips=10):
    """Sources x prefixes, each cell the fastest RTT to any IP of the prefix.

    Only prefixes with at least ``min_ips`` distinct measured IPs become
    columns.  A (source, prefix) cell with no probes is MISSING.
    """
    if int(min_ips) != min_ips or min_ips < 1:
        raise InvalidInputError(f"min_ips must be a positive integer, got {min_ips}")
    records = [r for r in records if r.complete and math.isfinite(r.rtt_ms)]
    hit = table.lookup_many(_ip_ints(records)) if records else np.empty(0, dtype=np.int64)
    ips_per_prefix = {}
    for r, k in zip(records, hit):
        if k >= 0:
            ips_per_prefix.setdefault(int(k), set()).add(r.destination_ip)
    keep = sorted((k for k, ips in ips_per_prefix.items() if len(ips) >= min_ips),
                  key=lambda k: (int(table.prefixes[k].network_address), table.prefixes[k].prefixlen))
    col_index = {k: j for j, k in enumerate(keep)}
    pairs = [(r, col_index[int(k)]) for r, k in zip(records, hit) if int(k) in col_index]
    sources = sorted({r.source_id for r, _ in pairs}, key=natural_key)
    row_index = {s: i for i, s in enumerate(sources)}
    col_for = {id(r): j for r, j in pairs}
    values, state = _scatter([r for r, _ in pairs], row_index, lambda r: col_for[id(r)],
                             len(sources), len(keep))
    source_tags = source_tags or {}
    dest_tags = dest_tags or {}
    col_ids = [str(table.prefixes[k]) for k in keep]
    return LatencyMatrix(values, state, sources, col_ids,
                         [source_tags.get(s) for s in sources],
                         [dest_tags.get(c) for c in col_ids], "prefix")


def _group_codes(tags):
    codes = {}
    out = np.full(len(tags), -1, dtype=np.int64)
    for i, t in enumerate(tags):
        if t is not None:
            out[i] = codes.setdefault(t.group, len(codes))
    return out, len(codes)


def interpolate_missing(X):
    """Fill MISSING cells from their (AS, city) donor block.

    A missing (i, j) takes the minimum measured RTT from any row sharing
    row i's (asn, city) to any column sharing column j's (asn, city); row i
    itself counts as a donor.  Filled cells become INTERPOLATED.  Cells with
    no donor, or on an untagged row/column, stay MISSING and are listed by
    ``X.missing_cells()``.
    """
    rg, n_rg = _group_codes(X.row_tags)
    cg, n_cg = _group_codes(X.col_tags)
    if n_rg == 0 or n_cg == 0:
        return X
    table = _kernels.block_min(
        np.ascontiguousarray(X.values), np.ascontiguousarray(X.mask), rg, cg, n_rg, n_cg
    )
    donor = table[np.maximum(rg, 0)[:, None], np.maximum(cg, 0)[None, :]]
    fillable = (X.state == MISSING) & (rg[:, None] >= 0) & (cg[None, :] >= 0) & np.isfinite(donor)
    values = np.where(fillable, donor, X.values)
    state = np.where(fillable, INTERPOLATED, X.state)
    return LatencyMatrix(values, state, X.row_ids, X.col_ids, X.row_tags, X.col_tags, X.level, X.name)


# --------------------------------------------------------------------------
# CSV grid I/O


def mask_path_for(path):
    root, ext = os.path.splitext(os.fspath(path))
    return root + ".mask" + (ext or ".csv")


def _fmt(v):
    return repr(float(v))


def write_matrix(path, X, values=None, write_mask=True):
    """Write ``X`` (or an alternative ``values`` grid on X's axes) as CSV.

    Missing cells become empty fields.  With ``write_mask`` a companion
    ``<name>.mask.csv`` holds O/I/M codes.
    """
    grid = X.values if values is None else np.asarray(values)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *X.col_ids])
        for i, rid in enumerate(X.row_ids):
            cells = ["" if X.state[i, j] == MISSING and values is None else _fmt(grid[i, j])
                     for j in range(len(X.col_ids))]
            w.writerow([rid, *cells])
    if write_mask:
        with open(mask_path_for(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", *X.col_ids])
            for i, rid in enumerate(X.row_ids):
                w.writerow([rid, *(STATE_CODES[int(s)] for s in X.state[i])])


def _read_grid(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise FormatError(f"{path}: empty matrix file")
    header = rows[0]
    cols = header[1:]
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise FormatError(f"{path} line {lineno}: expected {len(header)} fields, got {len(r)}")
    return cols, [r[0] for r in rows[1:]], [r[1:] for r in rows[1:]]


def read_matrix(path, source_tags=None, dest_tags=None, level="prefix", name=""):
    """Read a CSV grid written by :func:`write_matrix` (companion mask optional).

    Without a mask file, non-empty cells are OBSERVED and empty ones MISSING.
    """
    cols, rids, cells = _read_grid(path)
    m, n = len(rids), len(cols)
    values = np.zeros((m, n))
    state = np.full((m, n), OBSERVED, dtype=np.int8)
    problems = []
    for i, row in enumerate(cells):
        for j, c in enumerate(row):
            c = c.strip()
            if not c:
                state[i, j] = MISSING
                continue
            try:
                values[i, j] = float(c)
            except ValueError:
                problems.append(f"row {rids[i]} col {cols[j]}: bad number {c!r}")
                continue
            if not math.isfinite(values[i, j]):
                problems.append(f"row {rids[i]} col {cols[j]}: non-finite value")
    mpath = mask_path_for(path)
    if os.path.exists(mpath):
        mcols, mrids, codes = _read_grid(mpath)
        if mcols != cols or mrids != rids:
            raise FormatError(f"{mpath}: ids do not match {path}")
        for i, row in enumerate(codes):
            for j, c in enumerate(row):
                code = _CODE_STATES.get(c.strip())
                if code is None:
                    problems.append(f"{mpath}: bad mask code {c!r}")
                    continue
                if code != MISSING and state[i, j] == MISSING:
                    problems.append(f"row {rids[i]} col {cols[j]}: mask says {c} but cell is empty")
                state[i, j] = code
    if problems:
        raise FormatError("; ".join(problems))
    if m == 0 or n == 0:
        raise EmptyMatrixError(f"{path}: matrix has no rows or no columns")
    source_tags = source_tags or {}
    dest_tags = dest_tags or {}
    return LatencyMatrix(values, state, rids, cols,
                         [source_tags.get(r) for r in rids],
                         [dest_tags.get(c) for c in cols], level, name)
