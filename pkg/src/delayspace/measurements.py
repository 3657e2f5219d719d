"""Probe records: CSV parsing and replicate collapsing."""

from __future__ import annotations

import csv
import io
import ipaddress
import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import FormatError

HEADER = ["source_id", "destination_ip", "rtt_ms", "probe_index", "complete"]
_TRUE = {"true", "1", "yes", "y", "t"}
_FALSE = {"false", "0", "no", "n", "f"}


@dataclass(frozen=True)
class MeasurementRecord:
    source_id: str
    destination_ip: ipaddress.IPv4Address
    rtt_ms: float
    probe_index: int
    complete: bool = True


class Reject(NamedTuple):
    line: int
    text: str
    reason: str


class ParseResult(NamedTuple):
    records: list
    rejects: list


def _parse_row(row):
    if len(row) != len(HEADER):
        raise ValueError(f"expected {len(HEADER)} fields, got {len(row)}")
    source, dest, rtt, probe, complete = (c.strip() for c in row)
    if not source:
        raise ValueError("empty source_id")
    try:
        ip = ipaddress.IPv4Address(dest)
    except ValueError:
        raise ValueError(f"bad IPv4 address {dest!r}") from None
    flag = complete.lower()
    if flag in _TRUE:
        is_complete = True
    elif flag in _FALSE:
        is_complete = False
    else:
        raise ValueError(f"bad complete flag {complete!r}")
    try:
        idx = int(probe)
    except ValueError:
        raise ValueError(f"bad probe index {probe!r}") from None
    if idx < 1:
        raise ValueError(f"probe index must be >= 1, got {idx}")
    if rtt == "" and not is_complete:
        value = math.nan
    else:
        try:
            value = float(rtt)
        except ValueError:
            raise ValueError(f"bad RTT {rtt!r}") from None
        if not math.isfinite(value):
            raise ValueError("non-finite RTT")
        if value <= 0:
            raise ValueError("non-positive RTT")
    return MeasurementRecord(source, ip, value, idx, is_complete)


def parse_measurements(stream):
    """Parse a measurements CSV.

    ``stream`` may be a binary or text file object, or a path.  Malformed rows
    do not abort the parse; they come back in ``rejects`` with a reason.
    Incomplete probes may leave ``rtt_ms`` empty.
    """
    if isinstance(stream, (str, bytes)) or hasattr(stream, "__fspath__"):
        with open(stream, "rb") as fh:
            return parse_measurements(fh)
    data = stream.read()
    text = data.decode("utf-8-sig") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("measurements file is empty") from None
    if [h.strip() for h in header] != HEADER:
        raise FormatError(f"expected header {','.join(HEADER)}, got {','.join(header)}")
    records, rejects = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            records.append(_parse_row(row))
        except ValueError as exc:
            rejects.append(Reject(lineno, ",".join(row), str(exc)))
    return ParseResult(records, rejects)


def collapse_replicates(records):
    """Keep the fastest complete probe per (source, destination).

    Pairs whose probes are all incomplete are dropped.  Output is sorted by
    (source_id, destination_ip).
    """
    best = {}
    for r in records:
        if not r.complete:
            continue
        key = (r.source_id, r.destination_ip)
        cur = best.get(key)
        if cur is None or r.rtt_ms < cur.rtt_ms:
            best[key] = r
    return [best[k] for k in sorted(best)]
