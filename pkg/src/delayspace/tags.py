"""Endpoint feature tags: (ASN, city, country, continent)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .errors import FormatError, TagDataError

CONTINENTS = frozenset({"AF", "AS", "EU", "NA", "OC", "SA", "AN"})

# Transcontinental countries accept either side.
_ALSO = {
    "RU": {"AS"}, "TR": {"EU"}, "KZ": {"EU"}, "AZ": {"EU"}, "GE": {"EU"},
    "AM": {"EU"}, "CY": {"AS"}, "EG": {"AS"}, "PA": {"SA"}, "TT": {"SA"},
}

SOURCE_TAG_HEADER = ["source_id", "asn", "city", "country", "continent"]
DEST_TAG_HEADER = ["prefix_or_ip", "asn", "city", "country", "continent"]


@lru_cache(maxsize=1)
def country_continents():
    """ISO-3166 alpha-2 code -> continent code, from the shipped table."""
    text = resources.files("delayspace").joinpath("data/country_continent.csv").read_text()
    reader = csv.DictReader(io.StringIO(text))
    return {row["country"]: row["continent"] for row in reader}


@dataclass(frozen=True, order=True)
class EndpointTag:
    asn: int
    city: str
    country: str
    continent: str

    def __post_init__(self):
        if int(self.asn) != self.asn or self.asn <= 0:
            raise ValueError(f"asn must be a positive integer, got {self.asn!r}")
        if self.continent not in CONTINENTS:
            raise ValueError(f"unknown continent code {self.continent!r}")
        table = country_continents()
        if self.country not in table:
            raise ValueError(f"unknown country code {self.country!r}")
        allowed = {table[self.country]} | _ALSO.get(self.country, set())
        if self.continent not in allowed:
            raise ValueError(
                f"country {self.country} is in {table[self.country]}, not {self.continent}"
            )

    @property
    def group(self):
        """Key of the (AS, location) donor/feature group."""
        return (self.asn, self.city)


def _read_tag_rows(fh, header):
    reader = csv.reader(fh)
    try:
        first = next(reader)
    except StopIteration:
        raise FormatError("tag file is empty") from None
    if [h.strip() for h in first] != header:
        raise FormatError(f"expected header {','.join(header)}, got {','.join(first)}")
    tags = {}
    problems = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            problems.append(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            continue
        key, asn, city, country, continent = (c.strip() for c in row)
        try:
            tags[key] = EndpointTag(int(asn), city, country.upper(), continent.upper())
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")
    if problems:
        raise FormatError("; ".join(problems))
    return tags


def read_source_tags(path):
    """``source_id,asn,city,country,continent`` -> {source_id: EndpointTag}."""
    with open(path, newline="", encoding="utf-8") as fh:
        return _read_tag_rows(fh, SOURCE_TAG_HEADER)


def read_dest_tags(path):
    """``prefix_or_ip,asn,city,country,continent`` -> {key: EndpointTag}."""
    with open(path, newline="", encoding="utf-8") as fh:
        return _read_tag_rows(fh, DEST_TAG_HEADER)


def write_tags(path, tags, header):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for key, t in tags.items():
            w.writerow([key, t.asn, t.city, t.country, t.continent])


def require_tags(ids, tags, what):
    """Return tags aligned with ``ids``; raise listing every id without one."""
    missing = [i for i, t in zip(ids, tags) if t is None]
    if missing:
        raise TagDataError(f"{what} tags missing for: {', '.join(map(str, missing))}", missing)
    return tags
