"""IPv4 prefix table with longest-prefix match over a binary trie."""

from __future__ import annotations

import ipaddress

import numpy as np

from . import _kernels
from .errors import FormatError


class PrefixTable:
    """Set of IPv4 CIDR prefixes, each with an optional origin ASN.

    The trie is stored as three flat arrays (``child0``, ``child1``, ``entry``)
    so batch lookups can run in a compiled kernel.
    """

    def __init__(self, entries=()):
        self.prefixes = []
        self.origins = []
        self._index = {}
        child0, child1, entry = [-1], [-1], [-1]
        for net, origin in entries:
            net = ipaddress.IPv4Network(net, strict=False)
            if net in self._index:
                k = self._index[net]
                if self.origins[k] is None and origin is not None:
                    self.origins[k] = origin
                continue
            k = len(self.prefixes)
            self._index[net] = k
            self.prefixes.append(net)
            self.origins.append(origin)

            addr = int(net.network_address)
            node = 0
            for depth in range(net.prefixlen):
                bit = (addr >> (31 - depth)) & 1
                kids = child1 if bit else child0
                if kids[node] < 0:
                    kids[node] = len(entry)
                    child0.append(-1)
                    child1.append(-1)
                    entry.append(-1)
                node = kids[node]
            entry[node] = k
        self._child0 = np.asarray(child0, dtype=np.int64)
        self._child1 = np.asarray(child1, dtype=np.int64)
        self._entry = np.asarray(entry, dtype=np.int64)

    def __len__(self):
        return len(self.prefixes)

    def __iter__(self):
        return iter(zip(self.prefixes, self.origins))

    def __contains__(self, net):
        return ipaddress.IPv4Network(net, strict=False) in self._index

    @classmethod
    def from_lines(cls, lines):
        """Parse ``CIDR`` or ``CIDR,origin_asn`` lines; ``#`` starts a comment."""
        entries = []
        problems = []
        for lineno, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) > 2:
                problems.append(f"line {lineno}: too many fields")
                continue
            try:
                net = ipaddress.IPv4Network(parts[0], strict=False)
            except ValueError as exc:
                problems.append(f"line {lineno}: {exc}")
                continue
            origin = None
            if len(parts) == 2 and parts[1]:
                if not parts[1].isdigit() or int(parts[1]) == 0:
                    problems.append(f"line {lineno}: bad origin ASN {parts[1]!r}")
                    continue
                origin = int(parts[1])
            entries.append((net, origin))
        if problems:
            raise FormatError("; ".join(problems))
        return cls(entries)

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)

    def lookup_many(self, ips):
        """Vector of table indices (``-1`` = no covering prefix) for uint32 IPs."""
        ips = np.ascontiguousarray(ips, dtype=np.uint32)
        return _kernels.trie_lookup(ips, self._child0, self._child1, self._entry)

    def lookup(self, ip):
        """Longest matching prefix for ``ip``, or None."""
        k = int(self.lookup_many(np.array([int(ipaddress.IPv4Address(ip))]))[0])
        return self.prefixes[k] if k >= 0 else None

    def origin(self, net):
        return self.origins[self._index[ipaddress.IPv4Network(net, strict=False)]]


def lpm_map(ip, table):
    return table.lookup(ip)
