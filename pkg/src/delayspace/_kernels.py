"""Hot loops, compiled with numba when available.

Every kernel has two implementations with the same signature: a loop version
compiled with ``numba.njit`` and a vectorised numpy version.  The numpy path is
used when numba is missing or when ``DELAYSPACE_NO_NUMBA`` is set to a truthy
value before import.  Both are always importable as ``<name>_numba`` /
``<name>_numpy`` so tests can check they agree.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("DELAYSPACE_NO_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# entrywise shrinkage


@_njit
def shrink_numba(M, tau):
    out = np.empty_like(M)
    m, n = M.shape
    for i in range(m):
        for j in range(n):
            x = M[i, j]
            if x > tau:
                out[i, j] = x - tau
            elif x < -tau:
                out[i, j] = x + tau
            else:
                out[i, j] = 0.0
    return out


def shrink_numpy(M, tau):
    return np.sign(M) * np.maximum(np.abs(M) - tau, 0.0)


# --------------------------------------------------------------------------
# scatter-min of (row, col, value) triples into a dense grid


@_njit
def group_min_numba(rows, cols, vals, m, n):
    out = np.full((m, n), np.inf)
    for k in range(rows.shape[0]):
        i = rows[k]
        j = cols[k]
        if vals[k] < out[i, j]:
            out[i, j] = vals[k]
    return out


def group_min_numpy(rows, cols, vals, m, n):
    out = np.full((m, n), np.inf)
    np.minimum.at(out, (rows, cols), vals)
    return out


# --------------------------------------------------------------------------
# donor-block minimum used by missing-value interpolation.
# groups < 0 mean "untagged": never a donor, never filled.


@_njit
def block_min_numba(values, observed, row_group, col_group, n_rg, n_cg):
    table = np.full((n_rg, n_cg), np.inf)
    m, n = values.shape
    for i in range(m):
        g = row_group[i]
        if g < 0:
            continue
        for j in range(n):
            h = col_group[j]
            if h < 0 or not observed[i, j]:
                continue
            if values[i, j] < table[g, h]:
                table[g, h] = values[i, j]
    return table


def block_min_numpy(values, observed, row_group, col_group, n_rg, n_cg):
    table = np.full((n_rg, n_cg), np.inf)
    ok = observed & (row_group[:, None] >= 0) & (col_group[None, :] >= 0)
    ii, jj = np.nonzero(ok)
    if ii.size:
        np.minimum.at(table, (row_group[ii], col_group[jj]), values[ii, jj])
    return table


# --------------------------------------------------------------------------
# longest-prefix match over a flat binary trie.
# child0/child1[node] -> child node or -1; entry[node] -> table index or -1.


@_njit
def trie_lookup_numba(ips, child0, child1, entry):
    out = np.full(ips.shape[0], -1, dtype=np.int64)
    for k in range(ips.shape[0]):
        ip = np.uint32(ips[k])
        node = 0
        best = entry[0]
        for depth in range(32):
            bit = (ip >> np.uint32(31 - depth)) & np.uint32(1)
            if bit == 0:
                node = child0[node]
            else:
                node = child1[node]
            if node < 0:
                break
            if entry[node] >= 0:
                best = entry[node]
        out[k] = best
    return out


def trie_lookup_numpy(ips, child0, child1, entry):
    ips = ips.astype(np.uint32)
    node = np.zeros(ips.shape[0], dtype=np.int64)
    best = np.full(ips.shape[0], entry[0], dtype=np.int64)
    alive = np.ones(ips.shape[0], dtype=bool)
    for depth in range(32):
        bit = (ips >> np.uint32(31 - depth)) & np.uint32(1)
        nxt = np.where(bit == 0, child0[node], child1[node])
        alive &= nxt >= 0
        if not alive.any():
            break
        node = np.where(alive, nxt, 0)
        hit = alive & (entry[node] >= 0)
        best = np.where(hit, entry[node], best)
    return best


# --------------------------------------------------------------------------
# leave-one-out 2-sigma test along columns (transpose the inputs for rows).
# Returns a boolean flag grid; cells whose column has < min_count observed
# entries (self included) are never flagged.


@_njit
def loo_two_sigma_numba(values, observed, min_count):
    m, n = values.shape
    flags = np.zeros((m, n), dtype=np.bool_)
    for j in range(n):
        cnt = 0
        mean = 0.0
        m2 = 0.0
        for i in range(m):
            if observed[i, j]:
                cnt += 1
                d = values[i, j] - mean
                mean += d / cnt
                m2 += d * (values[i, j] - mean)
        if cnt < min_count:
            continue
        for i in range(m):
            if not observed[i, j]:
                continue
            x = values[i, j]
            k = cnt - 1
            mean_o = (cnt * mean - x) / k
            m2_o = m2 - (x - mean) * (x - mean) * cnt / k
            if m2_o < 0.0:
                m2_o = 0.0
            sd_o = np.sqrt(m2_o / k)
            if x > mean_o + 2.0 * sd_o + 1e-9 * abs(mean_o):
                flags[i, j] = True
    return flags


def loo_two_sigma_numpy(values, observed, min_count):
    obs = observed.astype(np.float64)
    cnt = obs.sum(axis=0)
    safe = np.maximum(cnt, 1.0)
    x = np.where(observed, values, 0.0)
    mean = x.sum(axis=0) / safe
    m2 = (np.where(observed, values - mean, 0.0) ** 2).sum(axis=0)
    k = np.maximum(cnt - 1.0, 1.0)
    mean_o = (cnt * mean - x) / k
    m2_o = np.maximum(m2 - (x - mean) ** 2 * cnt / k, 0.0)
    sd_o = np.sqrt(m2_o / k)
    flags = x > mean_o + 2.0 * sd_o + 1e-9 * np.abs(mean_o)
    return flags & observed & (cnt >= min_count)[None, :]


if USE_NUMBA:
    shrink = shrink_numba
    group_min = group_min_numba
    block_min = block_min_numba
    trie_lookup = trie_lookup_numba
    loo_two_sigma = loo_two_sigma_numba
else:
    shrink = shrink_numpy
    group_min = group_min_numpy
    block_min = block_min_numpy
    trie_lookup = trie_lookup_numpy
    loo_two_sigma = loo_two_sigma_numpy
