"""Sparse symmetric entity-pair PMI matrix."""

import numpy as np

from ._binio import read_blob, write_blob
from .errors import ConfigError, CorruptFileError, DataError

PMI_FORMAT_VERSION = 1


class PmiMatrix:
    """Upper-triangular sparse PMI scores with symmetric lookup.

    Entries are stored once per canonical pair ``i < j``, sorted by
    ``(i, j)``. Absent pairs and the diagonal read as ``default`` (0.0).

    Attributes
    ----------
    n : int
        Number of entities.
    rows, cols : ndarray of int64
        Canonical pair coordinates, ``rows < cols``.
    values : ndarray of float64
    marginal : ndarray of float64, shape (n,)
        Per-entity co-occurrence mass.
    total : float
        Total pair-count mass.
    """

    default = 0.0

    def __init__(self, n, rows, cols, values, marginal, total):
        self.n = int(n)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        order = np.lexsort((cols, rows))
        self.rows, self.cols, self.values = rows[order], cols[order], values[order]
        self.keys = self.rows * self.n + self.cols
        self.marginal = np.asarray(marginal, dtype=np.float64)
        self.total = float(total)
        if np.any(self.rows >= self.cols):
            raise DataError("PMI entries must be canonical pairs with i < j")
        if not np.all(np.isfinite(self.values)):
            raise DataError("PMI entries must be finite")
        for arr in (self.rows, self.cols, self.values, self.keys, self.marginal):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        return (isinstance(other, PmiMatrix) and self.n == other.n and self.total == other.total
                and np.array_equal(self.rows, other.rows) and np.array_equal(self.cols, other.cols)
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.marginal, other.marginal))

    def lookup_many(self, i, j):
        """Vectorized symmetric lookup."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        if i.size and (min(i.min(), j.min()) < 0 or max(i.max(), j.max()) >= self.n):
            raise IndexError(f"entity id out of range [0, {self.n})")
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        out = np.full(np.broadcast(lo, hi).shape, self.default, dtype=np.float64)
        if len(self.keys):
            key = lo * self.n + hi
            pos = np.minimum(np.searchsorted(self.keys, key), len(self.keys) - 1)
            hit = (self.keys[pos] == key) & (lo != hi)
            out[hit] = self.values[pos[hit]]
        return out

    def contains_many(self, i, j):
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        if not len(self.keys):
            return np.zeros(lo.shape, dtype=bool)
        key = lo * self.n + hi
        pos = np.minimum(np.searchsorted(self.keys, key), len(self.keys) - 1)
        return (self.keys[pos] == key) & (lo != hi)

    def to_dense(self):
        """Symmetric dense ``(n, n)`` matrix; test/small-n use only."""
        dense = np.zeros((self.n, self.n))
        dense[self.rows, self.cols] = self.values
        dense[self.cols, self.rows] = self.values
        return dense


def lookup(pmi, i, j):
    """PMI of the unordered pair ``(i, j)``; 0.0 when absent or ``i == j``."""
    for x in (i, j):
        if not 0 <= x < pmi.n:
            raise IndexError(f"entity id {x} out of range [0, {pmi.n})")
    return float(pmi.lookup_many(i, j))


def compute_pmi(records, n_entities, smoothing=0.0, clip_negative=False):
    """Build a :class:`PmiMatrix` from co-occurrence records.

    For each recorded pair, ``p_ij = log(c_ij * C / (c_i * c_j))`` with
    ``c_ij`` the (smoothed) pair count, ``c_i`` the summed count of all pairs
    touching ``i`` and ``C`` the summed count over all pairs. Smoothing is
    added to every recorded pair before marginals are taken.
    """
    if smoothing < 0:
        raise ConfigError(f"smoothing must be non-negative, got {smoothing}")
    recs = np.asarray([tuple(r) for r in records], dtype=np.float64).reshape(-1, 3)
    if len(recs) == 0 or not np.any(recs[:, 2] > 0):
        raise DataError("no co-occurrences: at least one record with positive count is required")
    a = recs[:, 0].astype(np.int64)
    b = recs[:, 1].astype(np.int64)
    i, j = np.minimum(a, b), np.maximum(a, b)
    if np.any(i == j):
        raise DataError("self-pairs are not allowed in co-occurrence records")
    if i.min() < 0 or j.max() >= n_entities:
        raise DataError("co-occurrence entity id out of range")
    key = i * n_entities + j
    if len(np.unique(key)) != len(key):
        raise DataError("duplicate co-occurrence pair")
    counts = recs[:, 2]
    keep = counts > 0
    i, j, counts = i[keep], j[keep], counts[keep] + smoothing
    marginal = np.bincount(i, weights=counts, minlength=n_entities) \
        + np.bincount(j, weights=counts, minlength=n_entities)
    total = counts.sum()
    values = np.log(counts * total / (marginal[i] * marginal[j]))
    if clip_negative:
        values = np.maximum(values, 0.0)
    return PmiMatrix(n_entities, i, j, values, marginal, total)


def save_pmi(pmi, path):
    meta = {"n": pmi.n, "entries": len(pmi), "total": pmi.total}
    write_blob(path, "pmi", PMI_FORMAT_VERSION, meta,
               {"rows": pmi.rows, "cols": pmi.cols, "values": pmi.values,
                "marginal": pmi.marginal})


def load_pmi(path):
    meta, arrays = read_blob(path, "pmi", PMI_FORMAT_VERSION)
    try:
        pmi = PmiMatrix(meta["n"], arrays["rows"], arrays["cols"], arrays["values"],
                        arrays["marginal"], meta["total"])
    except KeyError as exc:
        raise CorruptFileError(f"{path}: missing field {exc}") from None
    if len(pmi) != meta["entries"]:
        raise CorruptFileError(f"{path}: entry count mismatch")
    return pmi


def export_pmi_tsv(pmi, path, names=None):
    """Write ``i<TAB>j<TAB>pmi`` lines; ``names`` swaps ids for symbols."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, v in zip(pmi.rows.tolist(), pmi.cols.tolist(), pmi.values.tolist()):
            if names is not None:
                i, j = names[i], names[j]
            fh.write(f"{i}\t{j}\t{v!r}\n")
