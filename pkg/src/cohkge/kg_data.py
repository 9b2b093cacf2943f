"""Triple ingestion, vocabularies, known-triple index and relation categories."""

import hashlib
import json
import logging
from collections import Counter
from typing import Iterable, NamedTuple

import numpy as np

from .errors import CorruptFileError, ParseError, ValidationError, VersionError, VocabularyError

logger = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1


class Triple(NamedTuple):
    subject: int
    relation: int
    object: int


class CooccurrenceRecord(NamedTuple):
    entity_a: int
    entity_b: int
    count: int


class Vocab:
    """Bijection between symbols and contiguous ids, in first-appearance order.

    A frozen vocabulary raises :class:`VocabularyError` on unknown symbols
    instead of growing.
    """

    def __init__(self, names=(), kind="entity", frozen=False):
        self.kind = kind
        self.names = []
        self.index = {}
        self.frozen = False
        for name in names:
            self.add(name)
        self.frozen = frozen

    def add(self, name):
        idx = self.index.get(name)
        if idx is None:
            if self.frozen:
                raise VocabularyError(name, self.kind)
            idx = len(self.names)
            self.index[name] = idx
            self.names.append(name)
        return idx

    def get(self, name, default=None):
        return self.index.get(name, default)

    def freeze(self):
        self.frozen = True
        return self

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name):
        try:
            return self.index[name]
        except KeyError:
            raise VocabularyError(name, self.kind) from None

    def __contains__(self, name):
        return name in self.index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.names == other.names and self.kind == other.kind

    def __repr__(self):
        return f"Vocab({self.kind}, size={len(self)}, frozen={self.frozen})"


def _read_tsv3(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated fields, got {len(fields)}")
            yield lineno, fields


def load_triples(path, entities, relations):
    """Parse a ``subject<TAB>relation<TAB>object`` file.

    Returns an ``(N, 3)`` int64 array with duplicate lines removed (first
    occurrence wins). Mutable vocabularies are extended in place.
    """
    seen = set()
    rows = []
    for _, (s, r, o) in _read_tsv3(path):
        t = (entities.add(s), relations.add(r), entities.add(o))
        if t not in seen:
            seen.add(t)
            rows.append(t)
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


class KnownIndex:
    """Membership over a fixed set of triples via sorted int64 keys."""

    def __init__(self, triples, n_entities, n_relations):
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.keys = np.unique(self.encode(triples))

    def encode(self, triples):
        t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        n = self.n_entities
        return (t[:, 0] * self.n_relations + t[:, 1]) * n + t[:, 2]

    def contains(self, triples):
        """Vectorized membership test, one bool per row."""
        keys = self.encode(triples)
        if len(self.keys) == 0:
            return np.zeros(len(keys), dtype=bool)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == keys

    def __contains__(self, triple):
        return bool(self.contains([triple])[0])

    def __len__(self):
        return len(self.keys)


def _categories(triples, column, n_relations):
    out = []
    for r in range(n_relations):
        out.append(np.unique(triples[triples[:, 1] == r, column]))
    return out


class Dataset:
    """Immutable bundle of vocabularies, splits and derived indices.

    Attributes
    ----------
    entities, relations : Vocab
    train, valid, test : ndarray, shape (N, 3)
    known : KnownIndex
        Union of all three splits.
    object_category, subject_category : list of ndarray
        Sorted entity ids observed in each slot of each relation, over all splits.
    """

    def __init__(self, entities, relations, train, valid, test):
        self.entities = entities
        self.relations = relations
        self.train = np.asarray(train, dtype=np.int64).reshape(-1, 3)
        self.valid = np.asarray(valid, dtype=np.int64).reshape(-1, 3)
        self.test = np.asarray(test, dtype=np.int64).reshape(-1, 3)
        for arr in (self.train, self.valid, self.test):
            arr.setflags(write=False)
        everything = self.all_triples()
        self.known = KnownIndex(everything, self.n_entities, self.n_relations)
        self.object_category = _categories(everything, 2, self.n_relations)
        self.subject_category = _categories(everything, 0, self.n_relations)
        self._tables = {}

    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_relations(self):
        return len(self.relations)

    def split(self, name):
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise ValueError(f"unknown split {name!r}") from None

    def category_table(self, slot):
        """Flattened categories for vectorized draws: ``(members, offsets, sizes)``.

        ``slot`` is 0 (subject) or 2 (object).
        """
        if slot not in self._tables:
            cats = self.subject_category if slot == 0 else self.object_category
            sizes = np.array([len(c) for c in cats], dtype=np.int64)
            offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
            members = np.concatenate(cats) if cats else np.zeros(0, dtype=np.int64)
            self._tables[slot] = (members.astype(np.int64), offsets, sizes)
        return self._tables[slot]

    def fingerprint(self):
        """Stable digest of both vocabularies, used for model compatibility checks."""
        h = hashlib.sha256()
        for name in self.entities.names:
            h.update(name.encode() + b"\x00")
        h.update(b"\x01")
        for name in self.relations.names:
            h.update(name.encode() + b"\x00")
        return h.hexdigest()[:16]

    def all_triples(self):
        return np.concatenate([self.train, self.valid, self.test])

    def describe(self):
        return (f"{self.n_entities} entities, {self.n_relations} relations, "
                f"{len(self.train)}/{len(self.valid)}/{len(self.test)} train/valid/test triples")


def build_dataset(train, valid, test, entities, relations):
    """Validate split disjointness and assemble a :class:`Dataset`."""
    entities.freeze()
    relations.freeze()
    arrays = [np.asarray(x, dtype=np.int64).reshape(-1, 3) for x in (train, valid, test)]
    for arr in arrays:
        if len(arr) and (arr.min() < 0 or arr[:, [0, 2]].max() >= len(entities)
                         or arr[:, 1].max() >= len(relations)):
            raise ValidationError("triple ids out of vocabulary range")
    names = ("train", "valid", "test")
    sets = [set(map(tuple, a.tolist())) for a in arrays]
    dupes = []
    for a in range(3):
        for b in range(a + 1, 3):
            for t in sorted(sets[a] & sets[b]):
                dupes.append(f"{names[a]}&{names[b]}: {t}")
    if dupes:
        shown = "; ".join(dupes[:20])
        more = f" (+{len(dupes) - 20} more)" if len(dupes) > 20 else ""
        raise ValidationError(f"splits overlap in {len(dupes)} triples: {shown}{more}")
    return Dataset(entities, relations, *arrays)


def load_dataset(train_path, valid_path, test_path):
    """Load the three split files with a shared, first-appearance vocabulary."""
    entities, relations = Vocab(kind="entity"), Vocab(kind="relation")
    splits = [load_triples(p, entities, relations) for p in (train_path, valid_path, test_path)]
    return build_dataset(*splits, entities, relations)


def save_dataset(dataset, path):
    doc = {
        "format": "cohkge-dataset",
        "version": DATASET_FORMAT_VERSION,
        "entities": dataset.entities.names,
        "relations": dataset.relations.names,
        "train": dataset.train.tolist(),
        "valid": dataset.valid.tolist(),
        "test": dataset.test.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))


def load_dataset_cache(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: {exc}") from None
    if doc.get("format") != "cohkge-dataset":
        raise CorruptFileError(f"{path}: not a dataset cache")
    if doc.get("version") != DATASET_FORMAT_VERSION:
        raise VersionError(f"{path}: dataset cache version {doc.get('version')}")
    entities = Vocab(doc["entities"], kind="entity")
    relations = Vocab(doc["relations"], kind="relation")
    return build_dataset(doc["train"], doc["valid"], doc["test"], entities, relations)


def read_textual_triples(path):
    """Yield ``(entity, text_relation, entity)`` string triples from a TSV file."""
    for _, fields in _read_tsv3(path):
        yield tuple(fields)


def extract_cooccurrences(textual_triples: Iterable, entities):
    """Aggregate undirected entity-pair counts from textual triples.

    Returns ``(records, skipped)`` where records are sorted by canonical pair
    and ``skipped`` counts triples with an entity missing from ``entities``.
    Self-pairs are dropped silently.
    """
    counts = Counter()
    skipped = 0
    for a, _, b in textual_triples:
        i, j = entities.get(a), entities.get(b)
        if i is None or j is None:
            skipped += 1
            continue
        if i == j:
            continue
        counts[(i, j) if i < j else (j, i)] += 1
    if skipped:
        logger.info("skipped %d textual triples with unresolvable entities", skipped)
    records = [CooccurrenceRecord(i, j, c) for (i, j), c in sorted(counts.items())]
    return records, skipped
