"""Small synthetic knowledge graphs with planted co-occurrence clusters."""

import os
from dataclasses import dataclass

import numpy as np

from .kg_data import Vocab, build_dataset, extract_cooccurrences


@dataclass
class PlantedKG:
    dataset: object
    textual: list
    cluster: np.ndarray

    def cooccurrences(self):
        return extract_cooccurrences(self.textual, self.dataset.entities)[0]


def planted_triples(n_entities=50, n_relations=5, n_triples=400, n_clusters=2,
                    n_textual=1500, within=0.9, seed=0):
    """String-level triples for a toy KG and its textual co-occurrences.

    Entities are assigned round-robin to ``n_clusters`` clusters. KG triples
    are uniform over (subject, relation, object) with ``subject != object``.
    Each textual triple links two distinct entities of the same cluster with
    probability ``within``, otherwise two entities from different clusters.

    Returns ``(kg_triples, textual_triples, cluster)``.
    """
    rng = np.random.default_rng(seed)
    cluster = np.arange(n_entities) % n_clusters
    ent = [f"e{i:03d}" for i in range(n_entities)]
    rel = [f"r{i}" for i in range(n_relations)]
    seen, kg = set(), []
    while len(kg) < n_triples:
        s, o = rng.integers(0, n_entities, 2)
        r = int(rng.integers(0, n_relations))
        if s == o or (s, r, o) in seen:
            continue
        seen.add((s, r, o))
        kg.append((ent[s], rel[r], ent[o]))
    members = [np.flatnonzero(cluster == c) for c in range(n_clusters)]
    textual = []
    while len(textual) < n_textual:
        c = int(rng.integers(0, n_clusters))
        if rng.random() < within:
            a, b = rng.choice(members[c], 2, replace=False)
        else:
            other = (c + 1 + int(rng.integers(0, n_clusters - 1))) % n_clusters
            a, b = rng.choice(members[c]), rng.choice(members[other])
        textual.append((ent[a], f"mention{int(rng.integers(0, 20))}", ent[b]))
    return kg, textual, cluster


def make_planted_kg(valid_frac=0.1, test_frac=0.1, seed=0, **kwargs):
    kg, textual, cluster = planted_triples(seed=seed, **kwargs)
    n_valid = int(round(valid_frac * len(kg)))
    n_test = int(round(test_frac * len(kg)))
    n_train = len(kg) - n_valid - n_test
    entities, relations = Vocab(kind="entity"), Vocab(kind="relation")
    splits = []
    for part in (kg[:n_train], kg[n_train:n_train + n_valid], kg[n_train + n_valid:]):
        splits.append([(entities.add(s), relations.add(r), entities.add(o)) for s, r, o in part])
    dataset = build_dataset(*splits, entities, relations)
    remap = np.array([cluster[int(name[1:])] for name in entities.names])
    return PlantedKG(dataset, textual, remap)


def write_planted_kg(directory, valid_frac=0.1, test_frac=0.1, seed=0, **kwargs):
    """Write ``train.txt``, ``valid.txt``, ``test.txt`` and ``text.txt`` TSV files."""
    os.makedirs(directory, exist_ok=True)
    kg, textual, _ = planted_triples(seed=seed, **kwargs)
    n_valid = int(round(valid_frac * len(kg)))
    n_test = int(round(test_frac * len(kg)))
    n_train = len(kg) - n_valid - n_test
    parts = {"train.txt": kg[:n_train], "valid.txt": kg[n_train:n_train + n_valid],
             "test.txt": kg[n_train + n_valid:], "text.txt": textual}
    paths = {}
    for name, rows in parts.items():
        path = os.path.join(directory, name)
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write("\t".join(row) + "\n")
        paths[name.split(".")[0]] = path
    return paths
