"""Link prediction, triple classification and dimension interpretability metrics."""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import FormatError
from .model import corrupt_objects, score_many

logger = logging.getLogger(__name__)


# -- link prediction ---------------------------------------------------------

@dataclass
class RankingResult:
    ranks: np.ndarray
    filtered: bool = False

    @property
    def mr(self):
        return float(np.mean(self.ranks))

    @property
    def mrr(self):
        """Mean reciprocal rank, scaled by 100."""
        return float(100.0 * np.mean(1.0 / self.ranks))

    @property
    def hits_at_10(self):
        return float(100.0 * np.mean(self.ranks <= 10))

    def metrics(self, suffix=""):
        return {f"MRR{suffix}": self.mrr, f"MR{suffix}": self.mr, f"Hits@10{suffix}": self.hits_at_10}


def _known_objects(dataset):
    cache = getattr(dataset, "_known_objects", None)
    if cache is None:
        cache = defaultdict(list)
        for s, r, o in dataset.all_triples().tolist():
            cache[(s, r)].append(o)
        cache = {k: np.asarray(v, dtype=np.int64) for k, v in cache.items()}
        dataset._known_objects = cache
    return cache


def rank_objects(model, triples, dataset, filtered=False, chunk=2048):
    """Rank of each true object among its relation's object category.

    Rank is the number of candidates scoring at least as high as the true
    object, so ties count against it. With ``filtered``, other objects known
    for the same ``(subject, relation)`` are removed from the candidates.
    """
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    ranks = np.zeros(len(t), dtype=np.int64)
    known = _known_objects(dataset) if filtered else None
    for r in np.unique(t[:, 1]).tolist():
        rows = np.flatnonzero(t[:, 1] == r)
        cands = dataset.object_category[r]
        pos = np.searchsorted(cands, t[rows, 2])
        if np.any(pos >= len(cands)) or np.any(cands[np.minimum(pos, len(cands) - 1)] != t[rows, 2]):
            raise ValueError(f"true object missing from the category of relation {r}")
        cand_part = model.theta_e[cands] @ model.theta_ro[r]
        for start in range(0, len(rows), chunk):
            sel = rows[start:start + chunk]
            sel_pos = pos[start:start + chunk]
            subj_part = model.theta_e[t[sel, 0]] @ model.theta_rs[r]
            scores = subj_part[:, None] + cand_part[None, :]
            truth = scores[np.arange(len(sel)), sel_pos]
            ranks[sel] = np.sum(scores >= truth[:, None], axis=1)
            if filtered:
                for row, (s, _, o) in enumerate(t[sel].tolist()):
                    others = known[(s, r)]
                    others = np.searchsorted(cands, others[others != o])
                    ranks[sel[row]] -= int(np.sum(scores[row, others] >= truth[row]))
    return ranks


def rank_object(model, t, dataset, filtered=False):
    return int(rank_objects(model, [tuple(t)], dataset, filtered)[0])


def link_prediction(model, dataset, split="test", filtered=False):
    triples = dataset.split(split) if isinstance(split, str) else np.asarray(split)
    if len(triples) == 0:
        raise ValueError("link prediction needs a non-empty split")
    return RankingResult(rank_objects(model, triples, dataset, filtered), filtered)


# -- triple classification ---------------------------------------------------

def threshold_candidates(scores):
    """Midpoints between consecutive distinct scores, bracketed below and above."""
    u = np.unique(scores)
    if len(u) == 0:
        return np.array([0.0])
    mids = (u[:-1] + u[1:]) / 2.0
    return np.concatenate([[u[0] - 1.0], mids, [u[-1] + 1.0]])


def threshold_accuracy(pos, neg, thresholds):
    """Accuracy of ``score > threshold`` for each candidate threshold."""
    pos, neg = np.sort(pos), np.sort(neg)
    thresholds = np.atleast_1d(thresholds)
    tp = len(pos) - np.searchsorted(pos, thresholds, side="right")
    tn = np.searchsorted(neg, thresholds, side="right")
    return (tp + tn) / (len(pos) + len(neg))


def best_threshold(pos, neg):
    """Accuracy-maximizing threshold over the swept set; first maximum wins."""
    cands = threshold_candidates(np.concatenate([pos, neg]))
    acc = threshold_accuracy(pos, neg, cands)
    best = int(np.argmax(acc))
    return float(cands[best]), float(acc[best])


def auc_score(pos, neg):
    """Rank-statistic ROC AUC with average-rank tie correction, in [0, 1]."""
    ranks = rankdata(np.concatenate([pos, neg]))
    npos, nneg = len(pos), len(neg)
    return float((ranks[:npos].sum() - npos * (npos + 1) / 2.0) / (npos * nneg))


@dataclass
class ClassificationResult:
    thresholds: dict
    global_threshold: float
    auc: float
    accuracy: float
    per_relation: dict = field(default_factory=dict)
    skipped_relations: int = 0

    def metrics(self):
        return {"AUC": self.auc, "Accuracy": self.accuracy}


def classify_scores(valid_pos, valid_neg, test_pos, test_neg):
    """Per-relation thresholds from validation scores, metrics on test scores.

    Each argument maps relation id -> score array. Returns a
    :class:`ClassificationResult` with AUC and accuracy as percentages,
    averaged over test relations.
    """
    all_vp = np.concatenate(list(valid_pos.values())) if valid_pos else np.zeros(0)
    all_vn = np.concatenate(list(valid_neg.values())) if valid_neg else np.zeros(0)
    global_thr, _ = best_threshold(all_vp, all_vn)
    thresholds = {r: best_threshold(valid_pos[r], valid_neg.get(r, np.zeros(0)))[0]
                  for r in valid_pos}
    accs, aucs, per_rel, skipped = [], [], {}, 0
    for r in sorted(test_pos):
        pos, neg = test_pos[r], test_neg.get(r, np.zeros(0))
        if len(pos) == 0 or len(neg) == 0:
            skipped += 1
            continue
        thr = thresholds.get(r, global_thr)
        acc = float(threshold_accuracy(pos, neg, thr)[0])
        auc = auc_score(pos, neg)
        accs.append(acc)
        aucs.append(auc)
        per_rel[r] = (thr, 100.0 * auc, 100.0 * acc)
    if skipped:
        logger.info("skipped %d relations lacking positives or negatives", skipped)
    return ClassificationResult(thresholds, global_thr, 100.0 * float(np.mean(aucs)),
                                100.0 * float(np.mean(accs)), per_rel, skipped)


def _by_relation(triples, scores):
    out = {}
    for r in np.unique(triples[:, 1]).tolist():
        out[r] = scores[triples[:, 1] == r]
    return out


def triple_classification(model, dataset, rng):
    """Score valid/test triples against one in-category object corruption each."""
    if len(dataset.valid) == 0 or len(dataset.test) == 0:
        raise ValueError("triple classification needs non-empty valid and test splits")
    parts = []
    for split in (dataset.valid, dataset.test):
        neg = corrupt_objects(split, dataset, rng)
        parts.append((_by_relation(split, score_many(model, split)),
                      _by_relation(neg, score_many(model, neg))))
    (vp, vn), (tp, tn) = parts
    return classify_scores(vp, vn, tp, tn)


# -- interpretability --------------------------------------------------------

def top_k_all(theta_e, k):
    """``(d, k)`` array: per dimension the k highest entities, ties by lower id."""
    order = np.argsort(-theta_e, axis=0, kind="stable")
    return order[:k].T.copy()


def top_k_dimension(theta_e, l, k):
    col = theta_e[:, l]
    return np.argsort(-col, kind="stable")[:k].tolist()


def bottom_entities(theta_e):
    """Per dimension, the lowest-valued entity (lower id on ties)."""
    return np.argsort(theta_e, axis=0, kind="stable")[0].copy()


def _pair_sums(pmi, groups):
    """Summed PMI over all unordered pairs inside each row of ``groups``."""
    k = groups.shape[1]
    a, b = np.triu_indices(k, 1)
    return pmi.lookup_many(groups[:, a], groups[:, b]).sum(axis=1)


def coherence_per_dimension(theta_e, pmi, k):
    if k < 2:
        raise ValueError("coherence needs k >= 2")
    return _pair_sums(pmi, top_k_all(theta_e, k))


def coherence_at_k(theta_e, pmi, k):
    return float(np.mean(coherence_per_dimension(theta_e, pmi, k)))


@dataclass
class IntrusionOutcome:
    members: np.ndarray
    scores: np.ndarray
    correct: bool


def intrusion_outcomes(theta_e, pmi, k):
    """Per dimension: the k+1 members (intruder last), their scores, and the verdict.

    The predicted intruder is the member with the smallest summed PMI to the
    other members; a tie for the minimum counts as a miss.
    """
    if k < 2:
        raise ValueError("word intrusion needs k >= 2")
    if theta_e.shape[0] <= k:
        raise ValueError("need more than k entities for an intruder")
    groups = np.column_stack([top_k_all(theta_e, k), bottom_entities(theta_e)])
    m = k + 1
    a, b = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    pair = pmi.lookup_many(groups[:, a], groups[:, b])
    pair[:, np.arange(m), np.arange(m)] = 0.0
    scores = pair.sum(axis=2)
    out = []
    for members, sc in zip(groups, scores):
        lowest = sc.min()
        winners = np.flatnonzero(sc == lowest)
        out.append(IntrusionOutcome(members, sc, len(winners) == 1 and winners[0] == k))
    return out


def auto_word_intrusion(theta_e, pmi, k):
    """Percentage of dimensions whose bottom-most entity is identified as the intruder."""
    outcomes = intrusion_outcomes(theta_e, pmi, k)
    return 100.0 * float(np.mean([o.correct for o in outcomes]))


@dataclass
class IntrusionTask:
    task_id: str
    dimension: int
    top_k: list
    intruder: str
    presentation: list


def build_intrusion_tasks(theta_e, names, k, num_dims, rng):
    d = theta_e.shape[1]
    if num_dims > d:
        raise ValueError(f"cannot sample {num_dims} dimensions out of {d}")
    dims = rng.choice(d, size=num_dims, replace=False)
    tops = top_k_all(theta_e, k)
    bottom = bottom_entities(theta_e)
    tasks = []
    for idx, l in enumerate(dims.tolist()):
        top = [names[e] for e in tops[l].tolist()]
        intruder = names[int(bottom[l])]
        shown = top + [intruder]
        shown = [shown[p] for p in rng.permutation(len(shown)).tolist()]
        tasks.append(IntrusionTask(f"task{idx:03d}", l, top, intruder, shown))
    return tasks


def export_intrusion_tasks(theta_e, names, k, num_dims, rng, tasks_path, key_path):
    """Write annotator-facing tasks and a separate answer key.

    Task lines: ``task_id<TAB>name_1 ... <TAB>name_{k+1}``.
    Key lines: ``task_id<TAB>intruder_name<TAB>dimension``.
    """
    tasks = build_intrusion_tasks(theta_e, names, k, num_dims, rng)
    with open(tasks_path, "w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write("\t".join([t.task_id] + t.presentation) + "\n")
    with open(key_path, "w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(f"{t.task_id}\t{t.intruder}\t{t.dimension}\n")
    return tasks


def _tsv_rows(path, min_fields, exact=None):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            f = line.split("\t")
            if len(f) < min_fields or (exact is not None and len(f) != exact):
                raise FormatError(f"{path}:{lineno}: unexpected field count {len(f)}")
            yield lineno, f


def read_tasks(path):
    return {f[0]: f[1:] for _, f in _tsv_rows(path, 3)}


def read_answer_key(path):
    return {f[0]: f[1] for _, f in _tsv_rows(path, 2)}


def read_annotations(path, answer_key, tasks=None):
    """Parse ``task_id<TAB>chosen_entity_name`` lines, validating ids and names."""
    out = {}
    for lineno, (task_id, choice) in _tsv_rows(path, 2, exact=2):
        if task_id not in answer_key:
            raise FormatError(f"{path}:{lineno}: unknown task {task_id!r}")
        if tasks is not None and choice not in tasks.get(task_id, ()):
            raise FormatError(f"{path}:{lineno}: entity {choice!r} not shown in task {task_id}")
        out[task_id] = choice
    return out


def score_manual_intrusion(answer_key, annotations):
    """Majority-vote accuracy (percentage) over all tasks in the answer key.

    ``annotations`` is a list of per-annotator ``task_id -> choice`` maps.
    A task without a strict majority choice counts as incorrect.
    """
    if not answer_key:
        raise FormatError("empty answer key")
    correct = 0
    for task_id, intruder in answer_key.items():
        votes = Counter(a[task_id] for a in annotations if task_id in a)
        if not votes:
            continue
        ranked = votes.most_common()
        if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
            continue
        correct += ranked[0][0] == intruder
    return 100.0 * correct / len(answer_key)


def score_manual_intrusion_files(key_path, annotation_paths, tasks_path=None):
    key = read_answer_key(key_path)
    tasks = read_tasks(tasks_path) if tasks_path else None
    return score_manual_intrusion(key, [read_annotations(p, key, tasks) for p in annotation_paths])


def qualitative_report(theta_e, names, num_dims, k, rng):
    """Top-k entity names for randomly chosen dimensions, one line per dimension."""
    d = theta_e.shape[1]
    dims = sorted(rng.choice(d, size=min(num_dims, d), replace=False).tolist())
    tops = top_k_all(theta_e, k)
    return "\n".join(f"dim {l}: " + ", ".join(names[e] for e in tops[l].tolist())
                     for l in dims) + "\n"


# -- reports -----------------------------------------------------------------

def evaluate_model(model, dataset, pmi, rng, k=5, filtered=False, split="test"):
    """Full metric set for one model, in report order."""
    metrics = link_prediction(model, dataset, split).metrics()
    if filtered:
        metrics.update(link_prediction(model, dataset, split, filtered=True).metrics("_filtered"))
    metrics.update(triple_classification(model, dataset, rng).metrics())
    if pmi is not None:
        metrics[f"AutoWI@{k}"] = auto_word_intrusion(model.theta_e, pmi, k)
        metrics[f"Coherence@{k}"] = coherence_at_k(model.theta_e, pmi, k)
    return metrics


def aggregate_metrics(reports):
    """Mean and population standard deviation of each metric across reports."""
    keys = list(reports[0])
    out = {}
    for key in keys:
        vals = np.array([r[key] for r in reports], dtype=np.float64)
        out[key] = (float(vals.mean()), float(vals.std()))
    return out


def write_metrics_tsv(metrics, path):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in metrics.items():
            if isinstance(value, tuple):
                fh.write(f"{key}\t{value[0]!r}\t{value[1]!r}\n")
            else:
                fh.write(f"{key}\t{value!r}\n")


def read_metrics_tsv(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            f = line.rstrip("\n").split("\t")
            out[f[0]] = float(f[1]) if len(f) == 2 else (float(f[1]), float(f[2]))
    return out


_UNITS = {"MRR": "x100", "MR": "rank", "Hits@10": "%", "AUC": "%", "Accuracy": "%", "ManualWI": "%"}


def _unit(key):
    base = key.split("_")[0]
    if base.startswith("AutoWI"):
        return "%"
    return _UNITS.get(base, "")


def format_metrics_text(metrics, title=None):
    lines = [title, "=" * len(title)] if title else []
    for key, value in metrics.items():
        unit = _unit(key)
        unit = f" ({unit})" if unit else ""
        if isinstance(value, tuple):
            lines.append(f"{key + unit:<28}{value[0]:10.3f} +/- {value[1]:.3f}")
        else:
            lines.append(f"{key + unit:<28}{value:10.3f}")
    return "\n".join(lines) + "\n"
