"""Entity-model scoring, the coherence-regularized objective, and its training loop.

The objective is::

    mean_t [softplus(f(t_o^-) - f(t)) + softplus(f(t_s^-) - f(t))]
        + lambda_c * sum_{pairs} (v(e_i) . v(e_j) - p_ij)^2
        + lambda_r * 0.5 * (|theta_e|^2 + |theta_r|^2)

with ``f(s, r, o) = v(s) . v_s(r) + v(o) . v_o(r)``.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np
from scipy.special import expit

from ._binio import read_blob, write_blob
from .errors import ConfigError, DivergenceError, SamplingError
from .kg_data import Triple

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    dim: int = 100
    lambda_c: float = 0.01
    lambda_r: float = 0.01
    learning_rate: float = 0.05
    max_epochs: int = 1000
    grad_tolerance: float = 5e-4
    seed: int = 0
    init_stddev: float = 0.1
    batch_size: Union[int, str] = "full"
    zero_pairs_per_stored: int = 1
    fixed_negatives: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.dim) <= 0:
            raise ConfigError("dim must be positive")
        if self.lambda_c < 0 or self.lambda_r < 0:
            raise ConfigError("lambda_c and lambda_r must be non-negative")
        for name in ("learning_rate", "grad_tolerance", "init_stddev"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")
        if int(self.max_epochs) <= 0:
            raise ConfigError("max_epochs must be positive")
        if self.batch_size != "full" and not (isinstance(self.batch_size, int) and self.batch_size > 0):
            raise ConfigError("batch_size must be a positive integer or 'full'")
        if self.zero_pairs_per_stored < 0:
            raise ConfigError("zero_pairs_per_stored must be non-negative")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown training options: {sorted(extra)}")
        return cls(**data)


@dataclass
class Model:
    """Entity matrix plus subject-side and object-side relation matrices."""

    theta_e: np.ndarray
    theta_rs: np.ndarray
    theta_ro: np.ndarray

    @property
    def dim(self):
        return self.theta_e.shape[1]

    @property
    def n_entities(self):
        return self.theta_e.shape[0]

    @property
    def n_relations(self):
        return self.theta_rs.shape[0]

    @classmethod
    def zeros(cls, n_entities, n_relations, dim):
        return cls(np.zeros((n_entities, dim)), np.zeros((n_relations, dim)),
                   np.zeros((n_relations, dim)))

    @classmethod
    def gaussian(cls, n_entities, n_relations, dim, stddev, rng):
        return cls(rng.normal(0.0, stddev, (n_entities, dim)),
                   rng.normal(0.0, stddev, (n_relations, dim)),
                   rng.normal(0.0, stddev, (n_relations, dim)))

    def arrays(self):
        return (self.theta_e, self.theta_rs, self.theta_ro)

    def copy(self):
        return Model(*(a.copy() for a in self.arrays()))

    def zeros_like(self):
        return Model(*(np.zeros_like(a) for a in self.arrays()))

    def max_abs(self):
        return max(float(np.max(np.abs(a))) if a.size else 0.0 for a in self.arrays())

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def __eq__(self, other):
        return isinstance(other, Model) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


class NegativePair(NamedTuple):
    positive: Triple
    corrupt_subject: Triple
    corrupt_object: Triple


@dataclass
class NegativeBatch:
    """Row-aligned positives and their subject/object corruptions, each ``(N, 3)``."""

    positives: np.ndarray
    corrupt_subject: np.ndarray
    corrupt_object: np.ndarray

    def __len__(self):
        return len(self.positives)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return NegativePair(Triple(*self.positives[idx].tolist()),
                                Triple(*self.corrupt_subject[idx].tolist()),
                                Triple(*self.corrupt_object[idx].tolist()))
        return NegativeBatch(self.positives[idx], self.corrupt_subject[idx],
                             self.corrupt_object[idx])

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        return cls(*(np.asarray([p[k] for p in pairs], dtype=np.int64).reshape(-1, 3)
                     for k in range(3)))


@dataclass
class CoherencePairs:
    """Entity pairs entering the coherence term, with their PMI targets.

    ``weight`` rescales the whole sum; mini-batch training uses it to keep
    each step's share of the pairs an unbiased estimate of the full term.
    """

    i: np.ndarray
    j: np.ndarray
    target: np.ndarray
    weight: float = 1.0

    def __len__(self):
        return len(self.i)

    def subset(self, idx, weight):
        return CoherencePairs(self.i[idx], self.j[idx], self.target[idx], weight)


def all_pairs(pmi):
    """Every unordered entity pair (exact dense coherence term). O(n^2)."""
    i, j = np.triu_indices(pmi.n, 1)
    return CoherencePairs(i.astype(np.int64), j.astype(np.int64), pmi.lookup_many(i, j))


def stored_pairs(pmi):
    return CoherencePairs(pmi.rows.copy(), pmi.cols.copy(), pmi.values.copy())


def sample_coherence_pairs(pmi, zero_per_stored, rng, max_rounds=64):
    """Stored PMI pairs plus a uniform sample of pairs with no PMI entry.

    ``zero_per_stored`` zero-target pairs are drawn per stored pair, uniformly
    over ``i != j`` with rejection of stored pairs.
    """
    base = stored_pairs(pmi)
    want = zero_per_stored * len(base)
    n = pmi.n
    if want == 0 or n < 2:
        return base
    got_i, got_j, have = [], [], 0
    for _ in range(max_rounds):
        a = rng.integers(0, n, want - have)
        b = rng.integers(0, n, want - have)
        ok = (a != b) & ~pmi.contains_many(a, b)
        got_i.append(np.minimum(a, b)[ok])
        got_j.append(np.maximum(a, b)[ok])
        have += int(ok.sum())
        if have >= want:
            break
    zi, zj = np.concatenate(got_i), np.concatenate(got_j)
    return CoherencePairs(np.concatenate([base.i, zi]), np.concatenate([base.j, zj]),
                          np.concatenate([base.target, np.zeros(len(zi))]))


def _check_ids(model, triples):
    if len(triples) == 0:
        return
    if (triples.min() < 0 or triples[:, [0, 2]].max() >= model.n_entities
            or triples[:, 1].max() >= model.n_relations):
        raise IndexError("triple id out of range for model")


def score_many(model, triples):
    """Vectorized score for an ``(N, 3)`` array of triples."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    _check_ids(model, t)
    s, r, o = t[:, 0], t[:, 1], t[:, 2]
    return (np.einsum("ij,ij->i", model.theta_e[s], model.theta_rs[r])
            + np.einsum("ij,ij->i", model.theta_e[o], model.theta_ro[r]))


def score(model, t):
    return float(score_many(model, [tuple(t)])[0])


def softplus(x):
    return np.logaddexp(0.0, x)


def pair_loss(model, t, t_neg):
    """``-log sigmoid(f(t) - f(t_neg))`` in softplus form."""
    margin = score(model, t) - score(model, t_neg)
    return float(softplus(-margin))


def _draw_corruptions(triples, slot, dataset, rng, max_rounds=32):
    members, offsets, sizes = dataset.category_table(slot)
    out = triples.copy()
    pending = np.arange(len(triples))
    for _ in range(max_rounds):
        if pending.size == 0:
            break
        rel = triples[pending, 1]
        draw = members[offsets[rel] + rng.integers(0, sizes[rel])]
        cand = out[pending]
        cand[:, slot] = draw
        ok = ~dataset.known.contains(cand)
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
    for idx in pending.tolist():
        out[idx] = _exact_corruption(triples[idx], slot, dataset, rng)
    return out


def _exact_corruption(t, slot, dataset, rng):
    cats = dataset.subject_category if slot == 0 else dataset.object_category
    for pool in (cats[t[1]], np.arange(dataset.n_entities)):
        cand = np.repeat(t[None, :], len(pool), axis=0)
        cand[:, slot] = pool
        valid = pool[~dataset.known.contains(cand)]
        if len(valid):
            out = t.copy()
            out[slot] = valid[rng.integers(0, len(valid))]
            return out
    raise SamplingError(f"no valid {'subject' if slot == 0 else 'object'} corruption for triple "
                        f"{tuple(t.tolist())}")


def sample_negative_batch(triples, dataset, rng):
    """Closed-world corruptions for every row of ``triples``.

    Each corrupted entity is uniform over the relation's slot category,
    rejecting known triples; when the category holds no valid candidate the
    draw falls back to the full entity vocabulary.
    """
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return NegativeBatch(t.copy(), _draw_corruptions(t, 0, dataset, rng),
                         _draw_corruptions(t, 2, dataset, rng))


def corrupt_objects(triples, dataset, rng):
    """One in-category object corruption per row, avoiding known triples."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return _draw_corruptions(t, 2, dataset, rng)


def sample_negatives(t, dataset, rng):
    return sample_negative_batch([tuple(t)], dataset, rng)[0]


def _as_batch(negatives):
    if isinstance(negatives, NegativeBatch):
        return negatives
    return NegativeBatch.from_pairs(negatives)


def aggregate_loss(model, negatives):
    """Mean over positives of the object- and subject-corruption pair losses."""
    batch = _as_batch(negatives)
    if len(batch) == 0:
        raise ValueError("aggregate loss needs at least one triple")
    f = score_many(model, batch.positives)
    total = softplus(score_many(model, batch.corrupt_object) - f) \
        + softplus(score_many(model, batch.corrupt_subject) - f)
    return float(total.sum() / len(batch))


def coherence_term(theta_e, pmi, pairs=None):
    """Squared misfit between entity inner products and PMI over ``pairs``.

    ``pairs=None`` means every unordered pair, i.e. the exact dense term.
    """
    if pairs is None:
        pairs = all_pairs(pmi)
    dots = np.einsum("ij,ij->i", theta_e[pairs.i], theta_e[pairs.j])
    return float(pairs.weight * np.sum((dots - pairs.target) ** 2))


def l2_term(model):
    return 0.5 * float(sum(np.sum(a * a) for a in model.arrays()))


def _scatter_score_grad(grad, model, triples, coef):
    s, r, o = triples[:, 0], triples[:, 1], triples[:, 2]
    c = coef[:, None]
    np.add.at(grad.theta_e, s, c * model.theta_rs[r])
    np.add.at(grad.theta_e, o, c * model.theta_ro[r])
    np.add.at(grad.theta_rs, r, c * model.theta_e[s])
    np.add.at(grad.theta_ro, r, c * model.theta_e[o])


def loss_and_gradient(model, negatives):
    """Aggregate pair loss and its gradient with respect to all parameters."""
    batch = _as_batch(negatives)
    n = len(batch)
    if n == 0:
        raise ValueError("aggregate loss needs at least one triple")
    f = score_many(model, batch.positives)
    margin_o = f - score_many(model, batch.corrupt_object)
    margin_s = f - score_many(model, batch.corrupt_subject)
    loss = float((softplus(-margin_o) + softplus(-margin_s)).sum() / n)
    # d softplus(-m) / dm = -sigmoid(-m)
    g_o = -expit(-margin_o) / n
    g_s = -expit(-margin_s) / n
    grad = model.zeros_like()
    _scatter_score_grad(grad, model, batch.positives, g_o + g_s)
    _scatter_score_grad(grad, model, batch.corrupt_object, -g_o)
    _scatter_score_grad(grad, model, batch.corrupt_subject, -g_s)
    return loss, grad


def coherence_and_gradient(theta_e, pmi, pairs=None):
    if pairs is None:
        pairs = all_pairs(pmi)
    ei, ej = theta_e[pairs.i], theta_e[pairs.j]
    resid = np.einsum("ij,ij->i", ei, ej) - pairs.target
    value = float(pairs.weight * np.sum(resid ** 2))
    c = (2.0 * pairs.weight * resid)[:, None]
    grad = np.zeros_like(theta_e)
    np.add.at(grad, pairs.i, c * ej)
    np.add.at(grad, pairs.j, c * ei)
    return value, grad


def objective_and_gradient(model, negatives, pmi, config, pairs=None):
    """Full objective, its three parts, and the gradient as a :class:`Model`.

    With ``lambda_c == 0`` the coherence term is skipped entirely (no PMI
    needed), so the value and gradient are exactly the baseline ones.
    """
    loss, grad = loss_and_gradient(model, negatives)
    parts = {"loss": loss, "coherence": 0.0, "l2": l2_term(model)}
    value = loss
    if config.lambda_c > 0:
        if pmi is None:
            raise ConfigError("lambda_c > 0 requires a PMI matrix")
        coh, coh_grad = coherence_and_gradient(model.theta_e, pmi, pairs)
        parts["coherence"] = coh
        value = value + config.lambda_c * coh
        grad.theta_e += config.lambda_c * coh_grad
    if config.lambda_r > 0:
        value = value + config.lambda_r * parts["l2"]
        for g, p in zip(grad.arrays(), model.arrays()):
            g += config.lambda_r * p
    return float(value), parts, grad


def objective(model, negatives, pmi, config, pairs=None):
    loss = aggregate_loss(model, negatives)
    value = loss
    if config.lambda_c > 0:
        value = value + config.lambda_c * coherence_term(model.theta_e, pmi, pairs)
    if config.lambda_r > 0:
        value = value + config.lambda_r * l2_term(model)
    return float(value)


def gradient(model, negatives, pmi, config, pairs=None):
    return objective_and_gradient(model, negatives, pmi, config, pairs)[2]


class TraceRow(NamedTuple):
    epoch: int
    objective: float
    grad_norm: float
    loss: float
    coherence: float
    l2: float


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)
    converged: bool = False

    def append(self, epoch, value, grad_norm, parts):
        self.rows.append(TraceRow(epoch, value, grad_norm, parts["loss"],
                                  parts["coherence"], parts["l2"]))

    def objectives(self):
        return np.array([r.objective for r in self.rows])

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch\tobjective\tgrad_norm\tloss\tcoherence\tl2\n")
            for r in self.rows:
                fh.write(f"{r.epoch}\t{r.objective!r}\t{r.grad_norm!r}\t{r.loss!r}"
                         f"\t{r.coherence!r}\t{r.l2!r}\n")

    @classmethod
    def read(cls, path):
        rows = []
        with open(path, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                f = line.rstrip("\n").split("\t")
                rows.append(TraceRow(int(f[0]), *map(float, f[1:])))
        return cls(rows)


# overflow surfaces as a DivergenceError, so numpy's own warnings are redundant
@np.errstate(over="ignore", invalid="ignore")
def train(dataset, pmi, config, callback=None):
    """Gradient descent on the regularized objective.

    Parameters start i.i.d. Gaussian. Negatives (and sampled zero-PMI pairs)
    are redrawn each epoch unless ``config.fixed_negatives``. Training stops
    once the max-abs full gradient falls below ``config.grad_tolerance`` or
    after ``config.max_epochs`` epochs.

    In full-batch mode each trace row describes the parameters *before* that
    epoch's step; in mini-batch mode, the parameters after the epoch.

    Returns
    -------
    model : Model
    trace : TrainTrace
    """
    config.validate()
    if config.lambda_c > 0 and pmi is None:
        raise ConfigError("lambda_c > 0 requires a PMI matrix")
    if pmi is not None and pmi.n != dataset.n_entities:
        raise ConfigError(f"PMI matrix covers {pmi.n} entities, dataset has {dataset.n_entities}")
    triples = dataset.train
    if len(triples) == 0:
        raise ValueError("training split is empty")
    init_rng, neg_rng, pair_rng, batch_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4))
    model = Model.gaussian(dataset.n_entities, dataset.n_relations, config.dim,
                           config.init_stddev, init_rng)
    use_pmi = config.lambda_c > 0

    def draw():
        neg = sample_negative_batch(triples, dataset, neg_rng)
        pairs = sample_coherence_pairs(pmi, config.zero_pairs_per_stored, pair_rng) if use_pmi else None
        return neg, pairs

    trace = TrainTrace()
    negatives, pairs = draw()
    lr = config.learning_rate
    for epoch in range(1, config.max_epochs + 1):
        if epoch > 1 and not config.fixed_negatives:
            negatives, pairs = draw()
        if config.batch_size != "full" and config.batch_size < len(triples):
            _minibatch_epoch(model, negatives, pmi, config, pairs, batch_rng, epoch)
        value, parts, grad = objective_and_gradient(model, negatives, pmi, config, pairs)
        gnorm = grad.max_abs()
        trace.append(epoch, value, gnorm, parts)
        if not (np.isfinite(value) and np.isfinite(gnorm) and model.is_finite()):
            raise DivergenceError(epoch)
        if callback is not None:
            callback(trace.rows[-1])
        if gnorm < config.grad_tolerance:
            trace.converged = True
            break
        if config.batch_size == "full" or config.batch_size >= len(triples):
            for p, g in zip(model.arrays(), grad.arrays()):
                p -= lr * g
    logger.debug("training stopped after %d epochs (converged=%s)", len(trace.rows), trace.converged)
    return model, trace


def _minibatch_epoch(model, negatives, pmi, config, pairs, rng, epoch):
    n = len(negatives)
    order = rng.permutation(n)
    n_steps = -(-n // config.batch_size)
    if pairs is not None:
        pair_order = rng.permutation(len(pairs))
        pair_chunks = np.array_split(pair_order, n_steps)
    for step in range(n_steps):
        idx = order[step * config.batch_size:(step + 1) * config.batch_size]
        step_pairs = pairs.subset(pair_chunks[step], float(n_steps)) if pairs is not None else None
        value, _, grad = objective_and_gradient(model, negatives[idx], pmi, config, step_pairs)
        if not np.isfinite(value) or not np.isfinite(grad.max_abs()):
            raise DivergenceError(epoch, f"non-finite gradient at mini-batch step {step}")
        for p, g in zip(model.arrays(), grad.arrays()):
            p -= config.learning_rate * g


def save_model(model, path, config=None, fingerprint=None, extra=None):
    meta = {"n": model.n_entities, "m": model.n_relations, "d": model.dim,
            "config": config.to_dict() if config is not None else None,
            "seed": config.seed if config is not None else None,
            "vocab_fingerprint": fingerprint}
    if extra:
        meta.update(extra)
    write_blob(path, "model", MODEL_FORMAT_VERSION, meta,
               {"theta_e": model.theta_e, "theta_rs": model.theta_rs, "theta_ro": model.theta_ro})


def load_model(path):
    """Return ``(model, meta)``."""
    meta, arrays = read_blob(path, "model", MODEL_FORMAT_VERSION)
    model = Model(arrays["theta_e"].copy(), arrays["theta_rs"].copy(), arrays["theta_ro"].copy())
    return model, meta


def export_model_tsv(model, path, entity_names):
    with open(path, "w", encoding="utf-8") as fh:
        for name, row in zip(entity_names, model.theta_e):
            fh.write(name + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")
