import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cohkge.errors import FormatError
from cohkge.evaluation import (RankingResult, aggregate_metrics, auc_score, auto_word_intrusion,
                               best_threshold, bottom_entities, classify_scores, coherence_at_k,
                               evaluate_model, export_intrusion_tasks, format_metrics_text,
                               link_prediction, qualitative_report, rank_object, rank_objects,
                               read_annotations, read_answer_key, read_metrics_tsv, read_tasks,
                               score_manual_intrusion, score_manual_intrusion_files,
                               threshold_accuracy, threshold_candidates, top_k_all,
                               top_k_dimension, triple_classification, write_metrics_tsv)
from cohkge.model import Model
from cohkge.pmi import PmiMatrix

from conftest import make_dataset, random_dataset


def pmi_from_dense(dense):
    """PmiMatrix holding every nonzero upper-triangular entry of ``dense``."""
    n = dense.shape[0]
    i, j = np.triu_indices(n, 1)
    keep = dense[i, j] != 0
    return PmiMatrix(n, i[keep], j[keep], dense[i, j][keep], np.ones(n), 1.0)


def random_pmi(rng, n, density=0.5):
    dense = rng.normal(0, 2, (n, n))
    dense = np.triu(dense * (rng.random((n, n)) < density), 1)
    return dense + dense.T


def naive_sort_rank(model, t, dataset):
    s, r, o = t
    scored = [(float(model.theta_e[s] @ model.theta_rs[r] + model.theta_e[c] @ model.theta_ro[r]),
               c) for c in dataset.object_category[r].tolist()]
    # pessimistic: sort descending, ties put the true object last
    scored.sort(key=lambda sc: (-sc[0], sc[1] == o))
    return 1 + [c for _, c in scored].index(o)


def star_dataset(n_cands):
    """Relation 0 from entity 0 to each of ``1..n_cands``."""
    return make_dataset([(0, 0, c) for c in range(1, n_cands + 1)])


class TestRanking:
    def test_unique_top_is_rank_one(self):
        ds = star_dataset(10)
        model = Model.zeros(11, 1, 2)
        model.theta_rs[0] = [1.0, 0.0]
        model.theta_ro[0] = [0.0, 1.0]
        model.theta_e[:, 1] = np.arange(11) * 0.1
        assert rank_object(model, (0, 0, 10), ds) == 1
        assert rank_object(model, (0, 0, 1), ds) == 10

    def test_zero_model_pessimistic_ties(self):
        ds = star_dataset(10)
        model = Model.zeros(11, 1, 3)
        assert all(rank_object(model, (0, 0, c), ds) == 10 for c in range(1, 11))

    def test_random_twelve_candidates(self, rng):
        ds = star_dataset(12)
        for _ in range(20):
            model = Model.gaussian(13, 1, 3, 1.0, rng)
            for c in range(1, 13):
                assert rank_object(model, (0, 0, c), ds) == naive_sort_rank(model, (0, 0, c), ds)

    def test_sort_oracle_with_ties(self, rng):
        ds = star_dataset(12)
        model = Model.gaussian(13, 1, 2, 1.0, rng)
        model.theta_e = np.round(model.theta_e)  # integer scores force ties
        model.theta_ro = np.round(model.theta_ro)
        for c in range(1, 13):
            assert rank_object(model, (0, 0, c), ds) == naive_sort_rank(model, (0, 0, c), ds)

    def test_brute_force_on_all_triples(self, rng):
        ds = random_dataset(rng, 60, 4, 400)
        model = Model.gaussian(60, 4, 5, 1.0, rng)
        triples = ds.all_triples()
        ranks = rank_objects(model, triples, ds, chunk=7)
        expected = [naive_sort_rank(model, t, ds) for t in triples.tolist()]
        assert ranks.tolist() == expected

    def test_filtered_mode(self, rng):
        ds = random_dataset(rng, 30, 2, 200)
        model = Model.gaussian(30, 2, 4, 1.0, rng)
        got = rank_objects(model, ds.test, ds, filtered=True)
        for t, rank in zip(ds.test.tolist(), got.tolist()):
            s, r, o = t
            cands = [c for c in ds.object_category[r].tolist()
                     if c == o or (s, r, c) not in ds.known]
            f = model.theta_e[cands] @ model.theta_ro[r]
            assert rank == int(np.sum(f >= f[cands.index(o)]))
        raw = rank_objects(model, ds.test, ds)
        assert np.all(got <= raw)

    def test_true_object_outside_category(self):
        ds = make_dataset([(0, 0, 1), (1, 1, 2)])
        with pytest.raises(ValueError):
            rank_object(Model.zeros(3, 2, 2), (0, 0, 2), ds)


class TestLinkPrediction:
    def test_all_rank_one(self):
        res = RankingResult(np.array([1, 1, 1]))
        assert (res.mr, res.mrr, res.hits_at_10) == (1.0, 100.0, 100.0)

    def test_arithmetic(self):
        res = RankingResult(np.array([1, 4]))
        assert res.mr == 2.5
        assert res.mrr == pytest.approx(62.5)
        assert res.hits_at_10 == 100.0

    def test_hits_cutoff(self):
        assert RankingResult(np.array([10, 11])).hits_at_10 == 50.0

    def test_outscoring_candidate_never_raises_mrr(self, rng):
        for _ in range(20):
            ds = star_dataset(8)
            model = Model.gaussian(10, 1, 2, 1.0, rng)
            before = link_prediction(model, ds, ds.train).mrr
            # entity 9 joins the category with a score above every candidate
            bigger = make_dataset([(0, 0, c) for c in range(1, 10)])
            top = np.max(model.theta_e[:9] @ model.theta_ro[0])
            model.theta_e[9] = model.theta_ro[0] * (top + 1.0) / (model.theta_ro[0] @ model.theta_ro[0])
            after = link_prediction(model, bigger, ds.train).mrr
            assert after <= before

    def test_empty_split(self):
        ds = star_dataset(3)
        with pytest.raises(ValueError):
            link_prediction(Model.zeros(4, 1, 2), ds, "test")


class TestThresholds:
    def test_candidates_bracket_scores(self):
        c = threshold_candidates(np.array([3.0, 1.0, 1.0, 2.0]))
        assert c.tolist() == [0.0, 1.5, 2.5, 4.0]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(-5, 5), min_size=1, max_size=12),
           st.lists(st.integers(-5, 5), min_size=1, max_size=12))
    def test_optimal_over_swept_set(self, pos, neg):
        pos, neg = np.array(pos, float), np.array(neg, float)
        thr, acc = best_threshold(pos, neg)
        for cand in threshold_candidates(np.concatenate([pos, neg])):
            brute = (np.sum(pos > cand) + np.sum(neg <= cand)) / (len(pos) + len(neg))
            assert acc >= brute - 1e-15
        assert acc == (np.sum(pos > thr) + np.sum(neg <= thr)) / (len(pos) + len(neg))

    def test_accuracy_vector(self):
        acc = threshold_accuracy(np.array([2.0, 3.0]), np.array([1.0]), np.array([0.0, 1.5, 2.5]))
        np.testing.assert_allclose(acc, [2 / 3, 1.0, 2 / 3])


class TestAuc:
    def test_perfect_separation(self):
        assert auc_score(np.array([2.0, 3.0]), np.array([0.0, 1.0])) == 1.0

    def test_identical_scores(self):
        assert auc_score(np.zeros(5), np.zeros(7)) == 0.5

    def test_matches_pairwise_oracle(self, rng):
        pos = rng.integers(0, 6, 30).astype(float)
        neg = rng.integers(0, 6, 25).astype(float)
        pairs = [(1.0 if p > q else 0.5 if p == q else 0.0) for p in pos for q in neg]
        assert auc_score(pos, neg) == pytest.approx(np.mean(pairs), abs=1e-12)

    def test_independence(self, rng):
        scores = rng.normal(size=10_000)
        labels = rng.random(10_000) < 0.5
        assert abs(100 * auc_score(scores[labels], scores[~labels]) - 50) <= 3


class TestClassification:
    def test_perfectly_separated(self):
        vp, vn = {0: np.array([2.0, 3.0])}, {0: np.array([0.0, 1.0])}
        res = classify_scores(vp, vn, vp, vn)
        assert (res.accuracy, res.auc) == (100.0, 100.0)

    def test_identical_scores(self):
        z = {0: np.zeros(10), 1: np.zeros(4)}
        res = classify_scores(z, z, z, z)
        assert res.auc == 50.0 and res.accuracy == 50.0

    def test_unseen_relation_uses_global_threshold(self):
        vp, vn = {0: np.array([5.0, 6.0])}, {0: np.array([1.0, 2.0])}
        res = classify_scores(vp, vn, {1: np.array([4.0])}, {1: np.array([3.8])})
        assert 1 not in res.thresholds
        assert res.per_relation[1][0] == res.global_threshold == 3.5
        assert res.accuracy == 50.0

    def test_on_dataset(self, rng):
        ds = random_dataset(rng, 30, 3, 200)
        model = Model.zeros(30, 3, 4)
        res = triple_classification(model, ds, rng)
        assert res.auc == 50.0 and res.accuracy == 50.0
        assert set(res.metrics()) == {"AUC", "Accuracy"}

    def test_needs_valid_and_test(self, rng):
        ds = make_dataset([(0, 0, 1)], test=[(1, 0, 0)])
        with pytest.raises(ValueError):
            triple_classification(Model.zeros(2, 1, 2), ds, rng)


class TestTopK:
    def test_example_column(self):
        theta = np.array([[0.5], [0.1], [0.9]])
        assert top_k_dimension(theta, 0, 2) == [2, 0]

    def test_ties_lowest_ids(self):
        assert top_k_dimension(np.ones((5, 1)), 0, 2) == [0, 1]
        assert bottom_entities(np.ones((5, 2))).tolist() == [0, 0]

    def test_full_sort_oracle(self, rng):
        theta = rng.normal(size=(50, 10))
        tops = top_k_all(theta, 7)
        for l in range(10):
            oracle = sorted(range(50), key=lambda e: (-theta[e, l], e))[:7]
            assert tops[l].tolist() == oracle == top_k_dimension(theta, l, 7)
            assert bottom_entities(theta)[l] == min(range(50), key=lambda e: (theta[e, l], e))


class TestCoherence:
    def test_k2_closed_form(self, rng):
        theta = rng.normal(size=(12, 5))
        dense = random_pmi(rng, 12, density=1.0)
        expected = np.mean([dense[top[0], top[1]] for top in top_k_all(theta, 2)])
        assert coherence_at_k(theta, pmi_from_dense(dense), 2) == pytest.approx(expected, abs=1e-12)

    def test_zero_pmi(self, rng):
        assert coherence_at_k(rng.normal(size=(10, 4)), pmi_from_dense(np.zeros((10, 10))), 5) == 0

    def test_triple_loop_oracle(self, rng):
        theta = rng.normal(size=(10, 4))
        dense = random_pmi(rng, 10)
        k = 3
        per_dim = []
        for l in range(4):
            top = sorted(range(10), key=lambda e: (-theta[e, l], e))[:k]
            total = 0.0
            for i in range(1, k):
                for j in range(i):
                    total += dense[top[i], top[j]]
            per_dim.append(total)
        got = coherence_at_k(theta, pmi_from_dense(dense), k)
        assert abs(got - sum(per_dim) / 4) <= 1e-12

    def test_k_too_small(self, rng):
        with pytest.raises(ValueError):
            coherence_at_k(rng.normal(size=(4, 2)), pmi_from_dense(np.zeros((4, 4))), 1)


def intrusion_oracle(theta, dense, k):
    n, d = theta.shape
    hits = 0
    for l in range(d):
        top = sorted(range(n), key=lambda e: (-theta[e, l], e))[:k]
        intruder = min(range(n), key=lambda e: (theta[e, l], e))
        members = top + [intruder]
        scores = [sum(dense[a, b] for b in members if b != a) for a in members]
        low = min(scores)
        if scores.count(low) == 1 and scores.index(low) == k:
            hits += 1
    return 100.0 * hits / d


class TestAutoWI:
    def test_zero_pmi_all_ties(self, rng):
        theta = rng.normal(size=(20, 6))
        assert auto_word_intrusion(theta, pmi_from_dense(np.zeros((20, 20))), 5) == 0.0

    def test_perfect_separation(self, rng):
        n, d, k = 30, 5, 5
        # disjoint top sets, and a distinct bottom-most entity per dimension
        theta = rng.uniform(-1, 1, size=(n, d))
        for l in range(d):
            theta[k * l:k * (l + 1), l] = 10.0
            theta[25 + l, l] = -10.0
        dense = np.zeros((n, n))
        for top in top_k_all(theta, k):
            for a, b in itertools.combinations(top.tolist(), 2):
                dense[a, b] = dense[b, a] = 1.0
        bottoms = set(bottom_entities(theta).tolist())
        assert not bottoms & set(top_k_all(theta, k).ravel().tolist())
        assert auto_word_intrusion(theta, pmi_from_dense(dense), k) == 100.0

    def test_brute_force_oracle(self, rng):
        for _ in range(10):
            theta = rng.normal(size=(40, 8))
            dense = random_pmi(rng, 40, density=0.3)
            got = auto_word_intrusion(theta, pmi_from_dense(dense), 5)
            assert got == intrusion_oracle(theta, dense, 5)


class TestIntrusionTasks:
    @pytest.fixture
    def setup(self, rng, tmp_path):
        theta = rng.normal(size=(40, 8))
        names = [f"ent_{i}" for i in range(40)]
        return theta, names, tmp_path

    def test_every_dimension_once(self, setup):
        theta, names, tmp = setup
        tasks = export_intrusion_tasks(theta, names, 5, 8, np.random.default_rng(1),
                                       tmp / "t.tsv", tmp / "k.tsv")
        assert sorted(t.dimension for t in tasks) == list(range(8))

    def test_deterministic(self, setup):
        theta, names, tmp = setup
        for tag in "ab":
            export_intrusion_tasks(theta, names, 5, 6, np.random.default_rng(4),
                                   tmp / f"t{tag}.tsv", tmp / f"k{tag}.tsv")
        assert (tmp / "ta.tsv").read_bytes() == (tmp / "tb.tsv").read_bytes()
        assert (tmp / "ka.tsv").read_bytes() == (tmp / "kb.tsv").read_bytes()

    def test_k_plus_one_distinct(self, setup):
        theta, names, tmp = setup
        export_intrusion_tasks(theta, names, 5, 8, np.random.default_rng(2),
                               tmp / "t.tsv", tmp / "k.tsv")
        tasks = read_tasks(tmp / "t.tsv")
        key = read_answer_key(tmp / "k.tsv")
        assert len(tasks) == 8
        for task_id, shown in tasks.items():
            assert len(set(shown)) == 6
            assert key[task_id] in shown
        # dimension ids stay out of the annotator view
        assert all(len(line.split("\t")) == 7 for line in (tmp / "t.tsv").read_text().splitlines())

    def test_too_many_dims(self, setup):
        theta, names, tmp = setup
        with pytest.raises(ValueError):
            export_intrusion_tasks(theta, names, 5, 9, np.random.default_rng(0),
                                   tmp / "t.tsv", tmp / "k.tsv")


class TestManualScoring:
    key = {"t0": "x", "t1": "y", "t2": "z"}

    def test_all_correct(self):
        assert score_manual_intrusion(self.key, [dict(self.key)] * 3) == 100.0

    def test_two_of_three(self):
        wrong = {t: "w" for t in self.key}
        assert score_manual_intrusion(self.key, [dict(self.key), wrong, dict(self.key)]) == 100.0

    def test_tie_is_incorrect(self):
        other = {t: "w" for t in self.key}
        assert score_manual_intrusion(self.key, [dict(self.key), other]) == 0.0

    def test_majority_wrong(self):
        a, b = {t: "w" for t in self.key}, {t: "w" for t in self.key}
        assert score_manual_intrusion(self.key, [dict(self.key), a, b]) == 0.0

    def test_files_and_format_errors(self, tmp_path):
        (tmp_path / "key.tsv").write_text("t0\tx\t3\nt1\ty\t0\n")
        (tmp_path / "tasks.tsv").write_text("t0\tx\ta\tb\nt1\tc\ty\td\n")
        (tmp_path / "good.tsv").write_text("t0\tx\nt1\ty\n")
        assert score_manual_intrusion_files(tmp_path / "key.tsv", [tmp_path / "good.tsv"],
                                            tmp_path / "tasks.tsv") == 100.0
        key = read_answer_key(tmp_path / "key.tsv")
        tasks = read_tasks(tmp_path / "tasks.tsv")
        (tmp_path / "bad1.tsv").write_text("t0\tx\nt9\tx\n")
        with pytest.raises(FormatError, match=r"bad1.tsv:2: unknown task"):
            read_annotations(tmp_path / "bad1.tsv", key)
        (tmp_path / "bad2.tsv").write_text("t1\tnobody\n")
        with pytest.raises(FormatError, match=r"bad2.tsv:1: entity"):
            read_annotations(tmp_path / "bad2.tsv", key, tasks)
        (tmp_path / "bad3.tsv").write_text("t0\tx\textra\n")
        with pytest.raises(FormatError, match=r"bad3.tsv:1"):
            read_annotations(tmp_path / "bad3.tsv", key)


class TestQualitative:
    def test_shape_names_determinism(self, rng):
        theta = rng.normal(size=(30, 12))
        names = [f"Entity {i}" for i in range(30)]
        a = qualitative_report(theta, names, 5, 5, np.random.default_rng(3))
        b = qualitative_report(theta, names, 5, 5, np.random.default_rng(3))
        assert a == b
        lines = a.splitlines()
        assert len(lines) == 5
        for line in lines:
            head, body = line.split(": ", 1)
            l = int(head.split()[1])
            shown = body.split(", ")
            assert shown == [names[e] for e in top_k_dimension(theta, l, 5)]


class TestReports:
    def test_evaluate_model_keys(self, rng):
        ds = random_dataset(rng, 30, 3, 200)
        model = Model.gaussian(30, 3, 6, 0.5, rng)
        pmi = pmi_from_dense(random_pmi(rng, 30))
        m = evaluate_model(model, ds, pmi, np.random.default_rng(0))
        assert list(m) == ["MRR", "MR", "Hits@10", "AUC", "Accuracy", "AutoWI@5", "Coherence@5"]
        mf = evaluate_model(model, ds, pmi, np.random.default_rng(0), filtered=True)
        assert "MRR_filtered" in mf and mf["MRR"] == m["MRR"]

    def test_aggregate(self):
        agg = aggregate_metrics([{"MRR": 10.0, "MR": 3.0}, {"MRR": 20.0, "MR": 5.0}])
        assert agg == {"MRR": (15.0, 5.0), "MR": (4.0, 1.0)}
        single = aggregate_metrics([{"MRR": 12.5}])
        assert single["MRR"] == (12.5, 0.0)

    def test_tsv_round_trip(self, tmp_path):
        metrics = {"MRR": (1 / 3, 0.1), "AutoWI@5": (50.0, 0.0)}
        write_metrics_tsv(metrics, tmp_path / "m.tsv")
        assert read_metrics_tsv(tmp_path / "m.tsv") == metrics
        plain = {"MRR": 0.1 + 0.2}
        write_metrics_tsv(plain, tmp_path / "p.tsv")
        assert read_metrics_tsv(tmp_path / "p.tsv") == plain

    def test_text_units(self):
        text = format_metrics_text({"MRR": (30.4, 0.08), "AutoWI@5": 66.0}, title="test")
        assert "MRR (x100)" in text and "AutoWI@5 (%)" in text and "+/- 0.080" in text
