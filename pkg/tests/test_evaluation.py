import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magface_lab.errors import DegenerateAggregationError, DomainError
from magface_lab.evaluation import (
    PairProtocol,
    QualityScores,
    ahc,
    aggregate_magface_plus,
    aggregate_mean,
    aggregate_templates,
    bcubed_f,
    build_templates,
    clustering_report,
    cosine_score,
    dbscan,
    error_versus_reject,
    fnmr_at_fmr,
    kmeans,
    nmi,
    pair_scores,
    rejected_mask,
    relabel,
    tar_at_far,
    template_protocol,
    verification_table,
)
from magface_lab.toy import synthetic_identity_embeddings

GEN = [0.9, 0.8, 0.3]
IMP = [0.5, 0.2, 0.1, 0.05]

score_lists = st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=30)


def sweep_fnmr(genuine, impostor, target):
    """Exhaustive oracle over impostor scores.

    Rejecting every impostor is represented by the lowest genuine score above
    all impostors (or +inf when there is none).
    """
    genuine, impostor = np.asarray(genuine), np.asarray(impostor)
    above = genuine[genuine > impostor.max()]
    reject_all = above.min() if above.size else math.inf
    for t in sorted(set(impostor) | {-math.inf, reject_all}):
        if np.mean(impostor >= t) <= target + 1e-12:
            return np.mean(genuine < t)


class TestScores:
    def test_cosine_examples(self):
        assert cosine_score([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0)
        assert cosine_score([1.0, 2.0], [-1.0, -2.0]) == pytest.approx(-1.0)
        assert cosine_score([6.0, 8.0], [1.0, 0.0]) == pytest.approx(0.6)
        with pytest.raises(DomainError):
            cosine_score([0.0, 0.0], [1.0, 0.0])

    def test_pair_scores_match_cosine(self):
        rng = np.random.default_rng(0)
        E = rng.standard_normal((6, 4))
        pr = PairProtocol.all_pairs([0, 0, 1, 1, 2, 2])
        s = pair_scores(pr, E)
        for i, (a, b) in enumerate(zip(pr.index_a, pr.index_b)):
            assert s[i] == pytest.approx(cosine_score(E[a], E[b]))
        assert pr.n_genuine == 3 and pr.n_impostor == 12

    def test_protocol_from_pairs(self):
        pr = PairProtocol.from_pairs([(0, 1, True), (1, 2, False)])
        assert len(pr) == 2 and pr.n_genuine == 1
        assert len(PairProtocol.from_pairs([])) == 0


class TestThresholds:
    def test_sweep_fixture(self):
        t, f = fnmr_at_fmr(GEN, IMP, 0.25)
        assert t == 0.5 and f == pytest.approx(1 / 3)
        assert tar_at_far(GEN, IMP, 0.25) == pytest.approx(2 / 3)

    def test_perfect_separation(self):
        t, f = fnmr_at_fmr([1.0] * 5, [0.0] * 5, 0.01)
        assert f == 0.0 and 0.0 < t <= 1.0
        assert all(v == 1.0 for v in verification_table([1.0] * 5, [0.0] * 5, [0.1, 0.01, 0.001]).values())

    def test_accept_all(self):
        t, f = fnmr_at_fmr(GEN, IMP, 1.0)
        assert t == -math.inf and f == 0.0

    def test_indistinguishable_scores(self):
        assert tar_at_far([0.4] * 4, [0.4] * 4, 1e-3) == 0.0

    def test_errors(self):
        with pytest.raises(DomainError):
            fnmr_at_fmr([], IMP, 0.1)
        with pytest.raises(DomainError):
            fnmr_at_fmr(GEN, IMP, 0.0)

    @given(score_lists, score_lists, st.floats(0.001, 1.0))
    def test_matches_exhaustive_sweep(self, g, i, target):
        assert fnmr_at_fmr(g, i, target)[1] == pytest.approx(sweep_fnmr(g, i, target))

    @given(score_lists, score_lists, st.floats(0.001, 1.0), st.floats(0.001, 1.0))
    def test_monotone_in_target(self, g, i, t1, t2):
        lo, hi = sorted((t1, t2))
        (ta, fa), (tb, fb) = fnmr_at_fmr(g, i, lo), fnmr_at_fmr(g, i, hi)
        assert tb <= ta and fb <= fa


def oracle_fixture(seed=0):
    """Clean samples near their identity center plus corrupted ones."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((10, 6))
    E, y, q = [], [], []
    for c in range(10):
        for j in range(6):
            corrupted = j == 0
            noise = rng.standard_normal(6) * (3.0 if corrupted else 0.05)
            E.append(centers[c] + noise)
            y.append(c)
            q.append(0.0 if corrupted else 1.0)
    return np.array(E), np.array(y), np.array(q)


class TestRejectCurve:
    def test_no_rejection_equals_plain_fnmr(self):
        E, y, q = synthetic_identity_embeddings(10, 5, 6, 1.2, seed=0)
        pr = PairProtocol.all_pairs(y)
        s = pair_scores(pr, E)
        curve = error_versus_reject(pr, E, q, [0.0], 0.01)
        assert curve.fnmr_values[0] == fnmr_at_fmr(s[pr.is_genuine], s[~pr.is_genuine], 0.01)[1]

    def test_oracle_quality_is_nonincreasing(self):
        E, y, q = oracle_fixture()
        curve = error_versus_reject(PairProtocol.all_pairs(y), E, q, [0.0, 0.1, 0.2, 0.3], 0.01)
        assert curve.valid.all()
        assert np.all(np.diff(curve.fnmr_values) <= 0)
        assert curve.fnmr_values[-1] < curve.fnmr_values[0]

    def test_constant_quality_is_flat(self):
        E, y, _ = synthetic_identity_embeddings(20, 6, 8, 1.4, seed=1)
        curve = error_versus_reject(PairProtocol.all_pairs(y), E, np.full(len(y), 0.7),
                                    [0.0, 0.2, 0.4, 0.6], 0.01)
        assert np.all(curve.fnmr_values[curve.valid] == curve.fnmr_values[0])
        assert curve.n_rejected.tolist() == [0, 0, 0, 0]

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_quality_is_roughly_flat(self, seed):
        E, y, _ = synthetic_identity_embeddings(40, 10, 8, 1.4, seed=0)
        pr = PairProtocol.all_pairs(y)
        fr = [0.0, 0.1, 0.2, 0.3]
        rand = error_versus_reject(pr, E, np.random.default_rng(seed).uniform(size=len(y)), fr, 0.01)
        mag = error_versus_reject(pr, E, QualityScores.from_magnitudes(E), fr, 0.01)
        assert np.max(np.abs(rand.fnmr_values - rand.fnmr_values[0])) <= 0.05
        assert mag.fnmr_values[-1] < rand.fnmr_values[-1] - 0.1

    def test_invalid_point_when_nothing_survives(self):
        E = np.array([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]])
        curve = error_versus_reject(PairProtocol.all_pairs([0, 0, 1]), E, [0.1, 0.2, 0.9], [0.0, 0.34], 0.5)
        assert curve.valid.tolist() == [True, False]
        assert math.isnan(curve.fnmr_values[1])

    def test_fraction_validation(self):
        E, y, q = oracle_fixture()
        pr = PairProtocol.all_pairs(y)
        with pytest.raises(DomainError):
            error_versus_reject(pr, E, q, [0.2, 0.1], 0.01)
        with pytest.raises(DomainError):
            error_versus_reject(pr, E, q, [0.0, 1.0], 0.01)
        with pytest.raises(DomainError):
            error_versus_reject(pr, E, q[:-1], [0.0], 0.01)

    def test_header_records_threshold_choice(self):
        E, y, q = oracle_fixture()
        h = error_versus_reject(PairProtocol.all_pairs(y), E, q, [0.0], 0.01).header()
        assert "recomputed" in h["threshold_rule"] and h["fmr_target"] == 0.01

    def test_rejected_mask_keeps_ties_together(self):
        q = np.array([0.1, 0.5, 0.5, 0.5, 0.9])
        assert rejected_mask(q, 0.2).tolist() == [True, False, False, False, False]
        assert rejected_mask(q, 0.4).tolist() == [True, False, False, False, False]
        assert rejected_mask(q, 0.8).tolist() == [True, True, True, True, False]
        assert not rejected_mask(q, 0.0).any()

    def test_quality_scores_validation(self):
        with pytest.raises(DomainError):
            QualityScores([1.0, float("nan")])
        with pytest.raises(DomainError):
            QualityScores([1.0], source="oracle")


class TestAggregation:
    def test_mean_examples(self):
        np.testing.assert_allclose(aggregate_mean([[3.0, 4.0]]), [0.6, 0.8])
        np.testing.assert_allclose(aggregate_mean([[3.0, 4.0], [3.0, 4.0]]), [0.6, 0.8])
        np.testing.assert_allclose(aggregate_mean([[1.0, 0.0], [0.0, 5.0]]), [2**-0.5, 2**-0.5])

    def test_magface_plus_examples(self):
        np.testing.assert_allclose(aggregate_magface_plus([[3.0, 4.0]]), [0.6, 0.8])
        v = aggregate_magface_plus([[100.0, 0.0], [0.0, 1.0]])
        angle = math.degrees(math.atan2(v[1], v[0]))
        assert angle == pytest.approx(math.degrees(math.atan(1 / 100)))
        assert angle < 0.6

    def test_equal_magnitudes_give_mean(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            U = rng.standard_normal((5, 7))
            F = 42.0 * U / np.linalg.norm(U, axis=1, keepdims=True)
            np.testing.assert_allclose(aggregate_magface_plus(F), aggregate_mean(F), atol=1e-12)

    def test_cancellation_is_an_error(self):
        with pytest.raises(DegenerateAggregationError):
            aggregate_mean([[1.0, 0.0], [-1.0, 0.0]])
        with pytest.raises(DegenerateAggregationError):
            aggregate_magface_plus([[2.0, 1.0], [-2.0, -1.0]])
        with pytest.raises(DomainError):
            aggregate_mean(np.zeros((0, 2)))
        with pytest.raises(DomainError):
            aggregate_magface_plus([[0.0, 0.0]])

    def test_templates(self):
        labels = np.repeat(np.arange(3), 9)
        templates = build_templates(labels, 4, seed=0)
        assert len(templates) == 6
        assert all(len(idx) == 4 and np.all(labels[idx] == lab) for lab, idx in templates)
        assert build_templates(labels, 4, seed=0)[0][1].tolist() == templates[0][1].tolist()
        pr = template_protocol(templates)
        assert pr.n_genuine == 3 and pr.n_impostor == 12
        E = np.random.default_rng(0).standard_normal((27, 3))
        T = aggregate_templates(E, templates, "magface_plus")
        np.testing.assert_allclose(np.linalg.norm(T, axis=1), 1.0)
        with pytest.raises(DomainError):
            aggregate_templates(E, templates, "max")


def two_blobs(seed=0, per=15):
    rng = np.random.default_rng(seed)
    a = np.array([1.0, 0.0, 0.0]) + 0.02 * rng.standard_normal((per, 3))
    b = np.array([0.0, 1.0, 0.0]) + 0.02 * rng.standard_normal((per, 3))
    return np.vstack([a, b]) * rng.uniform(1, 50, size=(2 * per, 1)), np.repeat([0, 1], per)


class TestClustering:
    @pytest.mark.parametrize("method", ["kmeans", "ahc", "dbscan"])
    def test_two_blobs(self, method):
        E, truth = two_blobs()
        if method == "kmeans":
            res = kmeans(E, 2, seed=1)
        elif method == "ahc":
            res = ahc(E, 2)
        else:
            res = dbscan(E, eps=0.05, min_pts=3)
        assert nmi(res, truth) == 1.0
        assert res.n_clusters == 2

    def test_k_equals_count_gives_singletons(self):
        E = np.random.default_rng(2).standard_normal((7, 4))
        for res in (kmeans(E, 7, seed=0), ahc(E, 7)):
            assert sorted(res.assignment.tolist()) == list(range(7))

    def test_dbscan_tiny_eps_is_all_noise(self):
        E = np.random.default_rng(3).standard_normal((10, 4))
        assert (dbscan(E, eps=1e-9, min_pts=2).assignment == -1).all()

    @pytest.mark.parametrize("seed", range(5))
    def test_kmeans_objective_nonincreasing(self, seed):
        E = np.random.default_rng(seed).standard_normal((200, 5))
        hist = kmeans(E, 6, seed=seed).objective_history
        assert len(hist) >= 2
        assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))

    def test_kmeans_deterministic_and_validated(self):
        E = np.random.default_rng(0).standard_normal((40, 3))
        assert np.array_equal(kmeans(E, 3, seed=4).assignment, kmeans(E, 3, seed=4).assignment)
        with pytest.raises(DomainError):
            kmeans(E, 0)
        with pytest.raises(DomainError):
            ahc(E, 41)
        with pytest.raises(DomainError):
            dbscan(E, eps=0.0, min_pts=2)

    def test_relabel(self):
        assert relabel([5, 5, -1, 2, 5, 9]).tolist() == [0, 0, -1, 1, 0, 2]


def nmi_by_definition(a, b):
    n = len(a)
    ca, cb = sorted(set(a)), sorted(set(b))
    pa = {x: sum(1 for v in a if v == x) / n for x in ca}
    pb = {x: sum(1 for v in b if v == x) / n for x in cb}
    mi = 0.0
    for x, z in itertools.product(ca, cb):
        pxz = sum(1 for u, v in zip(a, b) if u == x and v == z) / n
        if pxz > 0:
            mi += pxz * math.log(pxz / (pa[x] * pb[z]))
    ha = -sum(p * math.log(p) for p in pa.values())
    hb = -sum(p * math.log(p) for p in pb.values())
    return mi / ((ha + hb) / 2)


def bcubed_by_items(pred, truth):
    n = len(pred)
    prec = sum(sum(1 for j in range(n) if pred[j] == pred[i] and truth[j] == truth[i])
               / sum(1 for j in range(n) if pred[j] == pred[i]) for i in range(n)) / n
    rec = sum(sum(1 for j in range(n) if pred[j] == pred[i] and truth[j] == truth[i])
              / sum(1 for j in range(n) if truth[j] == truth[i]) for i in range(n)) / n
    return prec, rec, 2 * prec * rec / (prec + rec)


labelings = st.lists(st.integers(0, 4), min_size=2, max_size=25)


class TestClusteringMetrics:
    def test_nmi_identity_and_relabeling(self):
        a = [0, 0, 1, 1, 2, 2]
        assert nmi(a, a) == 1.0
        assert nmi(a, [2, 2, 0, 0, 1, 1]) == pytest.approx(1.0)

    def test_nmi_six_points(self):
        a = [0, 0, 0, 1, 1, 1]
        b = [0, 0, 1, 1, 2, 2]
        assert nmi(a, b) == pytest.approx(nmi_by_definition(a, b), rel=1e-12)

    def test_nmi_trivial_partitions(self):
        assert nmi([0, 0, 0], [1, 1, 1]) == 1.0
        with pytest.raises(DomainError):
            nmi([0, 1], [0])

    def test_bcubed_examples(self):
        assert bcubed_f([0, 1, 1], [0, 1, 1]) == (1.0, 1.0, 1.0)
        p, r, f = bcubed_f([0, 0, 0, 0], [0, 0, 1, 1])
        assert (p, r) == (0.5, 1.0) and f == 2 / 3
        p, r, f = bcubed_f([0, 1, 2, 3, 4], [7] * 5)
        assert p == 1.0 and r == pytest.approx(1 / 5)

    @given(labelings, st.data())
    def test_metrics_match_definitions_and_ignore_relabeling(self, a, data):
        b = data.draw(st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))
        perm = np.random.default_rng(len(a)).permutation(5)
        a2 = [int(perm[v]) + 10 for v in a]
        assert bcubed_f(a, b) == pytest.approx(bcubed_by_items(a, b))
        assert bcubed_f(a2, b) == pytest.approx(bcubed_f(a, b))
        assert nmi(a2, b) == pytest.approx(nmi(a, b))
        if len(set(a)) > 1 or len(set(b)) > 1:
            assert nmi(a, b) == pytest.approx(nmi_by_definition(a, b), abs=1e-12)

    def test_noise_counts_as_singletons(self):
        assert bcubed_f([-1, -1, 0, 0], [0, 1, 2, 2]) == (1.0, 1.0, 1.0)

    def test_report(self):
        E, truth = two_blobs()
        rep = clustering_report("ahc", {"k": 2}, ahc(E, 2), truth)
        assert set(rep) == {"method", "params", "nmi", "bcubed_precision", "bcubed_recall", "bcubed_f"}
        assert rep["bcubed_f"] == 1.0
