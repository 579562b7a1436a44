"""Decision/ranking metrics vs hand-computed constants and brute-force
oracles."""

import math

import numpy as np
import pytest
from oracles import (erde_bruteforce, ndcg_bruteforce,
                     precision_at_k_bruteforce)

from setrisk.errors import DataError
from setrisk.metrics import (classification_counts, erde, evaluate_run,
                             format_report, latency_and_speed, latency_cost,
                             latency_weighted_f1, precision_recall_f1,
                             ranking_metrics, speed_penalty)
from setrisk.rng import stream


class TestLatencyCost:
    def test_worked_value_lc5_of_1(self):
        # 1 - 1/(1 + e^(1-5)) = 0.017986...
        assert latency_cost(1, 5) == pytest.approx(0.017986209962091555, abs=1e-12)

    def test_saturates_to_one(self):
        assert latency_cost(1000, 5) == pytest.approx(1.0, abs=1e-12)

    def test_midpoint_at_o(self):
        assert latency_cost(5, 5) == pytest.approx(0.5, abs=1e-12)


class TestErde:
    def test_two_user_worked_example(self):
        # One TP at k=1 plus one FP; default c_fp is prevalence 1/2.
        value = erde([1, 1], [1, 0], [1, 3], o=5)
        expected = (latency_cost(1, 5) * 1.0 + 0.5) / 2.0
        assert value == pytest.approx(expected, abs=1e-12)

    def test_all_true_negatives_is_zero(self):
        assert erde([0, 0, 0], [0, 0, 0], [5, 5, 5], o=5) == 0.0

    def test_false_negative_costs_c_fn(self):
        assert erde([0], [1], [7], o=5, c_fn=1.0) == 1.0

    def test_large_horizon_removes_tp_cost(self):
        assert erde([1], [1], [10], o=10000) == pytest.approx(0.0, abs=1e-12)

    def test_order_invariance(self):
        d, y, k = [1, 0, 1, 0], [1, 1, 0, 0], [2, 9, 4, 1]
        a = erde(d, y, k, o=5)
        b = erde(d[::-1], y[::-1], k[::-1], o=5)
        assert a == pytest.approx(b, abs=1e-15)

    def test_matches_bruteforce_on_random_logs(self):
        for trial in range(20):
            rng = stream(31, "erde", trial)
            n = 20
            y = (rng.random(n) < 0.3).astype(int)
            d = (rng.random(n) < 0.5).astype(int)
            k = rng.integers(1, 50, size=n)
            c_fp = float(y.sum()) / n if y.sum() else 0.1
            for o in (5, 50):
                mine = erde(d, y, k, o=o, c_fp=c_fp)
                ref = erde_bruteforce(d, y, k, o=o, c_fp=c_fp)
                assert mine == pytest.approx(ref, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            erde([], [], [], o=5)


class TestLatencySpeed:
    def test_penalty_zero_at_first_post(self):
        assert speed_penalty(1) == 0.0

    def test_penalty_formula_at_100(self):
        expected = -1.0 + 2.0 / (1.0 + math.exp(-0.0078 * 99.0))
        assert speed_penalty(100) == pytest.approx(expected, abs=1e-15)
        assert round(float(speed_penalty(100)), 2) == 0.37

    def test_all_tps_at_round_one_gives_perfect_speed(self):
        latency, speed = latency_and_speed([1, 1, 1], [1, 1, 1], [1, 1, 1])
        assert latency == 1.0
        assert speed == 1.0

    def test_median_averages_middle_pair(self):
        latency, _ = latency_and_speed([1, 1, 1, 1], [1, 1, 1, 1], [1, 2, 7, 50])
        assert latency == 4.5

    def test_fp_fn_delays_ignored(self):
        latency, _ = latency_and_speed([1, 1, 0], [1, 0, 1], [3, 999, 999])
        assert latency == 3.0

    def test_no_tps_is_undefined(self):
        latency, speed = latency_and_speed([0, 1], [1, 0], [4, 4])
        assert latency is None and speed is None
        assert latency_weighted_f1(0.0, speed) == 0.0

    def test_latency_weighted_f1_is_product(self):
        assert latency_weighted_f1(0.41, 1.0) == pytest.approx(0.41)
        assert latency_weighted_f1(0.8, 0.5) == pytest.approx(0.4)


class TestClassification:
    def test_counts(self):
        assert classification_counts([1, 1, 0, 0], [1, 0, 1, 0]) == (1, 1, 1, 1)

    def test_f1_zero_when_undefined(self):
        p, r, f1 = precision_recall_f1([0, 0], [0, 0])
        assert (p, r, f1) == (0.0, 0.0, 0.0)

    def test_perfect(self):
        p, r, f1 = precision_recall_f1([1, 0, 1], [1, 0, 1])
        assert (p, r, f1) == (1.0, 1.0, 1.0)


class TestRanking:
    def worked_example(self):
        # Ten users; positives end up at ranks 1, 3, 5.
        uids = [f"u{i:02d}" for i in range(10)]
        scores = [1.0 - 0.05 * i for i in range(10)]
        labels = [1, 0, 1, 0, 1, 0, 0, 0, 0, 0]
        return uids, scores, labels

    def test_ndcg_worked_value(self):
        uids, scores, labels = self.worked_example()
        out = ranking_metrics(uids, scores, labels)
        dcg = 1.0 + 1.0 / math.log2(4) + 1.0 / math.log2(6)
        idcg = 1.0 + 1.0 / math.log2(3) + 1.0 / math.log2(4)
        assert out["ndcg_at_10"] == pytest.approx(dcg / idcg, abs=1e-12)
        assert out["ndcg_at_10"] == pytest.approx(0.8855, abs=5e-5)
        assert out["p_at_10"] == pytest.approx(0.3)

    def test_perfect_ranking_scores_one(self):
        uids = [f"u{i:02d}" for i in range(20)]
        labels = [1] * 10 + [0] * 10
        scores = [2.0] * 10 + [1.0] * 10
        out = ranking_metrics(uids, scores, labels)
        assert out["p_at_10"] == 1.0
        assert out["ndcg_at_10"] == 1.0
        assert out["ndcg_at_100"] == 1.0
        assert out["truncated"]  # fewer than 100 users

    def test_reversed_ranking_p10_zero(self):
        uids = [f"u{i:02d}" for i in range(20)]
        labels = [0] * 10 + [1] * 10
        scores = [2.0] * 10 + [1.0] * 10
        assert ranking_metrics(uids, scores, labels)["p_at_10"] == 0.0

    def test_ties_break_by_user_id(self):
        # Equal scores: 'a...' sorts before 'b...', so the negative with
        # the smaller id takes rank 1.
        uids = ["a-neg", "b-pos"]
        out = ranking_metrics(uids, [0.7, 0.7], [0, 1], cutoffs=(10,))
        # positive at rank 2: DCG = 1/log2(3), IDCG = 1.
        assert out["ndcg_at_10"] == pytest.approx(1.0 / math.log2(3), abs=1e-12)

    def test_monotone_transform_invariance(self):
        uids, scores, labels = self.worked_example()
        a = ranking_metrics(uids, scores, labels)
        b = ranking_metrics(uids, [3.0 * s - 1.0 for s in scores], labels)
        assert a == b

    def test_matches_bruteforce_on_random_rankings(self):
        for trial in range(30):
            rng = stream(9, "rank", trial)
            n = int(rng.integers(5, 40))
            uids = [f"u{i:03d}" for i in range(n)]
            scores = np.round(rng.random(n), 2).tolist()  # force some ties
            labels = (rng.random(n) < 0.4).astype(int).tolist()
            out = ranking_metrics(uids, scores, labels)
            assert out["p_at_10"] == pytest.approx(
                precision_at_k_bruteforce(scores, labels, uids, 10), abs=1e-12)
            for k in (10, 100):
                assert out[f"ndcg_at_{k}"] == pytest.approx(
                    ndcg_bruteforce(scores, labels, uids, k), abs=1e-12)

    def test_truncation_flagged_below_cutoff(self):
        out = ranking_metrics(["a", "b", "c"], [3.0, 2.0, 1.0], [1, 0, 1])
        assert out["truncated"]
        assert out["p_at_10"] == pytest.approx(2.0 / 3.0)


class TestEvaluateRun:
    def outcomes(self):
        return [
            {"user_id": "u1", "decision": 1, "k": 1},   # TP at 1
            {"user_id": "u2", "decision": 1, "k": 3},   # FP
            {"user_id": "u3", "decision": 0, "k": 10},  # FN
            {"user_id": "u4", "decision": 0, "k": 10},  # TN
        ]

    def labels(self):
        return {"u1": "positive", "u2": "negative", "u3": "positive",
                "u4": "negative"}

    def test_report_fields(self):
        snaps = {1: {"u1": 0.9, "u2": 0.8, "u3": 0.1, "u4": 0.2}}
        rep = evaluate_run(self.outcomes(), self.labels(), snapshots=snaps)
        assert (rep.tp, rep.fp, rep.fn, rep.tn) == (1, 1, 1, 1)
        assert rep.precision == 0.5 and rep.recall == 0.5 and rep.f1 == 0.5
        assert rep.latency_tp == 1.0 and rep.speed == 1.0
        assert rep.latency_weighted_f1 == 0.5
        # default c_fp = 2/4
        expected_5 = (latency_cost(1, 5) + 0.5 + 1.0 + 0.0) / 4.0
        assert rep.erde[5] == pytest.approx(expected_5, abs=1e-12)
        assert 1 in rep.ranking and "ndcg_at_100" in rep.ranking[1]

    def test_missing_label_rejected(self):
        with pytest.raises(DataError, match="no label"):
            evaluate_run(self.outcomes(), {"u1": "positive"})

    def test_unknown_label_rejected(self):
        labels = self.labels()
        labels["u2"] = "unknown"
        with pytest.raises(DataError, match="unusable label"):
            evaluate_run(self.outcomes(), labels)

    def test_duplicate_outcome_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            evaluate_run(self.outcomes() + [self.outcomes()[0]], self.labels())

    def test_format_report_renders(self):
        rep = evaluate_run(self.outcomes(), self.labels(),
                           snapshots={1: {"u1": 0.9, "u2": 0.8, "u3": 0.1, "u4": 0.2}})
        text = format_report(rep)
        assert "ERDE_5" in text and "ERDE_50" in text
        assert "0.500" in text
        assert "P@10" in text
