import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesod import BoxGaussian, CategoricalDist, DirichletState, categorical_entropy, gaussian_entropy
from bayesod.errors import ValidationError
from bayesod.fusion import FinalDetection
from bayesod.metrics import (
    GroundTruthObject,
    average_precision,
    evaluate,
    match_detections,
    minimum_uncertainty_error,
    pairwise_quality,
    pdq_score,
    spatial_quality,
    uncertainty_error,
)
from bayesod.model import Box

from oracles import greedy_match_replay, mue_sweep

SHARP = 1e-12 * np.eye(4)


def det(box, probs, score=None, image_id=0, cov=SHARP):
    g = BoxGaussian(np.asarray(box, dtype=float), cov)
    c = CategoricalDist(probs)
    return FinalDetection(g, c, DirichletState(np.asarray(probs) + 1.0), float(max(probs) if score is None else score),
                          gaussian_entropy(g), categorical_entropy(c), (0,), image_id)


def gt(box, k=0, image_id=0):
    return GroundTruthObject(image_id, Box.from_array(box), k)


class TestMatching:
    def test_exact(self):
        r = match_detections([det([0, 0, 10, 10], [1.0, 0.0])], [gt([0, 0, 10, 10])])
        assert r[0].matched and r[0].matched_gt == 0 and r[0].iou_at_match == 1.0

    def test_duplicate(self):
        r = match_detections([det([0, 0, 10, 10], [0.6, 0.4]), det([0, 0, 10, 10], [0.9, 0.1])],
                             [gt([0, 0, 10, 10])])
        assert [x.matched for x in r] == [False, True]

    def test_wrong_category(self):
        r = match_detections([det([0, 0, 10, 10], [0.1, 0.9])], [gt([0, 0, 10, 10], k=0)])
        assert not r[0].matched and r[0].matched_gt is None

    def test_crafted_scene_against_replay(self):
        # det 0 (highest score) overlaps GT 0 and GT 1 and takes GT 1; det 1
        # then falls to GT 0; det 2 is a duplicate; det 3 hits GT 2 below 0.5
        gts = [gt([0, 0, 10, 10]), gt([4, 0, 14, 10]), gt([50, 50, 60, 60])]
        dets = [det([3, 0, 13, 10], [0.95, 0.05]), det([1, 0, 11, 10], [0.9, 0.1]),
                det([4, 0, 14, 10], [0.8, 0.2]), det([55, 55, 65, 65], [0.7, 0.3])]
        recs = match_detections(dets, gts)
        ref = greedy_match_replay([(0, 0, d.score, d.box.mean) for d in dets],
                                  [(0, 0, g.box.as_array()) for g in gts])
        assert [r.matched_gt for r in recs] == ref == [1, 0, None, None]
        for r in recs:
            assert r.matched == (r.matched_gt is not None)
            if r.matched:
                assert r.iou_at_match >= 0.5

    def test_random_against_replay(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            gts, dets = [], []
            for _ in range(int(rng.integers(1, 8))):
                x, y = rng.uniform(0, 100, 2)
                gts.append(gt([x, y, x + 30, y + 30], int(rng.integers(2)), int(rng.integers(2))))
            scores = rng.permutation(40)[:12] / 40 + 0.01
            for s in scores:
                x, y = rng.uniform(0, 100, 2)
                k = int(rng.integers(2))
                p = [0.0, 0.0]
                p[k] = 1.0
                dets.append(det([x, y, x + 30, y + 30], p, score=s, image_id=int(rng.integers(2))))
            recs = match_detections(dets, gts)
            ref = greedy_match_replay([(d.image_id, d.label, d.score, d.box.mean) for d in dets],
                                      [(g.image_id, g.category_index, g.box.as_array()) for g in gts])
            assert [r.matched_gt for r in recs] == ref

    def test_bad_threshold(self):
        with pytest.raises(ValidationError):
            match_detections([], [], iou_thresh=1.0)


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision([True], 1) == 100.0

    def test_empty(self):
        assert average_precision([], 3) == 0.0

    def test_hand_curve(self):
        assert average_precision([True, False, True], 2) == pytest.approx(50 + 100 / 3, abs=1e-12)

    def test_needs_gt(self):
        with pytest.raises(ValidationError):
            average_precision([True], 0)

    def test_rank_only(self):
        rng = np.random.default_rng(1)
        dets = [det([x, 0, x + 10, 10], [s, 1 - s]) for x, s in zip(rng.uniform(0, 40, 10), rng.uniform(0.5, 1, 10))]
        gts = [gt([x, 0, x + 10, 10]) for x in (0, 15, 30)]
        base = evaluate(dets, gts, ["a", "b"], ["map"]).mAP
        rescaled = [FinalDetection(d.box, d.category, d.dirichlet, math.exp(3 * d.score) - 1, d.gaussian_entropy,
                                   d.categorical_entropy, d.member_anchor_ids, d.image_id) for d in dets]
        assert evaluate(rescaled, gts, ["a", "b"], ["map"]).mAP == base
        assert 0.0 <= base <= 100.0


class TestMue:
    def test_separable(self):
        mue, thr = minimum_uncertainty_error([1, 2], [3, 4])
        assert mue == 0.0 and 2 <= thr < 3

    def test_interleaved(self):
        assert minimum_uncertainty_error([1, 3], [2, 4])[0] == pytest.approx(25.0)

    def test_identical(self):
        assert minimum_uncertainty_error([1, 2, 3], [1, 2, 3])[0] == pytest.approx(50.0)

    def test_threshold_achieves_min(self):
        mue, thr = minimum_uncertainty_error([1, 3], [2, 4])
        assert 100 * uncertainty_error([1, 3], [2, 4], thr) == mue

    def test_undefined(self):
        with pytest.raises(ValidationError):
            minimum_uncertainty_error([], [1.0])

    @settings(max_examples=300)
    @given(st.lists(st.integers(0, 20), min_size=1, max_size=15), st.lists(st.integers(0, 20), min_size=1, max_size=15))
    def test_sweep_oracle_and_range(self, tp, fp):
        tp = [v / 4 for v in tp]
        fp = [v / 4 for v in fp]
        mue, _ = minimum_uncertainty_error(tp, fp)
        assert mue == pytest.approx(mue_sweep(tp, fp), abs=1e-12)
        assert 0.0 <= mue <= 50.0


class TestPdq:
    def test_perfect(self):
        details = {}
        s = pdq_score([det([10, 10, 50, 40], [1.0, 0.0])], [gt([10, 10, 50, 40])], (64, 48), details)
        assert s == pytest.approx(100.0, abs=1e-9)
        assert details["TP"] == 1 and details["FP"] == details["FN"] == 0

    def test_empty(self):
        assert pdq_score([], [gt([10, 10, 50, 40])], (64, 48)) == 0.0

    def test_label_geometric_mean(self):
        assert pairwise_quality(1.0, 0.25) == 0.5
        s = pdq_score([det([10, 10, 50, 40], [0.25, 0.75])], [gt([10, 10, 50, 40])], (64, 48))
        assert s == pytest.approx(50.0, abs=1e-9)

    def test_zero_label_annihilates(self):
        details = {}
        s = pdq_score([det([10, 10, 50, 40], [0.0, 1.0])], [gt([10, 10, 50, 40])], (64, 48), details)
        assert s == 0.0 and details["FP"] == 1 and details["FN"] == 1

    def test_spatial_quality_properties(self):
        g = Box(20, 20, 60, 50)
        sharp = spatial_quality([20, 20, 60, 50], SHARP, g, (100, 80))
        assert sharp == pytest.approx(1.0, abs=1e-12)
        loose = spatial_quality([20, 20, 60, 50], 9 * np.eye(4), g, (100, 80))
        shifted = spatial_quality([25, 20, 65, 50], SHARP, g, (100, 80))
        assert 0 < loose < 1 and 0 <= shifted < 1
        assert spatial_quality([20, 20, 60, 50], 36 * np.eye(4), g, (100, 80)) < loose

    def test_pair_quality_bounds(self):
        # the geometric mean can exceed the label quality itself (s=1, p=0.25
        # gives 0.5), so the tight bound is sqrt(p)
        rng = np.random.default_rng(2)
        for _ in range(200):
            s, p = rng.uniform(0, 1, 2)
            q = pairwise_quality(s, p)
            assert q <= min(1.0, math.sqrt(p)) + 1e-15
            assert q <= max(s, p) + 1e-15
            assert pairwise_quality(s, 0.0) == 0.0

    def test_unmatched_penalised(self):
        dets = [det([10, 10, 50, 40], [1.0, 0.0]), det([0, 0, 5, 5], [1.0, 0.0])]
        s = pdq_score(dets, [gt([10, 10, 50, 40])], (64, 48))
        assert s == pytest.approx(50.0, abs=1e-9)


class TestEvaluate:
    def scene(self, rng):
        gts, dets = [], []
        for img in range(3):
            for _ in range(3):
                x, y = rng.uniform(0, 120, 2)
                k = int(rng.integers(2))
                gts.append(gt([x, y, x + 30, y + 30], k, img))
                for _ in range(2):
                    p = rng.dirichlet([1, 1, 1])
                    jitter = rng.normal(0, 3, 4)
                    cov = np.diag(rng.uniform(1, 9, 4))
                    dets.append(det(np.array([x, y, x + 30, y + 30]) + jitter, p, image_id=img, cov=cov))
        return dets, gts

    def test_order_independent(self):
        rng = np.random.default_rng(3)
        dets, gts = self.scene(rng)
        cats = ["a", "b", "c"]
        base = evaluate(dets, gts, cats, image_sizes=(160, 160)).as_dict()
        for _ in range(3):
            pd, pg = rng.permutation(len(dets)), rng.permutation(len(gts))
            other = evaluate([dets[i] for i in pd], [gts[i] for i in pg], cats, image_sizes=(160, 160)).as_dict()
            assert other == base

    def test_report_ranges_and_means(self):
        rng = np.random.default_rng(4)
        dets, gts = self.scene(rng)
        r = evaluate(dets, gts, ["a", "b", "c"], image_sizes=(160, 160))
        assert 0 <= r.mAP <= 100 and 0 <= r.PDQ <= 100
        assert r.mAP == pytest.approx(np.mean(list(r.ap.values())))
        assert 2 not in r.ap
        assert any("'c'" in n for n in r.notices)
        if r.gmue:
            assert r.mGMUE == pytest.approx(np.mean(list(r.gmue.values())))
            assert all(0 <= v <= 50 for v in r.gmue.values())

    def test_pdq_needs_sizes(self):
        with pytest.raises(ValidationError):
            evaluate([], [gt([0, 0, 1, 1])], ["a"], ["pdq"])
        with pytest.raises(ValidationError):
            evaluate([], [], ["a"], ["bleu"])
