"""Consistency scoring, verdicts, and the comparator baselines."""

import numpy as np
import pytest

from conftest import random_small_model
from ibdpsc.detector import (
    DetectionReport,
    DetectorConfig,
    detect,
    effective_views,
    flag_scores,
    psc_label_consistency,
    psc_score,
    spc_score,
)
from ibdpsc.modelio import forward
from ibdpsc.selector import select_k
from ibdpsc.theory import (
    GaussianMixtureHead,
    certify_norm_threshold,
    density_classify,
)


class TestConfig:
    def test_paper_defaults(self):
        cfg = DetectorConfig()
        assert (cfg.omega, cfg.num_views, cfg.xi, cfg.threshold) == (1.5, 5, 0.6, 0.9)

    def test_invariants(self):
        with pytest.raises(ValueError, match="threshold"):
            DetectorConfig(threshold=1.0)
        with pytest.raises(ValueError, match="num_views"):
            DetectorConfig(num_views=0)

    def test_effective_views_clamp(self, small_model):
        cfg = DetectorConfig(k=small_model.bn_count, num_views=5)
        with pytest.warns(RuntimeWarning, match="truncating"):
            views = effective_views(cfg, small_model.bn_count)
        assert views == [small_model.bn_count]
        cfg1 = DetectorConfig(k=1, num_views=small_model.bn_count)
        assert effective_views(cfg1, small_model.bn_count) == list(
            range(1, small_model.bn_count + 1)
        )

    def test_unset_k_rejected(self, small_model, small_batch):
        with pytest.raises(ValueError, match="no selected k"):
            psc_score(small_model, DetectorConfig(), small_batch[0])


class TestPscScore:
    def test_unit_omega_single_view_equals_base_confidence(self):
        rng = np.random.default_rng(81)
        for _ in range(5):
            graph = random_small_model(rng, bn_layers=int(rng.integers(1, 4)))
            x = rng.random((3, 6, 6), dtype=np.float32)
            cfg = DetectorConfig(omega=1.0, num_views=1, k=1)
            y_prime, score, per_view = psc_score(graph, cfg, x)
            _, probs = forward(graph, x[None])
            assert y_prime == int(probs.argmax(axis=1)[0])
            assert score == float(probs[0, y_prime])
            assert per_view.shape == (1,)

    def test_fixture_separation(self, backdoored_model, eval_mix_ds):
        cfg = DetectorConfig(k=2)
        flags = eval_mix_ds.poison_flags
        report = detect(backdoored_model, cfg, eval_mix_ds)
        assert np.all(report.scores[flags] > 0.9)
        assert np.all(report.scores[~flags] < 0.9)

    def test_batch_equals_single_calls(self, backdoored_model, eval_mix_ds):
        cfg = DetectorConfig(k=2)
        images = eval_mix_ds.images[:6]
        report = detect(backdoored_model, cfg, images)
        for i in range(6):
            y_prime, score, per_view = psc_score(backdoored_model, cfg, images[i])
            rec = report.records[i]
            assert rec.y_prime == y_prime
            assert rec.psc == score
            np.testing.assert_array_equal(np.array(rec.view_confidences), per_view)

    def test_confidence_read_at_original_label(self, backdoored_model, eval_mix_ds):
        # Benign samples lose their label under amplification; confidence is
        # still read at y_prime, so per-view values sit near zero rather than
        # tracking each view's own argmax.
        cfg = DetectorConfig(k=2)
        clean = eval_mix_ds.images[0]
        _, _, per_view = psc_score(backdoored_model, cfg, clean)
        assert per_view[-1] < 0.05

    def test_mean_matches_per_view(self, backdoored_model, eval_mix_ds):
        cfg = DetectorConfig(k=2)
        report = detect(backdoored_model, cfg, eval_mix_ds.images[:10])
        for rec in report.records:
            assert rec.psc == pytest.approx(np.mean(rec.view_confidences), abs=1e-6)

    def test_monotone_aggregation(self, backdoored_model, eval_mix_ds):
        # dropping a view whose confidence sits below the current mean can
        # only raise the average
        cfg = DetectorConfig(k=2)
        report = detect(backdoored_model, cfg, eval_mix_ds.images[:10])
        for rec in report.records:
            confs = np.array(rec.view_confidences)
            below = confs < rec.psc
            if below.any():
                victim = int(np.flatnonzero(below)[0])
                reduced = float(np.delete(confs, victim).mean())
                assert reduced > rec.psc


class TestDetect:
    def test_threshold_one_flags_nothing(self, backdoored_model, eval_mix_ds):
        # strict comparison: a PSC of exactly 1.0 cannot exceed a threshold
        # of 1; the fixture's triggered samples score exactly 1.0
        report = detect(backdoored_model, DetectorConfig(k=2), eval_mix_ds)
        assert report.scores.max() == 1.0
        assert not flag_scores(report.scores, 1.0).any()

    def test_zero_threshold_flags_everything(self, backdoored_model, eval_mix_ds):
        report = detect(backdoored_model, DetectorConfig(k=2), eval_mix_ds)
        assert report.scores.min() > 0.0
        assert flag_scores(report.scores, 0.0).all()
        tiny = detect(backdoored_model, DetectorConfig(k=2, threshold=1e-9), eval_mix_ds)
        assert tiny.verdicts.all()

    def test_flagged_set_equals_triggered_subset(self, backdoored_model, eval_mix_ds):
        report = detect(backdoored_model, DetectorConfig(k=2), eval_mix_ds)
        np.testing.assert_array_equal(report.verdicts, eval_mix_ds.poison_flags)

    def test_csv_deterministic_and_parseable(self, backdoored_model, eval_mix_ds):
        cfg = DetectorConfig(k=2)
        a = detect(backdoored_model, cfg, eval_mix_ds.images[:8]).to_csv()
        b = detect(backdoored_model, cfg, eval_mix_ds.images[:8]).to_csv()
        assert a == b
        rows = DetectionReport.parse_csv(a)
        assert len(rows) == 8
        report = detect(backdoored_model, cfg, eval_mix_ds.images[:8])
        for row, rec in zip(rows, report.records):
            assert row == (rec.sample_index, rec.y_prime, rec.psc, rec.verdict)

    def test_truncated_views_leave_empty_csv_cells(self, backdoored_model, eval_mix_ds):
        with pytest.warns(RuntimeWarning, match="truncating"):
            report = detect(backdoored_model, DetectorConfig(k=5, num_views=5),
                            eval_mix_ds.images[:3])
        assert report.views == (5, 6)  # clamped at the model's 6 BN layers
        header, first = report.to_csv().splitlines()[:2]
        assert header.endswith("view_conf_5")
        assert first.endswith(",,,")  # three of five view columns unfilled

    def test_rethreshold_equals_fresh_detect(self, backdoored_model, eval_mix_ds):
        base = detect(backdoored_model, DetectorConfig(k=2, threshold=0.9), eval_mix_ds)
        redone = base.rethreshold(0.5)
        fresh = detect(backdoored_model, DetectorConfig(k=2, threshold=0.5), eval_mix_ds)
        np.testing.assert_array_equal(redone.verdicts, fresh.verdicts)
        assert redone.config.threshold == 0.5

    def test_thread_env_does_not_change_results(self, backdoored_model, eval_mix_ds,
                                                monkeypatch):
        cfg = DetectorConfig(k=2)
        sequential = detect(backdoored_model, cfg, eval_mix_ds.images[:12])
        monkeypatch.setenv("IBDPSC_THREADS", "4")
        threaded = detect(backdoored_model, cfg, eval_mix_ds.images[:12])
        np.testing.assert_array_equal(sequential.scores, threaded.scores)
        assert sequential.views == threaded.views

    def test_selector_feeds_detector(self, backdoored_model, reference_ds):
        selection = select_k(backdoored_model, 1.5, 0.6, reference_ds)
        assert selection.k == 2
        cfg = DetectorConfig(k=selection.k)
        assert effective_views(cfg, backdoored_model.bn_count) == [2, 3, 4, 5, 6]


class TestGaussianHeadLink:
    def test_density_dominance_explains_fixture(self, backdoored_model, eval_mix_ds):
        """The fixture's feature space, read as a Gaussian mixture with the
        target direction widest, certifies a radius beyond which everything
        is target-classified - and amplified benign features land there."""
        from ibdpsc.amplifier import amplify
        from ibdpsc.modelio import forward as fwd

        head_layer = backdoored_model.layers[-1]
        flags = eval_mix_ds.poison_flags
        feats = {}
        for name, rows in (("clean", ~flags), ("trig", flags)):
            logits = fwd(backdoored_model, eval_mix_ds.images[rows])[0]
            feats[name] = (logits - head_layer.bias[None, :]).astype(np.float64)

        sigma_t = float(feats["trig"].std(axis=0).max()) + 1.0
        sigma_c = min(1.0, float(feats["clean"].std(axis=0).max()) + 0.5)
        head = GaussianMixtureHead(
            means=np.stack([feats["trig"].mean(axis=0), feats["clean"].mean(axis=0)]),
            sigmas=np.array([sigma_t, sigma_c]),
            priors=np.array([0.5, 0.5]),
            target=0,
        )
        cert = certify_norm_threshold(head)
        assert cert.backdoor_condition_holds and cert.is_finite

        # triggered features already live beyond the certified radius
        trig_norms = np.linalg.norm(feats["trig"], axis=1)
        assert np.all(trig_norms > cert.threshold)
        for f in feats["trig"][:10]:
            assert density_classify(head, f) == 0

        # amplification pushes benign features beyond the radius too, which
        # is exactly why their original-label confidence collapses
        view = amplify(backdoored_model, 6, 1.5)
        amped = fwd(backdoored_model, eval_mix_ds.images[~flags][:10], view.overrides)[0]
        amped = (amped - head_layer.bias[None, :]).astype(np.float64)
        assert np.all(np.linalg.norm(amped, axis=1) > cert.threshold)
        for f in amped:
            assert density_classify(head, f) == 0


class TestLabelConsistency:
    def test_unit_omega_single_view(self, backdoored_model, eval_mix_ds):
        cfg = DetectorConfig(omega=1.0, num_views=1, k=1)
        assert psc_label_consistency(backdoored_model, cfg, eval_mix_ds.images[0]) == 1.0

    def test_all_views_flip_label(self, backdoored_model, eval_mix_ds):
        cfg = DetectorConfig(k=3, num_views=3)  # views 3..5: every clean label flips
        assert psc_label_consistency(backdoored_model, cfg, eval_mix_ds.images[0]) == 0.0

    def test_counted_fraction(self, backdoored_model, eval_mix_ds):
        # views 1..5; the fixture keeps the clean label only at view 1
        cfg = DetectorConfig(k=1, num_views=5)
        assert psc_label_consistency(backdoored_model, cfg, eval_mix_ds.images[0]) == 0.2

    def test_triggered_keeps_label(self, backdoored_model, eval_mix_ds):
        cfg = DetectorConfig(k=2)
        img = eval_mix_ds.images[eval_mix_ds.poison_flags][0]
        assert psc_label_consistency(backdoored_model, cfg, img) == 1.0


class TestSpcBaseline:
    def test_scale_one_always_consistent(self, backdoored_model, eval_mix_ds):
        assert spc_score(backdoored_model, eval_mix_ds.images[0], [1.0]) == 1.0

    def test_saturated_white_image_immune(self, white_trigger_model):
        white = np.ones((3, 8, 8), dtype=np.float32)
        assert spc_score(white_trigger_model, white, [3, 5, 7, 9, 11]) == 1.0

    def test_matches_direct_recomputation(self, backdoored_model, eval_mix_ds):
        scales = [3.0, 5.0, 7.0, 9.0, 11.0]
        for img in eval_mix_ds.images[:6]:
            base = int(forward(backdoored_model, img[None])[1].argmax())
            kept = 0
            for s in scales:
                scaled = np.clip(img[None] * np.float32(s), 0, 1).astype(np.float32)
                kept += int(forward(backdoored_model, scaled)[1].argmax()) == base
            assert spc_score(backdoored_model, img, scales) == kept / len(scales)

    def test_guards(self, backdoored_model, eval_mix_ds):
        with pytest.raises(ValueError, match="non-empty"):
            spc_score(backdoored_model, eval_mix_ds.images[0], [])
        with pytest.raises(ValueError, match=">= 1"):
            spc_score(backdoored_model, eval_mix_ds.images[0], [0.5])
