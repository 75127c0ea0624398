import io
import math

import numpy as np
import pytest

from protofusion import GanConfig
from protofusion.evaluation import (EvalReport, confidence_interval, evaluate,
                                    topk_accuracy, write_report_csv)


class TestTopkAccuracy:
    def test_truth_outside_top1(self):
        assert topk_accuracy(["C", "A", "B"], "A", 1) == 0.0

    def test_truth_inside_top2(self):
        assert topk_accuracy(["C", "A", "B"], "A", 2) == 1.0

    def test_k_at_least_list_length_always_hits(self):
        assert topk_accuracy(["C", "A", "B"], "B", 3) == 1.0
        assert topk_accuracy(["C", "A", "B"], "B", 99) == 1.0

    def test_k_below_one_rejected(self):
        with pytest.raises(ValueError):
            topk_accuracy(["A"], "A", 0)


class TestConfidenceInterval:
    def test_zero_variance(self):
        mean, hw = confidence_interval([0.5] * 10)
        assert mean == 0.5
        assert hw == 0.0

    def test_unit_stddev_600_values(self):
        # data constructed to have sample stddev exactly 1
        c = math.sqrt(599.0 / 600.0)
        values = [c] * 300 + [-c] * 300
        mean, hw = confidence_interval(values)
        assert mean == pytest.approx(0.0, abs=1e-15)
        assert hw == pytest.approx(1.96 / math.sqrt(600.0), abs=1e-12)
        assert hw == pytest.approx(0.08002, abs=1e-5)

    def test_matches_two_pass_oracle(self, rng):
        values = list(rng.random(87))
        mean, hw = confidence_interval(values)

        # independent two-pass variance computation
        m = sum(values) / len(values)
        var = sum((v - m) ** 2 for v in values) / (len(values) - 1)
        expect = 1.96 * math.sqrt(var) / math.sqrt(len(values))
        assert mean == pytest.approx(m, abs=1e-12)
        assert hw == pytest.approx(expect, abs=1e-12)

    def test_needs_two_values(self):
        with pytest.raises(ValueError):
            confidence_interval([1.0])


class TestEvaluate:
    def test_single_way_scores_one(self, tiny_dataset):
        with pytest.warns(UserWarning):
            rep = evaluate(tiny_dataset, "image_only", way=1, shot=1,
                           episodes=4, query_per_class=3, seed=3)
        for summary in rep.metrics.values():
            assert summary.mean == 1.0

    def test_image_only_never_reads_texts(self, tiny_dataset):
        assert tiny_dataset.text_reads == 0
        evaluate(tiny_dataset, "image_only", way=3, shot=2, episodes=5,
                 query_per_class=3, metrics=(1,), seed=3)
        assert tiny_dataset.text_reads == 0

    def test_monotone_topk(self, tiny_dataset):
        with pytest.warns(UserWarning):
            rep = evaluate(tiny_dataset, "image_only", way=3, shot=1,
                           episodes=10, query_per_class=4, seed=5)
        assert (rep.metrics["top1"].mean <= rep.metrics["top3"].mean
                <= rep.metrics["top5"].mean)

    def test_same_seed_identical_reports_across_thread_counts(self, tiny_dataset,
                                                              tiny_gan_state):
        reports = [
            evaluate(tiny_dataset, "multimodal", way=3, shot=1, episodes=6,
                     gan_model=tiny_gan_state, rounds=2, extra_steps_per_round=1,
                     query_per_class=3, metrics=(1,), seed=11, threads=t)
            for t in (1, 2, 8)
        ]
        base = reports[0]
        for rep in reports[1:]:
            assert rep.metrics["top1"].values == base.metrics["top1"].values

    def test_modes_zsl_and_multimodal_run(self, tiny_dataset, tiny_gan_state):
        for mode in ("zsl", "multimodal"):
            rep = evaluate(tiny_dataset, mode, way=3, shot=1, episodes=4,
                           gan_model=tiny_gan_state, rounds=2,
                           extra_steps_per_round=0, query_per_class=3,
                           metrics=(1,), seed=7)
            assert rep.episode_count == 4
            assert 0.0 <= rep.metrics["top1"].mean <= 1.0

    def test_gan_config_triggers_training(self, tiny_dataset):
        config = GanConfig(text_dim=6, visual_dim=4, iterations=3,
                           batch_size=4, seed=1)
        rep = evaluate(tiny_dataset, "zsl", way=2, shot=1, episodes=3,
                       gan_model=config, query_per_class=2, metrics=(1,), seed=1)
        assert rep.episode_count == 3

    def test_unknown_mode_rejected(self, tiny_dataset):
        with pytest.raises(ValueError, match="mode"):
            evaluate(tiny_dataset, "both", way=2, shot=1, episodes=2, seed=0)

    def test_refinement_matches_evaluate_fast_path(self, tiny_dataset,
                                                   tiny_gan_state):
        """The shared per-round generator timeline must equal per-episode
        refinement: refinement training only touches base-class batches."""
        from protofusion import prototypes
        from protofusion.episodes import sample_episode
        from protofusion.evaluation import _episode_rngs

        ds = tiny_dataset
        seed = 17
        children = np.random.SeedSequence(seed).spawn(1)
        sampler_rng, noise_rng = _episode_rngs(children[0])
        ep = sample_episode(ds, 3, 1, 3, None, sampler_rng)
        support = {
            cid: [(ds.by_id(sid).visual, ds.texts_for(sid))
                  for sid in ep.support[cid]]
            for cid in ep.classes
        }
        protoset, _ = prototypes.refine_multimodal_prototypes(
            tiny_gan_state.snapshot(), support, ds, rounds=3, lam=1.0,
            extra_steps_per_round=2, rng=noise_rng)

        rep_vals = {}
        sampler_rng2, noise_rng2 = _episode_rngs(
            np.random.SeedSequence(seed).spawn(1)[0])
        import protofusion.gan as gan
        state = tiny_gan_state.snapshot()
        timeline = []
        for _ in range(3):
            state = gan.continue_training(state, ds, 2)
            timeline.append(state)
        ep2 = sample_episode(ds, 3, 1, 3, None, sampler_rng2)
        support2 = {
            cid: [(ds.by_id(sid).visual, ds.texts_for(sid))
                  for sid in ep2.support[cid]]
            for cid in ep2.classes
        }
        protoset2 = prototypes.fusion_rounds(timeline, support2, 1.0,
                                             rng=noise_rng2)
        for cid in protoset.class_ids():
            np.testing.assert_array_equal(protoset[cid].vector,
                                          protoset2[cid].vector)


class TestReportCsv:
    def test_rows_and_comments(self):
        rep = EvalReport("image_only", 5, 1, 3, 42, {
            "top1": __import__("protofusion.evaluation",
                               fromlist=["MetricSummary"]).MetricSummary(
                (1.0, 0.5, 0.75), 0.75, 0.1),
        })
        buf = io.StringIO()
        write_report_csv(rep, buf, comments=("seed = 42",))
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# seed = 42"
        assert lines[1] == "mode,way,shot,metric,mean,ci95,episodes,seed"
        assert lines[2] == "image_only,5,1,top1,0.75,0.1,3,42"
