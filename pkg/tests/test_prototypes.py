import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protofusion import GanConfig, nnet
from protofusion.gan import encode_sample_texts, init_gan_state
from protofusion.prototypes import (Prototype, PrototypeSet, classify, fuse,
                                    fusion_rounds, rank_matrix,
                                    refine_multimodal_prototypes,
                                    text_prototype, visual_prototype)
from protofusion.synth import oracle_nearest, oracle_ranking


def proto(cid, vec):
    return Prototype(cid, np.asarray(vec, dtype=float), "image_only", 1)


class TestVisualPrototype:
    def test_two_point_mean(self):
        p = visual_prototype([np.array([1.0, 2.0]), np.array([3.0, 4.0])], "c")
        np.testing.assert_array_equal(p.vector, [2.0, 3.0])
        assert p.provenance == "image_only"
        assert p.support_count == 2

    def test_single_vector_identity(self):
        v = np.array([0.5, -1.0, 2.0])
        p = visual_prototype([v], "c")
        np.testing.assert_array_equal(p.vector, v)

    def test_seven_vectors_match_sum_oracle(self, rng):
        vs = [rng.standard_normal(6) for _ in range(7)]
        total = np.zeros(6)
        for v in vs:
            total = total + v
        p = visual_prototype(vs, "c")
        np.testing.assert_allclose(p.vector, total / 7.0, atol=1e-12)

    def test_empty_support_rejected(self):
        with pytest.raises(ValueError, match="empty support"):
            visual_prototype([], "c")


class TestTextPrototype:
    @pytest.fixture()
    def state(self):
        return init_gan_state(
            GanConfig(text_dim=6, visual_dim=4, cond_dim=3, seed=2), ["a", "b"])

    def test_single_sample_single_text(self, state, rng):
        texts = rng.standard_normal((1, 6))
        eps = rng.standard_normal((1, 3))
        p = text_prototype(state, [texts], "a", frozen_noise=[eps])
        expect = encode_sample_texts(state, texts, frozen_noise=eps)
        np.testing.assert_allclose(p.vector, expect, atol=1e-15)
        assert p.provenance == "text_only"

    def test_two_samples_midpoint(self, state, rng):
        t1, t2 = rng.standard_normal((2, 3, 6))
        e1, e2 = rng.standard_normal((2, 3, 3))
        f1 = encode_sample_texts(state, t1, frozen_noise=e1)
        f2 = encode_sample_texts(state, t2, frozen_noise=e2)
        p = text_prototype(state, [t1, t2], "a", frozen_noise=[e1, e2])
        np.testing.assert_allclose(p.vector, (f1 + f2) / 2.0, atol=1e-14)

    def test_nested_loop_oracle(self, state, rng):
        texts = [rng.standard_normal((10, 6)) for _ in range(5)]
        noise = [rng.standard_normal((10, 3)) for _ in range(5)]
        total = np.zeros(4)
        for ts, es in zip(texts, noise):
            per_sample = np.zeros(4)
            for i in range(10):
                feat = encode_sample_texts(state, ts[i][None, :],
                                           frozen_noise=es[i][None, :])
                per_sample += feat
            total += per_sample / 10.0
        p = text_prototype(state, texts, "b", frozen_noise=noise)
        np.testing.assert_allclose(p.vector, total / 5.0, atol=1e-12)

    def test_empty_support_rejected(self, state):
        with pytest.raises(ValueError, match="empty support"):
            text_prototype(state, [], "a")


class TestFuse:
    def test_lambda_zero_keeps_image_prototype(self):
        p = proto("c", [1.0, 0.0])
        pt = Prototype("c", np.array([0.0, 1.0]), "text_only", 1)
        out = fuse(p, pt, 0.0)
        np.testing.assert_array_equal(out.vector, p.vector)
        assert out.provenance == "multimodal"

    def test_lambda_one_is_midpoint(self):
        out = fuse(proto("c", [1.0, 0.0]),
                   Prototype("c", np.array([0.0, 1.0]), "text_only", 1), 1.0)
        np.testing.assert_allclose(out.vector, [0.5, 0.5], atol=1e-12)

    def test_lambda_three_formula(self):
        out = fuse(proto("c", [4.0, 0.0]),
                   Prototype("c", np.array([0.0, 4.0]), "text_only", 1), 3.0)
        np.testing.assert_allclose(out.vector, [1.0, 3.0], atol=1e-12)

    def test_idempotent_on_equal_prototypes(self, rng):
        v = rng.standard_normal(5)
        out = fuse(proto("c", v), Prototype("c", v.copy(), "text_only", 1), 0.7)
        np.testing.assert_allclose(out.vector, v, atol=1e-12)

    def test_class_mismatch_rejected(self):
        with pytest.raises(ValueError, match="class mismatch"):
            fuse(proto("a", [1.0]), Prototype("b", np.array([1.0]), "text_only", 1), 1.0)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError, match=">= 0"):
            fuse(proto("a", [1.0]), Prototype("a", np.array([1.0]), "text_only", 1), -0.1)

    @given(st.floats(0.0, 50.0), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_output_on_segment(self, lam, seed):
        r = np.random.default_rng(seed)
        a = r.standard_normal(4)
        b = r.standard_normal(4)
        out = fuse(proto("c", a), Prototype("c", b, "text_only", 1), lam).vector
        # out = a + t*(b-a) with t = lam/(1+lam) in [0, 1)
        t = lam / (1.0 + lam)
        np.testing.assert_allclose(out, a + t * (b - a), atol=1e-9)


class TestRefinement:
    def test_single_round_equals_two_op_composition(self, shared_tiny_dataset,
                                                    tiny_gan_state, rng):
        ds = shared_tiny_dataset
        cid = ds.novel_classes[0]
        samples = ds.samples_of(cid)[:2]
        items = [(s.visual, ds.texts_for(s.id)) for s in samples]
        noise = [rng.standard_normal((t.shape[0], tiny_gan_state.config.cond))
                 for _, t in items]

        protoset, _ = refine_multimodal_prototypes(
            tiny_gan_state.snapshot(), {cid: items}, ds, rounds=1, lam=1.0,
            extra_steps_per_round=0, frozen_noise={cid: noise})
        direct = fuse(
            visual_prototype([v for v, _ in items], cid),
            text_prototype(tiny_gan_state, [t for _, t in items], cid,
                           frozen_noise=noise),
            1.0,
        )
        np.testing.assert_allclose(protoset[cid].vector, direct.vector, atol=1e-12)

    def test_repeated_midpoint_contracts_geometrically(self, shared_tiny_dataset,
                                                       tiny_gan_state, rng):
        ds = shared_tiny_dataset
        cid = ds.novel_classes[1]
        samples = ds.samples_of(cid)[:1]
        items = [(s.visual, ds.texts_for(s.id)) for s in samples]
        noise = [rng.standard_normal((t.shape[0], tiny_gan_state.config.cond))
                 for _, t in items]
        p0 = visual_prototype([v for v, _ in items], cid).vector
        p_t = text_prototype(tiny_gan_state, [t for _, t in items], cid,
                             frozen_noise=noise).vector

        for rounds in (1, 3, 6):
            protoset, _ = refine_multimodal_prototypes(
                tiny_gan_state.snapshot(), {cid: items}, ds, rounds=rounds,
                lam=1.0, extra_steps_per_round=0, frozen_noise={cid: noise})
            got = np.linalg.norm(protoset[cid].vector - p_t)
            want = np.linalg.norm(p0 - p_t) / 2 ** rounds
            assert got == pytest.approx(want, rel=1e-9)

    def test_multimodal_provenance_and_rounds_validation(self, shared_tiny_dataset,
                                                         tiny_gan_state):
        ds = shared_tiny_dataset
        cid = ds.novel_classes[0]
        items = [(s.visual, ds.texts_for(s.id)) for s in ds.samples_of(cid)[:1]]
        protoset, _ = refine_multimodal_prototypes(
            tiny_gan_state.snapshot(), {cid: items}, ds, rounds=2,
            extra_steps_per_round=0, rng=np.random.default_rng(0))
        assert protoset[cid].provenance == "multimodal"
        with pytest.raises(ValueError, match="rounds"):
            refine_multimodal_prototypes(tiny_gan_state.snapshot(), {cid: items},
                                         ds, rounds=0)

    def test_extra_steps_advance_the_generator(self, shared_tiny_dataset,
                                               tiny_gan_state):
        ds = shared_tiny_dataset
        cid = ds.novel_classes[0]
        items = [(s.visual, ds.texts_for(s.id)) for s in ds.samples_of(cid)[:1]]
        _, state_after = refine_multimodal_prototypes(
            tiny_gan_state.snapshot(), {cid: items}, ds, rounds=3, lam=1.0,
            extra_steps_per_round=2, rng=np.random.default_rng(0))
        assert state_after.iteration == tiny_gan_state.iteration + 6


class TestClassify:
    def test_nearest_of_two(self):
        ps = PrototypeSet({"A": proto("A", [1.0, 0.0]), "B": proto("B", [0.0, 1.0])})
        pred, ranked = classify(ps, np.array([0.9, 0.1]))
        assert pred == "A"
        assert ranked == ("A", "B")

    def test_query_scaling_invariance(self, rng):
        ps = PrototypeSet({f"c{i}": proto(f"c{i}", rng.standard_normal(5))
                           for i in range(6)})
        q = rng.standard_normal(5)
        pred1, ranked1 = classify(ps, q)
        pred2, ranked2 = classify(ps, 10.0 * q)
        assert pred1 == pred2
        assert ranked1 == ranked2

    def test_ranking_is_permutation_and_head_is_prediction(self, rng):
        ps = PrototypeSet({f"c{i}": proto(f"c{i}", rng.standard_normal(4))
                           for i in range(8)})
        pred, ranked = classify(ps, rng.standard_normal(4))
        assert sorted(ranked) == sorted(ps.class_ids())
        assert pred == ranked[0]

    def test_tie_breaks_toward_smaller_class_id(self):
        v = np.array([1.0, 0.0])
        ps = PrototypeSet({"b": proto("b", v), "a": proto("a", v.copy())})
        pred, ranked = classify(ps, np.array([2.0, 0.0]))
        assert pred == "a"
        assert ranked == ("a", "b")

    def test_zero_norm_query_rejected(self):
        ps = PrototypeSet({"a": proto("a", [1.0, 0.0])})
        with pytest.raises(ValueError, match="zero-norm"):
            classify(ps, np.zeros(2))

    def test_matches_bruteforce_oracle(self, rng):
        for trial in range(50):
            n_classes = int(rng.integers(2, 51))
            ps = PrototypeSet({
                f"c{i:02d}": proto(f"c{i:02d}", rng.standard_normal(16))
                for i in range(n_classes)
            })
            for _ in range(4):
                q = rng.standard_normal(16)
                pred, ranked = classify(ps, q)
                assert pred == oracle_nearest(ps, q)
                assert ranked == oracle_ranking(ps, q)

    def test_rank_matrix_agrees_with_classify(self, rng):
        ps = PrototypeSet({f"c{i}": proto(f"c{i}", rng.standard_normal(6))
                           for i in range(7)})
        ids = ps.class_ids()
        Q = rng.standard_normal((20, 6))
        order = rank_matrix(ps, Q)
        for row, q in zip(order, Q):
            _, ranked = classify(ps, q)
            assert tuple(ids[i] for i in row) == ranked


class TestPrototypeTypes:
    def test_non_finite_vector_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            Prototype("a", np.array([np.nan, 1.0]), "image_only", 1)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            PrototypeSet({})

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dims differ"):
            PrototypeSet({"a": proto("a", [1.0]), "b": proto("b", [1.0, 2.0])})
