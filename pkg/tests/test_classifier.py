"""Track-proposal classifier: matching, pooling, heads, state updates."""

import numpy as np
import pytest

from motpool.classifier import AppearanceMemory, TrackScorer
from motpool.config import ModelConfig
from motpool.errors import DimensionError, UsageError
from motpool.nn import Node, Tape, clip, log, pick, scale, finite_diff_check


def desk_scorer(head="appearance_only", seed=0, **overrides):
    cfg = ModelConfig(head=head, init_seed=seed, **overrides)
    return TrackScorer(cfg)


def zero_weight_scorer(head="appearance_only"):
    s = desk_scorer(head=head)
    for _, node in s.named_params():
        node.value = np.zeros_like(node.value)
    return s


def random_memory(scorer, rng):
    return AppearanceMemory(Node(rng.normal(size=scorer.config.hidden)),
                            Node(rng.normal(size=scorer.config.hidden)))


class TestEmbedDetection:
    def test_zero_input_gives_relu_bias(self):
        s = desk_scorer()
        s.embed.b.value = np.linspace(-1, 1, s.config.key_dim)
        out = s.embed_detection(np.zeros(s.config.embed_dim))
        np.testing.assert_array_equal(out.value, np.maximum(s.embed.b.value, 0.0))

    def test_full_scale_profile_dims(self):
        from motpool.config import PROFILES
        cfg = ModelConfig(**PROFILES["paper"])
        s = TrackScorer(cfg)
        assert s.embed.in_dim == 2048 and s.embed.out_dim == 256
        assert cfg.hidden == 2048
        assert s.head.in_dim == 16  # concatenated match representation
        x = s.embed_detection(np.zeros(2048))
        assert x.value.shape == (256,)
        mem, _ = s.init_track_state(x)
        assert s.bilinear_match(mem, x).value.shape == (8,)
        score = s.score_pair(mem, [mem], x)
        assert 0.0 <= score.p <= 1.0
        del s

    def test_against_naive_oracle(self):
        rng = np.random.default_rng(2)
        s = desk_scorer()
        e = rng.normal(size=s.config.embed_dim)
        got = s.embed_detection(e).value
        want = np.maximum(
            np.array([np.dot(row, e) for row in s.embed.W.value]) + s.embed.b.value, 0.0)
        assert np.max(np.abs(got - want)) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            desk_scorer().embed_detection(np.zeros(7))


class TestBilinearMatch:
    def test_identity_rows_with_relu_clamp(self):
        s = desk_scorer(rows=2, key_dim=2, embed_dim=4)
        mem = AppearanceMemory(Node([1.0, 0.0, 0.0, 1.0]), Node(np.zeros(4)))
        out = s.bilinear_match(mem, Node([3.0, -1.0]))
        np.testing.assert_array_equal(out.value, [3.0, 0.0])

    def test_zero_memory_matches_nothing(self):
        s = desk_scorer()
        mem = AppearanceMemory(Node(np.zeros(s.config.hidden)), Node(np.zeros(s.config.hidden)))
        rng = np.random.default_rng(4)
        out = s.bilinear_match(mem, Node(rng.normal(size=s.config.key_dim)))
        np.testing.assert_array_equal(out.value, np.zeros(s.config.rows))

    def test_against_per_row_dot_oracle(self):
        rng = np.random.default_rng(5)
        s = desk_scorer()
        c = s.config
        h = rng.normal(size=c.hidden)
        x = rng.normal(size=c.key_dim)
        got = s.bilinear_match(AppearanceMemory(Node(h), Node(np.zeros(c.hidden))), Node(x)).value
        H = h.reshape(c.rows, c.key_dim)
        want = np.maximum(np.array([np.dot(H[r], x) for r in range(c.rows)]), 0.0)
        assert np.max(np.abs(got - want)) < 1e-12


class TestPooling:
    def test_columnwise_max(self):
        s = desk_scorer(rows=2, key_dim=2, embed_dim=4)
        out = s.pool_other_tracks([Node([1.0, 0.0]), Node([0.0, 2.0])])
        np.testing.assert_array_equal(out.value, [1.0, 2.0])

    def test_singleton_identity(self):
        s = desk_scorer(rows=2, key_dim=2, embed_dim=4)
        out = s.pool_other_tracks([Node([0.3, 0.7])])
        np.testing.assert_array_equal(out.value, [0.3, 0.7])

    def test_empty_gives_zero_vector(self):
        s = desk_scorer()
        np.testing.assert_array_equal(s.pool_other_tracks([]).value,
                                      np.zeros(s.config.rows))

    def test_permutation_invariant_exact(self):
        rng = np.random.default_rng(6)
        s = desk_scorer()
        vecs = [Node(np.abs(rng.normal(size=s.config.rows))) for _ in range(5)]
        base = s.pool_other_tracks(vecs).value
        for _ in range(10):
            perm = list(rng.permutation(5))
            out = s.pool_other_tracks([vecs[i] for i in perm]).value
            assert np.array_equal(out, base)

    def test_superset_monotone(self):
        rng = np.random.default_rng(7)
        s = desk_scorer()
        a = [Node(np.abs(rng.normal(size=s.config.rows))) for _ in range(3)]
        extra = [Node(np.abs(rng.normal(size=s.config.rows))) for _ in range(2)]
        small = s.pool_other_tracks(a).value
        big = s.pool_other_tracks(a + extra).value
        assert np.all(big >= small)


class TestMotionFeature:
    def test_zero_weights_zero_output(self):
        s = zero_weight_scorer(head="joint")
        ms = s.zero_motion()
        feat, ms2 = s.motion_feature(ms, np.array([0.1, 0.2, 0.05, 0.1]))
        np.testing.assert_array_equal(feat.value, np.zeros(s.config.motion_feat))
        np.testing.assert_array_equal(ms2.h.value, np.zeros(s.config.motion_hidden))

    def test_output_length(self):
        s = desk_scorer(head="joint")
        feat, _ = s.motion_feature(s.zero_motion(), np.array([0.1, 0.2, 0.05, 0.1]))
        assert feat.value.shape == (8,)

    def test_against_composed_oracle(self):
        rng = np.random.default_rng(8)
        s = desk_scorer(head="joint")
        box = rng.uniform(0, 1, size=4)
        h0 = rng.normal(size=s.config.motion_hidden) * 0.1
        c0 = rng.normal(size=s.config.motion_hidden) * 0.1
        ms = type(s.zero_motion())(Node(h0), Node(c0))
        feat, _ = s.motion_feature(ms, box)

        # compose the three stages by hand
        u = np.maximum(s.motion_in.W.value @ box + s.motion_in.b.value, 0.0)
        z = np.concatenate([h0, u])
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        f = sig(s.motion_lstm.W_f.value @ z + s.motion_lstm.b_f.value)
        i = sig(s.motion_lstm.W_i.value @ z + s.motion_lstm.b_i.value)
        g = np.tanh(s.motion_lstm.W_g.value @ z + s.motion_lstm.b_g.value)
        o = sig(s.motion_lstm.W_o.value @ z + s.motion_lstm.b_o.value)
        c = f * c0 + i * g
        h = o * np.tanh(c)
        want = np.maximum(s.motion_out.W.value @ h + s.motion_out.b.value, 0.0)
        assert np.max(np.abs(feat.value - want)) < 1e-12

    def test_requires_joint_head(self):
        s = desk_scorer()
        with pytest.raises(UsageError):
            s.motion_feature(None, np.zeros(4))


class TestScorePair:
    def test_no_competitors_still_valid_probability(self):
        rng = np.random.default_rng(9)
        s = desk_scorer()
        mem = random_memory(s, rng)
        x = Node(rng.normal(size=s.config.key_dim))
        score = s.score_pair(mem, [], x)
        assert 0.0 <= score.p <= 1.0
        assert abs(score.p + score.p_nonmatch - 1.0) < 1e-12

    def test_duplicate_target_in_others_raises_pool(self):
        rng = np.random.default_rng(10)
        s = desk_scorer()
        target = random_memory(s, rng)
        others = [random_memory(s, rng) for _ in range(3)]
        x = Node(rng.normal(size=s.config.key_dim))
        pooled_before = s.pool_other_tracks(
            [s.bilinear_match(o, x) for o in others]).value
        pooled_after = s.pool_other_tracks(
            [s.bilinear_match(o, x) for o in others + [target]]).value
        assert np.all(pooled_after >= pooled_before)

    def test_mode_mismatch_raises(self):
        rng = np.random.default_rng(11)
        s = desk_scorer()
        mem = random_memory(s, rng)
        x = Node(rng.normal(size=s.config.key_dim))
        with pytest.raises(UsageError):
            s.score_pair(mem, [], x, motion=(None, np.zeros(4)))

    def test_scoring_does_not_mutate_memory(self):
        rng = np.random.default_rng(12)
        s = desk_scorer(head="joint")
        mem = random_memory(s, rng)
        ms = s.zero_motion()
        h_before = mem.h.value.copy()
        ms_before = ms.h.value.copy()
        s.score_pair(mem, [random_memory(s, rng)], Node(rng.normal(size=s.config.key_dim)),
                     motion=(ms, rng.uniform(0, 1, 4)))
        assert np.array_equal(mem.h.value, h_before)
        assert np.array_equal(ms.h.value, ms_before)

    def test_depends_only_on_multiset_of_others(self):
        rng = np.random.default_rng(13)
        s = desk_scorer()
        target = random_memory(s, rng)
        others = [random_memory(s, rng) for _ in range(4)]
        x = Node(rng.normal(size=s.config.key_dim))
        p1 = s.score_pair(target, others, x).p
        p2 = s.score_pair(target, others[::-1], x).p
        assert p1 == p2

    def test_no_pooling_config_narrows_head(self):
        s = desk_scorer(pooling=False)
        assert s.head.in_dim == s.config.rows
        rng = np.random.default_rng(14)
        score = s.score_pair(random_memory(s, rng), [random_memory(s, rng)],
                             Node(rng.normal(size=s.config.key_dim)))
        assert 0.0 <= score.p <= 1.0

    def test_zero_negative_pool_equals_empty_others(self):
        rng = np.random.default_rng(15)
        s = desk_scorer()
        target = random_memory(s, rng)
        others = [random_memory(s, rng) for _ in range(3)]
        x = Node(rng.normal(size=s.config.key_dim))
        assert (s.score_pair(target, others, x, zero_negative_pool=True).p
                == s.score_pair(target, [], x).p)


class TestScoreFrame:
    def test_matches_per_pair_scoring(self):
        rng = np.random.default_rng(16)
        s = desk_scorer()
        mems = [random_memory(s, rng) for _ in range(4)]
        xs = [Node(rng.normal(size=s.config.key_dim)) for _ in range(3)]
        grid = s.score_frame(mems, xs)
        for i in range(4):
            others = [m for l, m in enumerate(mems) if l != i]
            for j in range(3):
                direct = s.score_pair(mems[i], others, xs[j]).p
                assert float(grid[i][j].value) == direct

    def test_single_track_reduces_to_pair_classification(self):
        rng = np.random.default_rng(17)
        s = desk_scorer()
        mems = [random_memory(s, rng)]
        xs = [Node(rng.normal(size=s.config.key_dim)) for _ in range(2)]
        grid = s.score_frame(mems, xs)
        for j in range(2):
            assert float(grid[0][j].value) == s.score_pair(mems[0], [], xs[j]).p

    def test_mask_skips_pairs(self):
        rng = np.random.default_rng(18)
        s = desk_scorer()
        mems = [random_memory(s, rng) for _ in range(2)]
        xs = [Node(rng.normal(size=s.config.key_dim))]
        mask = np.array([[True], [False]])
        grid = s.score_frame(mems, xs, mask=mask)
        assert grid[0][0] is not None and grid[1][0] is None


class TestStateTransitions:
    def test_zero_weight_memory_stays_zero(self):
        s = zero_weight_scorer()
        mem = s.zero_memory()
        mem2 = s.update_memory(mem, Node(np.ones(s.config.key_dim)))
        np.testing.assert_array_equal(mem2.h.value, np.zeros(s.config.hidden))
        np.testing.assert_array_equal(mem2.c.value, np.zeros(s.config.hidden))

    def test_post_update_match_finite(self):
        rng = np.random.default_rng(19)
        s = desk_scorer()
        x = s.embed_detection(rng.normal(size=s.config.embed_dim))
        mem, _ = s.init_track_state(x)
        out = s.bilinear_match(mem, x)
        assert np.all(np.isfinite(out.value))

    def test_update_order_sensitive(self):
        rng = np.random.default_rng(20)
        s = desk_scorer()
        x1 = Node(rng.normal(size=s.config.key_dim))
        x2 = Node(rng.normal(size=s.config.key_dim))
        mem0 = s.zero_memory()
        a = s.update_memory(s.update_memory(mem0, x1), x2)
        b = s.update_memory(s.update_memory(mem0, x2), x1)
        assert np.max(np.abs(a.h.value - b.h.value)) > 1e-12

    def test_init_deterministic(self):
        rng = np.random.default_rng(21)
        s = desk_scorer(head="joint")
        e = rng.normal(size=s.config.embed_dim)
        box = rng.uniform(0, 1, 4)
        m1, ms1 = s.init_track_state(s.embed_detection(e), box)
        m2, ms2 = s.init_track_state(s.embed_detection(e), box)
        assert np.array_equal(m1.h.value, m2.h.value)
        assert np.array_equal(ms1.h.value, ms2.h.value)

    def test_zero_weight_init_is_zero(self):
        s = zero_weight_scorer(head="joint")
        mem, ms = s.init_track_state(Node(np.ones(s.config.key_dim)),
                                     np.array([0.1, 0.1, 0.1, 0.1]))
        np.testing.assert_array_equal(mem.h.value, np.zeros(s.config.hidden))
        np.testing.assert_array_equal(ms.h.value, np.zeros(s.config.motion_hidden))


class TestCheckpointing:
    def test_save_load_round_trip(self, tmp_path):
        from motpool.nn import load_checkpoint, save_checkpoint
        s = desk_scorer(head="joint", seed=3)
        path = tmp_path / "model.bin"
        save_checkpoint(path, s.param_values(), s.config.to_dict())
        tensors, cfg, _ = load_checkpoint(path)
        s2 = desk_scorer(head="joint", seed=99)
        s2.load_param_values(tensors)
        for (n1, p1), (n2, p2) in zip(s.named_params(), s2.named_params()):
            assert n1 == n2
            assert np.array_equal(p1.value, p2.value)
        assert cfg["head"] == "joint"


class TestGradientFlow:
    def test_full_joint_gradcheck_small(self):
        """End-to-end gradient through pooling, motion branch and focal-style loss."""
        rng = np.random.default_rng(22)
        s = desk_scorer(head="joint", seed=7)
        c = s.config
        mems_v = [(rng.normal(size=c.hidden) * 0.3, rng.normal(size=c.hidden) * 0.3)
                  for _ in range(3)]
        ms_v = [(rng.normal(size=c.motion_hidden) * 0.3,
                 rng.normal(size=c.motion_hidden) * 0.3) for _ in range(3)]
        es = [rng.normal(size=c.embed_dim) for _ in range(2)]
        boxes = [rng.uniform(0, 1, 4) for _ in range(2)]
        labels = np.array([[1, 0], [0, 1], [0, 0]], dtype=float)

        def forward(tape=None):
            mems = [type(s.zero_memory())(Node(h), Node(cc)) for h, cc in mems_v]
            mss = [type(s.zero_motion())(Node(h), Node(cc)) for h, cc in ms_v]
            xs = [s.embed_detection(e, tape) for e in es]
            grid = s.score_frame(mems, xs, mss, boxes, tape=tape)
            terms = []
            for i in range(3):
                for j in range(2):
                    p = clip(grid[i][j], 1e-12, 1.0 - 1e-12, tape)
                    if labels[i][j] == 1:
                        terms.append(scale(log(p, tape), -1.0, tape))
                    else:
                        one_minus = clip(scale(p, -1.0, tape), -1.0, -0.0, tape)
                        # -log(1-p) assembled below without a dedicated op
                        from motpool.nn import add, constant
                        terms.append(scale(log(add(constant(np.ones(())),
                                                   one_minus, tape), tape), -1.0, tape))
            from motpool.nn import add_n
            return scale(add_n(terms, tape), 1.0 / len(terms), tape)

        tape = Tape()
        loss = forward(tape)
        tape.backward(loss)
        params = s.named_params()
        analytic = {n: (p.grad if p.grad is not None else np.zeros_like(p.value))
                    for n, p in params}
        worst, per = finite_diff_check(lambda: float(forward().value), params,
                                       analytic, eps=1e-5,
                                       max_coords_per_param=4,
                                       rng=np.random.default_rng(0))
        assert worst < 1e-4, per
