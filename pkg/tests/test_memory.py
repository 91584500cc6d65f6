"""Gated memory controller tests: update algebra, BPTT gradients, training."""

import math

import numpy as np
import pytest

from prefmem.errors import DimensionError
from prefmem.memory import (
    ControllerEpochStats,
    GateParams,
    Grads,
    MemoryState,
    TurnEvent,
    apply_event,
    backward_sequence,
    evaluate_controller,
    flatten_trainable,
    forward_sequence,
    gate,
    load_params,
    predict_category,
    project_input,
    save_params,
    set_trainable,
    soft_prompt,
    train_controller,
    update,
    witness_params,
    zero_params,
)
from prefmem.numerics import Rng, grad_check, softmax


def small_params(seed=0, dim=4, embed_dim=4, n_categories=2, prompt_dim=3):
    return GateParams.init(dim, embed_dim, n_categories, prompt_dim, Rng(seed))


def onehot(k, dim):
    v = np.zeros(dim)
    v[k] = 1.0
    return v


class TestTurnEvent:
    def test_preference_requires_embedding(self):
        with pytest.raises(ValueError):
            TurnEvent(is_preference=True)

    def test_non_preference_rejects_embedding(self):
        with pytest.raises(ValueError):
            TurnEvent(is_preference=False, embedding=np.zeros(4))

    def test_category_allowed_without_write(self):
        ev = TurnEvent(is_preference=False, category=2)
        assert ev.category == 2


class TestGateParams:
    def test_shape_validation(self):
        with pytest.raises(DimensionError):
            GateParams(w_mem=np.zeros((4, 4)), w_emb=np.zeros((4, 3)),
                       bias=np.zeros(4), w_in=np.zeros((4, 8)),
                       w_out=np.zeros((2, 4)), b_out=np.zeros(2),
                       w_prompt=np.zeros((3, 4)))

    def test_dims_reported(self):
        p = small_params(dim=5, embed_dim=7, n_categories=3, prompt_dim=2)
        assert (p.dim, p.embed_dim, p.n_categories, p.prompt_dim) == (5, 7, 3, 2)

    def test_init_within_scale(self):
        p = small_params()
        for name in ("w_mem", "w_emb", "bias", "w_in", "w_out", "b_out",
                     "w_prompt"):
            assert np.all(np.abs(getattr(p, name)) <= 0.1)


class TestForwardPieces:
    def test_project_zero_matrix(self):
        p = zero_params(4, 6, 2, 3)
        assert np.all(project_input(p, np.ones(6)) == 0.0)

    def test_project_identity(self):
        p = zero_params(4, 4, 2, 3)
        p.w_in[...] = np.eye(4)
        e = np.array([1.0, -2.0, 0.5, 3.0])
        assert np.array_equal(project_input(p, e), e)

    def test_project_matches_independent_matvec(self):
        p = small_params(seed=3, dim=5, embed_dim=7)
        e = Rng(8).uniform_array((7,), -1.0, 1.0)
        expected = np.array([float(np.dot(p.w_in[i], e)) for i in range(5)])
        assert np.allclose(project_input(p, e), expected, atol=1e-15)

    def test_project_dim_mismatch(self):
        with pytest.raises(DimensionError):
            project_input(zero_params(4, 6, 2, 3), np.ones(5))

    def test_gate_zero_params_half(self):
        p = zero_params(4, 4, 2, 3)
        f = gate(p, np.ones(4), np.ones(4))
        assert np.allclose(f, 0.5, atol=1e-15)

    def test_gate_saturation_high(self):
        p = zero_params(4, 4, 2, 3)
        p.bias[...] = 50.0
        f = gate(p, np.zeros(4), np.zeros(4))
        assert np.all(np.abs(f - 1.0) < 1e-12)

    def test_gate_saturation_low(self):
        p = zero_params(4, 4, 2, 3)
        p.bias[...] = -50.0
        f = gate(p, np.zeros(4), np.zeros(4))
        assert np.all(f < 1e-12)

    def test_gate_strictly_inside_unit_interval(self):
        p = small_params(seed=5)
        rng = Rng(6)
        for _ in range(100):
            f = gate(p, rng.uniform_array((4,), -3, 3),
                     rng.uniform_array((4,), -3, 3))
            assert np.all(f > 0.0) and np.all(f < 1.0)


class TestUpdate:
    def test_zero_params_even_blend(self):
        p = zero_params(2, 2, 2, 2)
        p.w_in[...] = np.eye(2)
        m, f, e_bar = update(p, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert np.allclose(m, [0.5, 0.5], atol=1e-15)

    def test_fixed_point_when_ebar_equals_memory(self):
        p = small_params(seed=7, dim=4, embed_dim=4)
        p.w_in[...] = np.eye(4)
        m_prev = Rng(9).uniform_array((4,), -1.0, 1.0)
        m, _, _ = update(p, m_prev, m_prev)
        assert np.array_equal(m, m_prev)

    def test_overwrite_in_saturation_limit(self):
        p = zero_params(4, 4, 2, 3)
        p.w_in[...] = np.eye(4)
        p.bias[...] = -50.0
        e = np.array([1.0, 2.0, 3.0, 4.0])
        m, _, _ = update(p, np.full(4, -9.0), e)
        assert np.allclose(m, e, atol=1e-9)

    def test_convex_combination_per_coordinate(self):
        rng = Rng(13)
        for trial in range(1000):
            p = GateParams.init(3, 3, 2, 2, rng.child(trial))
            m_prev = rng.uniform_array((3,), -2.0, 2.0)
            e = rng.uniform_array((3,), -2.0, 2.0)
            m, f, e_bar = update(p, m_prev, e)
            lo = np.minimum(m_prev, e_bar)
            hi = np.maximum(m_prev, e_bar)
            assert np.all(m >= lo - 1e-12) and np.all(m <= hi + 1e-12)
            differs = np.abs(m_prev - e_bar) > 1e-9
            assert np.all(m[differs] > lo[differs])
            assert np.all(m[differs] < hi[differs])

    def test_non_preference_event_is_exact_noop(self):
        p = small_params(seed=20)
        state = MemoryState(values=Rng(21).uniform_array((4,), -1.0, 1.0))
        before = state.values.copy()
        for _ in range(50):
            state, f = apply_event(p, state, TurnEvent(is_preference=False))
            assert f is None
        assert np.array_equal(state.values, before)
        assert state.turn == 50

    def test_apply_event_returns_gate_on_write(self):
        p = small_params(seed=22)
        state = MemoryState.initial(4)
        ev = TurnEvent(is_preference=True, embedding=np.ones(4))
        new_state, f = apply_event(p, state, ev)
        assert f is not None and f.shape == (4,)
        assert new_state.turn == 1


class TestReadouts:
    def test_soft_prompt_zero_memory(self):
        p = small_params()
        assert np.all(soft_prompt(p, np.zeros(4)) == 0.0)

    def test_soft_prompt_identity(self):
        p = zero_params(4, 4, 2, 4)
        p.w_prompt[...] = np.eye(4)
        m = np.array([1.0, -1.0, 2.0, 0.5])
        assert np.array_equal(soft_prompt(p, m), m)

    def test_soft_prompt_linear(self):
        p = small_params(seed=30)
        rng = Rng(31)
        for _ in range(20):
            m1 = rng.uniform_array((4,), -2.0, 2.0)
            m2 = rng.uniform_array((4,), -2.0, 2.0)
            a, b = rng.uniform(-3, 3), rng.uniform(-3, 3)
            lhs = soft_prompt(p, a * m1 + b * m2)
            rhs = a * soft_prompt(p, m1) + b * soft_prompt(p, m2)
            assert np.allclose(lhs, rhs, atol=1e-12)

    def test_predict_uniform_with_zero_probe(self):
        p = zero_params(4, 4, 4, 2)
        probs = predict_category(p, np.ones(4))
        assert np.allclose(probs, 0.25, atol=1e-15)

    def test_predict_saturated_logit(self):
        p = zero_params(4, 4, 3, 2)
        p.b_out[1] = 60.0
        probs = predict_category(p, np.zeros(4))
        assert probs[1] > 1.0 - 1e-12

    def test_predict_matches_softmax_oracle(self):
        p = small_params(seed=33, n_categories=3)
        m = Rng(34).uniform_array((4,), -1.0, 1.0)
        assert np.allclose(predict_category(p, m),
                           softmax(p.w_out @ m + p.b_out), atol=1e-15)


class TestForwardSequence:
    def test_empty_sequence(self):
        loss, n, caches = forward_sequence(small_params(), [])
        assert (loss, n, caches) == (0.0, 0, [])

    def test_all_non_preference_memory_stays_zero(self):
        p = small_params()
        events = [TurnEvent(is_preference=False) for _ in range(10)]
        loss, n, caches = forward_sequence(p, events)
        assert n == 0
        for c in caches:
            assert np.all(c.m == 0.0)

    def test_single_write_from_zero_state(self):
        p = zero_params(4, 4, 2, 2)
        p.w_in[...] = np.eye(4)
        e = np.array([2.0, 0.0, -2.0, 4.0])
        _, _, caches = forward_sequence(
            p, [TurnEvent(is_preference=True, embedding=e)])
        assert np.allclose(caches[0].m, 0.5 * e, atol=1e-15)

    def test_uniform_probe_ce_is_log_k(self):
        p = zero_params(4, 4, 4, 2)
        events = [TurnEvent(is_preference=False, category=1)]
        loss, n, _ = forward_sequence(p, events)
        assert n == 1
        assert abs(loss - math.log(4.0)) < 1e-12

    def test_loss_counts_only_target_events(self):
        p = small_params(n_categories=2)
        events = [
            TurnEvent(is_preference=True, embedding=np.ones(4), category=0),
            TurnEvent(is_preference=False),
            TurnEvent(is_preference=True, embedding=np.ones(4)),
            TurnEvent(is_preference=False, category=1),
        ]
        _, n, caches = forward_sequence(p, events)
        assert n == 2
        assert caches[1].probs is None and caches[2].probs is None


class TestBackwardSequence:
    # Embeddings are drawn at scale 2 so no true gradient coordinate sits
    # near the 1e-8 relative-error floor, where central differences at
    # h=1e-5 are roundoff noise rather than a measurement.
    def events_with_targets(self, rng, n_events, embed_dim, n_categories):
        events = []
        for i in range(n_events):
            if rng.random() < 0.6:
                events.append(TurnEvent(
                    is_preference=True,
                    embedding=rng.uniform_array((embed_dim,), -2.0, 2.0),
                    category=rng.randint(n_categories)))
            else:
                events.append(TurnEvent(
                    is_preference=False,
                    category=(rng.randint(n_categories)
                              if rng.random() < 0.5 else None)))
        return events

    def test_no_targets_zero_gradients(self):
        p = small_params(seed=40)
        events = [TurnEvent(is_preference=False) for _ in range(5)]
        _, _, caches = forward_sequence(p, events)
        g = backward_sequence(p, caches)
        assert g.global_norm() == 0.0

    def test_saturated_correct_prediction_near_zero_gradient(self):
        p = zero_params(4, 4, 2, 2)
        p.w_in[0, 0] = 1.0
        p.w_out[0, 0] = 200.0
        events = [TurnEvent(is_preference=True,
                            embedding=np.array([1.0, 0, 0, 0]), category=0)]
        loss, _, caches = forward_sequence(p, events)
        g = backward_sequence(p, caches)
        assert loss < 1e-12
        assert g.global_norm() < 1e-10

    def test_gradcheck_three_event_sequence(self):
        p = small_params(seed=43, dim=4, embed_dim=4, n_categories=2)
        rng = Rng(44)
        events = [
            TurnEvent(is_preference=True,
                      embedding=rng.uniform_array((4,), -2.0, 2.0), category=0),
            TurnEvent(is_preference=False),
            TurnEvent(is_preference=True,
                      embedding=rng.uniform_array((4,), -2.0, 2.0), category=1),
        ]
        _, _, caches = forward_sequence(p, events)
        analytic = flatten_trainable(backward_sequence(p, caches))

        def loss_at(theta):
            q = GateParams.zeros(4, 4, 2, p.prompt_dim)
            q.w_prompt[...] = p.w_prompt
            set_trainable(q, theta)
            loss, _, _ = forward_sequence(q, events)
            return loss

        err = grad_check(loss_at, flatten_trainable(p), analytic)
        assert err <= 1e-4

    def test_gradcheck_twenty_random_instances(self):
        def make_params(rng, dim, embed_dim, k, scale=0.5):
            def u(*s):
                return rng.uniform_array(s, -scale, scale)
            return GateParams(w_mem=u(dim, dim), w_emb=u(dim, dim),
                              bias=u(dim), w_in=u(dim, embed_dim),
                              w_out=u(k, dim), b_out=u(k),
                              w_prompt=u(2, dim))

        for seed in range(20):
            rng = Rng(1000 + seed)
            dim, embed_dim, k = 3, 3, 2
            p = make_params(rng.child(1), dim, embed_dim, k)
            events = self.events_with_targets(rng.child(2), 6, embed_dim, k)
            _, n, caches = forward_sequence(p, events)
            if n == 0:
                events.append(TurnEvent(is_preference=False, category=0))
                _, n, caches = forward_sequence(p, events)
            analytic = flatten_trainable(backward_sequence(p, caches))

            def loss_at(theta, p=p, events=events):
                q = GateParams.zeros(p.dim, p.embed_dim, p.n_categories,
                                     p.prompt_dim)
                q.w_prompt[...] = p.w_prompt
                set_trainable(q, theta)
                loss, _, _ = forward_sequence(q, events)
                return loss

            err = grad_check(loss_at, flatten_trainable(p), analytic)
            assert err <= 1e-4, f"seed {seed}: {err}"

    def test_gradient_flows_through_interleaved_noops(self):
        # write, many no-ops, then a target: gradient must reach w_in
        p = small_params(seed=50, n_categories=2)
        events = [TurnEvent(is_preference=True, embedding=np.ones(4))]
        events += [TurnEvent(is_preference=False) for _ in range(8)]
        events += [TurnEvent(is_preference=False, category=1)]
        _, _, caches = forward_sequence(p, events)
        g = backward_sequence(p, caches)
        assert float(np.max(np.abs(g.w_in))) > 0.0


class TestWitnessAndZero:
    def test_witness_recovers_latest_category_through_fillers(self):
        k, dim, embed_dim = 4, 32, 64
        p = witness_params(dim, embed_dim, k, 16)
        m = np.zeros(dim)
        for cat in [2, 0, 3]:
            m, _, _ = update(p, m, onehot(cat, embed_dim))
            # any number of no-ops cannot move m
        probs = predict_category(p, m)
        assert int(np.argmax(probs)) == 3

    def test_witness_requires_room_for_codes(self):
        with pytest.raises(DimensionError):
            witness_params(2, 8, 4, 2)

    def test_zero_controller_always_argmax_zero(self):
        p = zero_params(8, 8, 4, 4)
        rng = Rng(60)
        for _ in range(20):
            m = rng.uniform_array((8,), -1.0, 1.0)
            # probe is constant: uniform probabilities, argmax index 0
            assert int(np.argmax(predict_category(p, m))) == 0


class TestTraining:
    def toy_corpus(self, n_sequences=24, k=4, dim=8, seed=70):
        """Orthogonal category codes written at gap-3 positions."""
        rng = Rng(seed)
        corpus = []
        for _ in range(n_sequences):
            events = []
            for j in range(9):
                if (j + 1) % 3 == 0:
                    cat = rng.randint(k)
                    events.append(TurnEvent(is_preference=True,
                                            embedding=onehot(cat, dim),
                                            category=cat))
                else:
                    events.append(TurnEvent(is_preference=False))
            corpus.append(events)
        return corpus

    def test_zero_epochs_leaves_params(self):
        p = small_params(seed=71)
        before = flatten_trainable(p).copy()
        history = train_controller(p, self.toy_corpus(), epochs=0, lr=0.1,
                                   seed=1)
        assert history == []
        assert np.array_equal(flatten_trainable(p), before)

    def test_seed_determinism(self):
        corpus = self.toy_corpus()
        a = GateParams.init(8, 8, 4, 4, Rng(5))
        b = GateParams.init(8, 8, 4, 4, Rng(5))
        ha = train_controller(a, corpus, epochs=5, lr=0.2, seed=9)
        hb = train_controller(b, corpus, epochs=5, lr=0.2, seed=9)
        assert np.array_equal(flatten_trainable(a), flatten_trainable(b))
        assert ha == hb

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            train_controller(small_params(), [], epochs=1, lr=0.1, seed=1)

    def test_learns_gap3_task(self):
        corpus = self.toy_corpus(n_sequences=30)
        p = GateParams.init(8, 8, 4, 4, Rng(3))
        history = train_controller(p, corpus, epochs=200, lr=0.3, seed=4)
        assert history[-1].train_accuracy >= 0.9

    def test_history_schema(self):
        corpus = self.toy_corpus(n_sequences=6)
        p = GateParams.init(8, 8, 4, 4, Rng(1))
        history = train_controller(p, corpus, epochs=2, lr=0.1, seed=2,
                                   val_corpus=corpus[:2])
        assert all(isinstance(h, ControllerEpochStats) for h in history)
        assert [h.epoch for h in history] == [0, 1]
        assert all(h.val_accuracy is not None for h in history)

    def test_evaluate_controller_no_targets(self):
        p = small_params()
        with pytest.raises(ValueError):
            evaluate_controller(p, [[TurnEvent(is_preference=False)]])

    def test_clipping_bounds_step(self):
        # enormous probe weights make raw gradients huge; clip must cap them
        p = zero_params(4, 4, 2, 2)
        p.w_out[...] = 1000.0
        p.w_out[0, 0] = -1000.0
        events = [[TurnEvent(is_preference=True, embedding=np.ones(4),
                             category=0)]]
        before = flatten_trainable(p).copy()
        train_controller(p, events, epochs=1, lr=1.0, seed=1, clip=5.0)
        step = float(np.linalg.norm(flatten_trainable(p) - before))
        assert step <= 5.0 + 1e-9


class TestGrads:
    def test_global_norm(self):
        p = zero_params(2, 2, 2, 2)
        g = Grads.zeros_for(p)
        g.bias[...] = [3.0, 4.0]
        assert g.global_norm() == 5.0

    def test_scale(self):
        p = zero_params(2, 2, 2, 2)
        g = Grads.zeros_for(p)
        g.bias[...] = [3.0, 4.0]
        g.scale(0.5)
        assert np.array_equal(g.bias, [1.5, 2.0])


class TestFlatViews:
    def test_round_trip(self):
        p = small_params(seed=80)
        flat = flatten_trainable(p)
        q = GateParams.zeros(4, 4, 2, 3)
        set_trainable(q, flat)
        assert np.array_equal(flatten_trainable(q), flat)

    def test_wrong_size_rejected(self):
        p = small_params()
        with pytest.raises(DimensionError):
            set_trainable(p, np.zeros(3))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = small_params(seed=90, dim=5, embed_dim=6, n_categories=3,
                         prompt_dim=2)
        path = tmp_path / "mem.ckpt"
        save_params(path, p)
        q = load_params(path)
        for name in ("w_mem", "w_emb", "bias", "w_in", "w_out", "b_out",
                     "w_prompt"):
            assert np.array_equal(getattr(p, name), getattr(q, name)), name

    def test_write_read_write_byte_identical(self, tmp_path):
        p = small_params(seed=91)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_params(a, p)
        save_params(b, load_params(a))
        assert a.read_bytes() == b.read_bytes()

    def test_header_layout(self, tmp_path):
        p = small_params(seed=92, dim=5, embed_dim=6, n_categories=3,
                         prompt_dim=2)
        path = tmp_path / "mem.ckpt"
        save_params(path, p)
        assert path.read_text().splitlines()[0] == \
            "prefmem v1 d=5 l=6 K=3 de=2"

    def test_header_mismatch_rejected(self, tmp_path):
        p = small_params(seed=93)
        path = tmp_path / "mem.ckpt"
        save_params(path, p)
        body = path.read_text()
        first = body.splitlines()[0]
        path.write_text(body.replace(first, "prefmem v1 d=9 l=4 K=2 de=3"))
        with pytest.raises(DimensionError):
            load_params(path)

    def test_missing_tensor_rejected(self, tmp_path):
        path = tmp_path / "mem.ckpt"
        path.write_text("prefmem v1 d=1 l=1 K=2 de=1\ntensor w_mem 1 1\n0.0\n")
        with pytest.raises(DimensionError):
            load_params(path)
